mod common;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::rng;
use transducer::data::Utterance;
use transducer::error::Error;
use transducer::loss::corpus_loss;
use transducer::network::{NetworkConfig, TransducerParams};
use transducer::tensor::{Checkpoint, ParamSet};
use transducer::training::{train, MetricRecord, TrainConfig};
use transducer::vocab::count_alignments;
use transducer::Execution;

const K: usize = 3;

/// Noisy one-hot features, each label held for 1 to 3 frames.
fn copy_task(n: usize, seed: u64) -> Vec<Utterance> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    (0..n)
        .map(|i| {
            let y: Vec<usize> = (0..r.random_range(1..=4)).map(|_| r.random_range(0..K)).collect();
            let mut x = Vec::new();
            for &l in &y {
                for _ in 0..r.random_range(1..=3) {
                    x.push((0..K).map(|d| f64::from(u8::from(d == l)) + noise.sample(&mut r)).collect());
                }
            }
            Utterance {
                id: format!("u{i}"),
                features: x,
                transcript: y,
            }
        })
        .collect()
}

fn net() -> NetworkConfig {
    NetworkConfig {
        input_dim: K,
        num_labels: K,
        encoder_hidden: 8,
        slow_embed: 4,
        slow_hidden: 8,
        readout_dim: 8,
        ..Default::default()
    }
}

fn cfg() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        peak_lr: 1e-2,
        warmup_from: 1e-3,
        warmup_steps: 10,
        max_frames_per_batch: 60,
        seed: 3,
        ..Default::default()
    }
}

/// Mean loss of the model whose every distribution is uniform: each path
/// has probability 2^-(T+S) K^-S and there are C(T-1+S, S) of them.
fn uniform_loss(data: &[Utterance]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|u| {
            let (t, s) = (u.features.len(), u.transcript.len());
            let paths = count_alignments(s, t, u128::MAX).unwrap() as f64;
            -(paths.ln() - (t + s) as f64 * 2f64.ln() - s as f64 * (K as f64).ln())
        })
        .sum();
    total / data.len() as f64
}

#[test]
fn all_zero_model_is_the_uniform_model() {
    let dev = copy_task(20, 2);
    let mut params = TransducerParams::init(&net(), 0).unwrap();
    for t in params.tensors_mut() {
        t.fill(0.0);
    }
    let loss = corpus_loss(&params, &dev, Execution::Sequential).unwrap() / dev.len() as f64;
    assert!((loss - uniform_loss(&dev)).abs() < 1e-9);
}

#[test]
fn training_beats_the_uniform_model() {
    let (train_set, dev) = (copy_task(150, 1), copy_task(30, 2));
    let params = TransducerParams::init(&net(), 5).unwrap();
    let out = train(params, &train_set, &dev, &cfg(), Execution::Parallel, |_, _| Ok(())).unwrap();
    let best = out.log.iter().filter_map(|r| r.dev_loss).fold(f64::INFINITY, f64::min);
    assert!(best < uniform_loss(&dev), "{best} vs {}", uniform_loss(&dev));
    assert_eq!(out.log[out.best_epoch - 1].dev_loss, Some(best));
    let reloaded = corpus_loss(&out.best, &dev, Execution::Sequential).unwrap() / dev.len() as f64;
    assert!((reloaded - best).abs() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (train_set, dev) = (copy_task(40, 1), copy_task(10, 2));
    let cfg = TrainConfig { epochs: 2, ..cfg() };
    let run = |exec| {
        let params = TransducerParams::init(&net(), 5).unwrap();
        let mut records: Vec<MetricRecord> = Vec::new();
        let out = train(params, &train_set, &dev, &cfg, exec, |r, _| {
            records.push(r.clone());
            Ok(())
        })
        .unwrap();
        (records, out.lr_trace, out.last.to_checkpoint())
    };
    let (a, b) = (run(Execution::Parallel), run(Execution::Sequential));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(serde_json::to_string(&a.2).unwrap(), serde_json::to_string(&b.2).unwrap());
}

#[test]
fn lr_trace_warms_up_then_never_rises_until_reset() {
    let (train_set, dev) = (copy_task(60, 1), copy_task(10, 2));
    let cfg = TrainConfig {
        epochs: 5,
        warmup_steps: 6,
        max_frames_per_batch: 20,
        ..cfg()
    };
    let params = TransducerParams::init(&net(), 5).unwrap();
    let out = train(params.clone(), &train_set, &dev, &cfg, Execution::Parallel, |_, _| Ok(())).unwrap();
    let lr = &out.lr_trace;
    assert_eq!(lr[0], cfg.warmup_from);
    assert_eq!(lr[6], cfg.peak_lr);
    assert!(lr[..=6].windows(2).all(|w| w[0] < w[1]));
    assert!(lr[6..].windows(2).all(|w| w[0] >= w[1]));

    let reset = TrainConfig {
        lr_reset_epoch: Some(4),
        patience: 1,
        ..cfg.clone()
    };
    let out = train(params, &train_set, &dev, &reset, Execution::Parallel, |_, _| Ok(())).unwrap();
    let steps_before: u64 = out.log[2].step;
    assert_eq!(out.lr_trace[steps_before as usize], cfg.peak_lr);
}

#[test]
fn divergence_reports_the_batch() {
    let mut train_set = copy_task(5, 1);
    train_set[3].features[0][0] = f64::NAN;
    let cfg = TrainConfig {
        max_frames_per_batch: 1,
        ..cfg()
    };
    let params = TransducerParams::init(&net(), 5).unwrap();
    let err = train(params, &train_set, &[], &cfg, Execution::Sequential, |_, _| Ok(())).err().unwrap();
    assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
}

#[test]
fn checkpoints_round_trip_through_files() {
    let params = TransducerParams::init(&net(), 9).unwrap();
    let path = std::env::temp_dir().join(format!("ckpt-{}.json", std::process::id()));
    params.to_checkpoint().save(&path).unwrap();
    let back = TransducerParams::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).unwrap();
    for ((_, a), (_, b)) in params.tensors().into_iter().zip(back.tensors()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(params.config, back.config);
}
