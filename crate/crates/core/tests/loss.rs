mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use transducer::data::Utterance;
use transducer::loss::{backward_beta, batch_nll, best_path_score, edge_posteriors, forward_alpha, full_sum_nll, Lattice};
use transducer::network::{forward_grid, Mode, NetworkConfig};
use transducer::numeric::logsumexp;
use transducer::tensor::ParamSet;
use transducer::vocab::{enumerate_alignments, LabelSeq};
use transducer::Execution;

fn random_lattice(seed: u64, t: usize, s: usize) -> Lattice {
    let mut r = rng(seed);
    let blank = (0..t * (s + 1)).map(|_| -r.random_range(0.01..4.0)).collect();
    let emit = (0..t * s).map(|_| -r.random_range(0.01..4.0)).collect();
    Lattice::new(t, s, blank, emit).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_matches_enumeration(seed in any::<u64>(), t in 1usize..6, s in 0usize..5) {
        let lat = random_lattice(seed, t, s);
        let (_, ll) = forward_alpha(&lat);
        let y = LabelSeq(vec![0; s]);
        let paths: Vec<f64> = enumerate_alignments(&y, t, 1 << 20)
            .unwrap()
            .iter()
            .map(|a| lat.path_score(a))
            .collect();
        prop_assert!((ll - logsumexp(&paths)).abs() < 1e-10);
        let best = paths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best_path_score(&lat) - best).abs() < 1e-12);
        prop_assert!(best <= ll + 1e-12);
    }

    #[test]
    fn occupancy_conserves_mass(seed in any::<u64>(), t in 1usize..7, s in 0usize..5) {
        let lat = random_lattice(seed, t, s);
        let (alpha, ll) = forward_alpha(&lat);
        let beta = backward_beta(&lat);
        let occ = edge_posteriors(&lat, &alpha, &beta, ll);
        // every path takes exactly t blanks and s labels
        let blanks: f64 = occ.blank.iter().sum();
        let labels: f64 = occ.emit.iter().sum();
        prop_assert!((blanks - t as f64).abs() < 1e-9);
        prop_assert!((labels - s as f64).abs() < 1e-9);
        prop_assert!(occ.blank.iter().chain(&occ.emit).all(|&p| (-1e-12..=1.0 + 1e-9).contains(&p)));
    }
}

#[test]
fn network_loss_matches_enumeration_with_pooling() {
    let mut r = rng(5);
    for _ in 0..20 {
        let cfg = NetworkConfig {
            input_dim: 3,
            num_labels: 3,
            encoder_layers: 2,
            encoder_hidden: 3,
            pooling: vec![2, 1],
            slow_embed: 3,
            slow_hidden: 3,
            readout_dim: 3,
            ..Default::default()
        };
        let params = random_params(&cfg, 0.3, &mut r);
        let x = random_features(r.random_range(1..=9), 3, &mut r);
        let y = random_labels(r.random_range(0..=4), 3, &mut r);
        let dp = full_sum_nll(&params, &x, &y, Mode::Eval).unwrap().loss;
        assert!((dp - oracle_nll(&params, &x, &y)).abs() < 1e-9);
    }
}

#[test]
fn train_mode_is_reproducible_and_differs_from_eval() {
    let mut r = rng(6);
    let cfg = NetworkConfig {
        input_dim: 3,
        num_labels: 3,
        zoneout: 0.3,
        encoder_weight_dropout: 0.3,
        ..Default::default()
    };
    let params = random_params(&cfg, 0.1, &mut r);
    let x = random_features(5, 3, &mut r);
    let y = vec![0, 2];
    let a = full_sum_nll(&params, &x, &y, Mode::Train { seed: 9 }).unwrap();
    let b = full_sum_nll(&params, &x, &y, Mode::Train { seed: 9 }).unwrap();
    let c = full_sum_nll(&params, &x, &y, Mode::Eval).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_ne!(a.loss, c.loss);
}

#[test]
fn batch_reduction_is_execution_independent() {
    let mut r = rng(7);
    let cfg = NetworkConfig {
        input_dim: 4,
        num_labels: 5,
        ..Default::default()
    };
    let params = random_params(&cfg, 0.1, &mut r);
    let data: Vec<Utterance> = (0..12)
        .map(|i| Utterance {
            id: i.to_string(),
            features: random_features(r.random_range(2..10), 4, &mut r),
            transcript: random_labels(r.random_range(0..4), 5, &mut r),
        })
        .collect();
    let batch: Vec<&Utterance> = data.iter().collect();
    let mode = |i: usize| Mode::Train { seed: i as u64 };
    let seq = batch_nll(&params, &batch, mode, Execution::Sequential).unwrap();
    let par = batch_nll(&params, &batch, mode, Execution::Parallel).unwrap();
    assert_eq!(seq.loss.to_bits(), par.loss.to_bits());
    for ((_, a), (_, b)) in seq.grads.tensors().into_iter().zip(par.grads.tensors()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn grid_rows_match_decoder_steps() {
    let mut r = rng(8);
    let cfg = NetworkConfig {
        input_dim: 2,
        num_labels: 4,
        ..Default::default()
    };
    let params = random_params(&cfg, 0.2, &mut r);
    let x = random_features(4, 2, &mut r);
    let y = vec![3, 1, 1];
    let grid = forward_grid(&params, &x, &y, Mode::Eval).unwrap();
    let enc = params.encode(&x).unwrap();
    for t in 0..grid.num_frames() {
        for s in 0..=y.len() {
            let z = params.slow_history(&y[..s]).unwrap().z;
            let out = params.decoder_step(&enc.frames[t], &z).unwrap();
            assert!((grid.log_blank[t * (y.len() + 1) + s] - out.log_blank).abs() < 1e-12);
            if s < y.len() {
                let want = out.log_emit + out.log_q[y[s]];
                assert!((grid.log_emit[t * y.len() + s] - want).abs() < 1e-12);
            }
        }
    }
}
