//! Full-sum training: Adam, warmup and plateau LR schedule, length
//! curriculum and a two-phase regularization schedule.

mod adam;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use schedule::{LrSchedule, LrScheduleConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{check_dataset, Utterance};
use crate::error::{Error, Result};
use crate::loss::{batch_nll, corpus_loss};
use crate::network::{Mode, TransducerParams};
use crate::numeric::derive_seed;
use crate::par::Execution;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_from: f64,
    pub warmup_steps: u64,
    /// Multiplicative LR decay on a dev-loss plateau.
    pub decay: f64,
    /// Non-improving dev evaluations tolerated before decaying.
    pub patience: usize,
    /// 1-based epoch at whose start the LR returns to `peak_lr`.
    pub lr_reset_epoch: Option<usize>,
    pub epochs: usize,
    /// Batches are filled up to this many input frames.
    pub max_frames_per_batch: usize,
    /// Input-frame length limit for epoch 1; `None` disables the curriculum.
    pub curriculum_initial_max_len: Option<usize>,
    /// Factor applied to the length limit after each epoch.
    pub curriculum_growth: f64,
    /// Epochs run with reduced zoneout and weight dropout.
    pub reg_phase1_epochs: usize,
    /// Factor on the configured rates during those epochs.
    pub reg_phase1_scale: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_from: 1e-4,
            warmup_steps: 100,
            decay: 0.7,
            patience: 1,
            lr_reset_epoch: None,
            epochs: 10,
            max_frames_per_batch: 400,
            curriculum_initial_max_len: None,
            curriculum_growth: 2.0,
            reg_phase1_epochs: 0,
            reg_phase1_scale: 0.5,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_from > 0.0 && self.warmup_from <= self.peak_lr && self.peak_lr.is_finite()) {
            return Err(Error::invalid("need 0 < warmup_from <= peak_lr"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1)"));
        }
        if self.patience == 0 || self.max_frames_per_batch == 0 {
            return Err(Error::invalid("patience and max_frames_per_batch must be positive"));
        }
        if !(self.curriculum_growth >= 1.0) {
            return Err(Error::invalid("curriculum_growth must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.reg_phase1_scale) {
            return Err(Error::invalid("reg_phase1_scale must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrScheduleConfig {
        LrScheduleConfig {
            peak_lr: self.peak_lr,
            warmup_from: self.warmup_from,
            warmup_steps: self.warmup_steps,
            decay: self.decay,
            patience: self.patience,
        }
    }

    /// Input-frame length limit in a 1-based epoch.
    pub fn length_limit(&self, epoch: usize) -> Option<usize> {
        self.curriculum_initial_max_len.map(|l| {
            let grown = l as f64 * self.curriculum_growth.powi(epoch as i32 - 1);
            if grown >= usize::MAX as f64 {
                usize::MAX
            } else {
                grown as usize
            }
        })
    }
}

/// One line of the metric log, written after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss per utterance over the epoch.
    pub train_loss: f64,
    /// Mean dev loss per utterance, evaluated without regularization noise.
    pub dev_loss: Option<f64>,
}

pub struct TrainOutput {
    /// Parameters with the lowest dev loss (the final ones without dev data).
    pub best: TransducerParams,
    pub best_epoch: usize,
    pub last: TransducerParams,
    pub log: Vec<MetricRecord>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
}

/// Batches of indices for one epoch: the curriculum filter, a seeded
/// shuffle, then greedy packing up to `max_frames_per_batch` input frames.
/// The shortest utterance always qualifies so no epoch is empty.
pub fn epoch_batches(data: &[Utterance], cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let shortest = data.iter().map(Utterance::num_frames).min().unwrap_or(0);
    let limit = cfg.length_limit(epoch).map(|l| l.max(shortest));
    let mut order: Vec<usize> = (0..data.len())
        .filter(|&i| limit.is_none_or(|l| data[i].num_frames() <= l))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, epoch as u64]));
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut frames = 0;
    for i in order {
        let n = data[i].num_frames();
        if !cur.is_empty() && frames + n > cfg.max_frames_per_batch {
            batches.push(std::mem::take(&mut cur));
            frames = 0;
        }
        cur.push(i);
        frames += n;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Trains from `params`. `on_epoch` sees every epoch's record and the current
/// parameters (for checkpointing).
pub fn train<F>(
    mut params: TransducerParams,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    cfg: &TrainConfig,
    exec: Execution,
    mut on_epoch: F,
) -> Result<TrainOutput>
where
    F: FnMut(&MetricRecord, &TransducerParams) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_dataset(train_set, params.config.input_dim, params.num_labels())?;
    check_dataset(dev_set, params.config.input_dim, params.num_labels())?;

    let base_rates = (params.config.zoneout, params.config.encoder_weight_dropout);
    let mut adam = Adam::new(&params, cfg.adam);
    let mut sched = LrSchedule::new(cfg.schedule());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut lr_trace = Vec::new();
    let mut best: Option<(f64, usize, TransducerParams)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.lr_reset_epoch == Some(epoch) {
            sched.reset();
        }
        let scale = if epoch <= cfg.reg_phase1_epochs { cfg.reg_phase1_scale } else { 1.0 };
        params.config.zoneout = base_rates.0 * scale;
        params.config.encoder_weight_dropout = base_rates.1 * scale;

        let mut epoch_loss = 0.0;
        let mut epoch_items = 0usize;
        for (b, idx) in epoch_batches(train_set, cfg, epoch).into_iter().enumerate() {
            let batch: Vec<&Utterance> = idx.iter().map(|&i| &train_set[i]).collect();
            let step = sched.steps();
            let diverged = |loss: f64| Error::Divergence { epoch, batch: b, loss };
            let out = batch_nll(
                &params,
                &batch,
                |i| Mode::Train {
                    seed: derive_seed(cfg.seed, &[1, step, i as u64]),
                },
                exec,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => diverged(f64::NAN),
                e => e,
            })?;
            let mut grads = out.grads;
            grads.scale(1.0 / batch.len() as f64);
            let lr = sched.lr();
            adam.step(&mut params, &grads, lr).map_err(|_| diverged(out.loss))?;
            lr_trace.push(lr);
            sched.advance();
            epoch_loss += out.loss;
            epoch_items += batch.len();
        }

        params.config.zoneout = base_rates.0;
        params.config.encoder_weight_dropout = base_rates.1;
        let dev_loss = if dev_set.is_empty() {
            None
        } else {
            Some(corpus_loss(&params, dev_set, exec)? / dev_set.len() as f64)
        };
        if let Some(d) = dev_loss {
            sched.observe(d);
            if best.as_ref().is_none_or(|(b, _, _)| d < *b) {
                best = Some((d, epoch, params.clone()));
            }
        }
        let record = MetricRecord {
            step: sched.steps(),
            epoch,
            lr: sched.lr(),
            train_loss: epoch_loss / epoch_items as f64,
            dev_loss,
        };
        on_epoch(&record, &params)?;
        log.push(record);
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs, params.clone()),
    };
    Ok(TrainOutput {
        best: best_params,
        best_epoch,
        last: params,
        log,
        lr_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn utt(id: usize, frames: usize) -> Utterance {
        Utterance {
            id: format!("u{id}"),
            features: vec![vec![0.1 * id as f64, 0.2]; frames],
            transcript: vec![id % 2],
        }
    }

    #[test]
    fn curriculum_limits_first_epoch() {
        let data: Vec<Utterance> = (0..10).map(|i| utt(i, 2 + i)).collect();
        let cfg = TrainConfig {
            curriculum_initial_max_len: Some(5),
            max_frames_per_batch: 8,
            ..Default::default()
        };
        let b1 = epoch_batches(&data, &cfg, 1);
        let ids: Vec<usize> = b1.iter().flatten().copied().collect();
        assert!(ids.iter().all(|&i| data[i].num_frames() <= 5));
        assert_eq!(ids.len(), 4);
        for b in &b1 {
            let f: usize = b.iter().map(|&i| data[i].num_frames()).sum();
            assert!(f <= 8 || b.len() == 1);
        }
        let b2: usize = epoch_batches(&data, &cfg, 2).iter().map(Vec::len).sum();
        assert_eq!(b2, 9);
        let all: usize = epoch_batches(&data, &TrainConfig::default(), 1).iter().map(Vec::len).sum();
        assert_eq!(all, 10);
    }

    #[test]
    fn shortest_utterance_always_qualifies() {
        let data: Vec<Utterance> = (0..3).map(|i| utt(i, 10)).collect();
        let cfg = TrainConfig {
            curriculum_initial_max_len: Some(2),
            ..Default::default()
        };
        assert_eq!(epoch_batches(&data, &cfg, 1).iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            warmup_from: 1e-2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            decay: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = NetworkConfig {
            input_dim: 3,
            num_labels: 2,
            ..Default::default()
        };
        let params = TransducerParams::init(&net, 0).unwrap();
        let data = vec![utt(0, 3)];
        let err = train(params, &data, &[], &TrainConfig::default(), Execution::Sequential, |_, _| Ok(()));
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }
}
