//! Discrete-event simulation of asynchronous workers that periodically
//! average their parameters, either after a fixed number of local steps or
//! after a fixed virtual-time interval.
//!
//! Workers never interact between sync events, so each round is simulated by
//! advancing every worker up to the round's end and then ordering the
//! resulting step events by `(time, worker)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::derive_seed;
use crate::tensor::Tensor;
use crate::training::{Adam, AdamConfig};

/// How a worker orders the data set within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShufflePolicy {
    /// Worker `index` of `of` reads samples `i ≡ index (mod of)` in order.
    Stride { index: usize, of: usize },
    /// A fresh permutation of the whole data set per epoch.
    Seed(u64),
}

/// Sample order for one epoch.
pub fn shuffle_order(policy: ShufflePolicy, dataset_size: usize, epoch: u64) -> Vec<usize> {
    match policy {
        ShufflePolicy::Stride { index, of } => (index..dataset_size).step_by(of.max(1)).collect(),
        ShufflePolicy::Seed(seed) => {
            let mut order: Vec<usize> = (0..dataset_size).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch]));
            order.shuffle(&mut rng);
            order
        }
    }
}

/// Virtual seconds taken by one local step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Fixed(f64),
    /// Uniform in `[mean - spread, mean + spread]`, keyed by (seed, worker, step).
    Jitter { mean: f64, spread: f64, seed: u64 },
}

impl DurationModel {
    pub fn duration(&self, worker: usize, step: u64) -> f64 {
        match *self {
            DurationModel::Fixed(d) => d,
            DurationModel::Jitter { mean, spread, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[worker as u64, step]));
                mean + spread * rng.random_range(-1.0..=1.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let min = match *self {
            DurationModel::Fixed(d) => d,
            DurationModel::Jitter { mean, spread, .. } => mean - spread.abs(),
        };
        if min > 0.0 && min.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("step durations must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerModel {
    pub shuffle: ShufflePolicy,
    pub duration: DurationModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPolicy {
    EveryNSteps(u64),
    /// Sync events at multiples of `τ` virtual seconds.
    EveryTSeconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalOptimizer {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub workers: Vec<WorkerModel>,
    pub sync: SyncPolicy,
    pub total_time: f64,
    /// Virtual seconds every sync costs before workers resume.
    pub sync_delay: f64,
    pub optimizer: LocalOptimizer,
    /// Also average Adam moments at sync.
    pub average_optimizer_state: bool,
    pub batch_size: usize,
    /// Size of one sample for the read counters.
    pub sample_bytes: u64,
}

impl Default for SimConfig {
    /// Four workers, the last one twice as slow, averaged every 10 s.
    fn default() -> Self {
        Self {
            workers: heterogeneous_workers(4, 1.0, &[3], 2.0, 1),
            sync: SyncPolicy::EveryTSeconds(10.0),
            total_time: 200.0,
            sync_delay: 0.5,
            optimizer: LocalOptimizer::Sgd { lr: 0.05 },
            average_optimizer_state: false,
            batch_size: 4,
            sample_bytes: 4096,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.workers.is_empty() {
            return Err(Error::invalid("simulation needs at least one worker"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for w in &self.workers {
            w.duration.validate()?;
            if let ShufflePolicy::Stride { index, of } = w.shuffle {
                if index >= of {
                    return Err(Error::invalid("stride index must be below the worker count"));
                }
            }
        }
        match self.sync {
            SyncPolicy::EveryNSteps(0) => return Err(Error::invalid("sync interval n must be >= 1")),
            SyncPolicy::EveryTSeconds(tau) if !(tau > self.sync_delay && tau.is_finite()) => {
                return Err(Error::invalid("sync interval must be positive and exceed the sync delay"));
            }
            _ => {}
        }
        if !(self.sync_delay >= 0.0 && self.total_time.is_finite()) {
            return Err(Error::invalid("sync_delay and total_time must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A differentiable objective over a sample set.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn num_samples(&self) -> usize;
    /// Mean loss over all samples.
    fn value(&self, params: &[f64]) -> f64;
    /// Gradient of one sample's loss.
    fn grad(&self, params: &[f64], sample: usize) -> Vec<f64>;
}

/// `f_i(w) = ½ Σ_d c_d (w_d − a_{i,d})²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
}

impl Quadratic {
    pub fn random(dim: usize, samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curvature = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
        let targets = (0..samples)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self { curvature, targets }
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn num_samples(&self) -> usize {
        self.targets.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let total: f64 = self
            .targets
            .iter()
            .map(|a| {
                w.iter()
                    .zip(a)
                    .zip(&self.curvature)
                    .map(|((w, a), c)| 0.5 * c * (w - a) * (w - a))
                    .sum::<f64>()
            })
            .sum();
        total / self.targets.len() as f64
    }

    fn grad(&self, w: &[f64], sample: usize) -> Vec<f64> {
        let a = &self.targets[sample];
        w.iter().zip(a).zip(&self.curvature).map(|((w, a), c)| c * (w - a)).collect()
    }
}

struct Worker {
    id: usize,
    model: WorkerModel,
    params: Tensor,
    adam: Option<Adam<Tensor>>,
    steps: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    bytes_read: u64,
}

impl Worker {
    fn new(id: usize, model: WorkerModel, init: &[f64], optimizer: LocalOptimizer) -> Self {
        let params = Tensor {
            shape: vec![init.len()],
            data: init.to_vec(),
        };
        let adam = matches!(optimizer, LocalOptimizer::Adam { .. }).then(|| Adam::new(&params, AdamConfig::default()));
        Self {
            id,
            model,
            params,
            adam,
            steps: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            bytes_read: 0,
        }
    }

    fn next_sample(&mut self, n: usize, sample_bytes: u64) -> usize {
        while self.cursor >= self.order.len() {
            self.order = shuffle_order(self.model.shuffle, n, self.epoch);
            self.epoch += 1;
            self.cursor = 0;
            if let ShufflePolicy::Stride { .. } = self.model.shuffle {
                // striding still scans the whole file to pick its subset
                self.bytes_read += n as u64 * sample_bytes;
            }
        }
        if let ShufflePolicy::Seed(_) = self.model.shuffle {
            self.bytes_read += sample_bytes;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn step<O: Objective>(&mut self, obj: &O, cfg_opt: LocalOptimizer, batch: usize, sample_bytes: u64) -> Result<()> {
        let mut g = vec![0.0; obj.dim()];
        for _ in 0..batch {
            let s = self.next_sample(obj.num_samples(), sample_bytes);
            for (gi, x) in g.iter_mut().zip(obj.grad(&self.params.data, s)) {
                *gi += x;
            }
        }
        for gi in &mut g {
            *gi /= batch as f64;
        }
        match (cfg_opt, self.adam.as_mut()) {
            (LocalOptimizer::Adam { lr }, Some(adam)) => {
                let grads = Tensor {
                    shape: self.params.shape.clone(),
                    data: g,
                };
                adam.step(&mut self.params, &grads, lr)?;
            }
            (LocalOptimizer::Sgd { lr }, _) => {
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("worker gradient".into()));
                }
                for (p, gi) in self.params.data.iter_mut().zip(g) {
                    *p -= lr * gi;
                }
            }
            _ => unreachable!("Adam state exists iff the optimizer is Adam"),
        }
        self.steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    /// `None` for a sync event.
    pub worker: Option<usize>,
    /// Local steps of the worker, or total steps across workers at a sync.
    pub steps: u64,
    /// Objective of the worker's parameters, or of the average at a sync.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub trace: Vec<TraceEvent>,
    pub steps_per_worker: Vec<u64>,
    pub syncs: usize,
    pub bytes_read: Vec<u64>,
    /// Every worker's parameters right after each sync.
    pub post_sync_params: Vec<Vec<Vec<f64>>>,
    /// Mean of the workers' final parameters.
    pub final_params: Vec<f64>,
    pub end_time: f64,
}

impl SimResult {
    pub fn total_steps(&self) -> u64 {
        self.steps_per_worker.iter().sum()
    }

    pub fn trace_tsv(&self) -> String {
        let mut out = String::from("time\tworker\tsteps\tobjective\n");
        for e in &self.trace {
            let w = e.worker.map_or_else(|| "sync".to_string(), |w| w.to_string());
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.time, w, e.steps, e.objective));
        }
        out
    }
}

fn average(tensors: &[&Tensor]) -> Vec<f64> {
    let n = tensors.len() as f64;
    let mut mean = vec![0.0; tensors[0].data.len()];
    for t in tensors {
        for (m, x) in mean.iter_mut().zip(&t.data) {
            *m += x;
        }
    }
    mean.iter().map(|m| m / n).collect()
}

/// Runs the simulation from shared initial parameters.
pub fn simulate<O: Objective>(cfg: &SimConfig, objective: &O, init: &[f64]) -> Result<SimResult> {
    cfg.validate()?;
    if init.len() != objective.dim() {
        return Err(Error::ShapeMismatch {
            what: "initial parameters".into(),
            expected: vec![objective.dim()],
            found: vec![init.len()],
        });
    }
    if objective.num_samples() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut workers: Vec<Worker> = cfg
        .workers
        .iter()
        .enumerate()
        .map(|(i, m)| Worker::new(i, *m, init, cfg.optimizer))
        .collect();
    let mut trace = Vec::new();
    let mut post_sync = Vec::new();
    let mut start = 0.0;
    let mut syncs = 0usize;

    while start < cfg.total_time {
        let mut events: Vec<TraceEvent> = Vec::new();
        let mut finish = Vec::with_capacity(workers.len());
        let (deadline, quota) = match cfg.sync {
            SyncPolicy::EveryTSeconds(tau) => (((syncs + 1) as f64 * tau).min(cfg.total_time), u64::MAX),
            SyncPolicy::EveryNSteps(n) => (cfg.total_time, n),
        };
        let mut all_done = true;
        for w in &mut workers {
            let mut now = start;
            let mut done = 0;
            while done < quota {
                let d = w.model.duration.duration(w.id, w.steps);
                if now + d > deadline {
                    break;
                }
                w.step(objective, cfg.optimizer, cfg.batch_size, cfg.sample_bytes)?;
                now += d;
                done += 1;
                events.push(TraceEvent {
                    time: now,
                    worker: Some(w.id),
                    steps: w.steps,
                    objective: objective.value(&w.params.data),
                });
            }
            all_done &= done == quota;
            finish.push(now);
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.worker.cmp(&b.worker)));
        trace.extend(events);

        let sync_time = match cfg.sync {
            SyncPolicy::EveryTSeconds(tau) => {
                let t = (syncs + 1) as f64 * tau;
                (t <= cfg.total_time).then_some(t)
            }
            SyncPolicy::EveryNSteps(_) => all_done.then(|| finish.iter().copied().fold(start, f64::max)),
        };
        let Some(sync_time) = sync_time else { break };

        let mean = average(&workers.iter().map(|w| &w.params).collect::<Vec<_>>());
        let moments = if cfg.average_optimizer_state {
            workers[0].adam.as_ref().map(|_| {
                let m: Vec<&Tensor> = workers.iter().map(|w| &w.adam.as_ref().unwrap().first_moment).collect();
                let v: Vec<&Tensor> = workers.iter().map(|w| &w.adam.as_ref().unwrap().second_moment).collect();
                (average(&m), average(&v))
            })
        } else {
            None
        };
        for w in &mut workers {
            w.params.data.clone_from(&mean);
            if let (Some((m, v)), Some(adam)) = (&moments, w.adam.as_mut()) {
                adam.first_moment.data.clone_from(m);
                adam.second_moment.data.clone_from(v);
            }
        }
        syncs += 1;
        post_sync.push(workers.iter().map(|w| w.params.data.clone()).collect());
        trace.push(TraceEvent {
            time: sync_time,
            worker: None,
            steps: workers.iter().map(|w| w.steps).sum(),
            objective: objective.value(&mean),
        });
        start = sync_time + cfg.sync_delay;
    }

    let final_params = average(&workers.iter().map(|w| &w.params).collect::<Vec<_>>());
    let end_time = trace.last().map_or(0.0, |e| e.time);
    Ok(SimResult {
        trace,
        steps_per_worker: workers.iter().map(|w| w.steps).collect(),
        syncs,
        bytes_read: workers.iter().map(|w| w.bytes_read).collect(),
        post_sync_params: post_sync,
        final_params,
        end_time,
    })
}

/// Plain sequential training with one worker's data order and optimizer.
/// Returns `(steps, objective)` after every step and the final parameters.
pub fn train_local<O: Objective>(
    objective: &O,
    init: &[f64],
    model: WorkerModel,
    optimizer: LocalOptimizer,
    batch_size: usize,
    steps: u64,
) -> Result<(Vec<(u64, f64)>, Vec<f64>)> {
    let mut w = Worker::new(0, model, init, optimizer);
    let mut trace = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        w.step(objective, optimizer, batch_size, 0)?;
        trace.push((w.steps, objective.value(&w.params.data)));
    }
    Ok((trace, w.params.data))
}

/// Workers with seed shuffling, equal speed except the ones listed in
/// `slow` which take `slow_factor` times longer per step.
pub fn heterogeneous_workers(n: usize, base_duration: f64, slow: &[usize], slow_factor: f64, seed: u64) -> Vec<WorkerModel> {
    (0..n)
        .map(|i| WorkerModel {
            shuffle: ShufflePolicy::Seed(derive_seed(seed, &[i as u64])),
            duration: DurationModel::Fixed(if slow.contains(&i) {
                base_duration * slow_factor
            } else {
                base_duration
            }),
        })
        .collect()
}
