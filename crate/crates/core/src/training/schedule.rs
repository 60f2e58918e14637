//! Learning-rate schedule: linear warmup, then multiplicative decay when the
//! dev loss stops improving, with an optional reset to the peak rate.

/// Parameters of [`LrSchedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrScheduleConfig {
    pub peak_lr: f64,
    pub warmup_from: f64,
    pub warmup_steps: u64,
    pub decay: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    cfg: LrScheduleConfig,
    step: u64,
    current: f64,
    best: f64,
    bad_evals: usize,
}

impl LrSchedule {
    pub fn new(cfg: LrScheduleConfig) -> Self {
        Self {
            cfg,
            step: 0,
            current: cfg.peak_lr,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.cfg.warmup_steps
    }

    /// Rate for the current optimizer step.
    pub fn lr(&self) -> f64 {
        if self.in_warmup() {
            let frac = self.step as f64 / self.cfg.warmup_steps as f64;
            self.cfg.warmup_from + (self.cfg.peak_lr - self.cfg.warmup_from) * frac
        } else {
            self.current
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Feeds one dev-loss evaluation. Plateaus only count once warmup is over.
    pub fn observe(&mut self, dev_loss: f64) {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.bad_evals = 0;
            return;
        }
        if self.in_warmup() {
            return;
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.cfg.patience {
            self.current *= self.cfg.decay;
            self.bad_evals = 0;
        }
    }

    /// Back to the peak rate; the plateau tracker starts over.
    pub fn reset(&mut self) {
        self.current = self.cfg.peak_lr;
        self.best = f64::INFINITY;
        self.bad_evals = 0;
    }
}
