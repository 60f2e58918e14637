//! A small monotonic transduction task with acoustically confusable label
//! pairs and two different text priors, so that an external LM trained on
//! the test-domain prior can correct the acoustic model and the transducer's
//! own learned prior is the wrong one.
//!
//! Labels come in pairs `(2p, 2p + 1)` whose feature embeddings differ only
//! by `pair_separation`. Which member follows a given label is biased by the
//! text prior; the train and test priors prefer opposite members.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::lm::{TableEntry, TableLm};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Number of labels; must be even.
    pub num_labels: usize,
    pub feature_dim: usize,
    /// Per-frame Gaussian noise standard deviation.
    pub noise: f64,
    /// Distance between the two embeddings of a pair.
    pub pair_separation: f64,
    /// Norm of each pair's shared embedding.
    pub pair_spread: f64,
    pub min_stretch: usize,
    pub max_stretch: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of the preferred pair member under the test prior.
    pub test_bias: f64,
    /// Probability of the preferred member under the train prior, which
    /// prefers the other member.
    pub train_bias: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_labels: 8,
            feature_dim: 8,
            noise: 0.6,
            pair_separation: 0.6,
            pair_spread: 3.0,
            min_stretch: 1,
            max_stretch: 4,
            min_len: 2,
            max_len: 6,
            test_bias: 0.9,
            train_bias: 0.75,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 || !self.num_labels.is_multiple_of(2) {
            return Err(Error::invalid("synthetic vocabulary size must be even and >= 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.min_stretch == 0 || self.min_stretch > self.max_stretch {
            return Err(Error::invalid("need 1 <= min_stretch <= max_stretch"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("need 1 <= min_len <= max_len"));
        }
        for b in [self.test_bias, self.train_bias] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid("biases must be probabilities"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Train,
    Test,
}

/// First-order label prior. Row `K` is the sentence start.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramPrior {
    pub trans: Vec<Vec<f64>>,
}

impl BigramPrior {
    fn new(num_labels: usize, bias: f64, flip: usize) -> Self {
        let pairs = num_labels / 2;
        let trans = (0..=num_labels)
            .map(|prev| {
                let prev_key = if prev == num_labels { 0 } else { prev };
                (0..num_labels)
                    .map(|l| {
                        let (p, m) = (l / 2, l % 2);
                        let preferred = (prev_key + p + flip) % 2;
                        let w = if m == preferred { bias } else { 1.0 - bias };
                        w / pairs as f64
                    })
                    .collect()
            })
            .collect();
        Self { trans }
    }

    pub fn num_labels(&self) -> usize {
        self.trans.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut prev = self.num_labels();
        (0..len)
            .map(|_| {
                let row = &self.trans[prev];
                let mut u: f64 = rng.random();
                let mut next = row.len() - 1;
                for (l, &p) in row.iter().enumerate() {
                    if u < p {
                        next = l;
                        break;
                    }
                    u -= p;
                }
                prev = next;
                next
            })
            .collect()
    }

    /// The prior as a table LM; EOS gets a fixed stop probability.
    pub fn to_table_lm(&self, eos: f64) -> Result<TableLm> {
        let k = self.num_labels();
        let entries = (0..=k)
            .map(|prev| {
                let mut probs: Vec<f64> = self.trans[prev].iter().map(|p| p * (1.0 - eos)).collect();
                probs.push(eos);
                TableEntry {
                    history: if prev == k { vec![] } else { vec![prev] },
                    probs,
                }
            })
            .collect();
        TableLm::new(k, entries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub config: SyntheticConfig,
    /// One feature vector per label.
    pub embeddings: Vec<Vec<f64>>,
    pub train_prior: BigramPrior,
    pub test_prior: BigramPrior,
}

impl SyntheticTask {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0]));
        let dim = config.feature_dim;
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let mut embeddings = Vec::with_capacity(config.num_labels);
        for _ in 0..config.num_labels / 2 {
            let base = unit(&mut rng);
            let dir = unit(&mut rng);
            for sign in [-0.5, 0.5] {
                embeddings.push(
                    base.iter()
                        .zip(&dir)
                        .map(|(b, d)| config.pair_spread * b + sign * config.pair_separation * d)
                        .collect(),
                );
            }
        }
        Ok(Self {
            train_prior: BigramPrior::new(config.num_labels, config.train_bias, 1),
            test_prior: BigramPrior::new(config.num_labels, config.test_bias, 0),
            embeddings,
            config,
        })
    }

    pub fn prior(&self, domain: Domain) -> &BigramPrior {
        match domain {
            Domain::Train => &self.train_prior,
            Domain::Test => &self.test_prior,
        }
    }

    /// `n` label sequences from a domain's prior, keyed by `stream`.
    pub fn text(&self, domain: Domain, n: usize, stream: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[1, stream]));
        (0..n)
            .map(|_| {
                let len = rng.random_range(self.config.min_len..=self.config.max_len);
                self.prior(domain).sample(len, &mut rng)
            })
            .collect()
    }

    /// Noisy, time-stretched features for a transcript.
    pub fn render<R: Rng + ?Sized>(&self, transcript: &[usize], rng: &mut R) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, self.config.noise).expect("validated noise");
        let mut frames = Vec::new();
        for &l in transcript {
            let stretch = rng.random_range(self.config.min_stretch..=self.config.max_stretch);
            for _ in 0..stretch {
                frames.push(self.embeddings[l].iter().map(|e| e + noise.sample(rng)).collect());
            }
        }
        frames
    }

    pub fn utterances(&self, domain: Domain, n: usize, stream: u64, prefix: &str) -> Vec<Utterance> {
        let texts = self.text(domain, n, stream);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[2, stream]));
        texts
            .into_iter()
            .enumerate()
            .map(|(i, transcript)| Utterance {
                id: format!("{prefix}-{i:06}"),
                features: self.render(&transcript, &mut rng),
                transcript,
            })
            .collect()
    }
}

/// Everything one synthetic experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub task: SyntheticTask,
    /// Audio with train-prior transcripts.
    pub train: Vec<Utterance>,
    /// Audio with test-prior transcripts, for tuning.
    pub dev: Vec<Utterance>,
    /// Held-out audio with test-prior transcripts, for reporting.
    pub test: Vec<Utterance>,
    /// Test-prior text for the external LM.
    pub lm_text: Vec<Vec<usize>>,
}

/// Split sizes for [`make_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub lm_text: usize,
}

pub fn make_synthetic(config: SyntheticConfig, sizes: SplitSizes) -> Result<SyntheticData> {
    let task = SyntheticTask::new(config)?;
    Ok(SyntheticData {
        train: task.utterances(Domain::Train, sizes.train, 10, "train"),
        dev: task.utterances(Domain::Test, sizes.dev, 11, "dev"),
        test: task.utterances(Domain::Test, sizes.test, 13, "test"),
        lm_text: task.text(Domain::Test, sizes.lm_text, 12),
        task,
    })
}

/// Shuffles tokens within each sentence, destroying local order while
/// keeping unigram statistics.
pub fn shuffle_tokens(corpus: &[Vec<usize>], seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.shuffle(&mut rng);
            s
        })
        .collect()
}
