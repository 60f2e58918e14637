//! A one-layer LSTM language model over labels plus EOS.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::network::lstm::{self, LstmParams, LstmState, ZoneoutMask};
use crate::numeric::{log_softmax, softmax};
use crate::par::Execution;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, Checkpoint, ParamSet, Tensor};
use crate::training::{Adam, AdamConfig};

pub const LM_KIND: &str = "lstm_lm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub num_labels: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            num_labels: 8,
            embed: 16,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    pub config: LmConfig,
    /// Row `num_labels` is the begin-of-sentence input.
    pub embed: Tensor,
    pub lstm: LstmParams,
    /// `K + 1` outputs, EOS last.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLmState {
    pub lstm: LstmState,
    /// Number of labels consumed.
    pub len: usize,
}

impl RnnLm {
    pub fn init(config: &LmConfig, seed: u64) -> Result<Self> {
        if config.num_labels == 0 || config.embed == 0 || config.hidden == 0 {
            return Err(Error::invalid("LM dims must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.num_labels;
        Ok(Self {
            config: config.clone(),
            embed: Tensor::glorot(&[k + 1, config.embed], &mut rng),
            lstm: LstmParams::new(config.embed, config.hidden, &mut rng),
            out_w: Tensor::glorot(&[k + 1, config.hidden], &mut rng),
            out_b: Tensor::zeros(&[k + 1]),
        })
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let k1 = self.config.num_labels + 1;
        let mut out = vec![0.0; k1];
        matvec(&self.out_w.data, k1, self.config.hidden, h, &mut out);
        for (o, b) in out.iter_mut().zip(&self.out_b.data) {
            *o += b;
        }
        out
    }

    fn consume(&self, prev: &LstmState, row: usize) -> LstmState {
        let mask = ZoneoutMask::none(self.config.hidden);
        lstm::step(&self.lstm, &self.lstm.w_hh.data, self.embed.row(row), prev, &mask).0
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let cfg = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_params(LM_KIND, cfg, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != LM_KIND {
            return Err(Error::invalid(format!("expected a {LM_KIND} checkpoint, found {:?}", ckpt.kind)));
        }
        let config: LmConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut lm = Self::init(&config, 0)?;
        ckpt.load_into(&mut lm)?;
        Ok(lm)
    }

    /// Negative log-likelihood (labels + EOS) and its gradient for one sentence.
    pub fn sentence_grad(&self, sentence: &[usize]) -> Result<(f64, RnnLm)> {
        let k = self.config.num_labels;
        if let Some(&bad) = sentence.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!("token {bad} is not a label")));
        }
        let rows: Vec<&[f64]> = std::iter::once(k)
            .chain(sentence.iter().copied())
            .map(|r| self.embed.row(r))
            .collect();
        let masks = vec![ZoneoutMask::none(self.config.hidden); rows.len()];
        let run = lstm::run_sequence(&self.lstm, &rows, &masks, None);
        let mut grads = self.zeros_like();
        let mut nll = 0.0;
        let mut d_h = Vec::with_capacity(rows.len());
        for (i, h) in run.outputs.iter().enumerate() {
            let target = sentence.get(i).copied().unwrap_or(k);
            let logits = self.logits(h);
            nll -= log_softmax(&logits)[target];
            let mut d_logits = softmax(&logits);
            d_logits[target] -= 1.0;
            outer_acc(&mut grads.out_w.data, &d_logits, h);
            for (b, d) in grads.out_b.data.iter_mut().zip(&d_logits) {
                *b += d;
            }
            let mut dh = vec![0.0; self.config.hidden];
            matvec_t_acc(&self.out_w.data, k + 1, self.config.hidden, &d_logits, &mut dh);
            d_h.push(dh);
        }
        let dx = lstm::run_sequence_backward(&self.lstm, &run, &d_h, &mut grads.lstm);
        let e = self.config.embed;
        for (i, d) in dx.iter().enumerate() {
            let row = if i == 0 { k } else { sentence[i - 1] };
            for (g, v) in grads.embed.data[row * e..(row + 1) * e].iter_mut().zip(d) {
                *g += v;
            }
        }
        Ok((nll, grads))
    }
}

impl ParamSet for RnnLm {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let [w_ih, w_hh, b] = self.lstm.tensors();
        vec![
            ("embed".into(), &self.embed),
            ("lstm.w_ih".into(), w_ih),
            ("lstm.w_hh".into(), w_hh),
            ("lstm.bias".into(), b),
            ("out.w".into(), &self.out_w),
            ("out.b".into(), &self.out_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed];
        out.extend(self.lstm.tensors_mut());
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}

impl LanguageModel for RnnLm {
    type State = RnnLmState;

    fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    fn initial_state(&self) -> RnnLmState {
        RnnLmState {
            lstm: self.consume(&LstmState::zeros(self.config.hidden), self.config.num_labels),
            len: 0,
        }
    }

    fn log_probs(&self, state: &RnnLmState) -> Vec<f64> {
        log_softmax(&self.logits(&state.lstm.h))
    }

    fn advance(&self, state: &RnnLmState, label: usize) -> Result<RnnLmState> {
        if label >= self.config.num_labels {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        Ok(RnnLmState {
            lstm: self.consume(&state.lstm, label),
            len: state.len + 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub model: LmConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sentences per update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            model: LmConfig::default(),
            epochs: 5,
            learning_rate: 5e-3,
            batch_size: 16,
            seed: 1,
        }
    }
}

/// Trains on a text corpus; returns the model and the per-epoch mean
/// per-token training NLL.
pub fn train_rnn_lm(corpus: &[Vec<usize>], cfg: &LmTrainConfig, exec: Execution) -> Result<(RnnLm, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut lm = RnnLm::init(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(&lm, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a2b);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let results = exec.map(chunk, |&i| lm.sentence_grad(&corpus[i]));
            let mut grads = lm.zeros_like();
            let mut tokens = 0usize;
            for (r, &i) in results.into_iter().zip(chunk) {
                let (nll, g) = r?;
                epoch_nll += nll;
                tokens += corpus[i].len() + 1;
                grads.add_assign(&g);
            }
            epoch_tokens += tokens;
            grads.scale(1.0 / tokens as f64);
            adam.step(&mut lm, &grads, cfg.learning_rate)?;
        }
        history.push(epoch_nll / epoch_tokens as f64);
    }
    Ok((lm, history))
}
