//! SlowRNN over the label history and the Readout → (FF_emit, FF_Σ) heads.

use super::lstm::{self, LstmState, ZoneoutMask};
use super::params::TransducerParams;
use crate::error::{Error, Result};
use crate::numeric::{all_finite, log_sigmoid, log_softmax, sigmoid};
use crate::tensor::{matvec, matvec_t_acc, outer_acc};

/// Decoder distribution at one lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    /// `log p(Δt = 1)`, the blank.
    pub log_blank: f64,
    /// `log p(Δt = 0)`, emitting some label.
    pub log_emit: f64,
    /// `log q(·)` over the non-blank labels.
    pub log_q: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct JointCache {
    argmax: Vec<usize>,
    z: Vec<f64>,
    emit_logit: f64,
    q: Vec<f64>,
}

/// SlowRNN state after consuming a label history.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowState {
    pub lstm: LstmState,
    /// `z_slow`: the SlowRNN output.
    pub z: Vec<f64>,
    /// `W_slow z + b`, the slow half of the readout pre-activation.
    pub proj: Vec<f64>,
}

/// Input to the SlowRNN: a begin-of-sequence sentinel or a real label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlowInput {
    Bos,
    Label(usize),
}

impl TransducerParams {
    pub(crate) fn embedding_row(&self, input: SlowInput) -> Result<&[f64]> {
        let k = self.num_labels();
        match input {
            SlowInput::Bos => Ok(self.embed.row(k)),
            SlowInput::Label(id) if id < k => Ok(self.embed.row(id)),
            SlowInput::Label(id) if id == k => Err(Error::BlankNotAllowed("SlowRNN input")),
            SlowInput::Label(id) => Err(Error::invalid(format!("label {id} out of range"))),
        }
    }

    pub(crate) fn eval_zoneout(&self) -> ZoneoutMask {
        ZoneoutMask::expected(self.config.slow_hidden, self.config.zoneout)
    }

    fn slow_proj(&self, z: &[f64]) -> Vec<f64> {
        let pre = self.config.readout_pre_dim();
        let mut out = vec![0.0; pre];
        matvec(&self.readout_slow.data, pre, self.config.slow_hidden, z, &mut out);
        for (o, b) in out.iter_mut().zip(&self.readout_bias.data) {
            *o += b;
        }
        out
    }

    /// Encoder half of the readout pre-activation, `W_enc h`.
    pub fn encoder_proj(&self, h: &[f64]) -> Vec<f64> {
        let pre = self.config.readout_pre_dim();
        let mut out = vec![0.0; pre];
        matvec(&self.readout_enc.data, pre, self.config.encoder_output_dim(), h, &mut out);
        out
    }

    fn slow_from(&self, prev: &LstmState, input: SlowInput) -> Result<SlowState> {
        let x = self.embedding_row(input)?;
        let (lstm, _) = lstm::step(&self.slow, &self.slow.w_hh.data, x, prev, &self.eval_zoneout());
        let proj = self.slow_proj(&lstm.h);
        Ok(SlowState {
            z: lstm.h.clone(),
            lstm,
            proj,
        })
    }

    /// SlowRNN state for the empty history.
    pub fn slow_start(&self) -> SlowState {
        self.slow_from(&LstmState::zeros(self.config.slow_hidden), SlowInput::Bos)
            .expect("BOS is always valid")
    }

    /// Advances the SlowRNN by one non-blank label.
    pub fn slow_step(&self, state: &SlowState, label: usize) -> Result<SlowState> {
        self.slow_from(&state.lstm, SlowInput::Label(label))
    }

    /// SlowRNN state after a whole label history.
    pub fn slow_history(&self, labels: &[usize]) -> Result<SlowState> {
        let mut s = self.slow_start();
        for &l in labels {
            s = self.slow_step(&s, l)?;
        }
        Ok(s)
    }

    /// Decoder distribution from precomputed encoder and slow projections.
    pub fn joint(&self, enc_proj: &[f64], slow_proj: &[f64]) -> JointOutput {
        joint_forward(self, enc_proj, slow_proj).0
    }

    /// Decoder distribution for an encoder frame and a SlowRNN output.
    pub fn decoder_step(&self, h: &[f64], z_slow: &[f64]) -> Result<JointOutput> {
        if h.len() != self.config.encoder_output_dim() || z_slow.len() != self.config.slow_hidden {
            return Err(Error::ShapeMismatch {
                what: "decoder_step inputs".into(),
                expected: vec![self.config.encoder_output_dim(), self.config.slow_hidden],
                found: vec![h.len(), z_slow.len()],
            });
        }
        if !all_finite(h) || !all_finite(z_slow) {
            return Err(Error::NonFinite("decoder_step inputs".into()));
        }
        Ok(self.joint(&self.encoder_proj(h), &self.slow_proj(z_slow)))
    }
}

pub(crate) fn joint_forward(
    params: &TransducerParams,
    enc_proj: &[f64],
    slow_proj: &[f64],
) -> (JointOutput, JointCache) {
    let cfg = &params.config;
    let q_dim = cfg.readout_dim;
    let group = cfg.maxout_group;
    let mut z = vec![0.0; q_dim];
    let mut argmax = vec![0; q_dim];
    for j in 0..q_dim {
        let mut best = f64::NEG_INFINITY;
        for g in 0..group {
            let idx = j * group + g;
            let v = enc_proj[idx] + slow_proj[idx];
            if v > best {
                best = v;
                argmax[j] = idx;
            }
        }
        z[j] = best;
    }
    let emit_logit = params.emit_w.data.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + params.emit_b.data[0];
    let k = cfg.num_labels;
    let mut logits = vec![0.0; k];
    matvec(&params.label_w.data, k, q_dim, &z, &mut logits);
    for (l, b) in logits.iter_mut().zip(&params.label_b.data) {
        *l += b;
    }
    let log_q = log_softmax(&logits);
    let q = log_q.iter().map(|v| v.exp()).collect();
    let out = JointOutput {
        log_blank: log_sigmoid(-emit_logit),
        log_emit: log_sigmoid(emit_logit),
        log_q,
    };
    (
        out,
        JointCache {
            argmax,
            z,
            emit_logit,
            q,
        },
    )
}

/// Backprop of upstream gradients on `(log_blank, log_emit, log_q)` into the
/// head parameters; returns the gradient w.r.t. the readout pre-activation.
pub(crate) fn joint_backward(
    params: &TransducerParams,
    cache: &JointCache,
    d_log_blank: f64,
    d_log_emit: f64,
    d_log_q: &[f64],
    grads: &mut TransducerParams,
) -> Vec<f64> {
    let cfg = &params.config;
    let q_dim = cfg.readout_dim;
    let k = cfg.num_labels;
    let s = sigmoid(cache.emit_logit);
    let d_emit_logit = -d_log_blank * s + d_log_emit * (1.0 - s);
    let total: f64 = d_log_q.iter().sum();
    let d_logits: Vec<f64> = d_log_q.iter().zip(&cache.q).map(|(d, q)| d - q * total).collect();

    let mut dz = vec![0.0; q_dim];
    for (j, w) in params.emit_w.data.iter().enumerate() {
        dz[j] += w * d_emit_logit;
        grads.emit_w.data[j] += d_emit_logit * cache.z[j];
    }
    grads.emit_b.data[0] += d_emit_logit;
    matvec_t_acc(&params.label_w.data, k, q_dim, &d_logits, &mut dz);
    outer_acc(&mut grads.label_w.data, &d_logits, &cache.z);
    for (b, d) in grads.label_b.data.iter_mut().zip(&d_logits) {
        *b += d;
    }
    let mut d_pre = vec![0.0; cfg.readout_pre_dim()];
    for (j, &idx) in cache.argmax.iter().enumerate() {
        d_pre[idx] = dz[j];
    }
    d_pre
}

/// Gap between the winning and runner-up unit of each maxout group.
pub(crate) fn maxout_margin(params: &TransducerParams, enc_proj: &[f64], slow_proj: &[f64]) -> f64 {
    let group = params.config.maxout_group;
    if group < 2 {
        return f64::INFINITY;
    }
    let mut margin = f64::INFINITY;
    for j in 0..params.config.readout_dim {
        let mut vals: Vec<f64> = (0..group)
            .map(|g| enc_proj[j * group + g] + slow_proj[j * group + g])
            .collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        margin = margin.min(vals[0] - vals[1]);
    }
    margin
}
