//! The transducer network: BLSTM encoder, label-synchronous SlowRNN, and a
//! maxout Readout feeding a sigmoid emit/blank head and a softmax label head.
//!
//! The decoder distribution at node `(t, s)` depends only on `h_t` and the
//! SlowRNN output after `s` labels, never on the previous alignment label,
//! so the whole `T × (S + 1)` grid is computed independently per node.

mod config;
mod encoder;
mod joint;
pub mod lstm;
mod params;

pub use config::{factor_reduction, NetworkConfig};
pub use encoder::EncoderOutput;
pub use joint::{JointOutput, SlowInput, SlowState};
pub use params::{BlstmParams, TransducerParams, TRANSDUCER_KIND};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matvec_t_acc, outer_acc, ParamSet};
use encoder::EncoderTrace;
use joint::JointCache;
use lstm::{SequenceRun, ZoneoutMask};

/// Whether stochastic regularization is active. Training masks are drawn
/// from a generator seeded with `seed`, so a forward pass is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

impl TransducerParams {
    /// Runs the encoder in evaluation mode.
    pub fn encode(&self, x: &[Vec<f64>]) -> Result<EncoderOutput> {
        Ok(encoder::forward::<ChaCha8Rng>(self, x, None)?.0)
    }
}

/// Forward pass over the full `(t, s)` grid for one utterance.
pub struct GridForward {
    pub encoder: EncoderOutput,
    trace: EncoderTrace,
    slow_run: SequenceRun,
    slow_inputs: Vec<SlowInput>,
    enc_proj: Vec<Vec<f64>>,
    slow_proj: Vec<Vec<f64>>,
    cells: Vec<JointCache>,
    labels: Vec<usize>,
    /// `log p(Δt = 1)` at `(t, s)`, row-major `T × (S + 1)`.
    pub log_blank: Vec<f64>,
    /// `log p(Δt = 0) + log q(y_{s+1})` at `(t, s)`, row-major `T × S`.
    pub log_emit: Vec<f64>,
}

impl GridForward {
    pub fn num_frames(&self) -> usize {
        self.enc_proj.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Distance to the nearest max-pool or maxout tie. Finite differences
    /// with a step well below this stay on one linear piece.
    pub fn kink_margin(&self, params: &TransducerParams) -> f64 {
        let mut m = encoder::min_pool_margin(&self.trace);
        for a in &self.enc_proj {
            for b in &self.slow_proj {
                m = m.min(joint::maxout_margin(params, a, b));
            }
        }
        m
    }
}

pub fn forward_grid(params: &TransducerParams, x: &[Vec<f64>], labels: &[usize], mode: Mode) -> Result<GridForward> {
    let k = params.num_labels();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(if bad == k {
            Error::BlankNotAllowed("label sequence")
        } else {
            Error::invalid(format!("label {bad} outside vocabulary of size {k}"))
        });
    }
    let mut rng = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let (enc, trace) = encoder::forward(params, x, rng.as_mut())?;

    let hid = params.config.slow_hidden;
    let slow_inputs: Vec<SlowInput> = std::iter::once(SlowInput::Bos)
        .chain(labels.iter().map(|&l| SlowInput::Label(l)))
        .collect();
    let rows = slow_inputs
        .iter()
        .map(|&i| params.embedding_row(i))
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<ZoneoutMask> = match rng.as_mut() {
        Some(r) => (0..rows.len())
            .map(|_| ZoneoutMask::sample(hid, params.config.zoneout, r))
            .collect(),
        None => vec![params.eval_zoneout(); rows.len()],
    };
    let slow_run = lstm::run_sequence(&params.slow, &rows, &masks, None);

    let enc_proj: Vec<Vec<f64>> = enc.frames.iter().map(|h| params.encoder_proj(h)).collect();
    let slow_states: Vec<Vec<f64>> = slow_run
        .outputs
        .iter()
        .map(|z| {
            let pre = params.config.readout_pre_dim();
            let mut out = vec![0.0; pre];
            crate::tensor::matvec(&params.readout_slow.data, pre, hid, z, &mut out);
            for (o, b) in out.iter_mut().zip(&params.readout_bias.data) {
                *o += b;
            }
            out
        })
        .collect();

    let t_len = enc_proj.len();
    let s_len = labels.len();
    let mut cells = Vec::with_capacity(t_len * (s_len + 1));
    let mut log_blank = Vec::with_capacity(t_len * (s_len + 1));
    let mut log_emit = Vec::with_capacity(t_len * s_len);
    for a in &enc_proj {
        for (s, b) in slow_states.iter().enumerate() {
            let (out, cache) = joint::joint_forward(params, a, b);
            log_blank.push(out.log_blank);
            if s < s_len {
                log_emit.push(out.log_emit + out.log_q[labels[s]]);
            }
            cells.push(cache);
        }
    }
    Ok(GridForward {
        encoder: enc,
        trace,
        slow_run,
        slow_inputs,
        enc_proj,
        slow_proj: slow_states,
        cells,
        labels: labels.to_vec(),
        log_blank,
        log_emit,
    })
}

/// Parameter gradients given upstream gradients on every lattice edge.
pub fn backward_grid(params: &TransducerParams, fwd: &GridForward, d_blank: &[f64], d_emit: &[f64]) -> TransducerParams {
    let mut grads = params.zeros_like();
    let cfg = &params.config;
    let t_len = fwd.num_frames();
    let s_len = fwd.num_labels();
    let pre = cfg.readout_pre_dim();
    let k = cfg.num_labels;

    let mut d_enc_proj = vec![vec![0.0; pre]; t_len];
    let mut d_slow_proj = vec![vec![0.0; pre]; s_len + 1];
    let mut d_q = vec![0.0; k];
    for t in 0..t_len {
        for s in 0..=s_len {
            let cell = t * (s_len + 1) + s;
            let db = d_blank[cell];
            let de = if s < s_len { d_emit[t * s_len + s] } else { 0.0 };
            if db == 0.0 && de == 0.0 {
                continue;
            }
            d_q.iter_mut().for_each(|v| *v = 0.0);
            if s < s_len {
                d_q[fwd.labels[s]] = de;
            }
            let d_pre = joint::joint_backward(params, &fwd.cells[cell], db, de, &d_q, &mut grads);
            crate::tensor::add_into(&mut d_enc_proj[t], &d_pre);
            crate::tensor::add_into(&mut d_slow_proj[s], &d_pre);
        }
    }

    let enc_dim = cfg.encoder_output_dim();
    let mut d_frames = vec![vec![0.0; enc_dim]; t_len];
    for t in 0..t_len {
        outer_acc(&mut grads.readout_enc.data, &d_enc_proj[t], &fwd.encoder.frames[t]);
        matvec_t_acc(&params.readout_enc.data, pre, enc_dim, &d_enc_proj[t], &mut d_frames[t]);
    }
    let hid = cfg.slow_hidden;
    let mut d_z = vec![vec![0.0; hid]; s_len + 1];
    for s in 0..=s_len {
        outer_acc(&mut grads.readout_slow.data, &d_slow_proj[s], &fwd.slow_run.outputs[s]);
        crate::tensor::add_into(&mut grads.readout_bias.data, &d_slow_proj[s]);
        matvec_t_acc(&params.readout_slow.data, pre, hid, &d_slow_proj[s], &mut d_z[s]);
    }
    let d_embed = lstm::run_sequence_backward(&params.slow, &fwd.slow_run, &d_z, &mut grads.slow);
    let e = cfg.slow_embed;
    for (input, d) in fwd.slow_inputs.iter().zip(&d_embed) {
        let row = match input {
            SlowInput::Bos => k,
            SlowInput::Label(l) => *l,
        };
        crate::tensor::add_into(&mut grads.embed.data[row * e..(row + 1) * e], d);
    }
    encoder::backward(params, &fwd.trace, d_frames, &mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_rows_do_not_depend_on_alignment_position() {
        let cfg = NetworkConfig {
            num_labels: 3,
            input_dim: 2,
            ..Default::default()
        };
        let p = TransducerParams::init(&cfg, 9).unwrap();
        let x = vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6]];
        let g = forward_grid(&p, &x, &[1, 2], Mode::Eval).unwrap();
        let enc = p.encode(&x).unwrap();
        let slow = p.slow_history(&[1]).unwrap();
        let direct = p.decoder_step(&enc.frames[2], &slow.z).unwrap();
        assert!((g.log_blank[2 * 3 + 1] - direct.log_blank).abs() < 1e-14);
        assert!((g.log_emit[2 * 2 + 1] - (direct.log_emit + direct.log_q[2])).abs() < 1e-14);
    }

    #[test]
    fn rejects_blank_label() {
        let p = TransducerParams::init(&NetworkConfig::default(), 0).unwrap();
        let x = vec![vec![0.0; 8]];
        assert!(matches!(
            forward_grid(&p, &x, &[8], Mode::Eval),
            Err(Error::BlankNotAllowed(_))
        ));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let p = TransducerParams::init(&NetworkConfig::default(), 2).unwrap();
        let x = vec![vec![0.2; 8]; 3];
        let g = forward_grid(&p, &x, &[1], Mode::Train { seed: 4 }).unwrap();
        let grads = backward_grid(&p, &g, &[0.0; 6], &[0.0; 3]);
        assert!(grads.tensors().iter().all(|(_, t)| t.data.iter().all(|&v| v == 0.0)));
    }
}
