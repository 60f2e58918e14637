//! Stacked BLSTM encoder with max-pooling in time after each layer.

use rand::Rng;

use super::lstm::{run_sequence, run_sequence_backward, LstmParams, SequenceRun, ZoneoutMask};
use super::params::TransducerParams;
use crate::error::{Error, Result};
use crate::numeric::all_finite;

/// Encoder frames `h_1^T` plus their time mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub frames: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl EncoderOutput {
    pub fn new(frames: Vec<Vec<f64>>) -> Self {
        let dim = frames.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for f in &frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        let n = frames.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Self { frames, mean }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

pub(crate) struct LayerTrace {
    fwd: SequenceRun,
    bwd: SequenceRun,
    input_len: usize,
    factor: usize,
    /// For each pooled frame and unit: the source frame index.
    argmax: Vec<Vec<usize>>,
}

pub(crate) struct EncoderTrace {
    layers: Vec<LayerTrace>,
}

pub(crate) fn validate_features(params: &TransducerParams, x: &[Vec<f64>]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("empty feature sequence"));
    }
    let d = params.config.input_dim;
    if let Some(bad) = x.iter().find(|f| f.len() != d) {
        return Err(Error::ShapeMismatch {
            what: "feature frame".into(),
            expected: vec![d],
            found: vec![bad.len()],
        });
    }
    if !x.iter().all(|f| all_finite(f)) {
        return Err(Error::NonFinite("input features".into()));
    }
    Ok(())
}

fn dropconnect_scale<R: Rng + ?Sized>(p: &LstmParams, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..p.w_hh.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect()
}

fn max_pool(frames: &[Vec<f64>], factor: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let dim = frames[0].len();
    let n_out = frames.len().div_ceil(factor);
    let mut out = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for t in 0..n_out {
        let lo = t * factor;
        let hi = (lo + factor).min(frames.len());
        let mut best = frames[lo].clone();
        let mut idx = vec![lo; dim];
        for (src, f) in frames.iter().enumerate().take(hi).skip(lo + 1) {
            for j in 0..dim {
                if f[j] > best[j] {
                    best[j] = f[j];
                    idx[j] = src;
                }
            }
        }
        out.push(best);
        arg.push(idx);
    }
    (out, arg)
}

/// Forward pass; `rng` present means training mode (DropConnect active).
pub(crate) fn forward<R: Rng + ?Sized>(
    params: &TransducerParams,
    x: &[Vec<f64>],
    mut rng: Option<&mut R>,
) -> Result<(EncoderOutput, EncoderTrace)> {
    validate_features(params, x)?;
    let cfg = &params.config;
    let mut current: Vec<Vec<f64>> = x.to_vec();
    let mut layers = Vec::with_capacity(params.encoder.len());
    for (layer, &factor) in params.encoder.iter().zip(&cfg.pooling) {
        let n = current.len();
        let hid = layer.fwd.hidden();
        let none = vec![ZoneoutMask::none(hid); n];
        let (fwd_scale, bwd_scale) = match rng.as_deref_mut() {
            Some(r) if cfg.encoder_weight_dropout > 0.0 => (
                Some(dropconnect_scale(&layer.fwd, cfg.encoder_weight_dropout, r)),
                Some(dropconnect_scale(&layer.bwd, cfg.encoder_weight_dropout, r)),
            ),
            _ => (None, None),
        };
        let inputs: Vec<&[f64]> = current.iter().map(Vec::as_slice).collect();
        let fwd = run_sequence(&layer.fwd, &inputs, &none, fwd_scale);
        let rev: Vec<&[f64]> = inputs.iter().rev().copied().collect();
        let bwd = run_sequence(&layer.bwd, &rev, &none, bwd_scale);
        let concat: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut v = fwd.outputs[t].clone();
                v.extend_from_slice(&bwd.outputs[n - 1 - t]);
                v
            })
            .collect();
        let (pooled, argmax) = max_pool(&concat, factor);
        layers.push(LayerTrace {
            fwd,
            bwd,
            input_len: n,
            factor,
            argmax,
        });
        current = pooled;
    }
    Ok((EncoderOutput::new(current), EncoderTrace { layers }))
}

/// Backprop from frame gradients into encoder parameter gradients.
pub(crate) fn backward(
    params: &TransducerParams,
    trace: &EncoderTrace,
    d_frames: Vec<Vec<f64>>,
    grads: &mut TransducerParams,
) {
    let mut d_current = d_frames;
    for (l, layer_trace) in trace.layers.iter().enumerate().rev() {
        let layer = &params.encoder[l];
        let hid = layer.fwd.hidden();
        let n = layer_trace.input_len;
        let mut d_concat = vec![vec![0.0; 2 * hid]; n];
        for (t, d) in d_current.iter().enumerate() {
            for (j, &g) in d.iter().enumerate() {
                d_concat[layer_trace.argmax[t][j]][j] += g;
            }
        }
        let d_fwd: Vec<Vec<f64>> = d_concat.iter().map(|d| d[..hid].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = (0..n).map(|k| d_concat[n - 1 - k][hid..].to_vec()).collect();
        let g = &mut grads.encoder[l];
        let dx_fwd = run_sequence_backward(&layer.fwd, &layer_trace.fwd, &d_fwd, &mut g.fwd);
        let dx_bwd = run_sequence_backward(&layer.bwd, &layer_trace.bwd, &d_bwd, &mut g.bwd);
        d_current = (0..n)
            .map(|t| {
                dx_fwd[t]
                    .iter()
                    .zip(&dx_bwd[n - 1 - t])
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();
    }
}

/// Smallest gap between the winning and any other value of a max-pool
/// window; finite-difference checks need this to stay above the step size.
pub(crate) fn min_pool_margin(trace: &EncoderTrace) -> f64 {
    let mut margin = f64::INFINITY;
    for lt in &trace.layers {
        let n = lt.input_len;
        let value = |t: usize, j: usize, hid: usize| {
            if j < hid {
                lt.fwd.outputs[t][j]
            } else {
                lt.bwd.outputs[n - 1 - t][j - hid]
            }
        };
        let hid = lt.fwd.outputs.first().map_or(0, Vec::len);
        for (t, idx) in lt.argmax.iter().enumerate() {
            let lo = t * lt.factor;
            let hi = (lo + lt.factor).min(n);
            for (j, &win) in idx.iter().enumerate() {
                for src in lo..hi {
                    if src != win {
                        margin = margin.min(value(win, j, hid) - value(src, j, hid));
                    }
                }
            }
        }
    }
    margin
}
