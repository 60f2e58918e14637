//! A single LSTM cell with optional zoneout and recurrent DropConnect.
//!
//! Gate layout in the stacked `4H` dimension is `[input, forget, cell, output]`.
//! Zoneout mixes the fresh state with the previous one per unit:
//! `c = m_c ⊙ c_prev + (1 - m_c) ⊙ c̃` and likewise for `h`. Training uses
//! Bernoulli masks, evaluation uses the constant rate (the expectation).

use rand::Rng;

use crate::numeric::sigmoid;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_ih: Tensor::glorot(&[4 * hidden, input], rng),
            w_hh: Tensor::glorot(&[4 * hidden, hidden], rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_ih, &self.w_hh, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Per-unit carry-over weights for zoneout; all zero means a plain LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneoutMask {
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl ZoneoutMask {
    pub fn none(hidden: usize) -> Self {
        Self {
            cell: vec![0.0; hidden],
            hidden: vec![0.0; hidden],
        }
    }

    pub fn expected(hidden: usize, rate: f64) -> Self {
        Self {
            cell: vec![rate; hidden],
            hidden: vec![rate; hidden],
        }
    }

    pub fn sample<R: Rng + ?Sized>(hidden: usize, rate: f64, rng: &mut R) -> Self {
        let mut draw = || {
            (0..hidden)
                .map(|_| if rng.random::<f64>() < rate { 1.0 } else { 0.0 })
                .collect()
        };
        let cell = draw();
        let hidden = draw();
        Self { cell, hidden }
    }
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_cell: Vec<f64>,
    mask: ZoneoutMask,
}

/// Runs one step. `w_hh` may be a DropConnect-masked copy of `params.w_hh`.
pub fn step(
    params: &LstmParams,
    w_hh: &[f64],
    x: &[f64],
    prev: &LstmState,
    mask: &ZoneoutMask,
) -> (LstmState, StepCache) {
    let hsz = params.hidden();
    let mut pre = vec![0.0; 4 * hsz];
    matvec(&params.w_ih.data, 4 * hsz, params.input(), x, &mut pre);
    let mut rec = vec![0.0; 4 * hsz];
    matvec(w_hh, 4 * hsz, hsz, &prev.h, &mut rec);
    for ((p, r), b) in pre.iter_mut().zip(&rec).zip(&params.bias.data) {
        *p += r + b;
    }
    let mut gates = pre;
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if (2 * hsz..3 * hsz).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let mut h = vec![0.0; hsz];
    let mut c = vec![0.0; hsz];
    let mut tanh_cell = vec![0.0; hsz];
    for j in 0..hsz {
        let (i, f, g, o) = (gates[j], gates[hsz + j], gates[2 * hsz + j], gates[3 * hsz + j]);
        let fresh_c = f * prev.c[j] + i * g;
        let tc = fresh_c.tanh();
        let fresh_h = o * tc;
        tanh_cell[j] = tc;
        c[j] = mask.cell[j] * prev.c[j] + (1.0 - mask.cell[j]) * fresh_c;
        h[j] = mask.hidden[j] * prev.h[j] + (1.0 - mask.hidden[j]) * fresh_h;
    }
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        gates,
        tanh_cell,
        mask: mask.clone(),
    };
    (LstmState { h, c }, cache)
}

/// Gradients flowing into the previous state and the input of one step.
pub struct StepGrad {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backpropagates `(dh, dc)` through one step, accumulating into `grads`.
/// `w_hh` must be the same effective matrix used in the forward step;
/// `w_hh_scale` (DropConnect mask / keep-rate) maps its gradient back onto
/// the raw weights.
pub fn step_backward(
    params: &LstmParams,
    w_hh: &[f64],
    w_hh_scale: Option<&[f64]>,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> StepGrad {
    let hsz = params.hidden();
    let g = &cache.gates;
    let mut dh_prev = vec![0.0; hsz];
    let mut dc_prev = vec![0.0; hsz];
    let mut dpre = vec![0.0; 4 * hsz];
    for j in 0..hsz {
        let (i, f, gg, o) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
        let tc = cache.tanh_cell[j];
        let mh = cache.mask.hidden[j];
        let mc = cache.mask.cell[j];
        dh_prev[j] += mh * dh[j];
        dc_prev[j] += mc * dc[j];
        let dfresh_h = (1.0 - mh) * dh[j];
        let dfresh_c = (1.0 - mc) * dc[j] + dfresh_h * o * (1.0 - tc * tc);
        let d_o = dfresh_h * tc;
        let d_i = dfresh_c * gg;
        let d_g = dfresh_c * i;
        let d_f = dfresh_c * cache.c_prev[j];
        dc_prev[j] += dfresh_c * f;
        dpre[j] = d_i * i * (1.0 - i);
        dpre[hsz + j] = d_f * f * (1.0 - f);
        dpre[2 * hsz + j] = d_g * (1.0 - gg * gg);
        dpre[3 * hsz + j] = d_o * o * (1.0 - o);
    }
    outer_acc(&mut grads.w_ih.data, &dpre, &cache.x);
    match w_hh_scale {
        None => outer_acc(&mut grads.w_hh.data, &dpre, &cache.h_prev),
        Some(scale) => {
            for r in 0..4 * hsz {
                if dpre[r] == 0.0 {
                    continue;
                }
                for k in 0..hsz {
                    let idx = r * hsz + k;
                    grads.w_hh.data[idx] += dpre[r] * cache.h_prev[k] * scale[idx];
                }
            }
        }
    }
    for (b, d) in grads.bias.data.iter_mut().zip(&dpre) {
        *b += d;
    }
    let mut dx = vec![0.0; params.input()];
    matvec_t_acc(&params.w_ih.data, 4 * hsz, params.input(), &dpre, &mut dx);
    matvec_t_acc(w_hh, 4 * hsz, hsz, &dpre, &mut dh_prev);
    StepGrad { dx, dh_prev, dc_prev }
}

/// A unidirectional run over a sequence, keeping caches for backprop.
pub struct SequenceRun {
    pub outputs: Vec<Vec<f64>>,
    pub caches: Vec<StepCache>,
    pub w_hh: Vec<f64>,
    pub w_hh_scale: Option<Vec<f64>>,
}

pub fn run_sequence(
    params: &LstmParams,
    inputs: &[&[f64]],
    masks: &[ZoneoutMask],
    w_hh_scale: Option<Vec<f64>>,
) -> SequenceRun {
    let w_hh = match &w_hh_scale {
        Some(s) => params.w_hh.data.iter().zip(s).map(|(w, m)| w * m).collect(),
        None => params.w_hh.data.clone(),
    };
    let mut state = LstmState::zeros(params.hidden());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for (x, m) in inputs.iter().zip(masks) {
        let (next, cache) = step(params, &w_hh, x, &state, m);
        outputs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    SequenceRun {
        outputs,
        caches,
        w_hh,
        w_hh_scale,
    }
}

/// Backprop through time given per-step output gradients. Returns input gradients.
pub fn run_sequence_backward(
    params: &LstmParams,
    run: &SequenceRun,
    d_outputs: &[Vec<f64>],
    grads: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let hsz = params.hidden();
    let n = run.caches.len();
    let mut dx = vec![Vec::new(); n];
    let mut dh_next = vec![0.0; hsz];
    let mut dc_next = vec![0.0; hsz];
    for k in (0..n).rev() {
        let dh: Vec<f64> = d_outputs[k].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let sg = step_backward(
            params,
            &run.w_hh,
            run.w_hh_scale.as_deref(),
            &run.caches[k],
            &dh,
            &dc_next,
            grads,
        );
        dx[k] = sg.dx;
        dh_next = sg.dh_prev;
        dc_next = sg.dc_prev;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::new(3, 2, &mut rng);
        assert_eq!(&p.bias.data[2..4], &[1.0, 1.0]);
        assert_eq!(&p.bias.data[0..2], &[0.0, 0.0]);
    }

    #[test]
    fn full_zoneout_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::new(2, 3, &mut rng);
        let prev = LstmState {
            h: vec![0.1, -0.2, 0.3],
            c: vec![1.0, 2.0, -1.0],
        };
        let mask = ZoneoutMask::expected(3, 1.0);
        let (next, _) = step(&p, &p.w_hh.data, &[0.5, 0.5], &prev, &mask);
        assert_eq!(next, prev);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::new(2, 3, &mut rng);
        let xs = [vec![0.3, -0.1], vec![1.0, 0.2]];
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let masks = vec![ZoneoutMask::none(3); 2];
        let run = run_sequence(&p, &inputs, &masks, None);
        let mut g = p.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        let dx = run_sequence_backward(&p, &run, &[vec![0.0; 3], vec![0.0; 3]], &mut g);
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().flatten().all(|&v| v == 0.0));
    }
}
