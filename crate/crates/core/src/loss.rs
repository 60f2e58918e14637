//! Exact full-sum negative log-likelihood on the `(t, s)` lattice.
//!
//! Node `(t, s)` means `t` frames consumed and `s` labels emitted. From a node
//! with `t < T` the blank moves right to `(t + 1, s)` and a label moves up to
//! `(t, s + 1)`; labels are never emitted once all frames are consumed, so the
//! terminal `(T, S)` is always entered by a blank.

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::network::{backward_grid, forward_grid, GridForward, Mode, TransducerParams};
use crate::numeric::logadd;
use crate::par::Execution;
use crate::tensor::ParamSet;
use crate::vocab::{AlignSym, AlignmentSeq};

/// Edge log-probabilities: `blank[t][s]` for `s ≤ S` and `emit[t][s]` for `s < S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    frames: usize,
    labels: usize,
    blank: Vec<f64>,
    emit: Vec<f64>,
}

impl Lattice {
    pub fn new(frames: usize, labels: usize, blank: Vec<f64>, emit: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("lattice needs at least one frame"));
        }
        if blank.len() != frames * (labels + 1) || emit.len() != frames * labels {
            return Err(Error::ShapeMismatch {
                what: "lattice".into(),
                expected: vec![frames * (labels + 1), frames * labels],
                found: vec![blank.len(), emit.len()],
            });
        }
        if blank.iter().chain(&emit).any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("lattice entries".into()));
        }
        Ok(Self {
            frames,
            labels,
            blank,
            emit,
        })
    }

    pub fn from_grid(grid: &GridForward) -> Result<Self> {
        Self::new(grid.num_frames(), grid.num_labels(), grid.log_blank.clone(), grid.log_emit.clone())
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn blank(&self, t: usize, s: usize) -> f64 {
        self.blank[t * (self.labels + 1) + s]
    }

    /// `-inf` for `s = S`: there is no label beyond `y_S`.
    pub fn emit(&self, t: usize, s: usize) -> f64 {
        if s >= self.labels {
            f64::NEG_INFINITY
        } else {
            self.emit[t * self.labels + s]
        }
    }

    /// Log-score of one alignment path; `-inf` if it does not fit the lattice.
    pub fn path_score(&self, a: &AlignmentSeq) -> f64 {
        let (mut t, mut s) = (0, 0);
        let mut score = 0.0;
        for sym in a.symbols() {
            if t >= self.frames {
                return f64::NEG_INFINITY;
            }
            match sym {
                AlignSym::Blank => {
                    score += self.blank(t, s);
                    t += 1;
                }
                AlignSym::Label(_) => {
                    score += self.emit(t, s);
                    s += 1;
                }
            }
        }
        if t == self.frames && s == self.labels {
            score
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// A `(T + 1) × (S + 1)` table of log-values over lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    frames: usize,
    labels: usize,
    values: Vec<f64>,
}

impl NodeTable {
    fn new(frames: usize, labels: usize) -> Self {
        Self {
            frames,
            labels,
            values: vec![f64::NEG_INFINITY; (frames + 1) * (labels + 1)],
        }
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * (self.labels + 1) + s]
    }

    fn set(&mut self, t: usize, s: usize, v: f64) {
        self.values[t * (self.labels + 1) + s] = v;
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }
}

/// Forward variables and `log p(y | x) = α(T, S)`.
pub fn forward_alpha(lat: &Lattice) -> (NodeTable, f64) {
    let (tn, sn) = (lat.frames, lat.labels);
    let mut alpha = NodeTable::new(tn, sn);
    alpha.set(0, 0, 0.0);
    for t in 0..=tn {
        for s in 0..=sn {
            if t == 0 && s == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha.get(t - 1, s) + lat.blank(t - 1, s)
            } else {
                f64::NEG_INFINITY
            };
            let from_emit = if s > 0 && t < tn {
                alpha.get(t, s - 1) + lat.emit(t, s - 1)
            } else {
                f64::NEG_INFINITY
            };
            alpha.set(t, s, logadd(from_blank, from_emit));
        }
    }
    let ll = alpha.get(tn, sn);
    (alpha, ll)
}

/// Backward variables: `β(t, s)` is the log-mass of all completions from `(t, s)`.
pub fn backward_beta(lat: &Lattice) -> NodeTable {
    let (tn, sn) = (lat.frames, lat.labels);
    let mut beta = NodeTable::new(tn, sn);
    beta.set(tn, sn, 0.0);
    for t in (0..tn).rev() {
        for s in (0..=sn).rev() {
            let via_blank = lat.blank(t, s) + beta.get(t + 1, s);
            let via_emit = if s < sn {
                lat.emit(t, s) + beta.get(t, s + 1)
            } else {
                f64::NEG_INFINITY
            };
            beta.set(t, s, logadd(via_blank, via_emit));
        }
    }
    beta
}

/// Best single path (maximum approximation) score.
pub fn best_path_score(lat: &Lattice) -> f64 {
    let (tn, sn) = (lat.frames, lat.labels);
    let mut best = NodeTable::new(tn, sn);
    best.set(0, 0, 0.0);
    for t in 0..=tn {
        for s in 0..=sn {
            if t == 0 && s == 0 {
                continue;
            }
            let a = if t > 0 { best.get(t - 1, s) + lat.blank(t - 1, s) } else { f64::NEG_INFINITY };
            let b = if s > 0 && t < tn { best.get(t, s - 1) + lat.emit(t, s - 1) } else { f64::NEG_INFINITY };
            best.set(t, s, a.max(b));
        }
    }
    best.get(tn, sn)
}

/// Posterior occupancy of every edge, `exp(α + edge + β - log p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub blank: Vec<f64>,
    pub emit: Vec<f64>,
}

pub fn edge_posteriors(lat: &Lattice, alpha: &NodeTable, beta: &NodeTable, log_likelihood: f64) -> Occupancy {
    let (tn, sn) = (lat.frames, lat.labels);
    let mut blank = vec![0.0; tn * (sn + 1)];
    let mut emit = vec![0.0; tn * sn];
    if log_likelihood == f64::NEG_INFINITY {
        return Occupancy { blank, emit };
    }
    for t in 0..tn {
        for s in 0..=sn {
            let a = alpha.get(t, s);
            if a == f64::NEG_INFINITY {
                continue;
            }
            blank[t * (sn + 1) + s] = (a + lat.blank(t, s) + beta.get(t + 1, s) - log_likelihood).exp();
            if s < sn {
                emit[t * sn + s] = (a + lat.emit(t, s) + beta.get(t, s + 1) - log_likelihood).exp();
            }
        }
    }
    Occupancy { blank, emit }
}

/// Loss and parameter gradients for one utterance.
#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    pub grads: TransducerParams,
}

fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("full-sum loss ({loss})")))
    }
}

/// `-log p(y | x)` summed over all alignments, without gradients.
pub fn full_sum_loss(params: &TransducerParams, x: &[Vec<f64>], y: &[usize], mode: Mode) -> Result<f64> {
    let grid = forward_grid(params, x, y, mode)?;
    let (_, ll) = forward_alpha(&Lattice::from_grid(&grid)?);
    check_loss(-ll)
}

/// `-log p(y | x)` with exact gradients through the lattice posteriors.
pub fn full_sum_nll(params: &TransducerParams, x: &[Vec<f64>], y: &[usize], mode: Mode) -> Result<NllOutput> {
    let grid = forward_grid(params, x, y, mode)?;
    let lat = Lattice::from_grid(&grid)?;
    let (alpha, ll) = forward_alpha(&lat);
    let loss = check_loss(-ll)?;
    let beta = backward_beta(&lat);
    let occ = edge_posteriors(&lat, &alpha, &beta, ll);
    let d_blank: Vec<f64> = occ.blank.iter().map(|g| -g).collect();
    let d_emit: Vec<f64> = occ.emit.iter().map(|g| -g).collect();
    let grads = backward_grid(params, &grid, &d_blank, &d_emit);
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok(NllOutput { loss, grads })
}

/// Summed loss and gradient over a batch. Items are evaluated independently
/// (in parallel under `Execution::Parallel`) and reduced in batch order, so
/// the result does not depend on the execution mode.
pub fn batch_nll<F>(
    params: &TransducerParams,
    batch: &[&Utterance],
    mode_for: F,
    exec: Execution,
) -> Result<NllOutput>
where
    F: Fn(usize) -> Mode + Sync + Send,
{
    let outs = exec.map_indexed(batch.len(), |i| {
        full_sum_nll(params, &batch[i].features, &batch[i].transcript, mode_for(i))
    });
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for out in outs {
        let out = out?;
        total += out.loss;
        grads.add_assign(&out.grads);
    }
    Ok(NllOutput { loss: total, grads })
}

/// Summed evaluation-mode loss over a data set.
pub fn corpus_loss(params: &TransducerParams, data: &[Utterance], exec: Execution) -> Result<f64> {
    let losses = exec.map(data, |u| full_sum_loss(params, &u.features, &u.transcript, Mode::Eval));
    losses.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::logsumexp;
    use crate::vocab::{enumerate_alignments, LabelSeq, DEFAULT_ENUMERATION_CAP};

    fn lattice(t: usize, s: usize, seed: u64) -> Lattice {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let blank = (0..t * (s + 1)).map(|_| -rng.random_range(0.05..3.0)).collect();
        let emit = (0..t * s).map(|_| -rng.random_range(0.05..3.0)).collect();
        Lattice::new(t, s, blank, emit).unwrap()
    }

    #[test]
    fn no_labels_is_sum_of_blanks() {
        let lat = lattice(4, 0, 1);
        let (_, ll) = forward_alpha(&lat);
        let expect: f64 = (0..4).map(|t| lat.blank(t, 0)).sum();
        assert!((ll - expect).abs() < 1e-12);
        let beta = backward_beta(&lat);
        for t in 0..=4 {
            let tail: f64 = (t..4).map(|u| lat.blank(u, 0)).sum();
            assert!((beta.get(t, 0) - tail).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_single_label() {
        let lat = lattice(1, 1, 2);
        let (_, ll) = forward_alpha(&lat);
        assert!((ll - (lat.emit(0, 0) + lat.blank(0, 1))).abs() < 1e-15);
    }

    #[test]
    fn matches_enumeration() {
        for seed in 0..20 {
            let (t, s) = (1 + seed as usize % 4, seed as usize % 3);
            let lat = lattice(t, s, seed);
            let y = LabelSeq(vec![0; s]);
            let scores: Vec<f64> = enumerate_alignments(&y, t, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .iter()
                .map(|a| lat.path_score(a))
                .collect();
            let (_, ll) = forward_alpha(&lat);
            assert!((ll - logsumexp(&scores)).abs() < 1e-12);
            assert!(best_path_score(&lat) <= ll);
        }
    }

    #[test]
    fn anti_diagonal_cuts_sum_to_likelihood() {
        let lat = lattice(5, 3, 7);
        let (alpha, ll) = forward_alpha(&lat);
        let beta = backward_beta(&lat);
        assert_eq!(beta.get(5, 3), 0.0);
        assert!((beta.get(0, 0) - ll).abs() < 1e-12);
        for u in 0..=8usize {
            let cut: Vec<f64> = (0..=5usize)
                .filter_map(|t| u.checked_sub(t).filter(|&s| s <= 3).map(|s| alpha.get(t, s) + beta.get(t, s)))
                .collect();
            assert!((logsumexp(&cut) - ll).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn neg_infinity_entries_propagate() {
        let mut lat = lattice(2, 1, 3);
        for e in lat.emit.iter_mut() {
            *e = f64::NEG_INFINITY;
        }
        let (_, ll) = forward_alpha(&lat);
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_malformed_lattice() {
        assert!(Lattice::new(0, 0, vec![], vec![]).is_err());
        assert!(Lattice::new(2, 1, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(Lattice::new(1, 0, vec![f64::NAN], vec![]).is_err());
    }
}
