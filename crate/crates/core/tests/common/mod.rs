//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use transducer::decoder::{FusionConfig, FusionMode, LabelScalePolicy};
use transducer::ilm::{ilm_log_probs, IlmVariant};
use transducer::lm::{LanguageModel, TableEntry, TableLm};
use transducer::network::{EncoderOutput, NetworkConfig, TransducerParams};
use transducer::numeric::logsumexp;
use transducer::tensor::ParamSet;
use transducer::vocab::{enumerate_alignments, AlignSym, AlignmentSeq, LabelSeq, DEFAULT_ENUMERATION_CAP};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-initialized network with every weight jittered, so biases and
/// heads are not near their symmetric starting values.
pub fn random_params<R: Rng>(cfg: &NetworkConfig, jitter: f64, rng: &mut R) -> TransducerParams {
    let mut p = TransducerParams::init(cfg, rng.random()).unwrap();
    let noise = Normal::new(0.0, jitter).unwrap();
    for t in p.tensors_mut() {
        for v in &mut t.data {
            *v += noise.sample(rng);
        }
    }
    p
}

pub fn tiny_config<R: Rng>(rng: &mut R, max_labels: usize) -> NetworkConfig {
    let layers = rng.random_range(0..=1);
    NetworkConfig {
        input_dim: rng.random_range(2..=4),
        num_labels: rng.random_range(1..=max_labels),
        encoder_layers: layers,
        encoder_hidden: rng.random_range(2..=4),
        pooling: vec![1; layers],
        slow_embed: rng.random_range(2..=3),
        slow_hidden: rng.random_range(2..=4),
        readout_dim: rng.random_range(2..=4),
        maxout_group: 2,
        zoneout: 0.1,
        encoder_weight_dropout: 0.0,
    }
}

pub fn random_features<R: Rng>(frames: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect()
}

pub fn random_labels<R: Rng>(len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..k)).collect()
}

/// Score of one alignment, evaluated node by node with `decoder_step`.
pub fn alignment_score(params: &TransducerParams, enc: &EncoderOutput, y: &[usize], a: &AlignmentSeq) -> f64 {
    let (mut t, mut s) = (0, 0);
    let mut score = 0.0;
    for sym in a.symbols() {
        let z = params.slow_history(&y[..s]).unwrap().z;
        let out = params.decoder_step(&enc.frames[t], &z).unwrap();
        match sym {
            AlignSym::Blank => {
                score += out.log_blank;
                t += 1;
            }
            AlignSym::Label(l) => {
                assert_eq!(*l, y[s]);
                score += out.log_emit + out.log_q[*l];
                s += 1;
            }
        }
    }
    score
}

/// `-log p(y|x)` as an explicit sum over every alignment.
pub fn oracle_nll(params: &TransducerParams, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let enc = params.encode(x).unwrap();
    let aligns = enumerate_alignments(&LabelSeq(y.to_vec()), enc.num_frames(), DEFAULT_ENUMERATION_CAP).unwrap();
    let scores: Vec<f64> = aligns.iter().map(|a| alignment_score(params, &enc, y, a)).collect();
    -logsumexp(&scores)
}

/// Random bigram table LM with EOS mass, over `k` labels.
pub fn random_table_lm<R: Rng>(k: usize, rng: &mut R) -> TableLm {
    let row = |rng: &mut R| {
        let w: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
    };
    let mut entries = vec![TableEntry {
        history: vec![],
        probs: row(rng),
    }];
    for l in 0..k {
        entries.push(TableEntry {
            history: vec![l],
            probs: row(rng),
        });
    }
    TableLm::new(k, entries).unwrap()
}

pub fn random_fusion<R: Rng>(mode: FusionMode, rng: &mut R) -> FusionConfig {
    FusionConfig {
        mode,
        lambda: rng.random_range(0.5..1.5),
        lambda_policy: if rng.random_bool(0.5) {
            LabelScalePolicy::Fixed
        } else {
            LabelScalePolicy::OneMinusBeta
        },
        beta: rng.random_range(0.0..0.9),
        gamma: rng.random_range(0.0..0.6),
        beta_eos: rng.random_range(0.0..1.0),
        lambda_eos: rng.random_range(0.2..1.2),
        ilm_variant: if rng.random_bool(0.5) { IlmVariant::Zero } else { IlmVariant::Avg },
        ..Default::default()
    }
}

fn lm_logprob<L: LanguageModel>(lm: &L, history: &[usize], token: usize) -> f64 {
    let mut state = lm.initial_state();
    for &h in history {
        state = lm.advance(&state, h).unwrap();
    }
    lm.log_probs(&state)[token]
}

/// Fused score of one alignment, written directly from the log-linear
/// combination rather than through the decoder's scoring code.
pub fn fused_alignment_score<L: LanguageModel>(
    params: &TransducerParams,
    lm: &L,
    cfg: &FusionConfig,
    enc: &EncoderOutput,
    y: &[usize],
    a: &AlignmentSeq,
) -> f64 {
    let k = params.num_labels();
    let use_lm = cfg.mode != FusionMode::None;
    let use_ilm = matches!(cfg.mode, FusionMode::SfIlm | FusionMode::SfIlmEos);
    let beta = if use_lm { cfg.beta } else { 0.0 };
    let gamma = if use_ilm { cfg.gamma } else { 0.0 };
    let lambda = match cfg.lambda_policy {
        LabelScalePolicy::Fixed => cfg.lambda,
        LabelScalePolicy::OneMinusBeta => 1.0 - beta,
    };
    let frames = enc.num_frames();
    let (mut t, mut s) = (0, 0);
    let mut score = 0.0;
    for sym in a.symbols() {
        let z = params.slow_history(&y[..s]).unwrap().z;
        let out = params.decoder_step(&enc.frames[t], &z).unwrap();
        match sym {
            AlignSym::Blank => {
                let blank = cfg.delta * out.log_blank;
                if t + 1 == frames && cfg.mode == FusionMode::SfIlmEos {
                    score += cfg.lambda_eos * blank + cfg.beta_eos * lm_logprob(lm, &y[..s], k);
                } else {
                    score += blank;
                }
                t += 1;
            }
            AlignSym::Label(l) => {
                let ilm = ilm_log_probs(params, &y[..s], cfg.ilm_variant, Some(enc)).unwrap();
                score += cfg.delta * out.log_emit + lambda * out.log_q[*l] + beta * lm_logprob(lm, &y[..s], *l)
                    - gamma * ilm[*l];
                s += 1;
            }
        }
    }
    score
}

/// All label sequences over `k` labels of length at most `max_len`.
pub fn all_sequences(k: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for l in 0..k {
                let mut s: Vec<usize> = seq.clone();
                s.push(l);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Exhaustive search: every label sequence, merged over all its alignments.
/// Ties go to the lexicographically smaller sequence.
pub fn oracle_decode<L: LanguageModel>(
    params: &TransducerParams,
    lm: &L,
    cfg: &FusionConfig,
    enc: &EncoderOutput,
    max_len: usize,
) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for y in all_sequences(params.num_labels(), max_len) {
        let aligns = enumerate_alignments(&LabelSeq(y.clone()), enc.num_frames(), DEFAULT_ENUMERATION_CAP).unwrap();
        let scores: Vec<f64> = aligns
            .iter()
            .map(|a| fused_alignment_score(params, lm, cfg, enc, &y, a))
            .collect();
        let total = logsumexp(&scores);
        if best.as_ref().is_none_or(|(_, b)| total > *b) {
            best = Some((y, total));
        }
    }
    best.unwrap()
}

/// Relative error with a floor that keeps near-zero gradients from
/// dominating.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}
