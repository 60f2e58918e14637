use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Arc;

use super::config::{FusionConfig, ResolvedScales};
use super::{step_scores, ScoreInputs};
use crate::error::{Error, Result};
use crate::ilm::{ilm_context, ilm_log_probs_from_state};
use crate::lm::{check_vocab, LanguageModel};
use crate::network::{EncoderOutput, SlowState, TransducerParams};
use crate::numeric::logadd;
use crate::par::Execution;

/// Identifies hypotheses that should be merged by summing their scores.
pub trait MergeKey: Sync {
    type Key: Eq + Hash + Clone + Send;
    fn key(&self, labels: &[usize]) -> Self::Key;
}

/// Merge on the exact label sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelSequenceKey;

impl MergeKey for LabelSequenceKey {
    type Key = Vec<usize>;
    fn key(&self, labels: &[usize]) -> Vec<usize> {
        labels.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    pub labels: Vec<usize>,
    pub score: f64,
    /// Frames consumed.
    pub frames: usize,
    pub terminated: bool,
}

/// Beam contents after one alignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    /// Surviving live hypotheses followed by the ones finished at this step.
    pub hyps: Vec<ScoredLabels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub labels: Vec<usize>,
    pub score: f64,
    /// Finished hypotheses, best first.
    pub nbest: Vec<ScoredLabels>,
    pub trace: Option<Vec<StepTrace>>,
}

/// Merges items sharing a key. The merged score is the log-sum of member
/// scores taken in input order; the payload of the best member is kept
/// (first one on ties). Groups come out in order of first appearance.
pub fn merge_by_key<K: Eq + Hash + Clone, T>(items: Vec<(K, f64, T)>) -> Vec<(K, f64, T)> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<(K, f64, f64, T)> = Vec::new();
    for (key, score, payload) in items {
        match index.get(&key) {
            Some(&g) => {
                let group = &mut groups[g];
                group.1 = logadd(group.1, score);
                if score > group.2 {
                    group.2 = score;
                    group.3 = payload;
                }
            }
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key, score, score, payload));
            }
        }
    }
    groups.into_iter().map(|(k, s, _, p)| (k, s, p)).collect()
}

struct HypState<S> {
    slow: SlowState,
    lm_state: Option<S>,
    lm_lp: Option<Vec<f64>>,
    ilm_lp: Option<Vec<f64>>,
}

struct Hyp<S> {
    labels: Vec<usize>,
    t: usize,
    score: f64,
    state: Arc<HypState<S>>,
}

struct Candidate {
    parent: usize,
    label: Option<usize>,
    labels: Vec<usize>,
    terminal: bool,
}

fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Scorer<'a, L: LanguageModel> {
    params: &'a TransducerParams,
    lm: Option<&'a L>,
    scales: ResolvedScales,
    ilm_ctx: Option<Vec<f64>>,
}

impl<L: LanguageModel> Scorer<'_, L> {
    fn lm_outputs(&self, state: &L::State) -> Result<Vec<f64>> {
        let lm = self.lm.expect("checked at setup");
        let lp = lm.log_probs(state);
        if lp.len() != self.params.num_labels() + 1 {
            return Err(Error::VocabMismatch {
                what: "LM distribution".into(),
                expected: self.params.num_labels() + 1,
                found: lp.len(),
            });
        }
        Ok(lp)
    }

    fn root(&self) -> Result<HypState<L::State>> {
        let slow = self.params.slow_start();
        let (lm_state, lm_lp) = match self.lm.filter(|_| self.scales.lm_needed()) {
            Some(lm) => {
                let s = lm.initial_state();
                let lp = self.lm_outputs(&s)?;
                (Some(s), Some(lp))
            }
            None => (None, None),
        };
        let ilm_lp = self
            .ilm_ctx
            .as_ref()
            .map(|ctx| ilm_log_probs_from_state(self.params, &slow, ctx));
        Ok(HypState {
            slow,
            lm_state,
            lm_lp,
            ilm_lp,
        })
    }

    fn extend(&self, prev: &HypState<L::State>, label: usize) -> Result<HypState<L::State>> {
        let slow = self.params.slow_step(&prev.slow, label)?;
        let (lm_state, lm_lp) = match (&prev.lm_state, self.lm) {
            (Some(s), Some(lm)) => {
                let next = lm.advance(s, label)?;
                let lp = self.lm_outputs(&next)?;
                (Some(next), Some(lp))
            }
            _ => (None, None),
        };
        let ilm_lp = self
            .ilm_ctx
            .as_ref()
            .map(|ctx| ilm_log_probs_from_state(self.params, &slow, ctx));
        Ok(HypState {
            slow,
            lm_state,
            lm_lp,
            ilm_lp,
        })
    }
}

/// Decodes one utterance from raw features, merging on label sequences.
pub fn decode<L: LanguageModel>(
    params: &TransducerParams,
    lm: Option<&L>,
    cfg: &FusionConfig,
    features: &[Vec<f64>],
) -> Result<DecodeResult> {
    let enc = params.encode(features)?;
    decode_with_key(params, lm, cfg, &enc, &LabelSequenceKey, false)
}

/// Decodes a batch of utterances; utterances are independent so they run
/// in parallel under `Execution::Parallel`.
pub fn decode_batch<L: LanguageModel>(
    params: &TransducerParams,
    lm: Option<&L>,
    cfg: &FusionConfig,
    batch: &[Vec<Vec<f64>>],
    exec: Execution,
) -> Result<Vec<DecodeResult>> {
    exec.map(batch, |x| decode(params, lm, cfg, x)).into_iter().collect()
}

/// Beam search over an encoded utterance.
///
/// Each step extends every live hypothesis by a blank (one frame) or a
/// label. A blank on the last frame finishes the hypothesis. Extensions that
/// share a key and frame position are merged; the best `beam_size` live
/// ones survive.
pub fn decode_with_key<L: LanguageModel, K: MergeKey>(
    params: &TransducerParams,
    lm: Option<&L>,
    cfg: &FusionConfig,
    enc: &EncoderOutput,
    merge_key: &K,
    record_trace: bool,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let scales = cfg.resolve();
    if scales.lm_needed() {
        let lm = lm.ok_or_else(|| Error::invalid(format!("fusion mode {} needs an external LM", cfg.mode.as_str())))?;
        check_vocab(lm, params.num_labels())?;
    }
    let ilm_ctx = if scales.ilm_needed() {
        Some(ilm_context(params, cfg.ilm_variant, Some(enc))?)
    } else {
        None
    };
    let scorer = Scorer {
        params,
        lm,
        scales,
        ilm_ctx,
    };

    let frames = enc.num_frames();
    if frames == 0 {
        return Err(Error::invalid("cannot decode an empty utterance"));
    }
    let enc_proj: Vec<Vec<f64>> = enc.frames.iter().map(|h| params.encoder_proj(h)).collect();
    let cap = cfg.label_cap(frames);

    let mut live = vec![Hyp {
        labels: Vec::new(),
        t: 0,
        score: 0.0,
        state: Arc::new(scorer.root()?),
    }];
    let mut finished: Vec<(K::Key, ScoredLabels)> = Vec::new();
    let mut finished_index: HashMap<K::Key, usize> = HashMap::new();
    let mut trace = record_trace.then(Vec::new);

    let mut step = 0;
    while !live.is_empty() {
        let mut cands: Vec<((usize, K::Key), f64, Candidate)> = Vec::new();
        let mut terminals: Vec<(K::Key, f64, Candidate)> = Vec::new();
        for (i, hyp) in live.iter().enumerate() {
            let joint = params.joint(&enc_proj[hyp.t], &hyp.state.slow.proj);
            let scores = step_scores(
                ScoreInputs {
                    joint: &joint,
                    lm: hyp.state.lm_lp.as_deref(),
                    ilm: hyp.state.ilm_lp.as_deref(),
                    last_frame: hyp.t + 1 == frames,
                },
                &scorer.scales,
            );
            let blank = Candidate {
                parent: i,
                label: None,
                labels: hyp.labels.clone(),
                terminal: scores.terminal,
            };
            let score = hyp.score + scores.blank;
            if scores.terminal {
                terminals.push((merge_key.key(&blank.labels), score, blank));
            } else {
                cands.push(((hyp.t + 1, merge_key.key(&blank.labels)), score, blank));
            }
            if hyp.labels.len() < cap {
                for (k, &s) in scores.labels.iter().enumerate() {
                    let mut labels = hyp.labels.clone();
                    labels.push(k);
                    let key = (hyp.t, merge_key.key(&labels));
                    cands.push((
                        key,
                        hyp.score + s,
                        Candidate {
                            parent: i,
                            label: Some(k),
                            labels,
                            terminal: false,
                        },
                    ));
                }
            }
        }

        let mut merged = merge_by_key(cands);
        merged.sort_by(|a, b| better((a.1, &a.2.labels), (b.1, &b.2.labels)));
        merged.truncate(cfg.beam_size);

        let mut next = Vec::with_capacity(merged.len());
        for (_, score, cand) in merged {
            let parent = &live[cand.parent];
            let (t, state) = match cand.label {
                None => (parent.t + 1, Arc::clone(&parent.state)),
                Some(k) => (parent.t, Arc::new(scorer.extend(&parent.state, k)?)),
            };
            next.push(Hyp {
                labels: cand.labels,
                t,
                score,
                state,
            });
        }

        let mut done_now = Vec::new();
        for (key, score, cand) in merge_by_key(terminals) {
            debug_assert!(cand.terminal);
            let entry = ScoredLabels {
                labels: cand.labels,
                score,
                frames,
                terminated: true,
            };
            if record_trace {
                done_now.push(entry.clone());
            }
            match finished_index.get(&key) {
                Some(&f) => finished[f].1.score = logadd(finished[f].1.score, score),
                None => {
                    finished_index.insert(key.clone(), finished.len());
                    finished.push((key, entry));
                }
            }
        }

        if let Some(tr) = trace.as_mut() {
            let mut hyps: Vec<ScoredLabels> = next
                .iter()
                .map(|h| ScoredLabels {
                    labels: h.labels.clone(),
                    score: h.score,
                    frames: h.t,
                    terminated: false,
                })
                .collect();
            hyps.extend(done_now);
            tr.push(StepTrace { step, hyps });
        }
        live = next;
        step += 1;
    }

    let mut nbest: Vec<ScoredLabels> = finished.into_iter().map(|(_, e)| e).collect();
    nbest.sort_by(|a, b| better((a.score, &a.labels), (b.score, &b.labels)));
    let best = nbest
        .first()
        .cloned()
        .ok_or_else(|| Error::invalid("search produced no finished hypothesis"))?;
    nbest.truncate(cfg.nbest.max(1));
    Ok(DecodeResult {
        labels: best.labels,
        score: best.score,
        nbest,
        trace,
    })
}
