//! Alignment-synchronous beam search with shallow fusion, internal-LM
//! subtraction and EOS folding.

mod config;
mod search;

pub use config::{FusionConfig, FusionMode, LabelScalePolicy, ResolvedScales};
pub use search::{
    decode, decode_batch, decode_with_key, merge_by_key, DecodeResult, LabelSequenceKey, MergeKey,
    ScoredLabels, StepTrace,
};

use crate::network::JointOutput;

/// Log-linear extension scores out of one hypothesis at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    /// Score added by a blank. On the final frame this already includes the
    /// EOS term when folding is on.
    pub blank: f64,
    /// Whether the blank finishes the hypothesis.
    pub terminal: bool,
    /// Score added by each label.
    pub labels: Vec<f64>,
}

/// Per-hypothesis model outputs needed to score one step.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub joint: &'a JointOutput,
    /// External LM `log p(·)` over labels plus EOS last.
    pub lm: Option<&'a [f64]>,
    /// Internal LM `log p(·)` over labels.
    pub ilm: Option<&'a [f64]>,
    pub last_frame: bool,
}

/// Scores for every extension. Terms whose scale is exactly zero are not
/// evaluated, so turning a component off reproduces the plain score bitwise.
pub fn step_scores(inputs: ScoreInputs<'_>, scales: &ResolvedScales) -> StepScores {
    let j = inputs.joint;
    let mut blank = scales.delta * j.log_blank;
    if inputs.last_frame {
        if let Some((lambda_eos, beta_eos)) = scales.eos {
            blank *= lambda_eos;
            if beta_eos != 0.0 {
                let lm = inputs.lm.expect("LM outputs required for EOS folding");
                blank += beta_eos * lm[lm.len() - 1];
            }
        }
    }
    let emit = scales.delta * j.log_emit;
    let labels = j
        .log_q
        .iter()
        .enumerate()
        .map(|(k, &lq)| {
            let mut s = emit + scales.lambda * lq;
            if scales.beta != 0.0 {
                s += scales.beta * inputs.lm.expect("LM outputs required")[k];
            }
            if scales.gamma != 0.0 {
                s -= scales.gamma * inputs.ilm.expect("ILM outputs required")[k];
            }
            s
        })
        .collect();
    StepScores {
        blank,
        terminal: inputs.last_frame,
        labels,
    }
}
