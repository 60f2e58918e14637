//! Word error rate with an edit-operation breakdown, and joint tuning of the
//! external and internal LM scales.

mod tune;
mod wer;

pub use tune::{tune_scales, GridCell, TuneResult};
pub use wer::{align, wer, words, EditCounts, WerReport};

use crate::data::Utterance;
use crate::decoder::{decode_batch, FusionConfig};
use crate::error::Result;
use crate::lm::LanguageModel;
use crate::network::TransducerParams;
use crate::par::Execution;

/// A published edit-operation breakdown kept for report formatting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub lm: &'static str,
    pub integration: &'static str,
    pub sub_percent: f64,
    pub del_percent: f64,
    pub ins_percent: f64,
    pub wer: f64,
}

/// Transducer rows of the published dev-other breakdown.
pub const REFERENCE_TRANSDUCER_ROWS: [ReferenceRow; 5] = [
    ReferenceRow { lm: "none", integration: "-", sub_percent: 82.52, del_percent: 7.55, ins_percent: 9.93, wer: 8.76 },
    ReferenceRow { lm: "lstm", integration: "sf", sub_percent: 79.10, del_percent: 10.93, ins_percent: 9.97, wer: 6.50 },
    ReferenceRow { lm: "lstm", integration: "sf_ilm_avg", sub_percent: 80.90, del_percent: 9.06, ins_percent: 10.04, wer: 5.63 },
    ReferenceRow { lm: "lstm", integration: "sf_ilm_avg_eos", sub_percent: 79.81, del_percent: 10.15, ins_percent: 10.04, wer: 5.49 },
    ReferenceRow { lm: "trafo", integration: "sf_ilm_avg_eos", sub_percent: 80.45, del_percent: 9.55, ins_percent: 10.00, wer: 5.28 },
];

/// Decodes `data` with the fusion config and scores it against the
/// transcripts.
pub fn decode_wer<L: LanguageModel>(
    params: &TransducerParams,
    lm: Option<&L>,
    cfg: &FusionConfig,
    data: &[Utterance],
    exec: Execution,
) -> Result<(WerReport, Vec<Vec<usize>>)> {
    let hyps = decode_hyps(params, lm, cfg, data, exec)?;
    let refs: Vec<Vec<usize>> = data.iter().map(|u| u.transcript.clone()).collect();
    Ok((wer(&refs, &hyps)?, hyps))
}

fn decode_hyps<L: LanguageModel>(
    params: &TransducerParams,
    lm: Option<&L>,
    cfg: &FusionConfig,
    data: &[Utterance],
    exec: Execution,
) -> Result<Vec<Vec<usize>>> {
    let feats: Vec<Vec<Vec<f64>>> = data.iter().map(|u| u.features.clone()).collect();
    Ok(decode_batch(params, lm, cfg, &feats, exec)?
        .into_iter()
        .map(|r| r.labels)
        .collect())
}

/// Grid search of `beta` and `gamma` around `base` on a dev set. Cells run
/// in parallel; each cell decodes sequentially.
pub fn tune_fusion_scales<L: LanguageModel>(
    params: &TransducerParams,
    lm: Option<&L>,
    base: &FusionConfig,
    dev: &[Utterance],
    betas: &[f64],
    gammas: &[f64],
    exec: Execution,
) -> Result<TuneResult> {
    let refs: Vec<Vec<usize>> = dev.iter().map(|u| u.transcript.clone()).collect();
    tune_scales(&refs, betas, gammas, exec, |beta, gamma| {
        let cfg = FusionConfig {
            beta,
            gamma,
            ..base.clone()
        };
        decode_hyps(params, lm, &cfg, dev, Execution::Sequential)
    })
}
