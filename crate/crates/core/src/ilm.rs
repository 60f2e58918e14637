//! Internal LM estimation: the label head evaluated with the encoder input
//! to the Readout replaced by a zero vector or by the per-utterance encoder
//! time mean. The result is `q` alone; blank and `p(Δt)` play no part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{EncoderOutput, SlowState, TransducerParams};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IlmVariant {
    Zero,
    Avg,
}

impl std::fmt::Display for IlmVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IlmVariant::Zero => "zero",
            IlmVariant::Avg => "avg",
        })
    }
}

impl std::str::FromStr for IlmVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(IlmVariant::Zero),
            "avg" => Ok(IlmVariant::Avg),
            _ => Err(Error::invalid(format!("unknown ILM variant {s:?}"))),
        }
    }
}

/// Encoder-side readout input `W_enc ĥ` for the chosen substitute `ĥ`.
pub fn ilm_context(params: &TransducerParams, variant: IlmVariant, enc: Option<&EncoderOutput>) -> Result<Vec<f64>> {
    match variant {
        IlmVariant::Zero => Ok(vec![0.0; params.config.readout_pre_dim()]),
        IlmVariant::Avg => {
            let enc = enc.ok_or(Error::MissingEncoderContext)?;
            Ok(params.encoder_proj(&enc.mean))
        }
    }
}

/// `log p_ILM(· | history)` over the labels, given a SlowRNN state.
pub fn ilm_log_probs_from_state(params: &TransducerParams, slow: &SlowState, context: &[f64]) -> Vec<f64> {
    params.joint(context, &slow.proj).log_q
}

/// `log p_ILM(· | history)` over the labels.
pub fn ilm_log_probs(
    params: &TransducerParams,
    history: &[usize],
    variant: IlmVariant,
    enc: Option<&EncoderOutput>,
) -> Result<Vec<f64>> {
    let ctx = ilm_context(params, variant, enc)?;
    let slow = params.slow_history(history)?;
    Ok(ilm_log_probs_from_state(params, &slow, &ctx))
}

fn sentence_nll(params: &TransducerParams, sentence: &[usize], ctx: &[f64]) -> Result<f64> {
    let mut slow = params.slow_start();
    let mut nll = 0.0;
    for &tok in sentence {
        if tok >= params.num_labels() {
            return Err(Error::invalid(format!("corpus token {tok} is not a label")));
        }
        nll -= ilm_log_probs_from_state(params, &slow, ctx)[tok];
        slow = params.slow_step(&slow, tok)?;
    }
    Ok(nll)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlmPerplexity {
    pub ppl: f64,
    pub tokens: usize,
}

/// Label-level ILM perplexity, never scoring EOS. The `avg` variant needs
/// the paired audio (`features[i]` for `sentences[i]`); on text-only data it
/// is rejected.
pub fn ilm_perplexity(
    params: &TransducerParams,
    variant: IlmVariant,
    sentences: &[Vec<usize>],
    features: Option<&[Vec<Vec<f64>>]>,
    exec: Execution,
) -> Result<IlmPerplexity> {
    if let Some(f) = features {
        if f.len() != sentences.len() {
            return Err(Error::invalid(format!(
                "{} sentences but {} feature sequences",
                sentences.len(),
                f.len()
            )));
        }
    }
    if variant == IlmVariant::Avg && features.is_none() {
        return Err(Error::MissingEncoderContext);
    }
    let zero_ctx = ilm_context(params, IlmVariant::Zero, None)?;
    let parts = exec.map_indexed(sentences.len(), |i| -> Result<f64> {
        match variant {
            IlmVariant::Zero => sentence_nll(params, &sentences[i], &zero_ctx),
            IlmVariant::Avg => {
                let feats = &features.expect("checked above")[i];
                let enc = params.encode(feats)?;
                let ctx = ilm_context(params, variant, Some(&enc))?;
                sentence_nll(params, &sentences[i], &ctx)
            }
        }
    });
    let mut nll = 0.0;
    for p in parts {
        nll += p?;
    }
    let tokens: usize = sentences.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(IlmPerplexity {
        ppl: (nll / tokens as f64).exp(),
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::numeric::logsumexp;

    fn params() -> TransducerParams {
        let cfg = NetworkConfig {
            num_labels: 5,
            input_dim: 3,
            ..Default::default()
        };
        TransducerParams::init(&cfg, 21).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut p = params();
        p.label_w.fill(0.0);
        p.label_b.fill(0.0);
        let lp = ilm_log_probs(&p, &[1, 2], IlmVariant::Zero, None).unwrap();
        for v in lp {
            assert!((v.exp() - 0.2).abs() < 1e-15);
        }
        let corpus = vec![vec![0, 1, 4], vec![3]];
        let r = ilm_perplexity(&p, IlmVariant::Zero, &corpus, None, Execution::Sequential).unwrap();
        assert!((r.ppl - 5.0).abs() < 1e-12);
        assert_eq!(r.tokens, 4);
    }

    #[test]
    fn normalized_and_avg_needs_context() {
        let p = params();
        let x = vec![vec![0.1, 0.2, 0.3]; 4];
        let enc = p.encode(&x).unwrap();
        for v in [IlmVariant::Zero, IlmVariant::Avg] {
            let lp = ilm_log_probs(&p, &[2], v, Some(&enc)).unwrap();
            assert!(logsumexp(&lp).abs() < 1e-9);
        }
        assert!(matches!(
            ilm_log_probs(&p, &[2], IlmVariant::Avg, None),
            Err(Error::MissingEncoderContext)
        ));
        assert!(matches!(
            ilm_perplexity(&p, IlmVariant::Avg, &[vec![1]], None, Execution::Sequential),
            Err(Error::MissingEncoderContext)
        ));
    }

    #[test]
    fn zero_variant_ignores_audio() {
        let p = params();
        let e1 = p.encode(&vec![vec![1.0, 0.0, 0.0]; 3]).unwrap();
        let e2 = p.encode(&vec![vec![-2.0, 0.5, 0.0]; 5]).unwrap();
        let a = ilm_log_probs(&p, &[0, 3], IlmVariant::Zero, Some(&e1)).unwrap();
        let b = ilm_log_probs(&p, &[0, 3], IlmVariant::Zero, Some(&e2)).unwrap();
        assert_eq!(a, b);
        let c = ilm_log_probs(&p, &[0, 3], IlmVariant::Avg, Some(&e1)).unwrap();
        let d = ilm_log_probs(&p, &[0, 3], IlmVariant::Avg, Some(&e2)).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn zero_ppl_is_corpus_split_invariant() {
        let p = params();
        let corpus = vec![vec![0, 1, 4], vec![3, 3], vec![2]];
        let all = ilm_perplexity(&p, IlmVariant::Zero, &corpus, None, Execution::Parallel).unwrap();
        let mut nll = 0.0;
        for s in &corpus {
            let r = ilm_perplexity(&p, IlmVariant::Zero, std::slice::from_ref(s), None, Execution::Sequential).unwrap();
            nll += r.ppl.ln() * r.tokens as f64;
        }
        assert!((all.ppl.ln() * all.tokens as f64 - nll).abs() < 1e-9);
    }
}
