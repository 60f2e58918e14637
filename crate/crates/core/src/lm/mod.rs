//! Label-level language models with an end-of-sentence token.
//!
//! Token ids follow the transducer vocabulary: labels are `0..K`, `K` is the
//! blank (rejected here, the LM has no blank) and `K + 1` is EOS. The
//! distribution vectors returned by [`LanguageModel::log_probs`] have `K + 1`
//! entries with EOS last.

mod any;
mod rnn;
mod table;

pub use any::{AnyLm, AnyLmState};
pub use rnn::{train_rnn_lm, LmConfig, LmTrainConfig, RnnLm, RnnLmState, LM_KIND};
pub use table::{TableEntry, TableLm};

use crate::error::{Error, Result};
use crate::par::Execution;

pub trait LanguageModel: Sync {
    type State: Clone + Send + Sync;

    /// Size of the label inventory `K` (EOS excluded).
    fn num_labels(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// `log p(· | history)` over the `K` labels followed by EOS.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    /// Consumes one non-blank label.
    fn advance(&self, state: &Self::State, label: usize) -> Result<Self::State>;

    /// Log-probability of `token` (label id or EOS id `K + 1`) and the state
    /// after it. EOS leaves the state unchanged.
    fn logprob(&self, state: &Self::State, token: usize) -> Result<(f64, Self::State)> {
        let k = self.num_labels();
        let dist = self.log_probs(state);
        if token < k {
            Ok((dist[token], self.advance(state, token)?))
        } else if token == k {
            Err(Error::BlankNotAllowed("language model"))
        } else if token == k + 1 {
            Ok((dist[k], state.clone()))
        } else {
            Err(Error::invalid(format!("token {token} outside LM vocabulary")))
        }
    }
}

/// Checks the LM covers exactly the transducer's label inventory.
pub fn check_vocab<L: LanguageModel + ?Sized>(lm: &L, num_labels: usize) -> Result<()> {
    if lm.num_labels() != num_labels {
        return Err(Error::VocabMismatch {
            what: "language model label count vs transducer".into(),
            expected: num_labels,
            found: lm.num_labels(),
        });
    }
    Ok(())
}

/// Negative log-likelihood of one sentence and the number of scored tokens.
pub fn sentence_nll<L: LanguageModel + ?Sized>(lm: &L, sentence: &[usize], include_eos: bool) -> Result<(f64, usize)> {
    let k = lm.num_labels();
    let mut state = lm.initial_state();
    let mut nll = 0.0;
    for &tok in sentence {
        if tok >= k {
            return Err(Error::invalid(format!("corpus token {tok} is not a label")));
        }
        let (lp, next) = lm.logprob(&state, tok)?;
        nll -= lp;
        state = next;
    }
    let mut count = sentence.len();
    if include_eos {
        nll -= lm.log_probs(&state)[k];
        count += 1;
    }
    Ok((nll, count))
}

/// `exp(mean NLL per scored token)`. Without `include_eos` the EOS event is
/// simply not scored (no renormalization of the label mass).
pub fn perplexity<L: LanguageModel + ?Sized>(
    lm: &L,
    corpus: &[Vec<usize>],
    include_eos: bool,
    exec: Execution,
) -> Result<f64> {
    let parts = exec.map(corpus, |s| sentence_nll(lm, s, include_eos));
    let mut nll = 0.0;
    let mut count = 0usize;
    for p in parts {
        let (n, c) = p?;
        nll += n;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((nll / count as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_with_eos() {
        let lm = TableLm::uniform(3, true);
        let s = lm.initial_state();
        for tok in [0, 1, 2, 4] {
            let (lp, _) = lm.logprob(&s, tok).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!(matches!(lm.logprob(&s, 3), Err(Error::BlankNotAllowed(_))));
        assert!(lm.logprob(&s, 5).is_err());
    }

    #[test]
    fn uniform_without_eos_mass_has_ppl_k() {
        let lm = TableLm::uniform(3, false);
        let corpus = vec![vec![0, 1, 2, 2], vec![1]];
        let ppl = perplexity(&lm, &corpus, false, Execution::Sequential).unwrap();
        assert!((ppl - 3.0).abs() < 1e-12);
        // the neural-LM convention: EOS mass stays, it is just not scored
        let lm = TableLm::uniform(3, true);
        let ppl = perplexity(&lm, &corpus, false, Execution::Sequential).unwrap();
        assert!((ppl - 4.0).abs() < 1e-12);
    }

    #[test]
    fn certain_token_has_ppl_one() {
        let lm = TableLm::new(
            1,
            vec![TableEntry {
                history: vec![],
                probs: vec![1.0, 0.0],
            }],
        )
        .unwrap();
        assert_eq!(perplexity(&lm, &[vec![0]], false, Execution::Sequential).unwrap(), 1.0);
    }

    #[test]
    fn empty_corpus_is_error() {
        let lm = TableLm::uniform(2, true);
        assert!(matches!(perplexity(&lm, &[], false, Execution::Sequential), Err(Error::EmptyCorpus)));
        assert!(matches!(
            perplexity(&lm, &[vec![]], false, Execution::Sequential),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn vocab_mismatch_is_reported() {
        let lm = TableLm::uniform(2, true);
        assert!(check_vocab(&lm, 2).is_ok());
        assert!(matches!(check_vocab(&lm, 3), Err(Error::VocabMismatch { .. })));
    }
}
