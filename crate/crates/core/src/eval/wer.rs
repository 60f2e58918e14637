use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts from one or more aligned pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_tokens: usize,
    pub hyp_tokens: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.ref_tokens += o.ref_tokens;
        self.hyp_tokens += o.hyp_tokens;
    }
}

/// Minimum-edit alignment with unit costs. Among equally short alignments
/// the one with the fewest deletions plus insertions wins, so a swap is
/// scored as substitutions.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    // cell = (edits, del + ins, subs, dels)
    type Cell = (usize, usize, usize, usize);
    let n = hyp.len();
    let mut prev: Vec<Cell> = (0..=n).map(|j| (j, j, 0, 0)).collect();
    for (i, r) in reference.iter().enumerate() {
        let mut cur: Vec<Cell> = Vec::with_capacity(n + 1);
        cur.push((i + 1, i + 1, 0, i + 1));
        for (j, h) in hyp.iter().enumerate() {
            let diag = prev[j];
            let diag = if r == h {
                diag
            } else {
                (diag.0 + 1, diag.1, diag.2 + 1, diag.3)
            };
            let del = prev[j + 1];
            let del = (del.0 + 1, del.1 + 1, del.2, del.3 + 1);
            let ins = cur[j];
            let ins = (ins.0 + 1, ins.1 + 1, ins.2, ins.3);
            let best = [diag, del, ins]
                .into_iter()
                .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)))
                .expect("three candidates");
            cur.push(best);
        }
        prev = cur;
    }
    let (edits, _, subs, dels) = prev[n];
    EditCounts {
        substitutions: subs,
        deletions: dels,
        insertions: edits - subs - dels,
        ref_tokens: reference.len(),
        hyp_tokens: n,
    }
}

/// Corpus-level WER with its edit breakdown, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub counts: EditCounts,
    pub wer: f64,
    /// Shares of the errors; all zero when there are no errors.
    pub sub_percent: f64,
    pub del_percent: f64,
    pub ins_percent: f64,
    /// Hypothesis tokens over reference tokens.
    pub len_ratio: f64,
}

impl WerReport {
    pub fn from_counts(counts: EditCounts) -> Result<Self> {
        if counts.ref_tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        let errors = counts.errors();
        let share = |x: usize| {
            if errors == 0 {
                0.0
            } else {
                100.0 * x as f64 / errors as f64
            }
        };
        Ok(Self {
            counts,
            wer: 100.0 * errors as f64 / counts.ref_tokens as f64,
            sub_percent: share(counts.substitutions),
            del_percent: share(counts.deletions),
            ins_percent: share(counts.insertions),
            len_ratio: counts.hyp_tokens as f64 / counts.ref_tokens as f64,
        })
    }
}

pub fn wer<T: PartialEq>(refs: &[Vec<T>], hyps: &[Vec<T>]) -> Result<WerReport> {
    if refs.len() != hyps.len() {
        return Err(Error::invalid(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditCounts::default();
    for (r, h) in refs.iter().zip(hyps) {
        total.add(&align(r, h));
    }
    WerReport::from_counts(total)
}

/// Splits a text on whitespace into word tokens.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        words(s)
    }

    #[test]
    fn single_substitution() {
        let r = wer(&[w("a b c")], &[w("a x c")]).unwrap();
        assert!((r.wer - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.sub_percent, r.del_percent, r.ins_percent), (100.0, 0.0, 0.0));
    }

    #[test]
    fn no_errors_reports_zero_breakdown() {
        let r = wer(&[w("a b")], &[w("a b")]).unwrap();
        assert_eq!((r.wer, r.sub_percent, r.del_percent, r.ins_percent), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.len_ratio, 1.0);
    }

    #[test]
    fn insertion() {
        let r = wer(&[w("a")], &[w("a b")]).unwrap();
        assert_eq!((r.wer, r.ins_percent), (100.0, 100.0));
        assert_eq!(r.len_ratio, 2.0);
    }

    #[test]
    fn swap_prefers_substitutions() {
        let c = align(&w("a b"), &w("b a"));
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 0));
    }

    #[test]
    fn errors() {
        assert!(matches!(wer::<String>(&[vec![]], &[vec![]]), Err(Error::EmptyCorpus)));
        assert!(wer(&[w("a")], &[]).is_err());
    }
}
