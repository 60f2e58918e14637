use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub history: Vec<usize>,
    /// `K + 1` probabilities, EOS last.
    pub probs: Vec<f64>,
}

/// Explicit conditionals `p(next | history)`. A history missing from the
/// table falls back to its longest stored suffix; the empty history must be
/// present.
///
/// JSON layout: `{"num_labels": K, "entries": [{"history": [..], "probs": [..]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "TableDoc", into = "TableDoc")]
pub struct TableLm {
    num_labels: usize,
    entries: Vec<TableEntry>,
    #[serde(skip)]
    log_tables: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    num_labels: usize,
    entries: Vec<TableEntry>,
}

impl TryFrom<TableDoc> for TableLm {
    type Error = Error;
    fn try_from(doc: TableDoc) -> Result<Self> {
        TableLm::new(doc.num_labels, doc.entries)
    }
}

impl From<TableLm> for TableDoc {
    fn from(lm: TableLm) -> Self {
        TableDoc {
            num_labels: lm.num_labels,
            entries: lm.entries,
        }
    }
}

impl TableLm {
    pub fn new(num_labels: usize, entries: Vec<TableEntry>) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::invalid("table LM needs at least one label"));
        }
        for e in &entries {
            if e.probs.len() != num_labels + 1 {
                return Err(Error::ShapeMismatch {
                    what: format!("table LM distribution for history {:?}", e.history),
                    expected: vec![num_labels + 1],
                    found: vec![e.probs.len()],
                });
            }
            if e.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("probabilities out of range for {:?}", e.history)));
            }
            let total: f64 = e.probs.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "distribution for history {:?} sums to {total}",
                    e.history
                )));
            }
            if e.history.iter().any(|&h| h >= num_labels) {
                return Err(Error::invalid(format!("history {:?} contains a non-label", e.history)));
            }
        }
        if !entries.iter().any(|e| e.history.is_empty()) {
            return Err(Error::invalid("table LM needs an entry for the empty history"));
        }
        let log_tables = entries
            .iter()
            .map(|e| e.probs.iter().map(|p| p.ln()).collect())
            .collect();
        Ok(Self {
            num_labels,
            entries,
            log_tables,
        })
    }

    /// Same distribution for every history; with `with_eos = false` EOS gets no mass.
    pub fn uniform(num_labels: usize, with_eos: bool) -> Self {
        let probs = if with_eos {
            vec![1.0 / (num_labels + 1) as f64; num_labels + 1]
        } else {
            let mut p = vec![1.0 / num_labels as f64; num_labels];
            p.push(0.0);
            p
        };
        Self::new(
            num_labels,
            vec![TableEntry {
                history: vec![],
                probs,
            }],
        )
        .expect("uniform table is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    fn lookup(&self, history: &[usize]) -> usize {
        let mut best: Option<(usize, usize)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if history.ends_with(&e.history) && best.is_none_or(|(len, _)| e.history.len() > len) {
                best = Some((e.history.len(), i));
            }
        }
        best.expect("empty history is always present").1
    }
}

impl LanguageModel for TableLm {
    type State = Vec<usize>;

    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn initial_state(&self) -> Vec<usize> {
        Vec::new()
    }

    fn log_probs(&self, state: &Vec<usize>) -> Vec<f64> {
        self.log_tables[self.lookup(state)].clone()
    }

    fn advance(&self, state: &Vec<usize>, label: usize) -> Result<Vec<usize>> {
        if label >= self.num_labels {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        let mut next = state.clone();
        next.push(label);
        Ok(next)
    }
}
