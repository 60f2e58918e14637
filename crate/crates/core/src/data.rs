//! Utterance data sets (line-delimited JSON) and text-only corpora
//! (one space-separated token-id sequence per line).

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub transcript: Vec<usize>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.len()
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[Utterance]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for u in data {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_corpus(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .map(|line| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| Error::invalid(format!("bad token id {tok:?}")))
                })
                .collect()
        })
        .collect()
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<usize>>> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn format_corpus(corpus: &[Vec<usize>]) -> String {
    let mut out = String::new();
    for sent in corpus {
        let line: Vec<String> = sent.iter().map(usize::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Checks every token id is a label of a `num_labels`-sized vocabulary.
pub fn check_labels<'a>(seqs: impl IntoIterator<Item = &'a Vec<usize>>, num_labels: usize) -> Result<()> {
    for seq in seqs {
        if let Some(&bad) = seq.iter().find(|&&id| id >= num_labels) {
            return Err(Error::VocabMismatch {
                what: "token id outside label inventory".into(),
                expected: num_labels,
                found: bad,
            });
        }
    }
    Ok(())
}

/// Checks feature widths and transcript ids against a model's dimensions.
pub fn check_dataset(set: &[Utterance], input_dim: usize, num_labels: usize) -> Result<()> {
    check_labels(set.iter().map(|u| &u.transcript), num_labels)?;
    for u in set {
        if let Some(f) = u.features.iter().find(|f| f.len() != input_dim) {
            return Err(Error::ShapeMismatch {
                what: format!("features of utterance {}", u.id),
                expected: vec![input_dim],
                found: vec![f.len()],
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_text_round_trip() {
        let c = vec![vec![1, 2, 3], vec![], vec![0]];
        assert_eq!(parse_corpus(&format_corpus(&c)).unwrap(), c);
        assert!(parse_corpus("1 x").is_err());
    }

    #[test]
    fn label_check() {
        assert!(check_labels(&[vec![0, 1]], 2).is_ok());
        assert!(check_labels(&[vec![0, 2]], 2).is_err());
    }
}
