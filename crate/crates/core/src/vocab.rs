//! Label inventory and the alignment topology: every alignment interleaves
//! `T` frame-consuming blanks with the `S` labels and ends in a blank, so
//! `U = T + S`.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Default upper bound on the number of alignments `enumerate_alignments` will build.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

/// Non-blank labels with dense ids `0..K`; blank is `K` and the LM-only EOS is `K + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    symbols: Vec<String>,
}

impl LabelVocab {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one label"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(Error::invalid(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// A vocabulary of `k` lowercase letters (or `l<i>` beyond 26).
    pub fn synthetic(k: usize) -> Result<Self> {
        let symbols = (0..k)
            .map(|i| {
                if i < 26 {
                    ((b'a' + i as u8) as char).to_string()
                } else {
                    format!("l{i}")
                }
            })
            .collect();
        Self::new(symbols)
    }

    /// One symbol per line, line index = id. Blank and EOS are not listed.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn num_labels(&self) -> usize {
        self.symbols.len()
    }

    pub fn blank_id(&self) -> usize {
        self.symbols.len()
    }

    pub fn eos_id(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn is_label(&self, id: usize) -> bool {
        id < self.symbols.len()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn label_seq(&self, ids: Vec<usize>) -> Result<LabelSeq> {
        if let Some(&bad) = ids.iter().find(|&&id| !self.is_label(id)) {
            return Err(Error::invalid(format!(
                "label id {bad} outside vocabulary of size {}",
                self.num_labels()
            )));
        }
        Ok(LabelSeq(ids))
    }

    /// Parses whitespace-separated symbols; `blank` names the blank symbol.
    pub fn parse_alignment(&self, text: &str, blank: &str) -> Result<AlignmentSeq> {
        let syms = text
            .split_whitespace()
            .map(|tok| {
                if tok == blank {
                    Ok(AlignSym::Blank)
                } else {
                    self.id_of(tok)
                        .map(AlignSym::Label)
                        .ok_or_else(|| Error::invalid(format!("unknown symbol {tok:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        AlignmentSeq::new(syms)
    }

    pub fn render(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&id| self.symbol(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A blank-free, EOS-free label sequence `y_1^S`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelSeq(pub Vec<usize>);

impl LabelSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlignSym {
    Blank,
    Label(usize),
}

impl fmt::Display for AlignSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignSym::Blank => write!(f, "<b>"),
            AlignSym::Label(id) => write!(f, "{id}"),
        }
    }
}

/// An alignment `α_1^U` over labels plus blank. Always ends in a blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentSeq(Vec<AlignSym>);

impl AlignmentSeq {
    pub fn new(syms: Vec<AlignSym>) -> Result<Self> {
        match syms.last() {
            Some(AlignSym::Blank) => Ok(Self(syms)),
            Some(_) => Err(Error::invalid("alignment must end in the terminal blank")),
            None => Err(Error::invalid("alignment must consume at least one frame")),
        }
    }

    pub fn symbols(&self) -> &[AlignSym] {
        &self.0
    }

    /// Number of frames `T` (blanks).
    pub fn num_frames(&self) -> usize {
        self.0.iter().filter(|s| matches!(s, AlignSym::Blank)).count()
    }

    /// Number of labels `S`.
    pub fn num_labels(&self) -> usize {
        self.0.len() - self.num_frames()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Removes all blanks.
pub fn collapse(a: &AlignmentSeq) -> LabelSeq {
    LabelSeq(
        a.0.iter()
            .filter_map(|s| match s {
                AlignSym::Label(id) => Some(*id),
                AlignSym::Blank => None,
            })
            .collect(),
    )
}

/// `binomial(T - 1 + S, S)`: the labels are placed freely among the first
/// `T - 1` blanks, the last blank is fixed.
pub fn count_alignments(num_labels: usize, num_frames: usize, cap: u128) -> Result<u128> {
    if num_frames == 0 {
        return Err(Error::invalid("alignment needs at least one frame"));
    }
    let n = (num_frames - 1 + num_labels) as u128;
    let k = num_labels.min(num_frames - 1) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at each step
        acc = acc
            .checked_mul(n - i)
            .map(|v| v / (i + 1))
            .ok_or(Error::TooManyAlignments { count: u128::MAX, cap })?;
        if acc > cap {
            return Err(Error::TooManyAlignments { count: acc, cap });
        }
    }
    if acc > cap {
        return Err(Error::TooManyAlignments { count: acc, cap });
    }
    Ok(acc)
}

/// All alignments of `y` over `num_frames` frames, in lexicographic order
/// with labels sorting before blank.
pub fn enumerate_alignments(y: &LabelSeq, num_frames: usize, cap: u128) -> Result<Vec<AlignmentSeq>> {
    count_alignments(y.len(), num_frames, cap)?;
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(num_frames + y.len());
    fill(&y.0, 0, num_frames - 1, &mut prefix, &mut out);
    Ok(out)
}

fn fill(
    y: &[usize],
    s: usize,
    blanks_left: usize,
    prefix: &mut Vec<AlignSym>,
    out: &mut Vec<AlignmentSeq>,
) {
    if s == y.len() && blanks_left == 0 {
        let mut full = prefix.clone();
        full.push(AlignSym::Blank);
        out.push(AlignmentSeq(full));
        return;
    }
    if s < y.len() {
        prefix.push(AlignSym::Label(y[s]));
        fill(y, s + 1, blanks_left, prefix, out);
        prefix.pop();
    }
    if blanks_left > 0 {
        prefix.push(AlignSym::Blank);
        fill(y, s, blanks_left - 1, prefix, out);
        prefix.pop();
    }
}
