use std::path::Path;

use super::{LanguageModel, RnnLm, RnnLmState, TableLm};
use crate::error::Result;
use crate::tensor::Checkpoint;

/// Either LM kind, chosen by file contents.
#[derive(Debug, Clone)]
pub enum AnyLm {
    Table(TableLm),
    Rnn(RnnLm),
}

#[derive(Debug, Clone)]
pub enum AnyLmState {
    Table(Vec<usize>),
    Rnn(RnnLmState),
}

impl AnyLm {
    /// Loads a checkpoint (anything carrying `format_version`) as an LSTM LM
    /// and any other JSON document as a table LM.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("format_version").is_some() {
            let ckpt: Checkpoint = serde_json::from_value(value)?;
            Ok(AnyLm::Rnn(RnnLm::from_checkpoint(&ckpt)?))
        } else {
            Ok(AnyLm::Table(serde_json::from_value(value)?))
        }
    }
}

impl LanguageModel for AnyLm {
    type State = AnyLmState;

    fn num_labels(&self) -> usize {
        match self {
            AnyLm::Table(lm) => lm.num_labels(),
            AnyLm::Rnn(lm) => lm.num_labels(),
        }
    }

    fn initial_state(&self) -> AnyLmState {
        match self {
            AnyLm::Table(lm) => AnyLmState::Table(lm.initial_state()),
            AnyLm::Rnn(lm) => AnyLmState::Rnn(lm.initial_state()),
        }
    }

    fn log_probs(&self, state: &AnyLmState) -> Vec<f64> {
        match (self, state) {
            (AnyLm::Table(lm), AnyLmState::Table(s)) => lm.log_probs(s),
            (AnyLm::Rnn(lm), AnyLmState::Rnn(s)) => lm.log_probs(s),
            _ => panic!("LM state of the wrong kind"),
        }
    }

    fn advance(&self, state: &AnyLmState, label: usize) -> Result<AnyLmState> {
        match (self, state) {
            (AnyLm::Table(lm), AnyLmState::Table(s)) => Ok(AnyLmState::Table(lm.advance(s, label)?)),
            (AnyLm::Rnn(lm), AnyLmState::Rnn(s)) => Ok(AnyLmState::Rnn(lm.advance(s, label)?)),
            _ => panic!("LM state of the wrong kind"),
        }
    }
}
