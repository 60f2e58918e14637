//! Factored-blank transducer toolkit: exact full-sum training, alignment-
//! synchronous beam search with external-LM shallow fusion and internal-LM
//! subtraction, EOS folding, and a simulator for asynchronous parameter
//! averaging.

pub mod data;
pub mod decoder;
pub mod dist_sim;
pub mod error;
pub mod eval;
pub mod ilm;
pub mod lm;
pub mod loss;
pub mod network;
pub mod numeric;
pub mod par;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use par::Execution;
