pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod harness;
pub mod neural;
pub mod ngram;
pub mod par;
pub mod pipeline;
pub mod svm;
pub mod subword;
pub mod synth;

pub use error::{Error, Result};
