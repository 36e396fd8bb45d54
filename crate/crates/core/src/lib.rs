//! Probing masked language models for argument-structure generalization.
//!
//! Novel tokens are added to a pre-trained masked LM, learned from a handful
//! of sentences, and then tested in structurally tagged sentences the model
//! never saw during fine-tuning.

pub mod backend;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod lexicon;
pub mod paradigm;
pub mod runner;
pub mod tuning;

pub use error::{Error, Result};
