//! Multi-agent pronoun inclusivity classification, batch runs and
//! statistical evaluation.

pub mod backend;
pub mod cli;
pub mod data;
pub mod domain;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompts;
pub mod published;

pub use error::Error;
