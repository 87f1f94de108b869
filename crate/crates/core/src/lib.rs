//! Weakly-supervised token localisation from encoder-decoder attention.
//!
//! A small Transformer is trained to transcribe continuous feature streams
//! into token sequences. Its encoder-decoder attention then localises each
//! decoded token in time, which is used to mine new timed annotations and to
//! train a downstream instance classifier.

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod spot;
pub mod text;

pub use error::{Error, Result};
