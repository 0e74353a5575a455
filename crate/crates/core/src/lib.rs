//! Contextual answer sentence selection.
//!
//! Candidates are enriched with local context (adjacent sentences) and
//! global context (document sentences chosen by n-gram overlap or embedding
//! similarity), then scored by one of several transformer architectures.

#![allow(clippy::needless_range_loop)]

pub mod context;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod meta;
pub mod models;
pub mod nn;
pub mod synthetic;

pub use error::{Error, Result};
