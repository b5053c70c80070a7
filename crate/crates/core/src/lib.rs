//! Weak supervision for learning-to-rank.
//!
//! Labeling functions vote on whether a query-document pair is irrelevant, a
//! naive-Bayes model turns the votes into a probability, engagement targets are
//! mixed toward a false-positive label by that probability, and a ListNet
//! ranker is trained and evaluated on the result.

pub mod data_model;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod lf_engine;
pub mod pipeline;
pub mod ranker;
pub mod relabeler;
pub mod synthgen;
pub mod weak_labeler;

pub use error::{Error, Result};
