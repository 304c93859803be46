//! Unsupervised dependency parsing with two cooperating models: a
//! generative dependency model with valence and a discriminative convex
//! clustering parser, trained jointly through agreement decoding.

pub mod cmst;
pub mod corpus;
pub mod decoder;
pub mod dmv;
mod error;
pub mod eval;
pub mod par;
pub mod trainer;
pub mod tree;

pub use error::{Error, Result};
