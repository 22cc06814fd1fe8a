//! Causal discovery from observations contaminated by random measurement error.
//!
//! The observed variables are `X = X~ + E`, where `X~` follows a linear
//! structural equation model on a DAG and `E` is independent noise. Leaf
//! noise terms cannot be told apart from measurement error, which leads to the
//! canonical representation `X = A_nl E~_nl + E*` ([`graph::build_canonical`]).
//!
//! Two families of procedures recover the error-free graph:
//!
//! - second-order: factor analysis ([`factor`]) followed by PC or
//!   deterministic PC ([`ci`]), wrapped in [`pipelines`];
//! - higher-order: overcomplete ICA ([`oica`]) followed by the recursive
//!   group decomposition ([`recursive`]).

pub mod ci;
pub mod error;
pub mod eval;
pub mod factor;
pub mod fixtures;
pub mod graph;
pub mod linalg;
pub mod oica;
pub mod pipelines;
pub mod recursive;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
