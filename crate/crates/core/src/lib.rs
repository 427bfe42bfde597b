//! Environment-invariance penalties on synthetic multi-environment tasks.
//!
//! The crate is layered bottom-up:
//! - [`envs`] defines environments, samplers and exact population moments.
//! - [`popmath`] evaluates risks, correlations and penalties (with gradients) for a linear model.
//! - [`oracle`] enumerates the constrained solution sets and builds risk tables.
//! - [`trainer`] runs λ-sweeps on population moments and trains models on sampled data.
//! - [`verify`] runs Monte-Carlo checks on anti-causal structural models.
//! - [`config`] and [`output`] hold the text config format and artifact writers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod envs;
pub mod error;
pub mod oracle;
pub mod output;
pub mod popmath;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
