//! Indirect, direct and hybrid (H-learner) meta-learners for conditional
//! average treatment effect estimation, with synthetic and semi-synthetic
//! benchmarks, PEHE evaluation and validation-based selection of the
//! H-learner's mixing weight.

// Range checks are written as `!(v >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod metalearners;
pub mod optim;
pub mod pseudo;

pub use error::{Error, Result};
