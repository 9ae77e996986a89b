//! Base learners: closed-form ridge, logistic regression, and small ELU
//! networks trained with AdamW.

pub(crate) mod linalg;
pub mod logistic;
pub mod mlp;
pub mod ridge;
pub mod train;

pub use logistic::{fit_logistic, LogisticConfig, PropensityModel};
pub use mlp::{elu, ForwardCache, MlpSpec, ParameterSet, TensorKind, TensorShape};
pub use ridge::{fit_ridge, LinearModel, RidgeConfig};
pub use train::{cosine_lr, train, AdamW, EpochRecord, Objective, TrainConfig, TrainOutcome};
