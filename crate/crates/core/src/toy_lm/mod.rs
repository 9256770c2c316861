//! Desk-scale causal language model with GOAT heads.
//!
//! The model is generic over [`Real`](crate::Real): training runs in `f32`,
//! gradient checks in `f64`. Backpropagation is written by hand, so the
//! gradients of the spectral weights, the sink slope and the sink MLP are
//! exact rather than taped.

mod config;
mod decomposition;
mod eval;
mod gradcheck;
mod model;
mod optim;
mod task;
mod train;

pub use config::{OptimConfig, PositionMode, ToyModelConfig};
pub use decomposition::{argmax, decompose_parts, decompose_prior, extract_prior_decomposition, PriorDecomposition};
pub use eval::{eval_extrapolation, ExtrapolationPoint};
pub use gradcheck::{
    finite_difference_check, gradcheck_config, random_gradcheck, relative_error, GradCheckReport,
    FD_STEP, GRAD_REL_TOL, REL_FLOOR,
};
pub use model::{ForwardCache, HeadParams, HeadPrior, LayerParams, ParamMut, ParamRef, ToyModel};
pub use optim::{grad_norm, lr_at, AdamW};
pub use task::{gen_copy_mixture, CopyMixture, CopySample, TokenSource, ToyTaskSpec};
pub use train::{train, TrainConfig, TrainOutcome, TrainRecord};
