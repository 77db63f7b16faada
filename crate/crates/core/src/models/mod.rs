//! Differentiable predictors, clipped losses, training, and the closed-form
//! population ridge solutions.

mod predictor;
mod ridge;
mod train;

pub use predictor::{
    argmax, cross_entropy, softmax, Layer, LossKind, LossSpec, Model, Predictor, PredictorKind,
    DEFAULT_HIDDEN, DEFAULT_LOGIT_CLIP,
};
pub use ridge::{
    loglog_slope, ridge_delta_w, ridge_population_weights, ridge_scaling_check, ridge_source_risk,
    CheckStatus, RidgeCheckConfig, RidgeScalingReport, RidgeWorld, SlopeCheck,
};
pub use train::{fit, train, train_traced, TrainConfig};
