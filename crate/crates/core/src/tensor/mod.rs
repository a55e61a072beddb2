//! Dense matrices and the differentiable layer set used by the model.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, COORDS_PER_TENSOR, DEFAULT_STEP, REL_ERROR_FLOOR};
pub use matrix::Matrix;
pub use params::{ParamId, ParamSet, RunningStats};
pub use tape::{
    logistic_loss_value, softmax_rows, softplus, BatchStats, Gradients, Mode, Tape, Var, BN_EPS,
    BN_MOMENTUM,
};
