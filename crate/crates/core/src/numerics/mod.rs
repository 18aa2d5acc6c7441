//! Dense numeric kernels used by training: matrices, ridge regression,
//! layer normalization, the decoder MLP, Adam and the L1 loss.

mod adam;
mod checkpoint;
mod layernorm;
mod loss;
mod matrix;
mod mlp;
mod ridge;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use layernorm::{layernorm, layernorm_backward, LAYERNORM_EPS};
pub use loss::l1_loss;
pub use matrix::DenseMatrix;
pub use mlp::{Linear, Mlp, MlpTrace, REFERENCE_HIDDEN_WIDTH};
pub use ridge::{
    normal_equation_residual, regularized_gram, ridge_gradient, ridge_objective, ridge_solve,
    Cholesky,
};
