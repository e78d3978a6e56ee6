//! Dense linear algebra and differentiable kernels.
//!
//! Everything here is a pure function of its inputs. Weights live in 32-bit
//! floats on disk but all arithmetic runs in 64-bit.

mod kernels;
mod linalg;
mod matrix;

pub use kernels::{
    cross_entropy_logits, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul,
    matmul_backward, matmul_nt, matmul_tn, nll_sum, softmax_rows, softmax_rows_backward,
    LAYER_NORM_EPS,
};
pub(crate) use kernels::{
    gemm_acc, GELU_A, GELU_C, gemm_tn_acc, layer_norm_rows,
    layer_norm_rows_backward, row_nll, softmax_backward_row, softmax_in_place, LayerNormCache,
};
pub use linalg::{cholesky, spd_inverse, upper_cholesky_of_inverse};
pub use matrix::{Matrix, Vector};
