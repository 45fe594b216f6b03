//! Dense tensor type and the kernels shared by the denoiser, the sampler,
//! and training.

mod ops;
mod tensor;

pub use ops::{
    add_row_vector, column_sums, gelu, gelu_backward, layer_norm, matmul, matmul_nt, matmul_tn,
    mul_row_vector, silu, silu_backward, softmax_rows, softmax_rows_backward, standardize_rows,
    standardize_rows_backward, transpose,
};
pub use tensor::{Real, Tensor};
