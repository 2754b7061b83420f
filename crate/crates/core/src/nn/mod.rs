//! Differentiable kernels: tensors, a reverse-mode tape, attention, the
//! SLFN gate, TSLFN blocks, 1-D convolution, dropout, Adam, parameter
//! checkpoints and a finite-difference gradient checker.

mod activation;
mod adam;
mod attention;
pub mod checkpoint;
mod conv;
mod dropout;
mod gradcheck;
mod linear;
mod params;
mod slfn;
mod tape;
mod tensor;

pub use activation::{activation, gelu, leaky_relu, sigmoid, Activation, LEAKY_SLOPE};
pub use adam::{Adam, AdamState};
pub use attention::{self_attention, AttentionConfig, AttentionHead, MultiHeadAttention};
pub use conv::{conv1d, mask_rows, ConvBlock};
pub use dropout::{dropout, RunMode};
pub use gradcheck::{gradient_check, gradient_check_where, relative_error, GradCheckReport, ParamCheck, FD_STEP};
pub use linear::Linear;
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use slfn::{slfn_step, Slfn, TslfnBlock};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error(
        "gradient mismatch in {param}[{index}]: relative error {relative_error:.3e} \
         (analytic {analytic:.6e}, numeric {numeric:.6e})"
    )]
    GradientMismatch {
        param: String,
        index: usize,
        relative_error: f64,
        analytic: f64,
        numeric: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// KL divergence from `N(μ, diag(e^{logvar}))` to `N(0, I)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}
