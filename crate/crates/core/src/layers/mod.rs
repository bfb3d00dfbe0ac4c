//! Differentiable layers with hand-written backward passes.
//!
//! Batched activations use a `B × C × T` row-major layout.

mod attention;
mod batch_norm;
mod conv;
mod dropout;
mod loss;
mod lstm;

pub use attention::{attention_lstm_apply, attention_lstm_backward, AttentionCache, AttentionGrads, AttentionOutput, AttentionParams};
pub use batch_norm::{batch_norm_apply, batch_norm_backward, BatchNormCache, BatchNormParams, BN_EPSILON, BN_MOMENTUM};
pub(crate) use conv::{conv_block_backward_with, conv_block_forward_owned, conv_block_infer};
pub use conv::{conv_block_apply, conv_block_backward, conv_block_forward, ConvBlockCache, ConvBlockGrads, ConvBlockParams};
pub use dropout::{dropout_apply, DropoutMask};
pub use loss::{softmax, softmax_cross_entropy, CrossEntropy};
pub use lstm::{lstm_apply, lstm_backward, LstmCache, LstmOutput, LstmParams, GATES};

/// Whether a layer runs with training behaviour (batch statistics, dropout)
/// or inference behaviour (running statistics, identity dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
