//! Differentiable building blocks shared by all four networks.
//!
//! Every layer is a small handle of [`ParamId`](crate::params::ParamId)s into
//! a [`ParameterStore`](crate::params::ParameterStore). `forward` returns the
//! output together with whatever the matching `backward` needs; `backward`
//! accumulates parameter gradients into a [`Gradients`](crate::params::Gradients)
//! buffer and returns the gradient with respect to the layer input.

mod activation;
mod attention;
mod conv;
mod dropout;
mod linear;
mod norm;
mod transformer;

pub use activation::{gelu, gelu_backward, Gelu};
pub use attention::{
    attention_weights, multi_head_attention, AttentionCache, MultiHeadAttention,
};
pub use conv::{conv2d, Conv2d, ConvCache};
pub use dropout::{dropout, DropoutMask};
pub use linear::{add_positional, channel_fc, Linear};
pub use norm::{LayerNorm, LayerNormCache};
pub use transformer::{transformer_block, BlockCache, TransformerBlock};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}
