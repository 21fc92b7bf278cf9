//! Arena-based autograd over 2D row-major tensors, generic in the scalar.
//!
//! A [`Graph`] owns every intermediate of one forward pass; parameters live
//! outside it in a [`ParamSet`] and are leased in as leaves, so one backward
//! sweep accumulates gradients for every use of a shared parameter.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{causal_mask, gelu_scalar, Graph, TensorError, TensorId};
pub use nn::{
    Linear, LayerNorm as LayerNormModule, Mlp2, MultiHeadAttention, TransformerBlock, INIT_STD,
    LAYER_NORM_EPS,
};
pub use optim::AdamW;
pub use params::{Init, ParamError, ParamId, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
