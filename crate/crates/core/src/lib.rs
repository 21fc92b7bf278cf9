//! Auto-bidding laboratory: a budget-constrained second-price auction
//! simulator, structured-text signal generation, hashed text embeddings,
//! a small autograd engine, a decision-transformer bidding policy with
//! semantic conditioning, baselines, and representation probes.

pub mod auction;
pub mod baselines;
pub mod data;
pub mod embed;
pub mod model;
pub mod probing;
pub mod rng;
pub mod scalar;
pub mod semantics;
pub mod tensor;

pub use rng::{fnv1a64, stream, stream_seed, Fnv1a64};
pub use scalar::Scalar;

/// Training and inference run in f32; gradient checking runs in f64.
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ParamSet32 = tensor::ParamSet<f32>;
pub type ParamSet64 = tensor::ParamSet<f64>;
