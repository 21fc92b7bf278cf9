//! Return-conditioned bidding policy: a causal transformer over interleaved
//! per-step token sequences, with optional semantic channels.

pub mod config;
pub mod net;
pub mod rollout;
pub mod tokens;
pub mod train;

pub use config::{EnabledTokens, ModelConfig, ModelConfigError, TokenRole};
pub use net::{ModelError, SemBidModel, WindowForward};
pub use rollout::{run_model_episode, RolloutConfig, RolloutError, RolloutOutcome};
pub use tokens::{SequenceError, SequenceInputs, SequenceLayout};
pub use train::{
    checkpoint_file_hash, load_checkpoint, meta_path, save_checkpoint, train_model,
    CheckpointMeta, TrainConfig, TrainError, TrainReport, PAPER_TRAIN_STEPS,
};
