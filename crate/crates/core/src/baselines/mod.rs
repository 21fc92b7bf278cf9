//! Comparison policies: PID budget pacing and behavior cloning. The vanilla
//! return-conditioned transformer baseline is the policy model with every
//! semantic token disabled, so it lives with the model, not here.

pub mod bc;
pub mod pid;

pub use bc::{BcConfig, BcPolicy};
pub use pid::{run_pid_episode, PidConfig, PidController};
