//! Auction simulator: market configuration, impression sampling, the
//! period-level bidding environment, scoring, and state featurization.

pub mod config;
pub mod env;
pub mod features;
pub mod market;
pub mod score;

pub use config::{MarketConfig, Scenario};
pub use env::{BidEnv, EnvError, EpisodeLedger, StepResult};
pub use features::{compute_state_features, FeatureStats, HISTORY_WINDOW, STATE_DIM};
pub use market::{Impression, PeriodOutcome};
pub use score::{compute_rtg, compute_rtg_f64, compute_score, ScoreBreakdown};
