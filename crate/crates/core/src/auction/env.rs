//! Episodic bidding environment.

use rand_chacha::ChaCha8Rng;

use super::config::MarketConfig;
use super::market::{run_auction, sample_impressions, PeriodOutcome};
use super::score::{compute_score, ScoreBreakdown};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    EpisodeFinished,
    ActionOutOfRange { lambda: f64, lambda_max: f64 },
}

impl std::fmt::Display for EnvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EpisodeFinished => write!(f, "step called on a finished episode"),
            Self::ActionOutOfRange { lambda, lambda_max } => {
                write!(f, "action {lambda} outside [0, {lambda_max}]")
            }
        }
    }
}

impl std::error::Error for EnvError {}

/// Running totals and per-period traces of one episode. Cumulative fields are
/// exact sums of the per-period traces, so a ledger can always be recomputed
/// bit-for-bit from its outcomes.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLedger {
    /// C: cumulative spend.
    pub spend: f64,
    /// V: cumulative value (summed period rewards).
    pub value: f64,
    pub conversions: f64,
    pub wins: u64,
    pub impressions: u64,
    pub dropped_for_budget: u64,
    pub outcomes: Vec<PeriodOutcome>,
    pub actions: Vec<f64>,
}

impl EpisodeLedger {
    pub fn record(&mut self, lambda: f64, outcome: PeriodOutcome) {
        self.spend += outcome.spend;
        self.value += outcome.reward;
        self.conversions += outcome.conversions;
        self.wins += u64::from(outcome.wins);
        self.impressions += u64::from(outcome.items);
        self.dropped_for_budget += u64::from(outcome.dropped_for_budget);
        self.outcomes.push(outcome);
        self.actions.push(lambda);
    }

    /// C / (V + 1e-10).
    pub fn realized_cpa(&self) -> f64 {
        self.spend / (self.value + 1e-10)
    }

    pub fn score(&self, target_cpa: f64, beta: f64) -> ScoreBreakdown {
        compute_score(self.value, self.spend, target_cpa, beta)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub reward: f64,
    pub conversions: f64,
    pub spend: f64,
    pub done: bool,
    pub outcome: PeriodOutcome,
}

/// One advertiser's episode over T periods. Actions are bid multipliers; the
/// environment samples the period's impressions, clears the auction under the
/// remaining budget and accumulates the ledger. The episode ends after period
/// T; an exhausted budget never ends it early, it just drops every remaining
/// winning bid, so every episode has exactly T steps.
#[derive(Debug, Clone)]
pub struct BidEnv {
    pub cfg: MarketConfig,
    rng: ChaCha8Rng,
    /// Completed periods.
    pub t: usize,
    pub budget: f64,
    pub budget_remaining: f64,
    pub ledger: EpisodeLedger,
}

impl BidEnv {
    /// Fresh episode on the sub-stream (`"env"`, `episode_index`) of
    /// `root_seed`.
    pub fn new(cfg: MarketConfig, root_seed: u64, episode_index: u64) -> Self {
        cfg.validate().expect("market config");
        let budget = cfg.effective_budget();
        Self {
            cfg,
            rng: stream(root_seed, "env", episode_index),
            t: 0,
            budget,
            budget_remaining: budget,
            ledger: EpisodeLedger::default(),
        }
    }

    pub fn periods(&self) -> usize {
        self.cfg.periods
    }

    pub fn done(&self) -> bool {
        self.t >= self.cfg.periods
    }

    /// Budget remaining as a fraction of the episode budget (zero for a
    /// zero-budget episode).
    pub fn budget_remaining_ratio(&self) -> f64 {
        if self.budget > 0.0 {
            self.budget_remaining / self.budget
        } else {
            0.0
        }
    }

    pub fn step(&mut self, lambda: f64) -> Result<StepResult, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeFinished);
        }
        if !lambda.is_finite() || lambda < 0.0 || lambda > self.cfg.lambda_max {
            return Err(EnvError::ActionOutOfRange {
                lambda,
                lambda_max: self.cfg.lambda_max,
            });
        }
        let items = sample_impressions(&self.cfg, &mut self.rng);
        let outcome = run_auction(&items, lambda, self.budget_remaining);
        self.budget_remaining -= outcome.spend;
        self.ledger.record(lambda, outcome);
        self.t += 1;
        Ok(StepResult {
            reward: outcome.reward,
            conversions: outcome.conversions,
            spend: outcome.spend,
            done: self.done(),
            outcome,
        })
    }
}
