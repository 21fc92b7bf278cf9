//! Offline trajectory generation.
//!
//! Behavior policies are deliberately imperfect so the dataset spans the
//! action space: most episodes follow the PID pacer with multiplicative
//! log-normal action noise, the rest bid uniform random multipliers. The
//! budget regime cycles through the rho grid so every scarcity level is
//! represented.

use rand::Rng;

use crate::auction::{
    compute_rtg, compute_state_features, BidEnv, FeatureStats, MarketConfig, STATE_DIM,
};
use crate::baselines::pid::{PidConfig, PidController};
use crate::rng::stream;
use crate::semantics::{SemanticConfig, SemanticGenerator, Style, TransitionSummary};

/// Fraction of trajectories driven by the noisy PID policy, as x in 10;
/// the remainder bid uniformly at random.
const NOISY_PID_IN_TEN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorPolicy {
    NoisyPid,
    Random,
}

impl BehaviorPolicy {
    pub fn for_index(i: usize) -> Self {
        if i % 10 < NOISY_PID_IN_TEN {
            Self::NoisyPid
        } else {
            Self::Random
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Self::NoisyPid => 0,
            Self::Random => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Self::NoisyPid),
            1 => Some(Self::Random),
            _ => None,
        }
    }
}

/// The three text channels logged at one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTexts {
    pub task: String,
    pub history: String,
    pub strategy: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Raw (unnormalized) features, one row per period.
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Suffix sums of rewards in f32.
    pub rtg: Vec<f32>,
    /// 1 for real steps, 0 for padding. Episodes always run full length, so
    /// this is all ones today; consumers must still honor it.
    pub mask: Vec<f32>,
    pub texts: Vec<StepTexts>,
    pub rho: f64,
    pub behavior: BehaviorPolicy,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub market: MarketConfig,
    /// Budget regimes cycled over trajectories by index.
    pub rho_grid: Vec<f64>,
    pub style: Style,
    /// Sigma of the multiplicative exp(sigma z) noise on PID actions.
    pub action_noise_sigma: f64,
    /// Random policy bids uniform in [0, random_scale * price_scale].
    pub random_scale: f64,
}

impl DatasetConfig {
    pub fn new(market: MarketConfig, style: Style) -> Self {
        Self {
            market,
            rho_grid: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            style,
            action_noise_sigma: 0.35,
            random_scale: 2.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cfg: DatasetConfig,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    /// Normalization fitted over every state row of the set.
    pub stats: FeatureStats,
}

impl Dataset {
    /// Generates `n` episodes on the seed's named streams. Trajectory i uses
    /// env stream ("env", i), action-noise stream ("behavior", i) and
    /// template stream ("templates", i), so any single trajectory can be
    /// regenerated in isolation.
    pub fn generate(cfg: DatasetConfig, n: usize, seed: u64) -> Self {
        assert!(n >= 1, "need at least one trajectory");
        assert!(!cfg.rho_grid.is_empty(), "empty rho grid");
        let trajectories: Vec<Trajectory> = (0..n)
            .map(|i| generate_trajectory(&cfg, seed, i))
            .collect();
        let stats = FeatureStats::fit(trajectories.iter().flat_map(|t| t.states.iter()));
        Self {
            cfg,
            seed,
            trajectories,
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.cfg.market.periods
    }

    /// Largest initial return-to-go in the set; the default conditioning
    /// target for evaluation rollouts.
    pub fn max_return(&self) -> f32 {
        self.trajectories
            .iter()
            .map(|t| t.rtg.first().copied().unwrap_or(0.0))
            .fold(0.0, f32::max)
    }

    pub fn normalized_states(&self, i: usize) -> Vec<[f64; STATE_DIM]> {
        self.trajectories[i]
            .states
            .iter()
            .map(|s| self.stats.normalize(s))
            .collect()
    }
}

fn generate_trajectory(cfg: &DatasetConfig, seed: u64, index: usize) -> Trajectory {
    let rho = cfg.rho_grid[index % cfg.rho_grid.len()];
    let market = cfg.market.clone().with_ratio(rho);
    let behavior = BehaviorPolicy::for_index(index);
    let mut env = BidEnv::new(market.clone(), seed, index as u64);
    let mut behavior_rng = stream(seed, "behavior", index as u64);
    let mut generator = SemanticGenerator::for_episode(
        SemanticConfig::for_market(&market, cfg.style, seed),
        seed,
        index as u64,
    )
    .expect("semantic config for market preset");
    let mut pid = PidController::new(PidConfig::for_market(&market));
    let task_text = generator.task(market.target_cpa).text;

    let periods = env.periods();
    let mut states = Vec::with_capacity(periods);
    let mut actions = Vec::with_capacity(periods);
    let mut rewards = Vec::with_capacity(periods);
    let mut texts = Vec::with_capacity(periods);
    while !env.done() {
        states.push(compute_state_features(&env));
        let summary = if env.t == 0 {
            TransitionSummary::fresh()
        } else {
            TransitionSummary::from_ledger(&env.ledger, env.budget_remaining_ratio())
        };
        texts.push(StepTexts {
            task: task_text.clone(),
            history: generator.history(&summary).text,
            strategy: generator.strategy(&summary).text,
        });
        let lambda = match behavior {
            BehaviorPolicy::NoisyPid => {
                let base = pid.act(&env);
                let z: f64 = {
                    // Box-Muller; two uniforms per step keeps the stream layout fixed.
                    let u1: f64 = behavior_rng.random::<f64>().max(1e-12);
                    let u2: f64 = behavior_rng.random();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                (base * (cfg.action_noise_sigma * z).exp()).clamp(0.0, market.lambda_max)
            }
            BehaviorPolicy::Random => {
                let hi = (cfg.random_scale * market.price_scale).min(market.lambda_max);
                behavior_rng.random_range(0.0..hi)
            }
        };
        let step = env.step(lambda).expect("behavior action in range");
        actions.push(lambda);
        rewards.push(step.reward);
    }

    let rewards_f32: Vec<f32> = rewards.iter().map(|r| *r as f32).collect();
    let rtg = compute_rtg(&rewards_f32);
    Trajectory {
        states,
        actions,
        rewards,
        rtg,
        mask: vec![1.0; periods],
        texts,
        rho,
        behavior,
    }
}
