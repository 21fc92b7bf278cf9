//! Autoregressive evaluation: condition on a target return, regenerate the
//! semantic texts from live telemetry each period, decrement the conditioning
//! return by realized rewards, and bid the clipped prediction.

use std::rc::Rc;

use crate::auction::{
    compute_state_features, BidEnv, EpisodeLedger, FeatureStats, MarketConfig, ScoreBreakdown,
};
use crate::embed::{EmbedError, SemanticPipeline};
use crate::model::net::{ModelError, SemBidModel};
use crate::model::tokens::SequenceInputs;
use crate::scalar::Scalar;
use crate::semantics::{SemanticConfig, SemanticGenerator, TransitionSummary};

#[derive(Debug)]
pub enum RolloutError {
    Model(ModelError),
    Embed(EmbedError),
    Semantics(String),
    EpisodeTooLong { periods: usize, max: usize },
}

impl std::fmt::Display for RolloutError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Model(e) => write!(f, "model: {e}"),
            Self::Embed(e) => write!(f, "embedding: {e}"),
            Self::Semantics(m) => write!(f, "semantics: {m}"),
            Self::EpisodeTooLong { periods, max } => write!(
                f,
                "episode has {periods} periods but the position table holds {max}"
            ),
        }
    }
}

impl std::error::Error for RolloutError {}

impl From<ModelError> for RolloutError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<EmbedError> for RolloutError {
    fn from(e: EmbedError) -> Self {
        Self::Embed(e)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Initial conditioning return = scale x best training return.
    pub target_rtg_scale: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            target_rtg_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub ledger: EpisodeLedger,
    pub score: ScoreBreakdown,
    /// Conditioning return fed at each step, before that step's reward.
    pub rtg_trace: Vec<f64>,
}

/// Rolling per-step buffers; windows over the most recent K steps are cut
/// from these with their absolute step indices preserved.
struct EpisodeBuffers {
    task: Vec<Rc<Vec<f32>>>,
    hist: Vec<Rc<Vec<f32>>>,
    strat: Vec<Rc<Vec<f32>>>,
    states: Vec<f32>,
    rtg: Vec<f32>,
    actions: Vec<f32>,
    state_dim: usize,
    sem_dim: usize,
}

impl EpisodeBuffers {
    fn window(&self, k: usize, enabled: &crate::model::config::EnabledTokens) -> SequenceInputs {
        let total = self.rtg.len();
        let start = total.saturating_sub(k);
        let steps = total - start;
        let flat = |chan: &[Rc<Vec<f32>>], on: bool| -> Vec<f32> {
            if !on {
                return Vec::new();
            }
            let mut out = Vec::with_capacity(steps * self.sem_dim);
            for v in &chan[start..] {
                out.extend_from_slice(v);
            }
            out
        };
        SequenceInputs {
            steps,
            start_step: start,
            task: flat(&self.task, enabled.task),
            hist: flat(&self.hist, enabled.history),
            strat: flat(&self.strat, enabled.strategy),
            states: self.states[start * self.state_dim..].to_vec(),
            rtg: self.rtg[start..].to_vec(),
            actions: self.actions[start..].to_vec(),
            targets: vec![0.0; steps],
            mask: vec![1.0; steps],
        }
    }
}

/// Runs one full episode under the trained policy.
///
/// `stats` and `max_return` come from the training dataset; `market` may
/// carry a different budget ratio than training.
#[allow(clippy::too_many_arguments)]
pub fn run_model_episode<S: Scalar>(
    model: &SemBidModel<S>,
    pipeline: &mut SemanticPipeline,
    market: &MarketConfig,
    sem_cfg: &SemanticConfig,
    stats: &FeatureStats,
    max_return: f64,
    cfg: &RolloutConfig,
    root_seed: u64,
    episode_index: u64,
) -> Result<RolloutOutcome, RolloutError> {
    let mut env = BidEnv::new(market.clone(), root_seed, episode_index);
    if env.periods() > model.cfg.max_episode_len {
        return Err(RolloutError::EpisodeTooLong {
            periods: env.periods(),
            max: model.cfg.max_episode_len,
        });
    }
    let mut generator = SemanticGenerator::for_episode(sem_cfg.clone(), root_seed, episode_index)
        .map_err(|e| RolloutError::Semantics(e.to_string()))?;
    let task_text = generator.task(market.target_cpa).text;
    let task_vec = pipeline.embed(&task_text)?;

    let enabled = model.cfg.enabled;
    let k = model.cfg.context_window;
    let mut buffers = EpisodeBuffers {
        task: Vec::new(),
        hist: Vec::new(),
        strat: Vec::new(),
        states: Vec::new(),
        rtg: Vec::new(),
        actions: Vec::new(),
        state_dim: model.cfg.state_dim,
        sem_dim: model.cfg.semantic_input_dim,
    };
    let mut conditioning = cfg.target_rtg_scale * max_return;
    let mut rtg_trace = Vec::with_capacity(env.periods());

    while !env.done() {
        let raw = compute_state_features(&env);
        let normalized = stats.normalize(&raw);
        buffers
            .states
            .extend(normalized.iter().map(|v| *v as f32));

        let summary = if env.t == 0 {
            TransitionSummary::fresh()
        } else {
            TransitionSummary::from_ledger(&env.ledger, env.budget_remaining_ratio())
        };
        buffers.task.push(task_vec.clone());
        if enabled.history {
            buffers.hist.push(pipeline.embed(&generator.history(&summary).text)?);
        }
        if enabled.strategy {
            buffers
                .strat
                .push(pipeline.embed(&generator.strategy(&summary).text)?);
        }
        rtg_trace.push(conditioning);
        buffers.rtg.push(conditioning as f32);
        // Placeholder for the not-yet-chosen action; causally invisible to
        // this step's own prediction.
        buffers.actions.push(0.0);

        let window = buffers.window(k, &enabled);
        let lambda = model.predict_last(&window, market.lambda_max)?;
        *buffers.actions.last_mut().unwrap() = lambda as f32;

        let result = env.step(lambda).expect("episode not done");
        conditioning = (conditioning - result.reward).max(0.0);
    }

    let score = env
        .ledger
        .score(market.target_cpa, market.penalty_beta);
    Ok(RolloutOutcome {
        ledger: env.ledger,
        score,
        rtg_trace,
    })
}
