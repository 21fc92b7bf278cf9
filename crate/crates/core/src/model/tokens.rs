//! Token sequence assembly: the numeric inputs of one episode window and the
//! flattened layout the backbone consumes.

use super::config::{ModelConfig, TokenRole};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SequenceError {
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    MissingSemantic { role: &'static str },
    TooLong { steps: usize, max: usize },
}

impl std::fmt::Display for SequenceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::LengthMismatch { what, expected, found } => {
                write!(f, "{what}: expected {expected} values, found {found}")
            }
            Self::MissingSemantic { role } => {
                write!(f, "semantic channel {role} enabled but no embeddings supplied")
            }
            Self::TooLong { steps, max } => {
                write!(f, "sequence of {steps} steps exceeds max episode length {max}")
            }
        }
    }
}

impl std::error::Error for SequenceError {}

/// Inputs for one episode window of `steps` consecutive periods starting at
/// absolute period `start_step`. Semantic matrices are row-major
/// [steps x semantic_input_dim] and empty when the channel is disabled.
#[derive(Debug, Clone, Default)]
pub struct SequenceInputs {
    pub steps: usize,
    pub start_step: usize,
    pub task: Vec<f32>,
    pub hist: Vec<f32>,
    pub strat: Vec<f32>,
    /// Normalized states, row-major [steps x state_dim].
    pub states: Vec<f32>,
    pub rtg: Vec<f32>,
    /// Action inputs a_t. At rollout the current step's action is unknown;
    /// feed zero, causality keeps it out of the step's own prediction.
    pub actions: Vec<f32>,
    /// Training targets, usually identical to `actions`.
    pub targets: Vec<f32>,
    /// Per-step loss mask.
    pub mask: Vec<f32>,
}

impl SequenceInputs {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), SequenceError> {
        if self.steps > cfg.max_episode_len {
            return Err(SequenceError::TooLong {
                steps: self.steps,
                max: cfg.max_episode_len,
            });
        }
        let expect = |what: &'static str, found: usize, expected: usize| {
            if found == expected {
                Ok(())
            } else {
                Err(SequenceError::LengthMismatch { what, expected, found })
            }
        };
        let e = cfg.semantic_input_dim;
        if cfg.enabled.task {
            if self.task.is_empty() {
                return Err(SequenceError::MissingSemantic { role: "task" });
            }
            expect("task embeddings", self.task.len(), self.steps * e)?;
        }
        if cfg.enabled.history {
            if self.hist.is_empty() {
                return Err(SequenceError::MissingSemantic { role: "history" });
            }
            expect("history embeddings", self.hist.len(), self.steps * e)?;
        }
        if cfg.enabled.strategy {
            if self.strat.is_empty() {
                return Err(SequenceError::MissingSemantic { role: "strategy" });
            }
            expect("strategy embeddings", self.strat.len(), self.steps * e)?;
        }
        expect("states", self.states.len(), self.steps * cfg.state_dim)?;
        expect("rtg", self.rtg.len(), self.steps)?;
        expect("actions", self.actions.len(), self.steps)?;
        expect("targets", self.targets.len(), self.steps)?;
        expect("mask", self.mask.len(), self.steps)?;
        if self.start_step + self.steps > cfg.max_episode_len {
            return Err(SequenceError::TooLong {
                steps: self.start_step + self.steps,
                max: cfg.max_episode_len,
            });
        }
        Ok(())
    }
}

/// Flattened layout of one window: which role sits at each position and where
/// the prediction (STATE) positions are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub steps: usize,
    pub tokens_per_step: usize,
    pub roles: Vec<TokenRole>,
    pub state_positions: Vec<usize>,
}

impl SequenceLayout {
    pub fn new(cfg: &ModelConfig, steps: usize) -> Self {
        let step_roles = cfg.enabled.step_roles();
        let k = step_roles.len();
        let mut roles = Vec::with_capacity(steps * k);
        for _ in 0..steps {
            roles.extend_from_slice(&step_roles);
        }
        let off = cfg.enabled.state_offset();
        let state_positions = (0..steps).map(|t| t * k + off).collect();
        Self {
            steps,
            tokens_per_step: k,
            roles,
            state_positions,
        }
    }

    pub fn flattened_len(&self) -> usize {
        self.steps * self.tokens_per_step
    }

    /// Interleaving permutation: output row i of the flattened sequence comes
    /// from row `perm[i]` of the role-stacked matrix in which role r of the
    /// step order occupies rows [r*steps, (r+1)*steps).
    pub fn interleave_perm(&self) -> Vec<usize> {
        let k = self.tokens_per_step;
        let mut perm = Vec::with_capacity(self.steps * k);
        for t in 0..self.steps {
            for r in 0..k {
                perm.push(r * self.steps + t);
            }
        }
        perm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::EnabledTokens;

    fn micro(enabled: EnabledTokens) -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 1,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            semantic_input_dim: 4,
            state_dim: 2,
            max_episode_len: 5,
            enabled,
            context_window: 5,
        }
    }

    fn inputs(cfg: &ModelConfig, steps: usize) -> SequenceInputs {
        let e = cfg.semantic_input_dim;
        let sem = vec![0.1f32; steps * e];
        SequenceInputs {
            steps,
            start_step: 0,
            task: if cfg.enabled.task { sem.clone() } else { vec![] },
            hist: if cfg.enabled.history { sem.clone() } else { vec![] },
            strat: if cfg.enabled.strategy { sem } else { vec![] },
            states: vec![0.0; steps * cfg.state_dim],
            rtg: vec![1.0; steps],
            actions: vec![0.5; steps],
            targets: vec![0.5; steps],
            mask: vec![1.0; steps],
        }
    }

    #[test]
    fn full_layout_is_sextuplet() {
        let cfg = micro(EnabledTokens::all());
        let layout = SequenceLayout::new(&cfg, 3);
        assert_eq!(layout.flattened_len(), 18);
        assert_eq!(
            &layout.roles[..6],
            &[
                TokenRole::Task,
                TokenRole::Rtg,
                TokenRole::Hist,
                TokenRole::Strat,
                TokenRole::State,
                TokenRole::Action
            ]
        );
        assert_eq!(layout.state_positions, vec![4, 10, 16]);
    }

    #[test]
    fn vanilla_layout_is_triplet() {
        let cfg = micro(EnabledTokens::none());
        let layout = SequenceLayout::new(&cfg, 4);
        assert_eq!(layout.flattened_len(), 12);
        assert_eq!(
            &layout.roles[..3],
            &[TokenRole::Rtg, TokenRole::State, TokenRole::Action]
        );
        assert_eq!(layout.state_positions, vec![1, 4, 7, 10]);
    }

    #[test]
    fn without_strategy_layout() {
        let mut e = EnabledTokens::all();
        e.strategy = false;
        let cfg = micro(e);
        let layout = SequenceLayout::new(&cfg, 48.min(cfg.max_episode_len));
        assert_eq!(layout.tokens_per_step, 5);
        // 48-step episode at this width would be 240 tokens.
        assert_eq!(48 * 5, 240);
    }

    #[test]
    fn interleave_perm_round_trip() {
        let cfg = micro(EnabledTokens::all());
        let layout = SequenceLayout::new(&cfg, 3);
        let perm = layout.interleave_perm();
        // Stacked layout: role r block rows r*3..r*3+3. Flattened position
        // t*6+r must pull row r*3+t.
        for t in 0..3 {
            for r in 0..6 {
                assert_eq!(perm[t * 6 + r], r * 3 + t);
            }
        }
    }

    #[test]
    fn validation_catches_missing_and_misshapen_channels() {
        let cfg = micro(EnabledTokens::all());
        let good = inputs(&cfg, 3);
        good.validate(&cfg).unwrap();

        let mut missing = good.clone();
        missing.strat.clear();
        assert!(matches!(
            missing.validate(&cfg),
            Err(SequenceError::MissingSemantic { role: "strategy" })
        ));

        let mut short = good.clone();
        short.rtg.pop();
        assert!(matches!(
            short.validate(&cfg),
            Err(SequenceError::LengthMismatch { what: "rtg", .. })
        ));

        let mut long = inputs(&cfg, 3);
        long.start_step = 4;
        assert!(matches!(long.validate(&cfg), Err(SequenceError::TooLong { .. })));

        // Disabled channels may stay empty.
        let vcfg = micro(EnabledTokens::none());
        inputs(&vcfg, 3).validate(&vcfg).unwrap();
    }
}
