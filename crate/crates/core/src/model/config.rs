//! Policy model configuration and the parameter-count ledger.

use serde::{Deserialize, Serialize};

use crate::auction::STATE_DIM;
use crate::embed::PROJECTION_OUT_DIM;

/// Roles a flattened token can carry, in within-step order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenRole {
    Task,
    Rtg,
    Hist,
    Strat,
    State,
    Action,
}

impl TokenRole {
    /// Row index into the learned role-embedding table.
    pub fn table_row(self) -> usize {
        match self {
            Self::Task => 0,
            Self::Rtg => 1,
            Self::Hist => 2,
            Self::Strat => 3,
            Self::State => 4,
            Self::Action => 5,
        }
    }
}

/// Which semantic channels emit tokens. All off is the vanilla
/// return-conditioned transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledTokens {
    pub task: bool,
    pub history: bool,
    pub strategy: bool,
}

impl EnabledTokens {
    pub fn all() -> Self {
        Self {
            task: true,
            history: true,
            strategy: true,
        }
    }

    pub fn none() -> Self {
        Self {
            task: false,
            history: false,
            strategy: false,
        }
    }

    pub fn count(self) -> usize {
        usize::from(self.task) + usize::from(self.history) + usize::from(self.strategy)
    }

    /// Within-step role order with disabled roles removed.
    pub fn step_roles(self) -> Vec<TokenRole> {
        let mut roles = Vec::with_capacity(3 + self.count());
        if self.task {
            roles.push(TokenRole::Task);
        }
        roles.push(TokenRole::Rtg);
        if self.history {
            roles.push(TokenRole::Hist);
        }
        if self.strategy {
            roles.push(TokenRole::Strat);
        }
        roles.push(TokenRole::State);
        roles.push(TokenRole::Action);
        roles
    }

    /// Offset of the STATE token inside a step.
    pub fn state_offset(self) -> usize {
        1 + usize::from(self.task) + usize::from(self.history) + usize::from(self.strategy)
    }

    /// Parses a comma-separated subset like "task,strategy"; "all" and
    /// "none" are accepted. Whitespace tolerated.
    pub fn parse(s: &str) -> Option<Self> {
        let trimmed = s.trim().to_ascii_lowercase();
        match trimmed.as_str() {
            "all" => return Some(Self::all()),
            "none" | "" => return Some(Self::none()),
            _ => {}
        }
        let mut out = Self::none();
        for part in trimmed.split(',') {
            match part.trim() {
                "task" => out.task = true,
                "history" | "hist" => out.history = true,
                "strategy" | "strat" => out.strategy = true,
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn label(self) -> String {
        if self.count() == 3 {
            return "all".into();
        }
        if self.count() == 0 {
            return "none".into();
        }
        let mut parts = Vec::new();
        if self.task {
            parts.push("task");
        }
        if self.history {
            parts.push("history");
        }
        if self.strategy {
            parts.push("strategy");
        }
        parts.join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfigError(pub String);

impl std::fmt::Display for ModelConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid model config: {}", self.0)
    }
}

impl std::error::Error for ModelConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub semantic_input_dim: usize,
    pub state_dim: usize,
    pub max_episode_len: usize,
    pub enabled: EnabledTokens,
    /// Rollout context: most recent K steps kept in the window.
    pub context_window: usize,
}

impl ModelConfig {
    /// Full-size defaults with every semantic token on.
    pub fn sembid() -> Self {
        Self {
            layers: 6,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            dropout: 0.1,
            semantic_input_dim: PROJECTION_OUT_DIM,
            state_dim: STATE_DIM,
            max_episode_len: 48,
            enabled: EnabledTokens::all(),
            context_window: 48,
        }
    }

    /// Identical backbone with the semantic channels removed: the (R, s, a)
    /// triplet baseline.
    pub fn vanilla() -> Self {
        Self {
            enabled: EnabledTokens::none(),
            ..Self::sembid()
        }
    }

    pub fn tokens_per_step(&self) -> usize {
        3 + self.enabled.count()
    }

    pub fn flattened_len(&self, steps: usize) -> usize {
        steps * self.tokens_per_step()
    }

    pub fn validate(&self) -> Result<(), ModelConfigError> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(ModelConfigError("zero-sized dimension".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelConfigError(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelConfigError("dropout must be in [0, 1)".into()));
        }
        if self.max_episode_len == 0 {
            return Err(ModelConfigError("max_episode_len must be positive".into()));
        }
        if self.context_window == 0 || self.context_window > self.max_episode_len {
            return Err(ModelConfigError(
                "context_window must be in [1, max_episode_len]".into(),
            ));
        }
        if self.semantic_input_dim == 0 || self.state_dim == 0 {
            return Err(ModelConfigError("input dims must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count. The ledger, term by term (d = d_model,
    /// e = semantic_input_dim, f = d_ff, L = layers, M = max_episode_len):
    ///   semantic projections: enabled_count x (e*d + d)
    ///   phi_rtg:  (1*d + d) + (d*d + d)     2-layer MLP, hidden d
    ///   phi_s:    (state_dim*d + d) + (d*d + d)
    ///   phi_a:    (1*d + d) + (d*d + d)
    ///   positions: M*d         one learned row per timestep
    ///   roles:     6*d         one learned row per role, all six always allocated
    ///   per block: qkvo 4*(d*d + d); two layer norms 2*(2d); ff d*f + f + f*d + d
    ///   final layer norm: 2d
    ///   action head: d + 1
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let e = self.semantic_input_dim;
        let f = self.d_ff;
        let semantic = self.enabled.count() * (e * d + d);
        let phi = |input: usize| (input * d + d) + (d * d + d);
        let encoders = phi(1) + phi(self.state_dim) + phi(1);
        let tables = self.max_episode_len * d + 6 * d;
        let block = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f + f * d + d);
        let backbone = self.layers * block + 2 * d;
        let head = d + 1;
        semantic + encoders + tables + backbone + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_table() {
        let cfg = ModelConfig::sembid();
        assert_eq!(cfg.layers, 6);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.d_model, 128);
        assert_eq!(cfg.d_ff, 512);
        assert_eq!(cfg.dropout, 0.1);
        assert_eq!(cfg.max_episode_len, 48);
        assert_eq!(cfg.semantic_input_dim, 2048);
        cfg.validate().unwrap();
        assert_eq!(cfg.tokens_per_step(), 6);
        assert_eq!(cfg.flattened_len(48), 288);
    }

    #[test]
    fn vanilla_is_the_triplet() {
        let cfg = ModelConfig::vanilla();
        assert_eq!(cfg.tokens_per_step(), 3);
        assert_eq!(cfg.flattened_len(48), 144);
        assert_eq!(
            cfg.enabled.step_roles(),
            vec![TokenRole::Rtg, TokenRole::State, TokenRole::Action]
        );
        assert_eq!(cfg.enabled.state_offset(), 1);
    }

    #[test]
    fn ablation_orders_preserve_relative_positions() {
        let mut e = EnabledTokens::all();
        e.strategy = false;
        assert_eq!(
            e.step_roles(),
            vec![
                TokenRole::Task,
                TokenRole::Rtg,
                TokenRole::Hist,
                TokenRole::State,
                TokenRole::Action
            ]
        );
        // Strategy, when present, sits immediately before State.
        let full = EnabledTokens::all().step_roles();
        let strat = full.iter().position(|r| *r == TokenRole::Strat).unwrap();
        let state = full.iter().position(|r| *r == TokenRole::State).unwrap();
        assert_eq!(state, strat + 1);
    }

    #[test]
    fn parse_round_trips() {
        assert_eq!(EnabledTokens::parse("all"), Some(EnabledTokens::all()));
        assert_eq!(EnabledTokens::parse("none"), Some(EnabledTokens::none()));
        let th = EnabledTokens::parse("task, history").unwrap();
        assert!(th.task && th.history && !th.strategy);
        assert_eq!(th.label(), "task,history");
        assert_eq!(EnabledTokens::parse("bogus"), None);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::sembid();
        cfg.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::sembid();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::sembid();
        cfg.context_window = 49;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_formula_terms() {
        // Spot arithmetic on a tiny config where every term is hand-checkable:
        // d=4, e=8, f=16, layers=1, M=3, state_dim=2, all tokens on.
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 4,
            d_ff: 16,
            dropout: 0.0,
            semantic_input_dim: 8,
            state_dim: 2,
            max_episode_len: 3,
            enabled: EnabledTokens::all(),
            context_window: 3,
        };
        let semantic = 3 * (8 * 4 + 4); // 108
        let phi = |i: usize| (i * 4 + 4) + (4 * 4 + 4); // in->d, d->d
        let encoders = phi(1) + phi(2) + phi(1); // 28 + 32 + 28 = 88
        let tables = 3 * 4 + 6 * 4; // 36
        let block = 4 * (16 + 4) + 2 * 8 + (4 * 16 + 16 + 16 * 4 + 4); // 80+16+148=244
        let head = 4 + 1;
        assert_eq!(cfg.param_count(), semantic + encoders + tables + block + 8 + head);
    }
}
