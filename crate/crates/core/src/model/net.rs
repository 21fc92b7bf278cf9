//! The policy network: per-role input encoders, learned position and role
//! tables, a causal pre-LN transformer backbone, and a linear action head
//! read at STATE positions.

use std::rc::Rc;

use crate::model::config::{ModelConfig, TokenRole};
use crate::model::tokens::{SequenceError, SequenceInputs, SequenceLayout};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::{
    causal_mask, Graph, Init, LayerNormModule, Linear, Mlp2, ParamId, ParamSet, TensorError,
    TensorId, TransformerBlock, INIT_STD,
};

#[derive(Debug)]
pub enum ModelError {
    Config(String),
    Sequence(SequenceError),
    Tensor(TensorError),
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "model config: {m}"),
            Self::Sequence(e) => write!(f, "sequence: {e}"),
            Self::Tensor(e) => write!(f, "tensor: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<SequenceError> for ModelError {
    fn from(e: SequenceError) -> Self {
        Self::Sequence(e)
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

/// Output of one window's forward pass, still attached to the graph.
pub struct WindowForward {
    /// [steps x 1] action predictions at STATE positions.
    pub preds: TensorId,
    /// Scalar sum of masked squared errors (unnormalized).
    pub masked_sq_sum: TensorId,
    /// Number of unmasked steps in this window.
    pub mask_count: f64,
}

#[derive(Clone)]
pub struct SemBidModel<S: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<S>,
    w_task: Option<Linear>,
    w_hist: Option<Linear>,
    w_strat: Option<Linear>,
    phi_rtg: Mlp2,
    phi_s: Mlp2,
    phi_a: Mlp2,
    pos: ParamId,
    role: ParamId,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNormModule,
    head: Linear,
}

impl<S: Scalar> SemBidModel<S> {
    /// Builds the parameter set in a fixed manifest order. The total size is
    /// asserted against the closed-form count in the config.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        let mut ps: ParamSet<S> = ParamSet::new();
        let mut rng = stream(seed, "model-init", 0);
        let d = cfg.d_model;
        let e = cfg.semantic_input_dim;

        let mut semantic = |on: bool, name: &str| {
            on.then(|| Linear::new(&mut ps, &mut rng, name, e, d, true))
        };
        let w_task = semantic(cfg.enabled.task, "w_task");
        let w_hist = semantic(cfg.enabled.history, "w_hist");
        let w_strat = semantic(cfg.enabled.strategy, "w_strat");

        let phi_rtg = Mlp2::new(&mut ps, &mut rng, "phi_rtg", 1, d, d);
        let phi_s = Mlp2::new(&mut ps, &mut rng, "phi_s", cfg.state_dim, d, d);
        let phi_a = Mlp2::new(&mut ps, &mut rng, "phi_a", 1, d, d);

        let pos = ps.add(
            "pos",
            cfg.max_episode_len,
            d,
            Init::TruncNormal { std: INIT_STD },
            &mut rng,
        );
        let role = ps.add("role", 6, d, Init::TruncNormal { std: INIT_STD }, &mut rng);

        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(TransformerBlock::new(
                &mut ps,
                &mut rng,
                &format!("block{i}"),
                d,
                cfg.heads,
                cfg.d_ff,
                cfg.dropout,
            )?);
        }
        let final_ln = LayerNormModule::new(&mut ps, &mut rng, "final_ln", d);
        let head = Linear::new(&mut ps, &mut rng, "head", d, 1, true);

        assert_eq!(
            ps.total_values(),
            cfg.param_count(),
            "parameter count drifted from the closed form"
        );
        Ok(Self {
            cfg,
            params: ps,
            w_task,
            w_hist,
            w_strat,
            phi_rtg,
            phi_s,
            phi_a,
            pos,
            role,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }

    /// The action head's bias parameter. Training seeds it with the dataset
    /// mean action so the optimizer only has to learn deviations.
    pub fn head_bias(&self) -> Option<ParamId> {
        self.head.b
    }

    fn to_s(values: &[f32]) -> Vec<S> {
        values.iter().map(|v| S::of_f64(*v as f64)).collect()
    }

    /// One token-role channel: encode, add positions, add the role row.
    fn role_tokens(
        &self,
        g: &mut Graph<S>,
        encoded: TensorId,
        pos_rows: TensorId,
        role: TokenRole,
    ) -> Result<TensorId, TensorError> {
        let with_pos = g.add(encoded, pos_rows)?;
        let role_leaf = g.param(&self.params, self.role);
        let role_row = g.gather_rows(role_leaf, Rc::new(vec![role.table_row()]))?;
        g.add_row(with_pos, role_row)
    }

    /// Builds the flattened [steps*k x d] token matrix for one window.
    fn embed_window(
        &self,
        g: &mut Graph<S>,
        inputs: &SequenceInputs,
    ) -> Result<TensorId, ModelError> {
        inputs.validate(&self.cfg)?;
        let l = inputs.steps;
        let e = self.cfg.semantic_input_dim;
        let pos_leaf = g.param(&self.params, self.pos);
        let pos_idx: Vec<usize> = (inputs.start_step..inputs.start_step + l).collect();
        let pos_rows = g.gather_rows(pos_leaf, Rc::new(pos_idx))?;

        let layout = SequenceLayout::new(&self.cfg, l);
        let mut blocks: Vec<TensorId> = Vec::with_capacity(layout.tokens_per_step);
        for role in self.cfg.enabled.step_roles() {
            let encoded = match role {
                TokenRole::Task => {
                    let x = g.constant(l, e, Self::to_s(&inputs.task));
                    self.w_task.as_ref().unwrap().forward(g, &self.params, x)?
                }
                TokenRole::Hist => {
                    let x = g.constant(l, e, Self::to_s(&inputs.hist));
                    self.w_hist.as_ref().unwrap().forward(g, &self.params, x)?
                }
                TokenRole::Strat => {
                    let x = g.constant(l, e, Self::to_s(&inputs.strat));
                    self.w_strat.as_ref().unwrap().forward(g, &self.params, x)?
                }
                TokenRole::Rtg => {
                    let x = g.constant(l, 1, Self::to_s(&inputs.rtg));
                    self.phi_rtg.forward(g, &self.params, x)?
                }
                TokenRole::State => {
                    let x = g.constant(l, self.cfg.state_dim, Self::to_s(&inputs.states));
                    self.phi_s.forward(g, &self.params, x)?
                }
                TokenRole::Action => {
                    let x = g.constant(l, 1, Self::to_s(&inputs.actions));
                    self.phi_a.forward(g, &self.params, x)?
                }
            };
            blocks.push(self.role_tokens(g, encoded, pos_rows, role)?);
        }
        let stacked = g.concat_rows(&blocks)?;
        let interleaved = g.gather_rows(stacked, Rc::new(layout.interleave_perm()))?;
        Ok(g.dropout(interleaved, self.cfg.dropout))
    }

    /// Full forward for one window: backbone under a causal mask, action head
    /// at STATE positions, masked squared-error sum against the targets.
    pub fn forward_window(
        &self,
        g: &mut Graph<S>,
        inputs: &SequenceInputs,
    ) -> Result<WindowForward, ModelError> {
        let mut x = self.embed_window(g, inputs)?;
        let layout = SequenceLayout::new(&self.cfg, inputs.steps);
        let mask = causal_mask(layout.flattened_len());
        for block in &self.blocks {
            x = block.forward(g, &self.params, x, mask.clone())?;
        }
        let x = self.final_ln.forward(g, &self.params, x)?;
        let h_states = g.gather_rows(x, Rc::new(layout.state_positions.clone()))?;
        let preds = self.head.forward(g, &self.params, h_states)?;

        let l = inputs.steps;
        let targets = g.constant(l, 1, Self::to_s(&inputs.targets));
        let mask_col = g.constant(l, 1, Self::to_s(&inputs.mask));
        let diff = g.sub(preds, targets)?;
        let sq = g.mul_elem(diff, diff)?;
        let masked = g.mul_elem(sq, mask_col)?;
        let masked_sq_sum = g.sum(masked);
        let mask_count = inputs.mask.iter().map(|m| *m as f64).sum();
        Ok(WindowForward {
            preds,
            masked_sq_sum,
            mask_count,
        })
    }

    /// Batch loss: mean masked squared error over every unmasked step in the
    /// batch. Returns None when every step is masked out.
    pub fn batch_loss(
        &self,
        g: &mut Graph<S>,
        batch: &[SequenceInputs],
    ) -> Result<Option<TensorId>, ModelError> {
        let mut total: Option<TensorId> = None;
        let mut count = 0.0;
        for inputs in batch {
            let w = self.forward_window(g, inputs)?;
            count += w.mask_count;
            total = Some(match total {
                Some(t) => g.add(t, w.masked_sq_sum)?,
                None => w.masked_sq_sum,
            });
        }
        if count == 0.0 {
            return Ok(None);
        }
        Ok(total.map(|t| g.scale(t, 1.0 / count)))
    }

    /// Predictions for one window on an inference graph (dropout off).
    pub fn predict(&self, inputs: &SequenceInputs) -> Result<Vec<f64>, ModelError> {
        let mut g: Graph<S> = Graph::new(0, false);
        let w = self.forward_window(&mut g, inputs)?;
        Ok(g.value(w.preds).iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Action prediction at the final step of the window, clipped to the
    /// given range.
    pub fn predict_last(&self, inputs: &SequenceInputs, lambda_max: f64) -> Result<f64, ModelError> {
        let preds = self.predict(inputs)?;
        Ok(preds.last().copied().unwrap_or(0.0).clamp(0.0, lambda_max))
    }
}
