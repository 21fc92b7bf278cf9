//! Transformer building blocks over the graph: linear layers, layer norm,
//! two-layer MLPs, causal multi-head attention, and the pre-LN block.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::graph::{Graph, TensorError, TensorId};
use super::params::{Init, ParamId, ParamSet};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let w = ps.add(
            &format!("{name}/w"),
            in_dim,
            out_dim,
            Init::TruncNormal { std: INIT_STD },
            rng,
        );
        let b = bias.then(|| ps.add(&format!("{name}/b"), 1, out_dim, Init::Zeros, rng));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let w = g.param(ps, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let bt = g.param(ps, b);
                g.add_row(y, bt)
            }
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.b.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
    ) -> Self {
        let gain = ps.add(&format!("{name}/g"), 1, dim, Init::Ones, rng);
        let bias = ps.add(&format!("{name}/b"), 1, dim, Init::Zeros, rng);
        Self { gain, bias, dim }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let gain = g.param(ps, self.gain);
        let bias = g.param(ps, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}

/// Linear, GELU, Linear.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp2 {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            fc1: Linear::new(ps, rng, &format!("{name}/fc1"), in_dim, hidden, true),
            fc2: Linear::new(ps, rng, &format!("{name}/fc2"), hidden, out_dim, true),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let h = self.fc1.forward(g, ps, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, ps, h)
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        model_dim: usize,
        n_heads: usize,
    ) -> Result<Self, TensorError> {
        if n_heads == 0 || model_dim % n_heads != 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "attention heads {n_heads} must divide model dim {model_dim}"
            )));
        }
        Ok(Self {
            wq: Linear::new(ps, rng, &format!("{name}/wq"), model_dim, model_dim, true),
            wk: Linear::new(ps, rng, &format!("{name}/wk"), model_dim, model_dim, true),
            wv: Linear::new(ps, rng, &format!("{name}/wv"), model_dim, model_dim, true),
            wo: Linear::new(ps, rng, &format!("{name}/wo"), model_dim, model_dim, true),
            n_heads,
            head_dim: model_dim / n_heads,
        })
    }

    /// `mask[i*L + j]` true means position i may attend to position j.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: TensorId,
        mask: Rc<Vec<bool>>,
    ) -> Result<TensorId, TensorError> {
        let q = self.wq.forward(g, ps, x)?;
        let k = self.wk.forward(g, ps, x)?;
        let v = self.wv.forward(g, ps, x)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let start = h * self.head_dim;
            let qh = g.slice_cols(q, start, self.head_dim)?;
            let kh = g.slice_cols(k, start, self.head_dim)?;
            let vh = g.slice_cols(v, start, self.head_dim)?;
            let scores = g.matmul_t(qh, kh, false, true)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax_rows(scores, mask.clone())?;
            heads.push(g.matmul(probs, vh)?);
        }
        let ctx = g.concat_cols(&heads)?;
        self.wo.forward(g, ps, ctx)
    }

    pub fn param_count(&self) -> usize {
        self.wq.param_count()
            + self.wk.param_count()
            + self.wv.param_count()
            + self.wo.param_count()
    }
}

/// Pre-LN residual block: x + Drop(Attn(LN(x))), then h + Drop(FF(LN(h))).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: Mlp2,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        model_dim: usize,
        n_heads: usize,
        ff_hidden: usize,
        dropout: f64,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            ln1: LayerNorm::new(ps, rng, &format!("{name}/ln1"), model_dim),
            attn: MultiHeadAttention::new(ps, rng, &format!("{name}/attn"), model_dim, n_heads)?,
            ln2: LayerNorm::new(ps, rng, &format!("{name}/ln2"), model_dim),
            ff: Mlp2::new(
                ps,
                rng,
                &format!("{name}/ff"),
                model_dim,
                ff_hidden,
                model_dim,
            ),
            dropout,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: TensorId,
        mask: Rc<Vec<bool>>,
    ) -> Result<TensorId, TensorError> {
        let normed = self.ln1.forward(g, ps, x)?;
        let attn_out = self.attn.forward(g, ps, normed, mask)?;
        let attn_out = g.dropout(attn_out, self.dropout);
        let h = g.add(x, attn_out)?;
        let normed2 = self.ln2.forward(g, ps, h)?;
        let ff_out = self.ff.forward(g, ps, normed2)?;
        let ff_out = g.dropout(ff_out, self.dropout);
        g.add(h, ff_out)
    }

    pub fn param_count(&self) -> usize {
        self.ln1.param_count()
            + self.attn.param_count()
            + self.ln2.param_count()
            + self.ff.param_count()
    }
}
