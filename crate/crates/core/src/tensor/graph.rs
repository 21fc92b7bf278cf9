//! Arena-based computation graph with reverse-mode differentiation. All
//! tensors are row-major 2D matrices; scalars are 1x1. Nodes are immutable
//! once created, so every op writes a fresh buffer.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::stream;
use crate::scalar::Scalar;

use super::params::{ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeMismatch(String),
    BackwardTwice,
    LossNotScalar { rows: usize, cols: usize },
    NonFinite { op: &'static str },
}

impl std::fmt::Display for TensorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Self::BackwardTwice => {
                write!(f, "backward already ran on this graph; build a fresh forward pass")
            }
            Self::LossNotScalar { rows, cols } => {
                write!(f, "backward needs a 1x1 loss, got {rows}x{cols}")
            }
            Self::NonFinite { op } => write!(f, "non-finite values produced by {op}"),
        }
    }
}

impl std::error::Error for TensorError {}

enum Op<S> {
    Leaf,
    Matmul { a: TensorId, b: TensorId, ta: bool, tb: bool },
    Add { a: TensorId, b: TensorId },
    AddBroadcastRow { a: TensorId, row: TensorId },
    Sub { a: TensorId, b: TensorId },
    MulElem { a: TensorId, b: TensorId },
    Scale { a: TensorId, k: f64 },
    Gelu { a: TensorId },
    Sigmoid { a: TensorId },
    MaskedSoftmaxRows { a: TensorId, mask: Rc<Vec<bool>> },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    Dropout { a: TensorId, mask: Rc<Vec<S>> },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    SliceCols { a: TensorId, start: usize },
    GatherRows { a: TensorId, idx: Rc<Vec<usize>> },
    Sum { a: TensorId },
    Transpose { a: TensorId },
    Reshape { a: TensorId },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// One forward pass worth of tensors. Confined to a single thread; params
/// live outside in a [`ParamSet`] and are leased in as leaves.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    rng: ChaCha8Rng,
    train: bool,
    backward_done: bool,
    leased: HashMap<usize, TensorId>,
}

/// GELU, tanh approximation:
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl<S: Scalar> Graph<S> {
    /// `seed` drives dropout masks only. `train` enables dropout.
    pub fn new(seed: u64, train: bool) -> Self {
        Self {
            nodes: Vec::new(),
            rng: stream(seed, "graph-dropout", 0),
            train,
            backward_done: false,
            leased: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn shape(&self, t: TensorId) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: TensorId) -> &[S] {
        &self.nodes[t.0].data
    }

    pub fn grad(&self, t: TensorId) -> Option<&[S]> {
        self.nodes[t.0].grad.as_deref()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<S>, requires_grad: bool, op: Op<S>) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        #[cfg(debug_assertions)]
        {
            if !matches!(op, Op::Leaf) {
                debug_assert!(
                    data.iter().all(|v| v.is_finite()),
                    "non-finite op output ({rows}x{cols})"
                );
            }
        }
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Raw leaf. `requires_grad` leaves accumulate gradients on backward.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<S>, requires_grad: bool) -> TensorId {
        assert_eq!(data.len(), rows * cols, "leaf data length");
        self.push(rows, cols, data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<S>) -> TensorId {
        self.leaf(rows, cols, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(1, 1, vec![S::of_f64(v)])
    }

    /// Leases a parameter into this graph, memoized: the same parameter
    /// always maps to one leaf so its gradient accumulates across every use.
    pub fn param(&mut self, ps: &ParamSet<S>, id: ParamId) -> TensorId {
        if let Some(&t) = self.leased.get(&id.index()) {
            return t;
        }
        let (rows, cols) = ps.shape(id);
        let t = self.leaf(rows, cols, ps.data(id).to_vec(), true);
        self.leased.insert(id.index(), t);
        t
    }

    fn req(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    /// C = op(A) . op(B) where `ta`/`tb` transpose their argument.
    pub fn matmul_t(
        &mut self,
        a: TensorId,
        b: TensorId,
        ta: bool,
        tb: bool,
    ) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul {ar}x{ac}{} . {br}x{bc}{}",
                if ta { "^T" } else { "" },
                if tb { "^T" } else { "" }
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_flags(
            S::one(),
            &self.nodes[a.0].data,
            (ar, ac),
            ta,
            &self.nodes[b.0].data,
            (br, bc),
            tb,
            S::zero(),
            &mut out,
            n,
            false,
        );
        let rg = self.req(&[a, b]);
        Ok(self.push(m, n, out, rg, Op::Matmul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    fn zip_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(TensorError::ShapeMismatch(format!(
                "{name} {ar}x{ac} vs {br}x{bc}"
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.req(&[a, b]);
        Ok(self.push(ar, ac, data, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise(a, b, "mul_elem", |x, y| x * y, Op::MulElem { a, b })
    }

    /// Adds a 1xN row vector to every row of an MxN matrix.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TensorError::ShapeMismatch(format!(
                "add_row {ar}x{ac} + {rr}x{rc}"
            )));
        }
        let rowdata = self.nodes[row.0].data.clone();
        let mut data = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            for c in 0..ac {
                data.push(self.nodes[a.0].data[r * ac + c] + rowdata[c]);
            }
        }
        let rg = self.req(&[a, row]);
        Ok(self.push(ar, ac, data, rg, Op::AddBroadcastRow { a, row }))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let (ar, ac) = self.shape(a);
        let ks = S::of_f64(k);
        let data = self.nodes[a.0].data.iter().map(|x| *x * ks).collect();
        let rg = self.req(&[a]);
        self.push(ar, ac, data, rg, Op::Scale { a, k })
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|x| S::of_f64(gelu_scalar(x.to_f64_lossy())))
            .collect();
        let rg = self.req(&[a]);
        self.push(ar, ac, data, rg, Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|x| S::of_f64(1.0 / (1.0 + (-x.to_f64_lossy()).exp())))
            .collect();
        let rg = self.req(&[a]);
        self.push(ar, ac, data, rg, Op::Sigmoid { a })
    }

    /// Row softmax over positions where `mask` is true; masked entries are
    /// exactly zero in the output. A fully masked row yields a zero row.
    pub fn masked_softmax_rows(
        &mut self,
        a: TensorId,
        mask: Rc<Vec<bool>>,
    ) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        if mask.len() != ar * ac {
            return Err(TensorError::ShapeMismatch(format!(
                "softmax mask length {} vs {ar}x{ac}",
                mask.len()
            )));
        }
        let mut data = vec![S::zero(); ar * ac];
        for r in 0..ar {
            let row = &self.nodes[a.0].data[r * ac..(r + 1) * ac];
            let mrow = &mask[r * ac..(r + 1) * ac];
            let mut maxv = f64::NEG_INFINITY;
            for (x, &m) in row.iter().zip(mrow) {
                if m {
                    maxv = maxv.max(x.to_f64_lossy());
                }
            }
            if maxv == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            let mut exps = vec![0.0f64; ac];
            for c in 0..ac {
                if mrow[c] {
                    let e = (row[c].to_f64_lossy() - maxv).exp();
                    exps[c] = e;
                    denom += e;
                }
            }
            for c in 0..ac {
                if mrow[c] {
                    data[r * ac + c] = S::of_f64(exps[c] / denom);
                }
            }
        }
        let rg = self.req(&[a]);
        Ok(self.push(ar, ac, data, rg, Op::MaskedSoftmaxRows { a, mask }))
    }

    /// Normalizes each row to zero mean and unit variance (biased), then
    /// applies the 1xN `gain` and `bias`.
    pub fn layer_norm(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        let (gr, gc) = self.shape(gain);
        let (br, bc) = self.shape(bias);
        if gr != 1 || br != 1 || gc != ac || bc != ac {
            return Err(TensorError::ShapeMismatch(format!(
                "layer_norm {ar}x{ac} with gain {gr}x{gc} bias {br}x{bc}"
            )));
        }
        let mut data = vec![S::zero(); ar * ac];
        for r in 0..ar {
            let row = &self.nodes[a.0].data[r * ac..(r + 1) * ac];
            let mean = row.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / ac as f64;
            let var = row
                .iter()
                .map(|x| (x.to_f64_lossy() - mean).powi(2))
                .sum::<f64>()
                / ac as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..ac {
                let xhat = (row[c].to_f64_lossy() - mean) * inv;
                let g = self.nodes[gain.0].data[c].to_f64_lossy();
                let b = self.nodes[bias.0].data[c].to_f64_lossy();
                data[r * ac + c] = S::of_f64(xhat * g + b);
            }
        }
        let rg = self.req(&[a, gain, bias]);
        Ok(self.push(ar, ac, data, rg, Op::LayerNorm { a, gain, bias, eps }))
    }

    /// Inverted dropout: in train mode each entry is kept with probability
    /// 1-rate and scaled by 1/(1-rate). Rate 0 or eval mode is the identity.
    pub fn dropout(&mut self, a: TensorId, rate: f64) -> TensorId {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
        if !self.train || rate == 0.0 {
            return a;
        }
        let (ar, ac) = self.shape(a);
        let keep = 1.0 - rate;
        let scale = S::of_f64(1.0 / keep);
        let mask: Vec<S> = (0..ar * ac)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    S::zero()
                }
            })
            .collect();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(x, m)| *x * *m)
            .collect();
        let rg = self.req(&[a]);
        self.push(ar, ac, data, rg, Op::Dropout { a, mask: Rc::new(mask) })
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != cols {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_rows needs equal cols, got {pc} vs {cols}"
                )));
            }
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.req(parts);
        Ok(self.push(rows, cols, data, rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != rows {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_cols needs equal rows, got {pr} vs {rows}"
                )));
            }
            cols += pc;
        }
        let mut data = vec![S::zero(); rows * cols];
        let mut start = 0;
        for &p in parts {
            let pc = self.shape(p).1;
            for r in 0..rows {
                let src = &self.nodes[p.0].data[r * pc..(r + 1) * pc];
                data[r * cols + start..r * cols + start + pc].copy_from_slice(src);
            }
            start += pc;
        }
        let rg = self.req(parts);
        Ok(self.push(rows, cols, data, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        if start + len > ac {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_cols [{start}, {start}+{len}) of {ar}x{ac}"
            )));
        }
        let mut data = Vec::with_capacity(ar * len);
        for r in 0..ar {
            data.extend_from_slice(&self.nodes[a.0].data[r * ac + start..r * ac + start + len]);
        }
        let rg = self.req(&[a]);
        Ok(self.push(ar, len, data, rg, Op::SliceCols { a, start }))
    }

    /// Picks rows by index, duplicates allowed; backward scatter-adds.
    pub fn gather_rows(&mut self, a: TensorId, idx: Rc<Vec<usize>>) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ar) {
            return Err(TensorError::ShapeMismatch(format!(
                "gather_rows index {bad} out of {ar} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * ac);
        for &i in idx.iter() {
            data.extend_from_slice(&self.nodes[a.0].data[i * ac..(i + 1) * ac]);
        }
        let rows = idx.len();
        let rg = self.req(&[a]);
        Ok(self.push(rows, ac, data, rg, Op::GatherRows { a, idx }))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total = self.nodes[a.0]
            .data
            .iter()
            .fold(S::zero(), |acc, x| acc + *x);
        let rg = self.req(&[a]);
        self.push(1, 1, vec![total], rg, Op::Sum { a })
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let mut data = vec![S::zero(); ar * ac];
        for r in 0..ar {
            for c in 0..ac {
                data[c * ar + r] = self.nodes[a.0].data[r * ac + c];
            }
        }
        let rg = self.req(&[a]);
        self.push(ac, ar, data, rg, Op::Transpose { a })
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        if ar * ac != rows * cols {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape {ar}x{ac} -> {rows}x{cols}"
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.req(&[a]);
        Ok(self.push(rows, cols, data, rg, Op::Reshape { a }))
    }

    /// Masked mean squared error: sum(mask * (pred - target)^2) / sum(mask),
    /// as primitives so no dedicated backward rule is needed. `denom` is the
    /// precomputed mask count (caller decides batch pooling).
    pub fn masked_mse(
        &mut self,
        pred: TensorId,
        target: TensorId,
        mask: TensorId,
        denom: f64,
    ) -> Result<TensorId, TensorError> {
        assert!(denom > 0.0);
        let d = self.sub(pred, target)?;
        let sq = self.mul_elem(d, d)?;
        let masked = self.mul_elem(sq, mask)?;
        let s = self.sum(masked);
        Ok(self.scale(s, 1.0 / denom))
    }

    /// Reverse-mode sweep from a scalar loss. One shot per graph.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let (lr, lc) = self.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(TensorError::LossNotScalar { rows: lr, cols: lc });
        }
        self.backward_done = true;
        for n in &mut self.nodes {
            if n.requires_grad {
                n.grad = Some(vec![S::zero(); n.rows * n.cols]);
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // nothing reachable needs gradients
        }
        self.nodes[loss.0].grad.as_mut().expect("allocated")[0] = S::one();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    /// Adds the gradients of every leased parameter into the set's
    /// accumulators. Call after `backward`.
    pub fn flush_grads(&self, ps: &mut ParamSet<S>) {
        for (&pid, &t) in &self.leased {
            if let Some(g) = self.grad(t) {
                ps.accumulate_grad(ParamId::from_index(pid), g);
            }
        }
    }

    fn take_out_grad(&self, i: usize) -> Vec<S> {
        self.nodes[i].grad.as_ref().expect("caller checked").clone()
    }

    fn add_into(&mut self, t: TensorId, contrib: &[S]) {
        let n = &mut self.nodes[t.0];
        if !n.requires_grad {
            return;
        }
        let g = n.grad.as_mut().expect("allocated in backward");
        for (dst, src) in g.iter_mut().zip(contrib) {
            *dst += *src;
        }
    }

    fn backprop_node(&mut self, i: usize) {
        // Ops only reference earlier ids, so reverse index order is a valid
        // topological sweep.
        let out_grad = self.take_out_grad(i);
        let (orows, ocols) = (self.nodes[i].rows, self.nodes[i].cols);
        // clippy: the borrow of self.nodes[i].op ends before mutation below.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb } => {
                let (ar, ac) = self.shape(*a);
                let (br, bc) = self.shape(*b);
                if self.nodes[a.0].requires_grad {
                    // dA' = dC . B'^T, written transposed when ta.
                    let mut contrib = vec![S::zero(); ar * ac];
                    gemm_flags(
                        S::one(),
                        &out_grad,
                        (orows, ocols),
                        false,
                        &self.nodes[b.0].data,
                        (br, bc),
                        !tb,
                        S::zero(),
                        &mut contrib,
                        ac,
                        *ta,
                    );
                    self.add_into(*a, &contrib);
                }
                if self.nodes[b.0].requires_grad {
                    // dB' = A'^T . dC, written transposed when tb.
                    let mut contrib = vec![S::zero(); br * bc];
                    gemm_flags(
                        S::one(),
                        &self.nodes[a.0].data,
                        (ar, ac),
                        !ta,
                        &out_grad,
                        (orows, ocols),
                        false,
                        S::zero(),
                        &mut contrib,
                        bc,
                        *tb,
                    );
                    self.add_into(*b, &contrib);
                }
            }
            Op::Add { a, b } => {
                self.add_into(*a, &out_grad);
                self.add_into(*b, &out_grad);
            }
            Op::Sub { a, b } => {
                self.add_into(*a, &out_grad);
                let neg: Vec<S> = out_grad.iter().map(|g| S::zero() - *g).collect();
                self.add_into(*b, &neg);
            }
            Op::AddBroadcastRow { a, row } => {
                self.add_into(*a, &out_grad);
                if self.nodes[row.0].requires_grad {
                    let mut colsum = vec![S::zero(); ocols];
                    for r in 0..orows {
                        for c in 0..ocols {
                            colsum[c] += out_grad[r * ocols + c];
                        }
                    }
                    self.add_into(*row, &colsum);
                }
            }
            Op::MulElem { a, b } => {
                if self.nodes[a.0].requires_grad {
                    let contrib: Vec<S> = out_grad
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(g, y)| *g * *y)
                        .collect();
                    self.add_into(*a, &contrib);
                }
                if self.nodes[b.0].requires_grad {
                    let contrib: Vec<S> = out_grad
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(g, x)| *g * *x)
                        .collect();
                    self.add_into(*b, &contrib);
                }
            }
            Op::Scale { a, k } => {
                let ks = S::of_f64(*k);
                let contrib: Vec<S> = out_grad.iter().map(|g| *g * ks).collect();
                self.add_into(*a, &contrib);
            }
            Op::Gelu { a } => {
                let contrib: Vec<S> = out_grad
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(g, x)| *g * S::of_f64(gelu_grad_scalar(x.to_f64_lossy())))
                    .collect();
                self.add_into(*a, &contrib);
            }
            Op::Sigmoid { a } => {
                // dy/dx = y(1-y), read from the already-computed output.
                let y = &self.nodes[i].data;
                let contrib: Vec<S> = out_grad
                    .iter()
                    .zip(y)
                    .map(|(g, y)| {
                        let yf = y.to_f64_lossy();
                        *g * S::of_f64(yf * (1.0 - yf))
                    })
                    .collect();
                self.add_into(*a, &contrib);
            }
            Op::MaskedSoftmaxRows { a, mask } => {
                let y = &self.nodes[i].data;
                let mut contrib = vec![S::zero(); orows * ocols];
                for r in 0..orows {
                    let mut dot = 0.0f64;
                    for c in 0..ocols {
                        if mask[r * ocols + c] {
                            dot += y[r * ocols + c].to_f64_lossy()
                                * out_grad[r * ocols + c].to_f64_lossy();
                        }
                    }
                    for c in 0..ocols {
                        if mask[r * ocols + c] {
                            let yi = y[r * ocols + c].to_f64_lossy();
                            let gi = out_grad[r * ocols + c].to_f64_lossy();
                            contrib[r * ocols + c] = S::of_f64(yi * (gi - dot));
                        }
                    }
                }
                self.add_into(*a, &contrib);
            }
            Op::LayerNorm { a, gain, bias, eps } => {
                let n = ocols as f64;
                let mut da = vec![S::zero(); orows * ocols];
                let mut dgain = vec![S::zero(); ocols];
                let mut dbias = vec![S::zero(); ocols];
                for r in 0..orows {
                    let row: Vec<f64> = self.nodes[a.0].data[r * ocols..(r + 1) * ocols]
                        .iter()
                        .map(|x| x.to_f64_lossy())
                        .collect();
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    let dy: Vec<f64> = out_grad[r * ocols..(r + 1) * ocols]
                        .iter()
                        .map(|g| g.to_f64_lossy())
                        .collect();
                    let g: Vec<f64> = self.nodes[gain.0].data
                        .iter()
                        .map(|v| v.to_f64_lossy())
                        .collect();
                    let gdy: Vec<f64> = g.iter().zip(&dy).map(|(gi, di)| gi * di).collect();
                    let mean_gdy = gdy.iter().sum::<f64>() / n;
                    let mean_gdy_x = gdy.iter().zip(&xhat).map(|(v, x)| v * x).sum::<f64>() / n;
                    for c in 0..ocols {
                        let dx = (gdy[c] - mean_gdy - xhat[c] * mean_gdy_x) * inv;
                        da[r * ocols + c] = S::of_f64(dx);
                        dgain[c] += S::of_f64(dy[c] * xhat[c]);
                        dbias[c] += S::of_f64(dy[c]);
                    }
                }
                self.add_into(*a, &da);
                self.add_into(*gain, &dgain);
                self.add_into(*bias, &dbias);
            }
            Op::Dropout { a, mask } => {
                let contrib: Vec<S> = out_grad
                    .iter()
                    .zip(mask.iter())
                    .map(|(g, m)| *g * *m)
                    .collect();
                self.add_into(*a, &contrib);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let contrib = out_grad[offset..offset + pr * pc].to_vec();
                    self.add_into(p, &contrib);
                    offset += pr * pc;
                }
            }
            Op::ConcatCols { parts } => {
                let mut start = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.nodes[p.0].requires_grad {
                        let mut contrib = vec![S::zero(); pr * pc];
                        for r in 0..pr {
                            contrib[r * pc..(r + 1) * pc].copy_from_slice(
                                &out_grad[r * ocols + start..r * ocols + start + pc],
                            );
                        }
                        self.add_into(p, &contrib);
                    }
                    start += pc;
                }
            }
            Op::SliceCols { a, start } => {
                let (ar, ac) = self.shape(*a);
                if self.nodes[a.0].requires_grad {
                    let mut contrib = vec![S::zero(); ar * ac];
                    for r in 0..orows {
                        contrib[r * ac + start..r * ac + start + ocols]
                            .copy_from_slice(&out_grad[r * ocols..(r + 1) * ocols]);
                    }
                    self.add_into(*a, &contrib);
                }
            }
            Op::GatherRows { a, idx } => {
                let (ar, ac) = self.shape(*a);
                if self.nodes[a.0].requires_grad {
                    let mut contrib = vec![S::zero(); ar * ac];
                    for (out_r, &src_r) in idx.iter().enumerate() {
                        for c in 0..ac {
                            contrib[src_r * ac + c] += out_grad[out_r * ac + c];
                        }
                    }
                    self.add_into(*a, &contrib);
                }
            }
            Op::Sum { a } => {
                let (ar, ac) = self.shape(*a);
                let contrib = vec![out_grad[0]; ar * ac];
                self.add_into(*a, &contrib);
            }
            Op::Transpose { a } => {
                let (ar, ac) = self.shape(*a);
                if self.nodes[a.0].requires_grad {
                    let mut contrib = vec![S::zero(); ar * ac];
                    for r in 0..orows {
                        for c in 0..ocols {
                            // out is ac x ar; out[r][c] came from a[c][r]
                            contrib[c * ac + r] = out_grad[r * ocols + c];
                        }
                    }
                    self.add_into(*a, &contrib);
                }
            }
            Op::Reshape { a } => {
                self.add_into(*a, &out_grad);
            }
        }
        self.nodes[i].op = op;
    }
}

/// Lower-triangular visibility mask for a length-`n` sequence: position i
/// attends to j <= i.
pub fn causal_mask(n: usize) -> Rc<Vec<bool>> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            m[i * n + j] = true;
        }
    }
    Rc::new(m)
}

/// op(A).op(B) into C (`ldc` columns), optionally writing C transposed.
/// beta scales the existing C contents.
#[allow(clippy::too_many_arguments)]
fn gemm_flags<S: Scalar>(
    alpha: S,
    a: &[S],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[S],
    (br, bc): (usize, usize),
    tb: bool,
    beta: S,
    c: &mut [S],
    ldc: usize,
    transpose_out: bool,
) {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let (rsa, csa) = if ta {
        (1isize, ac as isize)
    } else {
        (ac as isize, 1isize)
    };
    let (rsb, csb) = if tb {
        (1isize, bc as isize)
    } else {
        (bc as isize, 1isize)
    };
    let (rsc, csc) = if transpose_out {
        (1isize, ldc as isize)
    } else {
        (ldc as isize, 1isize)
    };
    S::gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

#[cfg(test)]
mod tests {
    use super::*;

    type G = Graph<f64>;

    fn consts(g: &mut G, rows: usize, cols: usize, data: &[f64]) -> TensorId {
        g.constant(rows, cols, data.to_vec())
    }

    #[test]
    fn identity_matmul() {
        let mut g = G::new(0, false);
        let i2 = consts(&mut g, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = consts(&mut g, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(out), g.value(a));
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = crate::rng::stream(1, "t", 0);
        use rand::Rng;
        let a: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut expect = vec![0.0; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    expect[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
                }
            }
        }
        let mut g = G::new(0, false);
        let ta = consts(&mut g, 3, 4, &a);
        let tb = consts(&mut g, 4, 2, &b);
        let out = g.matmul(ta, tb).unwrap();
        for (x, y) in g.value(out).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_matmul_flags() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]); // A
        let b = consts(&mut g, 2, 3, &[7.0, 8.0, 9.0, 1.0, 2.0, 3.0]); // B
        // A . B^T: (2x3).(3x2) = 2x2
        let out = g.matmul_t(a, b, false, true).unwrap();
        let v = g.value(out);
        assert_eq!(v, &[50.0, 14.0, 122.0, 32.0]);
        // A^T . B: (3x2).(2x3) = 3x3 spot check entry (0,0) = 1*7 + 4*1
        let out2 = g.matmul_t(a, b, true, false).unwrap();
        assert_eq!(g.value(out2)[0], 11.0);
    }

    #[test]
    fn add_zero_is_identity() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 2, 2, &[1.0, -2.0, 0.5, 9.0]);
        let z = consts(&mut g, 2, 2, &[0.0; 4]);
        let out = g.add(a, z).unwrap();
        assert_eq!(g.value(out), g.value(a));
    }

    #[test]
    fn square_gradient() {
        let mut g = G::new(0, false);
        let x = g.leaf(1, 1, vec![3.0], true);
        let y = g.mul_elem(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_twice_is_state_error() {
        let mut g = G::new(0, false);
        let x = g.leaf(1, 1, vec![2.0], true);
        let y = g.mul_elem(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.backward(y), Err(TensorError::BackwardTwice));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = G::new(0, false);
        let x = g.leaf(2, 1, vec![2.0, 1.0], true);
        assert!(matches!(
            g.backward(x),
            Err(TensorError::LossNotScalar { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn gelu_values_and_asymptote() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
        // known point: gelu(1) ~ 0.841192
        assert!((gelu_scalar(1.0) - 0.8411919906082768).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-2.0, -0.5, 0.5, 2.0] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            let an = gelu_grad_scalar(x);
            assert!(
                ((an - fd) / fd.abs().max(1e-12)).abs() < 1e-5,
                "x={x} an={an} fd={fd}"
            );
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_masked_zero() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 3, 3, &[0.3, -1.0, 2.0, 0.0, 0.0, 0.0, 5.0, 4.0, 3.0]);
        let mask = causal_mask(3);
        let s = g.masked_softmax_rows(a, mask.clone()).unwrap();
        let v = g.value(s);
        for r in 0..3 {
            let sum: f64 = (0..3).map(|c| v[r * 3 + c]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for c in 0..3 {
                if !mask[r * 3 + c] {
                    assert_eq!(v[r * 3 + c], 0.0);
                }
            }
        }
        assert_eq!(v[0], 1.0); // single visible entry
    }

    #[test]
    fn layer_norm_constant_row_zero_before_affine() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 1, 4, &[5.0, 5.0, 5.0, 5.0]);
        let gain = consts(&mut g, 1, 4, &[1.0; 4]);
        let bias = consts(&mut g, 1, 4, &[0.0; 4]);
        let out = g.layer_norm(a, gain, bias, 1e-5).unwrap();
        for v in g.value(out) {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_row_statistics() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 2, 8, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0,
                                        -3.0, 0.0, 1.0, 9.0, 2.0, 2.0, 2.0, 2.0]);
        let gain = consts(&mut g, 1, 8, &[1.0; 8]);
        let bias = consts(&mut g, 1, 8, &[0.0; 8]);
        let out = g.layer_norm(a, gain, bias, 1e-8).unwrap();
        let v = g.value(out);
        for r in 0..2 {
            let mean: f64 = (0..8).map(|c| v[r * 8 + c]).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_zero_rate_identity_and_seeded() {
        let mut g = G::new(13, true);
        let a = consts(&mut g, 4, 4, &[1.0; 16]);
        let same = g.dropout(a, 0.0);
        assert_eq!(same, a);
        let d1 = g.dropout(a, 0.5);
        let mut g2 = G::new(13, true);
        let a2 = consts(&mut g2, 4, 4, &[1.0; 16]);
        let d2 = g2.dropout(a2, 0.5);
        assert_eq!(g.value(d1), g2.value(d2));
        let mut geval = G::new(13, false);
        let ae = consts(&mut geval, 4, 4, &[1.0; 16]);
        assert_eq!(geval.dropout(ae, 0.5), ae);
    }

    #[test]
    fn concat_slice_gather_round_trip() {
        let mut g = G::new(0, false);
        let a = consts(&mut g, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = consts(&mut g, 2, 3, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cc = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.shape(cc), (2, 5));
        assert_eq!(g.value(cc), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let back = g.slice_cols(cc, 0, 2).unwrap();
        assert_eq!(g.value(back), g.value(a));
        let rows = g.gather_rows(cc, Rc::new(vec![1, 0, 1])).unwrap();
        assert_eq!(g.shape(rows), (3, 5));
        assert_eq!(&g.value(rows)[0..5], &[3.0, 4.0, 8.0, 9.0, 10.0]);
        let cr = g.concat_rows(&[a, a]).unwrap();
        assert_eq!(g.shape(cr), (4, 2));
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut g = G::new(3, true);
        let data = vec![0.5, -0.25, 1.5, 2.0, -1.0, 0.1];
        let a = g.leaf(2, 3, data.clone(), true);
        let b = consts(&mut g, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let _ = g.add(a, b).unwrap();
        let _ = g.mul_elem(a, b).unwrap();
        let _ = g.gelu(a);
        let _ = g.dropout(a, 0.3);
        let _ = g.matmul_t(a, b, false, true).unwrap();
        let _ = g.transpose(a);
        assert_eq!(g.value(a), data.as_slice());
        assert_eq!(g.value(b), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_rows_backward_scatter_adds() {
        let mut g = G::new(0, false);
        let a = g.leaf(3, 2, vec![1.0; 6], true);
        let picked = g.gather_rows(a, Rc::new(vec![0, 0, 2])).unwrap();
        let s = g.sum(picked);
        g.backward(s).unwrap();
        // row 0 picked twice, row 1 never, row 2 once
        assert_eq!(g.grad(a).unwrap(), &[2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn masked_mse_value() {
        let mut g = G::new(0, false);
        let pred = g.leaf(1, 4, vec![1.0, 2.0, 3.0, 4.0], true);
        let target = consts(&mut g, 1, 4, &[1.0, 0.0, 3.0, 10.0]);
        let mask = consts(&mut g, 1, 4, &[1.0, 1.0, 1.0, 0.0]);
        let loss = g.masked_mse(pred, target, mask, 3.0).unwrap();
        // errors: 0, 4, 0, (36 masked out) -> 4/3
        assert!((g.value(loss)[0] - 4.0 / 3.0).abs() < 1e-12);
        g.backward(loss).unwrap();
        let grad = g.grad(pred).unwrap();
        assert_eq!(grad[3], 0.0, "masked position gets no gradient");
        assert!((grad[1] - 2.0 * 2.0 / 3.0).abs() < 1e-12);
    }
}
