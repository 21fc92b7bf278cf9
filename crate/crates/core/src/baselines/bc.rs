//! Behavior cloning: a state-to-action MLP trained by MSE on logged pairs.
//! It consumes only states and actions; rewards and returns never enter the
//! interface, which is the point of the baseline.

use rand::Rng;

use crate::auction::STATE_DIM;
use crate::rng::stream;
use crate::tensor::{AdamW, Graph, Linear, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct BcConfig {
    pub state_dim: usize,
    pub hidden: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub lambda_max: f64,
}

impl BcConfig {
    pub fn new(lambda_max: f64, seed: u64) -> Self {
        Self {
            state_dim: STATE_DIM,
            hidden: 128,
            train_steps: 2000,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            seed,
            lambda_max,
        }
    }
}

pub struct BcPolicy {
    pub cfg: BcConfig,
    pub params: ParamSet<f32>,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl BcPolicy {
    pub fn new(cfg: BcConfig) -> Self {
        let mut params = ParamSet::new();
        let mut rng = stream(cfg.seed, "bc-init", 0);
        let fc1 = Linear::new(&mut params, &mut rng, "bc/fc1", cfg.state_dim, cfg.hidden, true);
        let fc2 = Linear::new(&mut params, &mut rng, "bc/fc2", cfg.hidden, cfg.hidden, true);
        let fc3 = Linear::new(&mut params, &mut rng, "bc/fc3", cfg.hidden, 1, true);
        Self {
            cfg,
            params,
            fc1,
            fc2,
            fc3,
        }
    }

    fn forward(&self, g: &mut Graph<f32>, x: crate::tensor::TensorId) -> crate::tensor::TensorId {
        let h = self.fc1.forward(g, &self.params, x).unwrap();
        let h = g.gelu(h);
        let h = self.fc2.forward(g, &self.params, h).unwrap();
        let h = g.gelu(h);
        self.fc3.forward(g, &self.params, h).unwrap()
    }

    /// Trains on row-major states [n x state_dim] against actions [n].
    /// Returns the per-step training loss.
    pub fn train(&mut self, states: &[f32], actions: &[f32]) -> Vec<f64> {
        let d = self.cfg.state_dim;
        let n = actions.len();
        assert_eq!(states.len(), n * d, "states/actions row mismatch");
        assert!(n > 0, "empty training set");

        // Start the output bias at the mean action: the optimizer's scale-free
        // steps then learn deviations instead of walking the whole action
        // scale from zero.
        let mean_action = actions.iter().map(|a| *a as f64).sum::<f64>() / n as f64;
        if let Some(b) = self.fc3.b {
            self.params.data_mut(b)[0] = mean_action as f32;
        }

        let mut opt = AdamW::new(&self.params)
            .with_lr(self.cfg.lr)
            .with_weight_decay(self.cfg.weight_decay);
        let mut rng = stream(self.cfg.seed, "bc-train", 0);
        let b = self.cfg.batch_size.min(n);
        let mut losses = Vec::with_capacity(self.cfg.train_steps);
        for step in 0..self.cfg.train_steps {
            let mut xb = Vec::with_capacity(b * d);
            let mut yb = Vec::with_capacity(b);
            for _ in 0..b {
                let i = rng.random_range(0..n);
                xb.extend_from_slice(&states[i * d..(i + 1) * d]);
                yb.push(actions[i]);
            }
            let mut g = Graph::new(self.cfg.seed ^ step as u64, true);
            let x = g.constant(b, d, xb);
            let y = g.constant(b, 1, yb);
            let pred = self.forward(&mut g, x);
            let diff = g.sub(pred, y).unwrap();
            let sq = g.mul_elem(diff, diff).unwrap();
            let tot = g.sum(sq);
            let loss = g.scale(tot, 1.0 / b as f64);
            g.backward(loss).unwrap();
            losses.push(g.value(loss)[0] as f64);
            self.params.zero_grads();
            g.flush_grads(&mut self.params);
            opt.step(&mut self.params);
        }
        losses
    }

    /// Action for one normalized state row, clipped to the env range.
    pub fn act(&self, state: &[f64]) -> f64 {
        assert_eq!(state.len(), self.cfg.state_dim);
        let mut g = Graph::new(0, false);
        let x = g.constant(1, self.cfg.state_dim, state.iter().map(|v| *v as f32).collect());
        let out = self.forward(&mut g, x);
        (g.value(out)[0] as f64).clamp(0.0, self.cfg.lambda_max)
    }

    /// Mean squared error over a held-out set, no gradient.
    pub fn mse(&self, states: &[f32], actions: &[f32]) -> f64 {
        let d = self.cfg.state_dim;
        let n = actions.len();
        assert_eq!(states.len(), n * d);
        let mut g = Graph::new(0, false);
        let x = g.constant(n, d, states.to_vec());
        let pred = self.forward(&mut g, x);
        let vals = g.value(pred);
        vals.iter()
            .zip(actions)
            .map(|(p, a)| {
                let e = *p as f64 - *a as f64;
                e * e
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_linear(n: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
        // lambda = w . s with fixed small weights; states standard normal.
        let w: Vec<f64> = (0..STATE_DIM).map(|i| 0.3 * ((i % 5) as f64 - 2.0)).collect();
        let mut rng = stream(seed, "bc-synth", 0);
        let mut xs = Vec::with_capacity(n * STATE_DIM);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..STATE_DIM)
                .map(|_| {
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let y: f64 = row.iter().zip(&w).map(|(x, w)| x * w).sum();
            xs.extend(row.iter().map(|v| *v as f32));
            ys.push(y as f32);
        }
        (xs, ys)
    }

    #[test]
    fn recovers_deterministic_linear_policy() {
        let (xs, ys) = synthetic_linear(512, 5);
        let (xt, yt) = synthetic_linear(128, 6);
        let mut cfg = BcConfig::new(100.0, 7);
        cfg.hidden = 64;
        cfg.train_steps = 3000;
        cfg.lr = 3e-3;
        let mut policy = BcPolicy::new(cfg);
        let losses = policy.train(&xs, &ys);
        assert!(losses.last().unwrap() < &1e-2, "train loss {:?}", losses.last());
        let test_mse = policy.mse(&xt, &yt);
        assert!(test_mse < 1e-3, "test mse {test_mse}");
    }

    #[test]
    fn action_clipped_to_range() {
        let mut cfg = BcConfig::new(2.0, 1);
        cfg.train_steps = 0;
        let mut policy = BcPolicy::new(cfg);
        // Force an absurd bias so the raw output exceeds the range.
        let bias = policy.fc3.b.unwrap();
        policy.params.data_mut(bias)[0] = 50.0;
        let a = policy.act(&vec![0.0; STATE_DIM]);
        assert_eq!(a, 2.0);
        policy.params.data_mut(bias)[0] = -50.0;
        assert_eq!(policy.act(&vec![0.0; STATE_DIM]), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let (xs, ys) = synthetic_linear(64, 2);
        let run = |seed| {
            let mut cfg = BcConfig::new(10.0, seed);
            cfg.hidden = 16;
            cfg.train_steps = 50;
            let mut p = BcPolicy::new(cfg);
            let losses = p.train(&xs, &ys);
            (losses, p.act(&vec![0.3; STATE_DIM]))
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3).1, run(4).1);
    }
}
