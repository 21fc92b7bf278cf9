//! Episode scoring and return-to-go.

use serde::{Deserialize, Serialize};

/// Components of the penalized episode score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub value: f64,
    pub cost: f64,
    pub cpa: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Penalized score of an episode with total value V and total cost C under
/// CPA constraint `target_cpa`:
///
/// ```text
/// CPA     = C / (V + 1e-10)
/// penalty = min((target_cpa / CPA)^beta, 1)
/// score   = V * penalty
/// ```
///
/// A compliant episode (CPA <= target) keeps its full value; violations decay
/// it smoothly. Zero cost gives penalty one (CPA zero is trivially
/// compliant), zero value with positive cost drives the penalty toward zero.
pub fn compute_score(value: f64, cost: f64, target_cpa: f64, beta: f64) -> ScoreBreakdown {
    let cpa = cost / (value + 1e-10);
    let penalty = if cpa == 0.0 {
        1.0
    } else {
        (target_cpa / cpa).powf(beta).min(1.0)
    };
    ScoreBreakdown {
        value,
        cost,
        cpa,
        penalty,
        score: value * penalty,
    }
}

/// Suffix sums of the reward sequence: G_t = sum of rewards from t on, so
/// G_t = r_t + G_{t+1} holds bit-for-bit on the returned vector (with
/// G_{T+1} = 0).
pub fn compute_rtg(rewards: &[f32]) -> Vec<f32> {
    let mut g = vec![0.0f32; rewards.len()];
    let mut acc = 0.0f32;
    for (slot, &r) in g.iter_mut().zip(rewards.iter()).rev() {
        acc = r + acc;
        *slot = acc;
    }
    g
}

/// f64 variant used before trajectories are narrowed for storage.
pub fn compute_rtg_f64(rewards: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0f64; rewards.len()];
    let mut acc = 0.0f64;
    for (slot, &r) in g.iter_mut().zip(rewards.iter()).rev() {
        acc = r + acc;
        *slot = acc;
    }
    g
}
