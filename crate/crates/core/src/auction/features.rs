//! 16-dimensional state representation and its z-score normalization.

use serde::{Deserialize, Serialize};

use super::env::BidEnv;

pub const STATE_DIM: usize = 16;

/// Window for the bid-history features.
pub const HISTORY_WINDOW: usize = 3;

/// Raw (unnormalized) state features for the period the environment is about
/// to play, in four groups:
///
/// temporal (2): 0 time-remaining ratio, 1 time elapsed;
/// budget (4): 2 remaining ratio, 3 consumption rate (mean per-period spend
/// as a budget fraction), 4 pacing deviation (spent fraction minus elapsed
/// fraction), 5 exhaustion risk (projected end-of-episode spend fraction);
/// performance (4): 6 current CPA, 7 target CPA, 8 CPA violation degree,
/// 9 historical CVR (conversions per win);
/// history (4, over up to the last three completed periods, zeros on the
/// first period): 10 mean bid multiplier, 11 win rate, 12 mean period spend,
/// 13 bid volatility (population std, zero with fewer than two samples);
/// padding (2): 14 fraction of bids dropped for budget, 15 mean period
/// reward so far.
pub fn compute_state_features(env: &BidEnv) -> [f64; STATE_DIM] {
    let t_total = env.cfg.periods as f64;
    let elapsed = env.t as f64;
    let ledger = &env.ledger;
    let budget = env.budget.max(1e-10);

    let mut f = [0.0f64; STATE_DIM];
    f[0] = (t_total - elapsed) / t_total;
    f[1] = elapsed / t_total;

    f[2] = env.budget_remaining_ratio();
    let periods_done = elapsed.max(1.0);
    f[3] = ledger.spend / periods_done / budget;
    f[4] = ledger.spend / budget - elapsed / t_total;
    f[5] = (ledger.spend + ledger.spend / periods_done * (t_total - elapsed)) / budget;

    let cpa = ledger.realized_cpa();
    f[6] = cpa;
    f[7] = env.cfg.target_cpa;
    f[8] = (cpa - env.cfg.target_cpa) / env.cfg.target_cpa;
    f[9] = ledger.conversions / (ledger.wins as f64 + 1e-10);

    let n = ledger.outcomes.len();
    let lo = n.saturating_sub(HISTORY_WINDOW);
    if n > lo {
        let recent_actions = &ledger.actions[lo..];
        let recent = &ledger.outcomes[lo..];
        let k = recent.len() as f64;
        let mean_lambda = recent_actions.iter().sum::<f64>() / k;
        f[10] = mean_lambda;
        let wins: f64 = recent.iter().map(|o| f64::from(o.wins)).sum();
        let items: f64 = recent.iter().map(|o| f64::from(o.items)).sum();
        f[11] = if items > 0.0 { wins / items } else { 0.0 };
        f[12] = recent.iter().map(|o| o.spend).sum::<f64>() / k;
        if recent_actions.len() >= 2 {
            let var = recent_actions
                .iter()
                .map(|a| (a - mean_lambda) * (a - mean_lambda))
                .sum::<f64>()
                / k;
            f[13] = var.sqrt();
        }
    }

    if ledger.impressions > 0 {
        f[14] = ledger.dropped_for_budget as f64 / ledger.impressions as f64;
    }
    f[15] = ledger.value / periods_done;
    f
}

/// Per-dimension z-score statistics fit on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Floor applied to the standard deviation; constant dimensions normalize to
/// exactly zero rather than blowing up.
const STD_FLOOR: f64 = 1e-8;

impl FeatureStats {
    pub fn fit<'a, I>(rows: I) -> Self
    where
        I: Iterator<Item = &'a [f64; STATE_DIM]> + Clone,
    {
        let mut mean = vec![0.0; STATE_DIM];
        let mut count = 0.0f64;
        for row in rows.clone() {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
            count += 1.0;
        }
        assert!(count > 0.0, "cannot fit stats on an empty set");
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0; STATE_DIM];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(mean.iter()).zip(row.iter()) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, raw: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            // A floored std marks a constant dimension; its z-score is
            // defined as exactly zero rather than mean noise over 1e-8.
            out[i] = if self.std[i] <= STD_FLOOR {
                0.0
            } else {
                (raw[i] - self.mean[i]) / self.std[i]
            };
        }
        out
    }

    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; STATE_DIM],
            std: vec![1.0; STATE_DIM],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::config::{MarketConfig, Scenario};

    #[test]
    fn fresh_episode_features() {
        let cfg = MarketConfig::preset(Scenario::HighConversion);
        let target = cfg.target_cpa;
        let env = BidEnv::new(cfg, 1, 0);
        let f = compute_state_features(&env);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 0.0);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], target);
        assert_eq!(f[8], -1.0);
        for i in 10..14 {
            assert_eq!(f[i], 0.0, "history feature {i} at t=1");
        }
    }

    #[test]
    fn history_features_average_available_steps() {
        let cfg = MarketConfig::preset(Scenario::MediumConversion);
        let mut env = BidEnv::new(cfg, 2, 0);
        env.step(4.0).unwrap();
        let f = compute_state_features(&env);
        assert_eq!(f[10], 4.0);
        assert_eq!(f[13], 0.0, "single sample has zero volatility");
        env.step(8.0).unwrap();
        let f = compute_state_features(&env);
        assert_eq!(f[10], 6.0);
        assert!((f[13] - 2.0).abs() < 1e-12);
        env.step(6.0).unwrap();
        env.step(2.0).unwrap();
        let f = compute_state_features(&env);
        // window covers the last three actions only: 8, 6, 2
        assert!((f[10] - 16.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_features_finite_through_episode() {
        let cfg = MarketConfig::preset(Scenario::LowConversion).with_ratio(0.5);
        let mut env = BidEnv::new(cfg, 3, 1);
        while !env.done() {
            let f = compute_state_features(&env);
            assert!(f.iter().all(|x| x.is_finite()), "{f:?}");
            env.step(90.0).unwrap();
        }
        let f = compute_state_features(&env);
        assert!(f.iter().all(|x| x.is_finite()));
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 1.0);
    }

    #[test]
    fn normalization_zeroes_mean_and_units_std() {
        let rows: Vec<[f64; STATE_DIM]> = (0..200)
            .map(|i| {
                let mut r = [0.0; STATE_DIM];
                for (j, slot) in r.iter_mut().enumerate() {
                    *slot = ((i * 31 + j * 7) % 97) as f64 * 0.1 + j as f64;
                }
                r[7] = 8.27; // constant dimension
                r
            })
            .collect();
        let stats = FeatureStats::fit(rows.iter());
        let normalized: Vec<[f64; STATE_DIM]> =
            rows.iter().map(|r| stats.normalize(r)).collect();
        for d in 0..STATE_DIM {
            let mean = normalized.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-6, "dim {d} mean {mean}");
            if d == 7 {
                assert!(normalized.iter().all(|r| r[7] == 0.0));
            } else {
                let var = normalized.iter().map(|r| r[d] * r[d]).sum::<f64>()
                    / rows.len() as f64;
                assert!((var.sqrt() - 1.0).abs() < 1e-6, "dim {d} std {}", var.sqrt());
            }
        }
    }
}
