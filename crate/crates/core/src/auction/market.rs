//! Impression sampling and the per-period auction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};

use super::config::MarketConfig;

/// One auction opportunity. The conversion outcome is drawn once at sampling
/// time (Bernoulli in the impression's own pvalue) and stored, so replaying
/// an auction never re-rolls it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impression {
    pub pvalue: f64,
    pub price: f64,
    pub converts: bool,
}

/// Aggregates of one period's auction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeriodOutcome {
    /// r_t: summed pvalues of won impressions.
    pub reward: f64,
    /// cv_t: summed conversion indicators of won impressions.
    pub conversions: f64,
    /// sp_t: summed payments.
    pub spend: f64,
    pub wins: u32,
    pub items: u32,
    /// Bids that beat the competitor price but were dropped because the
    /// payment would have exceeded the remaining budget.
    pub dropped_for_budget: u32,
    /// Mean pvalue across all items in the period (zero if somehow empty).
    pub mean_pvalue: f64,
    /// pvalue of the last won impression in stored order, if any.
    pub last_won_pvalue: Option<f64>,
}

/// Samples one period's impressions. Draw order per item is fixed (pvalue,
/// price noise, conversion uniform) so a given generator state always yields
/// the same vector. The Poisson count is floored at one item.
pub fn sample_impressions(cfg: &MarketConfig, rng: &mut ChaCha8Rng) -> Vec<Impression> {
    let poisson = Poisson::new(cfg.mean_impressions).expect("validated mean");
    let count = (poisson.sample(rng) as usize).max(1);
    let pvalue_dist = LogNormal::new(cfg.pvalue_mu, cfg.pvalue_sigma).expect("validated sigma");
    let noise_dist = LogNormal::new(0.0, cfg.price_sigma).expect("validated sigma");
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let pvalue = pvalue_dist.sample(rng).min(1.0);
        let price = cfg.price_scale * pvalue * noise_dist.sample(rng);
        let converts = rng.random::<f64>() < pvalue;
        items.push(Impression {
            pvalue,
            price,
            converts,
        });
    }
    items
}

/// Runs the period auction at bid multiplier `lambda` under `budget_remaining`.
///
/// Items are processed in stored order. The bid on an impression is
/// `lambda * pvalue`; it wins iff it strictly exceeds the competitor price
/// (second-price payment: the competitor price). A winning bid whose payment
/// would overrun the budget still available within the period is dropped, not
/// resized, and later cheaper items may still win.
pub fn run_auction(items: &[Impression], lambda: f64, budget_remaining: f64) -> PeriodOutcome {
    assert!(
        lambda.is_finite() && lambda >= 0.0,
        "lambda must be finite and non-negative"
    );
    let mut out = PeriodOutcome {
        items: items.len() as u32,
        ..PeriodOutcome::default()
    };
    let mut pvalue_sum = 0.0;
    for item in items {
        pvalue_sum += item.pvalue;
        let bid = lambda * item.pvalue;
        if bid > item.price {
            if item.price <= budget_remaining - out.spend {
                out.spend += item.price;
                out.reward += item.pvalue;
                out.conversions += if item.converts { 1.0 } else { 0.0 };
                out.wins += 1;
                out.last_won_pvalue = Some(item.pvalue);
            } else {
                out.dropped_for_budget += 1;
            }
        }
    }
    if !items.is_empty() {
        out.mean_pvalue = pvalue_sum / items.len() as f64;
    }
    out
}
