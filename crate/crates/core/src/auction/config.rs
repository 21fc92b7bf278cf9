//! Market configuration and scenario presets.
//!
//! A preset fixes every distributional knob of the simulated ad market:
//! impression volume, conversion-probability distribution, competitor price
//! distribution, budget scale and the CPA constraint. The three presets are
//! calibrated so that mean conversion probability lands on 11.21% / 3.85% /
//! 1.45% respectively, and so that a bid multiplier near the market's typical
//! action scale paces the default budget over a 48-period episode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    HighConversion,
    MediumConversion,
    LowConversion,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" | "highconversion" | "high_conversion" => Some(Self::HighConversion),
            "medium" | "mediumconversion" | "medium_conversion" => Some(Self::MediumConversion),
            "low" | "lowconversion" | "low_conversion" => Some(Self::LowConversion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HighConversion => "high",
            Self::MediumConversion => "medium",
            Self::LowConversion => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub scenario: Scenario,
    /// Episode length T in periods.
    pub periods: usize,
    /// Mean of the Poisson impression count per period (floored at one item).
    pub mean_impressions: f64,
    /// Log-normal parameters of the per-impression conversion probability,
    /// clipped to [0, 1] after sampling.
    pub pvalue_mu: f64,
    pub pvalue_sigma: f64,
    /// Competitor price for an impression with conversion probability v is
    /// `price_scale * v * exp(price_sigma * z)`, z standard normal: a
    /// value-correlated log-normal, so the market clears near
    /// `lambda ~ price_scale`.
    pub price_scale: f64,
    pub price_sigma: f64,
    /// Reference budget B0; the effective episode budget is `rho * B0`.
    pub base_budget: f64,
    /// Budget ratio rho.
    pub budget_ratio: f64,
    /// CPA constraint C_CPA.
    pub target_cpa: f64,
    /// Upper bound of the bid multiplier action space.
    pub lambda_max: f64,
    /// Weight omega on incremental conversions in the semantic ROI signal.
    pub roi_weight: f64,
    /// Exponent beta of the score penalty term.
    pub penalty_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid market config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl MarketConfig {
    pub fn preset(scenario: Scenario) -> Self {
        match scenario {
            // Mean pvalue 11.21%; CPA constraint drawn from the [6, 12] band.
            Scenario::HighConversion => Self {
                scenario,
                periods: 48,
                mean_impressions: 400.0,
                pvalue_mu: (0.1121f64).ln() - 0.5 * 0.5f64 * 0.5,
                pvalue_sigma: 0.5,
                price_scale: 8.0,
                price_sigma: 0.8,
                base_budget: 5000.0,
                budget_ratio: 1.0,
                target_cpa: 8.27,
                lambda_max: 145.47,
                roi_weight: 10.0,
                penalty_beta: 2.0,
            },
            // Mean pvalue 3.85%; CPA constraint drawn from the [15, 50] band.
            Scenario::MediumConversion => Self {
                scenario,
                periods: 48,
                mean_impressions: 500.0,
                pvalue_mu: (0.0385f64).ln() - 0.5 * 0.6f64 * 0.6,
                pvalue_sigma: 0.6,
                price_scale: 8.0,
                price_sigma: 0.8,
                base_budget: 2200.0,
                budget_ratio: 1.0,
                target_cpa: 30.0,
                lambda_max: 145.47,
                roi_weight: 10.0,
                penalty_beta: 2.0,
            },
            // Mean pvalue 1.45%; CPA constraint drawn from the [60, 130] band.
            // Sparse traffic and a roughly tenfold action scale.
            Scenario::LowConversion => Self {
                scenario,
                periods: 48,
                mean_impressions: 150.0,
                pvalue_mu: (0.0145f64).ln() - 0.5 * 0.6f64 * 0.6,
                pvalue_sigma: 0.6,
                price_scale: 80.0,
                price_sigma: 0.8,
                base_budget: 2400.0,
                budget_ratio: 1.0,
                target_cpa: 95.0,
                lambda_max: 2960.53,
                roi_weight: 10.0,
                penalty_beta: 2.0,
            },
        }
    }

    pub fn with_ratio(mut self, rho: f64) -> Self {
        self.budget_ratio = rho;
        self
    }

    /// Episode budget B = rho * B0.
    pub fn effective_budget(&self) -> f64 {
        self.base_budget * self.budget_ratio
    }

    /// Mean of the clipped log-normal pvalue distribution, ignoring the
    /// (negligible) clip mass above one.
    pub fn expected_pvalue(&self) -> f64 {
        (self.pvalue_mu + 0.5 * self.pvalue_sigma * self.pvalue_sigma).exp()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.periods == 0 {
            return Err(ConfigError("periods must be positive".into()));
        }
        if !(self.mean_impressions > 0.0) {
            return Err(ConfigError("mean_impressions must be positive".into()));
        }
        if !(self.pvalue_sigma > 0.0) || !(self.price_sigma > 0.0) {
            return Err(ConfigError("distribution sigmas must be positive".into()));
        }
        if !(self.price_scale > 0.0) {
            return Err(ConfigError("price_scale must be positive".into()));
        }
        if !(self.base_budget >= 0.0) || !(self.budget_ratio >= 0.0) {
            return Err(ConfigError("budget must be non-negative".into()));
        }
        if !(self.target_cpa > 0.0) {
            return Err(ConfigError("target_cpa must be positive".into()));
        }
        if !(self.lambda_max > 0.0) {
            return Err(ConfigError("lambda_max must be positive".into()));
        }
        if !(self.roi_weight > 0.0) || !(self.penalty_beta > 0.0) {
            return Err(ConfigError("roi_weight and penalty_beta must be positive".into()));
        }
        for (name, v) in [
            ("mean_impressions", self.mean_impressions),
            ("pvalue_mu", self.pvalue_mu),
            ("base_budget", self.base_budget),
            ("target_cpa", self.target_cpa),
            ("lambda_max", self.lambda_max),
        ] {
            if !v.is_finite() {
                return Err(ConfigError(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in [
            Scenario::HighConversion,
            Scenario::MediumConversion,
            Scenario::LowConversion,
        ] {
            MarketConfig::preset(s).validate().unwrap();
        }
    }

    #[test]
    fn high_preset_matches_calibration_targets() {
        let cfg = MarketConfig::preset(Scenario::HighConversion);
        assert!(cfg.target_cpa >= 6.0 && cfg.target_cpa <= 12.0);
        assert!((cfg.expected_pvalue() - 0.1121).abs() < 1e-12);
    }

    #[test]
    fn cpa_bands_per_scenario() {
        let m = MarketConfig::preset(Scenario::MediumConversion);
        assert!(m.target_cpa >= 15.0 && m.target_cpa <= 50.0);
        let l = MarketConfig::preset(Scenario::LowConversion);
        assert!(l.target_cpa >= 60.0 && l.target_cpa <= 130.0);
        assert!((m.expected_pvalue() - 0.0385).abs() < 1e-12);
        assert!((l.expected_pvalue() - 0.0145).abs() < 1e-12);
    }

    #[test]
    fn effective_budget_scales_with_rho() {
        let cfg = MarketConfig::preset(Scenario::MediumConversion).with_ratio(0.5);
        assert!((cfg.effective_budget() - 1100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_periods_rejected() {
        let mut cfg = MarketConfig::preset(Scenario::HighConversion);
        cfg.periods = 0;
        assert!(cfg.validate().is_err());
    }
}
