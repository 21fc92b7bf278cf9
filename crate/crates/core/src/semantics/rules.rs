//! Threshold classification rules behind the semantic signals.
//!
//! All functions are pure, total and piecewise-constant. Band conventions
//! (strict vs. inclusive comparisons) follow the rule text exactly; a NaN
//! input falls through every strict comparison into the lowest band.

use super::config::{Regime, SemanticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiBand {
    Low,
    Moderate,
    Good,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvrTrend {
    Increase,
    Decrease,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpaTrend {
    Rose,
    Dropped,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvalueBand {
    High,
    Mid,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetBand {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BidBand {
    Conservative,
    Moderate,
    Aggressive,
}

/// ROI = (omega * delta_conv - delta_cost) / (delta_cost + epsilon).
pub fn roi_value(delta_conv: f64, delta_cost: f64, omega: f64, epsilon: f64) -> f64 {
    (omega * delta_conv - delta_cost) / (delta_cost + epsilon)
}

/// Good iff ROI >= roi_high; Moderate iff roi_low <= ROI < roi_high;
/// Low otherwise.
pub fn classify_roi(delta_conv: f64, delta_cost: f64, cfg: &SemanticConfig) -> RoiBand {
    let roi = roi_value(
        delta_conv,
        delta_cost,
        cfg.conversion_weight,
        cfg.roi_epsilon,
    );
    if roi >= cfg.roi_high_threshold {
        RoiBand::Good
    } else if roi >= cfg.roi_low_threshold {
        RoiBand::Moderate
    } else {
        RoiBand::Low
    }
}

/// Increase iff delta > epsilon; Decrease iff delta < -epsilon; else Flat.
pub fn classify_cvr_trend(delta_cvr: f64, epsilon: f64) -> CvrTrend {
    if delta_cvr > epsilon {
        CvrTrend::Increase
    } else if delta_cvr < -epsilon {
        CvrTrend::Decrease
    } else {
        CvrTrend::Flat
    }
}

/// Rose iff delta > tau; Dropped iff delta < -tau; else Flat.
pub fn classify_cpa_trend(delta_cpa: f64, tau_cpa: f64) -> CpaTrend {
    if delta_cpa > tau_cpa {
        CpaTrend::Rose
    } else if delta_cpa < -tau_cpa {
        CpaTrend::Dropped
    } else {
        CpaTrend::Flat
    }
}

/// High iff p > pvalue_high; Low iff p < pvalue_low. The band in between
/// emits no advice in the high-conversion regime and Mid in low-conversion.
pub fn classify_pvalue(p: f64, cfg: &SemanticConfig) -> Option<PvalueBand> {
    if p > cfg.pvalue_high {
        Some(PvalueBand::High)
    } else if p < cfg.pvalue_low {
        Some(PvalueBand::Low)
    } else {
        match cfg.regime {
            Regime::HighConv => None,
            Regime::LowConv => Some(PvalueBand::Mid),
        }
    }
}

/// Low iff ratio < budget_low; High iff ratio > budget_high; middle band as
/// with pvalue.
pub fn classify_budget(budget_ratio: f64, cfg: &SemanticConfig) -> Option<BudgetBand> {
    if budget_ratio < cfg.budget_low {
        Some(BudgetBand::Low)
    } else if budget_ratio > cfg.budget_high {
        Some(BudgetBand::High)
    } else {
        match cfg.regime {
            Regime::HighConv => None,
            Regime::LowConv => Some(BudgetBand::Mid),
        }
    }
}

/// Aggressive iff bid > bid_high; Conservative iff bid < bid_low; else
/// Moderate. Always yields advice.
pub fn classify_bid(reference_bid: f64, cfg: &SemanticConfig) -> BidBand {
    if reference_bid > cfg.bid_high {
        BidBand::Aggressive
    } else if reference_bid < cfg.bid_low {
        BidBand::Conservative
    } else {
        BidBand::Moderate
    }
}
