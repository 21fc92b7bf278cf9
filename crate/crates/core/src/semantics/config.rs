//! Semantic-signal configuration: regimes, prompt styles and thresholds.

use serde::{Deserialize, Serialize};

use crate::auction::{MarketConfig, Scenario};

/// Which template pool and rule set to use. The medium-conversion scenario
/// maps to the high-conversion pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    HighConv,
    LowConv,
}

impl Regime {
    pub fn for_scenario(s: Scenario) -> Self {
        match s {
            Scenario::HighConversion | Scenario::MediumConversion => Self::HighConv,
            Scenario::LowConversion => Self::LowConv,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HighConv => "high",
            Self::LowConv => "low",
        }
    }
}

/// Prompt style. Only the high-conversion regime carries the non-standard
/// pools; the low-conversion subset is rendered in the standard style alone
/// so prompt sensitivity is not confounded with sparsity-driven changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Style {
    Standard,
    Concise,
    Directive,
    Verbose,
    Structured,
}

impl Style {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Some(Self::Standard),
            "concise" => Some(Self::Concise),
            "directive" => Some(Self::Directive),
            "verbose" => Some(Self::Verbose),
            "structured" => Some(Self::Structured),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Concise => "concise",
            Self::Directive => "directive",
            Self::Verbose => "verbose",
            Self::Structured => "structured",
        }
    }

    pub fn all() -> [Style; 5] {
        [
            Self::Standard,
            Self::Concise,
            Self::Directive,
            Self::Verbose,
            Self::Structured,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticConfigError(pub String);

impl std::fmt::Display for SemanticConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid semantic config: {}", self.0)
    }
}

impl std::error::Error for SemanticConfigError {}

/// All heuristic thresholds of the verbalization rules, plus regime and
/// style. Band conventions are documented on the classification functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    /// omega: weight on incremental conversions in the ROI signal.
    pub conversion_weight: f64,
    /// Denominator guard of the ROI ratio.
    pub roi_epsilon: f64,
    pub roi_low_threshold: f64,
    pub roi_high_threshold: f64,
    /// CVR-trend dead band half width.
    pub cvr_epsilon: f64,
    /// CPA-trend dead band half width (tau_cpa), scaled per scenario.
    pub cpa_threshold: f64,
    pub pvalue_high: f64,
    pub pvalue_low: f64,
    pub budget_low: f64,
    pub budget_high: f64,
    pub bid_low: f64,
    pub bid_high: f64,
    pub regime: Regime,
    pub style: Style,
    pub template_seed: u64,
}

/// High-preset target CPA that anchors the default tau_cpa of 0.5.
const TAU_CPA_ANCHOR: f64 = 8.27;

impl SemanticConfig {
    pub fn new(regime: Regime, style: Style, template_seed: u64) -> Self {
        let (bid_low, bid_high) = match regime {
            Regime::HighConv => (10.0, 50.0),
            // Scale-adjusted for the roughly tenfold larger action range.
            Regime::LowConv => (100.0, 500.0),
        };
        Self {
            conversion_weight: 10.0,
            roi_epsilon: 1e-10,
            roi_low_threshold: 0.5,
            roi_high_threshold: 1.5,
            cvr_epsilon: 0.001,
            cpa_threshold: 0.5,
            pvalue_high: 0.01,
            pvalue_low: 0.001,
            budget_low: 0.2,
            budget_high: 0.7,
            bid_low,
            bid_high,
            regime,
            style,
            template_seed,
        }
    }

    /// Config matched to a market preset: regime from the scenario, omega
    /// synchronized, and the CPA dead band scaled with the scenario's target
    /// CPA (0.5 at the high-conversion anchor).
    pub fn for_market(market: &MarketConfig, style: Style, template_seed: u64) -> Self {
        let mut cfg = Self::new(Regime::for_scenario(market.scenario), style, template_seed);
        cfg.conversion_weight = market.roi_weight;
        cfg.cpa_threshold = 0.5 * market.target_cpa / TAU_CPA_ANCHOR;
        cfg
    }

    pub fn validate(&self) -> Result<(), SemanticConfigError> {
        if !(self.roi_low_threshold < self.roi_high_threshold) {
            return Err(SemanticConfigError("roi_low must be < roi_high".into()));
        }
        if !(self.pvalue_low < self.pvalue_high) {
            return Err(SemanticConfigError("pvalue_low must be < pvalue_high".into()));
        }
        if !(self.budget_low < self.budget_high) {
            return Err(SemanticConfigError("budget_low must be < budget_high".into()));
        }
        if !(self.bid_low < self.bid_high) {
            return Err(SemanticConfigError("bid_low must be < bid_high".into()));
        }
        if !(self.cpa_threshold > 0.0) {
            return Err(SemanticConfigError("cpa_threshold must be positive".into()));
        }
        if !(self.cvr_epsilon > 0.0) {
            return Err(SemanticConfigError("cvr_epsilon must be positive".into()));
        }
        if !(self.conversion_weight > 0.0) {
            return Err(SemanticConfigError("conversion_weight must be positive".into()));
        }
        if self.regime == Regime::LowConv && self.style != Style::Standard {
            return Err(SemanticConfigError(format!(
                "style '{}' is only defined for the high-conversion pool; \
                 the low-conversion regime uses the standard style",
                self.style.name()
            )));
        }
        Ok(())
    }
}
