//! Template pools: versioned structured-text resources bundled with the
//! crate, one file per (style, regime) combination.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use super::config::{Regime, Style};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HistoryCategory {
    RoiLow,
    RoiModerate,
    RoiGood,
    CvrIncrease,
    CvrDecrease,
    ConversionHappened,
    NoConversion,
    CpaIncrease,
    CpaDecrease,
}

impl HistoryCategory {
    pub fn key(self) -> &'static str {
        match self {
            Self::RoiLow => "roi_low",
            Self::RoiModerate => "roi_moderate",
            Self::RoiGood => "roi_good",
            Self::CvrIncrease => "cvr_increase",
            Self::CvrDecrease => "cvr_decrease",
            Self::ConversionHappened => "conv_happened",
            Self::NoConversion => "conv_none",
            Self::CpaIncrease => "cpa_increase",
            Self::CpaDecrease => "cpa_decrease",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::RoiLow => "ROI Low",
            Self::RoiModerate => "ROI Moderate",
            Self::RoiGood => "ROI Good",
            Self::CvrIncrease => "CVR Increase",
            Self::CvrDecrease => "CVR Decrease",
            Self::ConversionHappened => "Conversion Happened",
            Self::NoConversion => "No Conversion",
            Self::CpaIncrease => "CPA Increase",
            Self::CpaDecrease => "CPA Decrease",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StrategyCategory {
    Conservative,
    Moderate,
    Aggressive,
    PvalueHigh,
    PvalueMid,
    PvalueLow,
    BudgetLow,
    BudgetMid,
    BudgetHigh,
}

impl StrategyCategory {
    pub fn key(self) -> &'static str {
        match self {
            Self::Conservative => "conservative",
            Self::Moderate => "moderate",
            Self::Aggressive => "aggressive",
            Self::PvalueHigh => "pvalue_high",
            Self::PvalueMid => "pvalue_mid",
            Self::PvalueLow => "pvalue_low",
            Self::BudgetLow => "budget_low",
            Self::BudgetMid => "budget_mid",
            Self::BudgetHigh => "budget_high",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Conservative => "Conservative",
            Self::Moderate => "Moderate",
            Self::Aggressive => "Aggressive",
            Self::PvalueHigh => "High pValue",
            Self::PvalueMid => "Mid pValue",
            Self::PvalueLow => "Low pValue",
            Self::BudgetLow => "Budget Low",
            Self::BudgetMid => "Budget Mid",
            Self::BudgetHigh => "Budget High",
        }
    }
}

/// Values substituted into strategy templates. `{cpa}` is one decimal,
/// half-even; `{pvalue}` four decimals; `{budget}`/`{spent}` integer
/// percentages of the allocation.
#[derive(Debug, Clone, Copy, Default)]
pub struct StrategyContext {
    pub pvalue: f64,
    pub budget_ratio: f64,
}

/// One decimal place, round-half-even (Rust's default float formatting
/// rounds ties of the exact binary value to even).
pub fn format_cpa(x: f64) -> String {
    format!("{x:.1}")
}

pub fn format_pvalue(x: f64) -> String {
    format!("{x:.4}")
}

pub fn format_percent(ratio: f64) -> String {
    format!("{:.0}%", ratio * 100.0)
}

fn ensure_sentence(mut s: String) -> String {
    if !s.ends_with('.') {
        s.push('.');
    }
    s
}

#[derive(Debug, Deserialize)]
struct RawVariants {
    variants: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawPool {
    version: u32,
    style: String,
    regime: String,
    task: RawVariants,
    history: BTreeMap<String, RawVariants>,
    strategy: BTreeMap<String, RawVariants>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateError(pub String);

impl std::fmt::Display for TemplateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "template pool error: {}", self.0)
    }
}

impl std::error::Error for TemplateError {}

/// In-memory pool for one (style, regime) combination.
#[derive(Debug, Clone)]
pub struct TemplatePool {
    pub style: Style,
    pub regime: Regime,
    pub version: u32,
    task: Vec<String>,
    history: BTreeMap<&'static str, Vec<String>>,
    strategy: BTreeMap<&'static str, Vec<String>>,
}

const HISTORY_KEYS: &[&str] = &[
    "roi_low",
    "roi_moderate",
    "roi_good",
    "cvr_increase",
    "cvr_decrease",
    "conv_happened",
    "conv_none",
    "cpa_increase",
    "cpa_decrease",
];

const STRATEGY_KEYS: &[&str] = &[
    "conservative",
    "moderate",
    "aggressive",
    "pvalue_high",
    "pvalue_mid",
    "pvalue_low",
    "budget_low",
    "budget_mid",
    "budget_high",
];

fn intern(keys: &[&'static str], k: &str) -> Option<&'static str> {
    keys.iter().copied().find(|s| *s == k)
}

impl TemplatePool {
    fn from_toml(text: &str) -> Result<Self, TemplateError> {
        let raw: RawPool =
            toml::from_str(text).map_err(|e| TemplateError(format!("parse failure: {e}")))?;
        let style = Style::parse(&raw.style)
            .ok_or_else(|| TemplateError(format!("unknown style '{}'", raw.style)))?;
        let regime = match raw.regime.as_str() {
            "high" => Regime::HighConv,
            "low" => Regime::LowConv,
            other => return Err(TemplateError(format!("unknown regime '{other}'"))),
        };
        if raw.task.variants.len() != 4 {
            return Err(TemplateError(format!(
                "task pool must hold 4 variants, found {}",
                raw.task.variants.len()
            )));
        }
        let mut history = BTreeMap::new();
        for (k, v) in raw.history {
            let key = intern(HISTORY_KEYS, &k)
                .ok_or_else(|| TemplateError(format!("unknown history category '{k}'")))?;
            if v.variants.is_empty() {
                return Err(TemplateError(format!("empty history category '{k}'")));
            }
            history.insert(key, v.variants);
        }
        let mut strategy = BTreeMap::new();
        for (k, v) in raw.strategy {
            let key = intern(STRATEGY_KEYS, &k)
                .ok_or_else(|| TemplateError(format!("unknown strategy category '{k}'")))?;
            if v.variants.is_empty() {
                return Err(TemplateError(format!("empty strategy category '{k}'")));
            }
            strategy.insert(key, v.variants);
        }
        let pool = Self {
            style,
            regime,
            version: raw.version,
            task: raw.task.variants,
            history,
            strategy,
        };
        pool.check_categories()?;
        Ok(pool)
    }

    fn check_categories(&self) -> Result<(), TemplateError> {
        let required_history: &[HistoryCategory] = match self.regime {
            Regime::HighConv => &[
                HistoryCategory::RoiLow,
                HistoryCategory::RoiModerate,
                HistoryCategory::RoiGood,
                HistoryCategory::CvrIncrease,
                HistoryCategory::CvrDecrease,
                HistoryCategory::CpaIncrease,
                HistoryCategory::CpaDecrease,
            ],
            Regime::LowConv => &[
                HistoryCategory::RoiLow,
                HistoryCategory::RoiModerate,
                HistoryCategory::RoiGood,
                HistoryCategory::ConversionHappened,
                HistoryCategory::NoConversion,
                HistoryCategory::CpaIncrease,
                HistoryCategory::CpaDecrease,
            ],
        };
        for cat in required_history {
            if !self.history.contains_key(cat.key()) {
                return Err(TemplateError(format!(
                    "missing history category '{}' for regime {:?}",
                    cat.key(),
                    self.regime
                )));
            }
        }
        let mut required_strategy = vec![
            StrategyCategory::Conservative,
            StrategyCategory::Moderate,
            StrategyCategory::Aggressive,
            StrategyCategory::PvalueHigh,
            StrategyCategory::PvalueLow,
            StrategyCategory::BudgetLow,
            StrategyCategory::BudgetHigh,
        ];
        if self.regime == Regime::LowConv {
            required_strategy.push(StrategyCategory::PvalueMid);
            required_strategy.push(StrategyCategory::BudgetMid);
        }
        for cat in required_strategy {
            if !self.strategy.contains_key(cat.key()) {
                return Err(TemplateError(format!(
                    "missing strategy category '{}' for regime {:?}",
                    cat.key(),
                    self.regime
                )));
            }
        }
        Ok(())
    }

    /// The pool for a (style, regime) combination; the low-conversion regime
    /// only carries the standard style.
    pub fn get(style: Style, regime: Regime) -> Result<&'static TemplatePool, TemplateError> {
        static POOLS: OnceLock<BTreeMap<(Style, Regime), TemplatePool>> = OnceLock::new();
        let pools = POOLS.get_or_init(|| {
            let sources = [
                include_str!("../../resources/templates/standard_high.toml"),
                include_str!("../../resources/templates/standard_low.toml"),
                include_str!("../../resources/templates/concise_high.toml"),
                include_str!("../../resources/templates/directive_high.toml"),
                include_str!("../../resources/templates/verbose_high.toml"),
                include_str!("../../resources/templates/structured_high.toml"),
            ];
            let mut map = BTreeMap::new();
            for src in sources {
                let pool = TemplatePool::from_toml(src).expect("bundled template resource");
                map.insert((pool.style, pool.regime), pool);
            }
            map
        });
        pools.get(&(style, regime)).ok_or_else(|| {
            TemplateError(format!(
                "no template pool for style '{}' in regime '{}'",
                style.name(),
                regime.name()
            ))
        })
    }

    pub fn task_count(&self) -> usize {
        self.task.len()
    }

    pub fn history_variants(&self, cat: HistoryCategory) -> &[String] {
        self.history.get(cat.key()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn strategy_variants(&self, cat: StrategyCategory) -> &[String] {
        self.strategy.get(cat.key()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Renders task variant `idx` with the CPA target substituted.
    pub fn render_task(&self, idx: usize, target_cpa: f64) -> String {
        let text = self.task[idx].replace("{cpa}", &format_cpa(target_cpa));
        ensure_sentence(text)
    }

    /// Renders a history sentence. History templates carry no placeholders.
    pub fn render_history(&self, cat: HistoryCategory, idx: usize) -> String {
        ensure_sentence(self.history_variants(cat)[idx].clone())
    }

    /// Renders a strategy sentence with pvalue/budget substitutions.
    pub fn render_strategy(&self, cat: StrategyCategory, idx: usize, ctx: &StrategyContext) -> String {
        let text = self.strategy_variants(cat)[idx]
            .replace("{pvalue}", &format_pvalue(ctx.pvalue))
            .replace("{budget}", &format_percent(ctx.budget_ratio))
            .replace("{spent}", &format_percent(1.0 - ctx.budget_ratio));
        ensure_sentence(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_pools_load() {
        for style in Style::all() {
            TemplatePool::get(style, Regime::HighConv).unwrap();
        }
        TemplatePool::get(Style::Standard, Regime::LowConv).unwrap();
        assert!(TemplatePool::get(Style::Concise, Regime::LowConv).is_err());
    }

    #[test]
    fn standard_task_pool_matches_published_order() {
        let pool = TemplatePool::get(Style::Standard, Regime::HighConv).unwrap();
        assert_eq!(pool.task_count(), 4);
        assert_eq!(
            pool.render_task(1, 8.3),
            "Maximize conversions while maintaining CPA below 8.3."
        );
        assert_eq!(
            pool.render_task(0, 8.27),
            "Balance conversion volume and cost efficiency with target CPA 8.3."
        );
    }

    #[test]
    fn cpa_formatting_is_half_even() {
        assert_eq!(format_cpa(8.25), "8.2"); // exact binary tie rounds to even
        assert_eq!(format_cpa(8.35), "8.3"); // stored value sits just below the tie
        assert_eq!(format_cpa(8.27), "8.3");
        assert_eq!(format_cpa(95.0), "95.0");
    }

    #[test]
    fn sentence_termination_appended_once() {
        let pool = TemplatePool::get(Style::Standard, Regime::HighConv).unwrap();
        let s = pool.render_history(HistoryCategory::RoiGood, 0);
        assert_eq!(s, "The ROI was good after the last bid.");
        let d = TemplatePool::get(Style::Directive, Regime::HighConv).unwrap();
        let s = d.render_history(HistoryCategory::RoiLow, 0);
        assert_eq!(s, "ROI decreased. Adjust strategy.");
    }

    #[test]
    fn strategy_placeholder_substitution() {
        let pool = TemplatePool::get(Style::Directive, Regime::HighConv).unwrap();
        let ctx = StrategyContext {
            pvalue: 0.0234,
            budget_ratio: 0.45,
        };
        let s = pool.render_strategy(StrategyCategory::PvalueHigh, 0, &ctx);
        assert_eq!(s, "pValue 0.0234. Strong signal detected.");
        let s = pool.render_strategy(StrategyCategory::BudgetLow, 0, &ctx);
        assert_eq!(s, "Budget at 45%. Conserve resources.");
        let st = TemplatePool::get(Style::Structured, Regime::HighConv).unwrap();
        let s = st.render_strategy(StrategyCategory::BudgetHigh, 0, &ctx);
        assert!(s.contains("Remaining: 45%") && s.contains("Utilization: 55%"), "{s}");
    }

    #[test]
    fn low_pool_has_mid_bands_and_event_categories() {
        let pool = TemplatePool::get(Style::Standard, Regime::LowConv).unwrap();
        assert_eq!(pool.strategy_variants(StrategyCategory::PvalueMid).len(), 5);
        assert_eq!(pool.strategy_variants(StrategyCategory::BudgetMid).len(), 5);
        assert_eq!(
            pool.history_variants(HistoryCategory::ConversionHappened).len(),
            5
        );
        assert!(pool.history_variants(HistoryCategory::CvrIncrease).is_empty());
        let high = TemplatePool::get(Style::Standard, Regime::HighConv).unwrap();
        assert!(high
            .history_variants(HistoryCategory::ConversionHappened)
            .is_empty());
    }
}
