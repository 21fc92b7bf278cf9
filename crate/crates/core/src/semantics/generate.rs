//! Structured-text generation: classify a transition, pick template
//! variants, and assemble the three text channels fed to the policy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::auction::env::EpisodeLedger;
use crate::rng::stream;

use super::config::{Regime, SemanticConfig, SemanticConfigError};
use super::rules::{
    classify_bid, classify_budget, classify_cpa_trend, classify_cvr_trend, classify_pvalue,
    classify_roi, BidBand, BudgetBand, CpaTrend, CvrTrend, PvalueBand, RoiBand,
};
use super::templates::{HistoryCategory, StrategyCategory, StrategyContext, TemplatePool};

/// Everything the text pipeline needs to know about the transition into
/// the current period. All deltas compare the previous period against the
/// one before it; a fresh episode carries zeros.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionSummary {
    pub delta_conversions: f64,
    pub delta_cost: f64,
    pub delta_cvr: f64,
    pub delta_cpa: f64,
    pub conversion_last_period: bool,
    /// pvalue of the most recently won impression, 0 before the first win.
    pub pvalue: f64,
    pub budget_ratio: f64,
    /// Previous period's bid scale, 0 at the first period.
    pub prev_bid: f64,
}

impl TransitionSummary {
    /// State before the first period: no history, full budget.
    pub fn fresh() -> Self {
        Self {
            budget_ratio: 1.0,
            ..Self::default()
        }
    }

    /// Summary for the upcoming period given everything recorded so far.
    pub fn from_ledger(ledger: &EpisodeLedger, budget_remaining_ratio: f64) -> Self {
        let outs = &ledger.outcomes;
        let n = outs.len();
        let period_cvr = |i: usize| -> f64 {
            if outs[i].wins > 0 {
                outs[i].conversions / outs[i].wins as f64
            } else {
                0.0
            }
        };
        let period_cpa = |i: usize| -> f64 {
            if outs[i].conversions > 0.0 {
                outs[i].spend / outs[i].conversions
            } else {
                f64::NAN
            }
        };
        let (dconv, dcost, dcvr, dcpa) = if n >= 2 {
            (
                outs[n - 1].conversions - outs[n - 2].conversions,
                outs[n - 1].spend - outs[n - 2].spend,
                period_cvr(n - 1) - period_cvr(n - 2),
                period_cpa(n - 1) - period_cpa(n - 2),
            )
        } else if n == 1 {
            // First recorded period compares against nothing: treat the
            // pre-episode baseline as all zeros, CPA undefined.
            (outs[0].conversions, outs[0].spend, period_cvr(0), f64::NAN)
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        let pvalue = outs
            .iter()
            .rev()
            .find_map(|o| o.last_won_pvalue)
            .unwrap_or(0.0);
        Self {
            delta_conversions: dconv,
            delta_cost: dcost,
            delta_cvr: dcvr,
            delta_cpa: dcpa,
            conversion_last_period: n > 0 && outs[n - 1].conversions > 0.0,
            pvalue,
            budget_ratio: budget_remaining_ratio,
            prev_bid: ledger.actions.last().copied().unwrap_or(0.0),
        }
    }
}

/// One rendered sentence with its provenance inside the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub category: &'static str,
    pub variant: usize,
    pub text: String,
}

/// A text channel: the joined sentence string plus per-clause labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedText {
    pub text: String,
    pub clauses: Vec<Clause>,
}

impl GeneratedText {
    fn from_clauses(clauses: Vec<Clause>) -> Self {
        let text = clauses
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Self { text, clauses }
    }
}

/// The three text channels attached to one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTokenSet {
    pub task: GeneratedText,
    pub history: GeneratedText,
    pub strategy: GeneratedText,
}

/// Stateful generator bound to one episode's template stream.
pub struct SemanticGenerator {
    cfg: SemanticConfig,
    pool: &'static TemplatePool,
    rng: ChaCha8Rng,
}

fn pick(rng: &mut ChaCha8Rng, variants: &[String]) -> (usize, String) {
    debug_assert!(!variants.is_empty());
    let idx = rng.random_range(0..variants.len());
    (idx, variants[idx].clone())
}

impl SemanticGenerator {
    pub fn new(cfg: SemanticConfig, rng: ChaCha8Rng) -> Result<Self, SemanticConfigError> {
        cfg.validate()?;
        let pool = TemplatePool::get(cfg.style, cfg.regime)
            .map_err(|e| SemanticConfigError(e.to_string()))?;
        Ok(Self { cfg, pool, rng })
    }

    /// Binds the generator to the named template stream for one episode.
    pub fn for_episode(
        cfg: SemanticConfig,
        root_seed: u64,
        episode_index: u64,
    ) -> Result<Self, SemanticConfigError> {
        Self::new(cfg, stream(root_seed, "templates", episode_index))
    }

    pub fn config(&self) -> &SemanticConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &'static TemplatePool {
        self.pool
    }

    /// Draws one of the four task variants. Generated once per episode and
    /// repeated at every step.
    pub fn task(&mut self, target_cpa: f64) -> GeneratedText {
        let idx = self.rng.random_range(0..self.pool.task_count());
        let text = self.pool.render_task(idx, target_cpa);
        GeneratedText::from_clauses(vec![Clause {
            category: "Task",
            variant: idx,
            text,
        }])
    }

    fn push_history(&mut self, out: &mut Vec<Clause>, cat: HistoryCategory) {
        let (idx, _) = pick(&mut self.rng, self.pool.history_variants(cat));
        out.push(Clause {
            category: cat.label(),
            variant: idx,
            text: self.pool.render_history(cat, idx),
        });
    }

    fn push_strategy(&mut self, out: &mut Vec<Clause>, cat: StrategyCategory, ctx: &StrategyContext) {
        let (idx, _) = pick(&mut self.rng, self.pool.strategy_variants(cat));
        out.push(Clause {
            category: cat.label(),
            variant: idx,
            text: self.pool.render_strategy(cat, idx, ctx),
        });
    }

    /// History channel: ROI verdict always, then the regime's conversion
    /// signal, then the CPA trend. Flat trends stay silent.
    pub fn history(&mut self, s: &TransitionSummary) -> GeneratedText {
        let mut clauses = Vec::new();
        let roi_cat = match classify_roi(s.delta_conversions, s.delta_cost, &self.cfg) {
            RoiBand::Low => HistoryCategory::RoiLow,
            RoiBand::Moderate => HistoryCategory::RoiModerate,
            RoiBand::Good => HistoryCategory::RoiGood,
        };
        self.push_history(&mut clauses, roi_cat);
        match self.cfg.regime {
            Regime::HighConv => match classify_cvr_trend(s.delta_cvr, self.cfg.cvr_epsilon) {
                CvrTrend::Increase => self.push_history(&mut clauses, HistoryCategory::CvrIncrease),
                CvrTrend::Decrease => self.push_history(&mut clauses, HistoryCategory::CvrDecrease),
                CvrTrend::Flat => {}
            },
            Regime::LowConv => {
                let cat = if s.conversion_last_period {
                    HistoryCategory::ConversionHappened
                } else {
                    HistoryCategory::NoConversion
                };
                self.push_history(&mut clauses, cat);
            }
        }
        match classify_cpa_trend(s.delta_cpa, self.cfg.cpa_threshold) {
            CpaTrend::Rose => self.push_history(&mut clauses, HistoryCategory::CpaIncrease),
            CpaTrend::Dropped => self.push_history(&mut clauses, HistoryCategory::CpaDecrease),
            CpaTrend::Flat => {}
        }
        GeneratedText::from_clauses(clauses)
    }

    /// Strategy channel: pValue assessment, budget posture, bid stance.
    /// Mid bands stay silent in the high-conversion regime.
    pub fn strategy(&mut self, s: &TransitionSummary) -> GeneratedText {
        let ctx = StrategyContext {
            pvalue: s.pvalue,
            budget_ratio: s.budget_ratio,
        };
        let mut clauses = Vec::new();
        if let Some(band) = classify_pvalue(s.pvalue, &self.cfg) {
            let cat = match band {
                PvalueBand::High => StrategyCategory::PvalueHigh,
                PvalueBand::Mid => StrategyCategory::PvalueMid,
                PvalueBand::Low => StrategyCategory::PvalueLow,
            };
            self.push_strategy(&mut clauses, cat, &ctx);
        }
        if let Some(band) = classify_budget(s.budget_ratio, &self.cfg) {
            let cat = match band {
                BudgetBand::Low => StrategyCategory::BudgetLow,
                BudgetBand::Mid => StrategyCategory::BudgetMid,
                BudgetBand::High => StrategyCategory::BudgetHigh,
            };
            self.push_strategy(&mut clauses, cat, &ctx);
        }
        let cat = match classify_bid(s.prev_bid, &self.cfg) {
            BidBand::Conservative => StrategyCategory::Conservative,
            BidBand::Moderate => StrategyCategory::Moderate,
            BidBand::Aggressive => StrategyCategory::Aggressive,
        };
        self.push_strategy(&mut clauses, cat, &ctx);
        GeneratedText::from_clauses(clauses)
    }

    /// All three channels for one step, drawn in task, history, strategy
    /// order so the stream position is a pure function of the inputs.
    pub fn token_set(&mut self, target_cpa: f64, s: &TransitionSummary) -> SemanticTokenSet {
        SemanticTokenSet {
            task: self.task(target_cpa),
            history: self.history(s),
            strategy: self.strategy(s),
        }
    }
}

/// Compact state rendering used for inspection output and probes. Periods
/// are half an hour each.
pub fn render_state_text(
    cfg: &SemanticConfig,
    budget_ratio: f64,
    pvalue: f64,
    periods_remaining: usize,
) -> String {
    let band = if pvalue > cfg.pvalue_high {
        "High"
    } else if pvalue < cfg.pvalue_low {
        "Low"
    } else {
        "Mid"
    };
    let hours = periods_remaining as f64 * 0.5;
    let hours_text = if hours.fract() == 0.0 {
        format!("{}", hours as u64)
    } else {
        format!("{hours:.1}")
    };
    let unit = if (hours - 1.0).abs() < 1e-12 { "hour" } else { "hours" };
    format!(
        "Budget: {:.0}%. pValue: {}. Time remaining: {} {}.",
        budget_ratio * 100.0,
        band,
        hours_text,
        unit
    )
}
