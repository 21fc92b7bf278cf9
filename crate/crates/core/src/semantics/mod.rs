//! Structured-text signal pipeline: threshold rules over transition
//! statistics, template pools per style and regime, and text assembly.

pub mod config;
pub mod generate;
pub mod rules;
pub mod templates;

pub use config::{Regime, SemanticConfig, SemanticConfigError, Style};
pub use generate::{
    render_state_text, Clause, GeneratedText, SemanticGenerator, SemanticTokenSet,
    TransitionSummary,
};
pub use templates::{
    HistoryCategory, StrategyCategory, StrategyContext, TemplateError, TemplatePool,
};
