//! The probing study end to end: run behavior-policy episodes, verbalize
//! each state, embed the texts, and measure what a linear probe can read
//! back out. The aligned probe is paired with a shuffled-pairing control,
//! and the three text channels are compared pairwise with CCA.

use crate::auction::BidEnv;
use crate::auction::{EnvError, MarketConfig};
use crate::baselines::pid::{PidConfig, PidController};
use crate::embed::{
    shuffle_pairings, EmbedError, EmbeddingSource, EmbeddingVector, SemanticPipeline,
};
use crate::probing::cca::{cca_avg, CcaError, CcaReport};
use crate::probing::fusion::FusionReport;
use crate::probing::probe::{linear_probe, ProbeError, ProbeReport};
use crate::semantics::{render_state_text, SemanticConfig, SemanticGenerator, Style, TransitionSummary};
use std::path::Path;

#[derive(Debug)]
pub enum ProbeStudyError {
    Env(EnvError),
    Embed(EmbedError),
    Probe(ProbeError),
    Cca(CcaError),
    Semantics(String),
    TooFewSamples { n: usize },
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error),
}

impl std::fmt::Display for ProbeStudyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Env(e) => write!(f, "episode failure: {e}"),
            Self::Embed(e) => write!(f, "embedding failure: {e}"),
            Self::Probe(e) => write!(f, "probe failure: {e}"),
            Self::Cca(e) => write!(f, "cca failure: {e}"),
            Self::Semantics(m) => write!(f, "text generation failure: {m}"),
            Self::TooFewSamples { n } => {
                write!(f, "study needs at least 50 samples, episodes yielded {n}")
            }
            Self::Io(e) => write!(f, "io failure: {e}"),
            Self::Csv(e) => write!(f, "csv failure: {e}"),
            Self::Json(e) => write!(f, "json failure: {e}"),
        }
    }
}

impl std::error::Error for ProbeStudyError {}

impl From<EnvError> for ProbeStudyError {
    fn from(e: EnvError) -> Self {
        Self::Env(e)
    }
}

impl From<EmbedError> for ProbeStudyError {
    fn from(e: EmbedError) -> Self {
        Self::Embed(e)
    }
}

impl From<ProbeError> for ProbeStudyError {
    fn from(e: ProbeError) -> Self {
        Self::Probe(e)
    }
}

impl From<CcaError> for ProbeStudyError {
    fn from(e: CcaError) -> Self {
        Self::Cca(e)
    }
}

impl From<std::io::Error> for ProbeStudyError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<csv::Error> for ProbeStudyError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e)
    }
}

impl From<serde_json::Error> for ProbeStudyError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeStudyConfig {
    pub market: MarketConfig,
    pub style: Style,
    pub episodes: usize,
    /// One aligned and one shuffled probe per entry; the same value seeds
    /// the split and the control permutation.
    pub split_seeds: Vec<u64>,
    pub cca_components: usize,
    pub seed: u64,
}

impl ProbeStudyConfig {
    pub fn new(market: MarketConfig) -> Self {
        Self {
            market,
            style: Style::Standard,
            episodes: 60,
            split_seeds: (0..10).collect(),
            cca_components: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeStudyReport {
    pub n_samples: usize,
    pub embed_dim: usize,
    pub probes: Vec<ProbeReport>,
    pub aligned_mean_r2: f64,
    pub shuffled_mean_r2: f64,
    pub cca: Vec<CcaReport>,
}

struct StudySamples {
    state_texts: Vec<String>,
    actions: Vec<f64>,
    task_texts: Vec<String>,
    history_texts: Vec<String>,
    strategy_texts: Vec<String>,
}

/// Runs PID-paced episodes and verbalizes each step. The state text covers
/// the pre-step budget and clock plus the period's realized mean pvalue; the
/// target is the lambda the pacer chose at that state.
fn collect_samples(cfg: &ProbeStudyConfig) -> Result<StudySamples, ProbeStudyError> {
    let sem_cfg = SemanticConfig::for_market(&cfg.market, cfg.style, cfg.seed);
    let mut out = StudySamples {
        state_texts: Vec::new(),
        actions: Vec::new(),
        task_texts: Vec::new(),
        history_texts: Vec::new(),
        strategy_texts: Vec::new(),
    };
    for episode in 0..cfg.episodes {
        let mut env = BidEnv::new(cfg.market.clone(), cfg.seed, episode as u64);
        let mut generator =
            SemanticGenerator::for_episode(sem_cfg.clone(), cfg.seed, episode as u64)
                .map_err(|e| ProbeStudyError::Semantics(e.to_string()))?;
        let task_text = generator.task(cfg.market.target_cpa).text;
        let mut pid = PidController::new(PidConfig::for_market(&cfg.market));
        while !env.done() {
            let budget_ratio = env.budget_remaining_ratio();
            let periods_remaining = env.periods() - env.t;
            let summary = if env.t == 0 {
                TransitionSummary::fresh()
            } else {
                TransitionSummary::from_ledger(&env.ledger, budget_ratio)
            };
            out.task_texts.push(task_text.clone());
            out.history_texts.push(generator.history(&summary).text);
            out.strategy_texts.push(generator.strategy(&summary).text);
            let lambda = pid.act(&env);
            let step = env.step(lambda)?;
            out.state_texts.push(render_state_text(
                &sem_cfg,
                budget_ratio,
                step.outcome.mean_pvalue,
                periods_remaining,
            ));
            out.actions.push(lambda);
        }
    }
    Ok(out)
}

fn embed_matrix(
    pipeline: &mut SemanticPipeline,
    texts: &[String],
) -> Result<Vec<f64>, ProbeStudyError> {
    let d = pipeline.out_dim();
    let mut x = Vec::with_capacity(texts.len() * d);
    for t in texts {
        let v = pipeline.embed(t)?;
        x.extend(v.iter().map(|f| *f as f64));
    }
    Ok(x)
}

fn matrix_to_vectors(x: &[f64], d: usize) -> Vec<EmbeddingVector> {
    x.chunks_exact(d)
        .map(|row| EmbeddingVector {
            values: row.iter().map(|v| *v as f32).collect(),
            source: EmbeddingSource::Hash,
        })
        .collect()
}

/// Aligned-vs-shuffled linear probes plus channel-pair CCA, all from one
/// deterministic set of episodes.
pub fn run_probe_study(
    cfg: &ProbeStudyConfig,
    pipeline: &mut SemanticPipeline,
) -> Result<ProbeStudyReport, ProbeStudyError> {
    let samples = collect_samples(cfg)?;
    let n = samples.actions.len();
    if n < 50 {
        return Err(ProbeStudyError::TooFewSamples { n });
    }
    let d = pipeline.out_dim();
    let x_aligned = embed_matrix(pipeline, &samples.state_texts)?;

    let mut probes = Vec::with_capacity(cfg.split_seeds.len() * 2);
    let mut aligned_sum = 0.0;
    let mut shuffled_sum = 0.0;
    for &s in &cfg.split_seeds {
        let aligned = linear_probe(
            &format!("state_text/aligned/seed{s}"),
            &x_aligned,
            &samples.actions,
            n,
            d,
            s,
        )?;
        aligned_sum += aligned.r2;
        probes.push(aligned);

        let vectors = matrix_to_vectors(&x_aligned, d);
        let shuffled_vecs = shuffle_pairings(&samples.state_texts, vectors, s)?;
        let mut x_shuffled = Vec::with_capacity(n * d);
        for v in &shuffled_vecs {
            x_shuffled.extend(v.values.iter().map(|f| *f as f64));
        }
        let shuffled = linear_probe(
            &format!("state_text/shuffled/seed{s}"),
            &x_shuffled,
            &samples.actions,
            n,
            d,
            s,
        )?;
        shuffled_sum += shuffled.r2;
        probes.push(shuffled);
    }
    let seeds = cfg.split_seeds.len().max(1) as f64;

    let x_task = embed_matrix(pipeline, &samples.task_texts)?;
    let x_history = embed_matrix(pipeline, &samples.history_texts)?;
    let x_strategy = embed_matrix(pipeline, &samples.strategy_texts)?;
    let k = cfg.cca_components;
    let cca = vec![
        cca_avg("cca/task_history", &x_task, d, &x_history, d, n, k)?,
        cca_avg("cca/task_strategy", &x_task, d, &x_strategy, d, n, k)?,
        cca_avg("cca/history_strategy", &x_history, d, &x_strategy, d, n, k)?,
    ];

    Ok(ProbeStudyReport {
        n_samples: n,
        embed_dim: d,
        probes,
        aligned_mean_r2: aligned_sum / seeds,
        shuffled_mean_r2: shuffled_sum / seeds,
        cca,
    })
}

/// Writes probes.csv, cca.csv, fusion.csv (when given rows), and a combined
/// probe_report.json into `dir`.
pub fn write_probe_reports(
    dir: &Path,
    study: &ProbeStudyReport,
    fusion: &[FusionReport],
) -> Result<(), ProbeStudyError> {
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("probes.csv"))?;
    w.write_record([
        "label",
        "r2",
        "mse",
        "mae",
        "degenerate_target",
        "n_train",
        "n_test",
    ])?;
    for p in &study.probes {
        w.write_record([
            p.label.clone(),
            format!("{:.6}", p.r2),
            format!("{:.6}", p.mse),
            format!("{:.6}", p.mae),
            p.degenerate_target.to_string(),
            p.n_train.to_string(),
            p.n_test.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("cca.csv"))?;
    w.write_record([
        "label",
        "mean_correlation",
        "effective_components",
        "requested_components",
    ])?;
    for c in &study.cca {
        w.write_record([
            c.label.clone(),
            format!("{:.6}", c.mean_correlation),
            c.effective_components.to_string(),
            c.requested_components.to_string(),
        ])?;
    }
    w.flush()?;

    if !fusion.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("fusion.csv"))?;
        w.write_record([
            "label",
            "informative",
            "hidden",
            "param_count",
            "param_budget",
            "train_mse",
            "test_mse",
            "test_r2",
        ])?;
        for r in fusion {
            w.write_record([
                r.label.clone(),
                r.informative.to_string(),
                r.hidden.to_string(),
                r.param_count.to_string(),
                r.param_budget.to_string(),
                format!("{:.6}", r.train_mse),
                format!("{:.6}", r.test_mse),
                format!("{:.6}", r.test_r2),
            ])?;
        }
        w.flush()?;
    }

    #[derive(serde::Serialize)]
    struct Combined<'a> {
        study: &'a ProbeStudyReport,
        fusion: &'a [FusionReport],
    }
    let file = std::fs::File::create(dir.join("probe_report.json"))?;
    serde_json::to_writer_pretty(file, &Combined { study, fusion })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Scenario;
    use crate::embed::HashEncoder;
    use crate::embed::DEFAULT_PROJECTION_SEED;

    fn study_market() -> MarketConfig {
        let mut market = MarketConfig::preset(Scenario::MediumConversion);
        market.periods = 16;
        market.mean_impressions = 40.0;
        market
    }

    fn pipeline() -> SemanticPipeline {
        SemanticPipeline::new(Box::new(HashEncoder::default()), DEFAULT_PROJECTION_SEED).unwrap()
    }

    #[test]
    fn aligned_probe_beats_the_shuffled_control() {
        let cfg = ProbeStudyConfig::new(study_market());
        let mut pipe = pipeline();
        let report = run_probe_study(&cfg, &mut pipe).unwrap();
        assert!(report.n_samples >= 50);
        assert!(
            report.aligned_mean_r2 - report.shuffled_mean_r2 >= 0.1,
            "aligned {} vs shuffled {}",
            report.aligned_mean_r2,
            report.shuffled_mean_r2
        );
        assert!(
            report.shuffled_mean_r2.abs() < 0.05,
            "shuffled mean {}",
            report.shuffled_mean_r2
        );
        assert_eq!(report.probes.len(), cfg.split_seeds.len() * 2);
    }

    #[test]
    fn cca_rows_cover_the_channel_pairs() {
        let cfg = ProbeStudyConfig {
            episodes: 6,
            split_seeds: vec![0],
            ..ProbeStudyConfig::new(study_market())
        };
        let mut pipe = pipeline();
        let report = run_probe_study(&cfg, &mut pipe).unwrap();
        let labels: Vec<&str> = report.cca.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            ["cca/task_history", "cca/task_strategy", "cca/history_strategy"]
        );
        for c in &report.cca {
            assert!((0.0..=1.0 + 1e-9).contains(&c.mean_correlation));
            assert!(c.effective_components <= c.requested_components);
        }
    }

    #[test]
    fn study_is_deterministic_for_a_seed() {
        let cfg = ProbeStudyConfig {
            episodes: 5,
            split_seeds: vec![3, 4],
            ..ProbeStudyConfig::new(study_market())
        };
        let a = run_probe_study(&cfg, &mut pipeline()).unwrap();
        let b = run_probe_study(&cfg, &mut pipeline()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn tiny_episode_budget_is_rejected() {
        let mut market = study_market();
        market.periods = 4;
        let cfg = ProbeStudyConfig {
            episodes: 2,
            ..ProbeStudyConfig::new(market)
        };
        assert!(matches!(
            run_probe_study(&cfg, &mut pipeline()),
            Err(ProbeStudyError::TooFewSamples { n: 8 })
        ));
    }

    #[test]
    fn report_files_round_trip() {
        let cfg = ProbeStudyConfig {
            episodes: 5,
            split_seeds: vec![0, 1],
            ..ProbeStudyConfig::new(study_market())
        };
        let mut pipe = pipeline();
        let report = run_probe_study(&cfg, &mut pipe).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_probe_reports(dir.path(), &report, &[]).unwrap();
        let mut rdr = csv::Reader::from_path(dir.path().join("probes.csv")).unwrap();
        assert_eq!(rdr.records().count(), report.probes.len());
        let json: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(dir.path().join("probe_report.json")).unwrap())
                .unwrap();
        assert_eq!(
            json["study"]["probes"].as_array().unwrap().len(),
            report.probes.len()
        );
        assert!(!dir.path().join("fusion.csv").exists());
    }
}
