use sembid::auction::{MarketConfig, Scenario};
use sembid::embed::{HashEncoder, SemanticPipeline, DEFAULT_PROJECTION_SEED};
use sembid::probing::{run_probe_study, ProbeStudyConfig};

#[test]
fn dbg_report_values() {
    for (periods, episodes) in [(48usize, 20usize), (48, 30), (16, 60)] {
        let mut market = MarketConfig::preset(Scenario::MediumConversion);
        market.periods = periods;
        market.mean_impressions = 40.0;
        let mut cfg = ProbeStudyConfig::new(market);
        cfg.episodes = episodes;
        let mut pipe = SemanticPipeline::new(Box::new(HashEncoder::default()), DEFAULT_PROJECTION_SEED).unwrap();
        let t0 = std::time::Instant::now();
        let report = run_probe_study(&cfg, &mut pipe).unwrap();
        eprintln!(
            "periods={periods} episodes={episodes}: elapsed {:?} n={} unique={} aligned={:.4} shuffled={:.4}",
            t0.elapsed(), report.n_samples, pipe.memo_len(), report.aligned_mean_r2, report.shuffled_mean_r2
        );
    }
}
