//! Dataset container format.
//!
//! Columnar binary: magic "SBDS", version, dimensions, then per-trajectory
//! scalars (rho, behavior tag) followed by the dense f32 columns in a fixed
//! order (normalized states, actions, rewards, return-to-go, mask), then the
//! per-step texts length-prefixed, and a trailing FNV-1a checksum over every
//! preceding byte. All integers and floats little-endian. A JSON sidecar at
//! `<path>.json` carries the market config, normalization statistics, seeds
//! and the maximum return; the binary alone is enough to inspect the data,
//! binary plus sidecar is enough to train and evaluate.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auction::{FeatureStats, MarketConfig, STATE_DIM};
use crate::data::dataset::{BehaviorPolicy, Dataset, StepTexts, Trajectory};
use crate::rng::Fnv1a64;

pub const DATASET_MAGIC: &[u8; 4] = b"SBDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug)]
pub enum DataError {
    Io(String),
    Parse { offset: u64, message: String },
    ChecksumMismatch { stored: u64, computed: u64 },
    SidecarMissing(PathBuf),
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(m) => write!(f, "dataset io: {m}"),
            Self::Parse { offset, message } => {
                write!(f, "dataset parse error at byte {offset}: {message}")
            }
            Self::ChecksumMismatch { stored, computed } => write!(
                f,
                "dataset checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
            ),
            Self::SidecarMissing(p) => write!(f, "dataset sidecar not found: {}", p.display()),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Everything about the dataset that is not the dense columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format_version: u32,
    pub market: MarketConfig,
    pub rho_grid: Vec<f64>,
    pub style: String,
    pub regime: String,
    pub seed: u64,
    pub n_trajectories: usize,
    pub periods: usize,
    pub state_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub max_return: f32,
    pub action_noise_sigma: f64,
    pub random_scale: f64,
}

/// A dataset read back from disk. States are stored normalized; the sidecar
/// stats map them back to raw space when needed.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub sidecar: DatasetSidecar,
    pub trajectories: Vec<LoadedTrajectory>,
}

#[derive(Debug, Clone)]
pub struct LoadedTrajectory {
    pub rho: f32,
    pub behavior: BehaviorPolicy,
    /// Row-major [periods x state_dim], already normalized.
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub rtg: Vec<f32>,
    pub mask: Vec<f32>,
    pub texts: Vec<StepTexts>,
}

impl LoadedDataset {
    pub fn stats(&self) -> FeatureStats {
        FeatureStats {
            mean: self.sidecar.feature_mean.clone(),
            std: self.sidecar.feature_std.clone(),
        }
    }

    pub fn periods(&self) -> usize {
        self.sidecar.periods
    }

    pub fn state_row(&self, traj: usize, step: usize) -> &[f32] {
        let d = self.sidecar.state_dim;
        &self.trajectories[traj].states[step * d..(step + 1) * d]
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Fnv1a64,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: Fnv1a64::new(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<(), DataError> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    fn put_u32(&mut self, v: u32) -> Result<(), DataError> {
        self.put(&v.to_le_bytes())
    }

    fn put_f32(&mut self, v: f32) -> Result<(), DataError> {
        self.put(&v.to_le_bytes())
    }

    fn put_f32s(&mut self, vs: &[f32]) -> Result<(), DataError> {
        for v in vs {
            self.put_f32(*v)?;
        }
        Ok(())
    }

    fn put_text(&mut self, s: &str) -> Result<(), DataError> {
        self.put_u32(s.len() as u32)?;
        self.put(s.as_bytes())
    }
}

struct HashingReader<R: Read> {
    inner: R,
    hasher: Fnv1a64,
    offset: u64,
}

impl<R: Read> HashingReader<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            hasher: Fnv1a64::new(),
            offset: 0,
        }
    }

    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<(), DataError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| DataError::Parse {
            offset: at,
            message: format!("{what}: {e}"),
        })?;
        self.hasher.update(buf);
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn take_u32(&mut self, what: &str) -> Result<u32, DataError> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn take_f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, DataError> {
        let mut raw = vec![0u8; n * 4];
        self.take(&mut raw, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn take_text(&mut self, what: &str) -> Result<String, DataError> {
        let len = self.take_u32(what)? as usize;
        let at = self.offset;
        let mut raw = vec![0u8; len];
        self.take(&mut raw, what)?;
        String::from_utf8(raw).map_err(|e| DataError::Parse {
            offset: at,
            message: format!("{what}: invalid utf-8: {e}"),
        })
    }
}

fn normalized_row_f32(t: &Trajectory, stats: &FeatureStats, step: usize) -> Vec<f32> {
    stats
        .normalize(&t.states[step])
        .iter()
        .map(|v| *v as f32)
        .collect()
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = HashingWriter::new(out);
    w.put(DATASET_MAGIC)?;
    w.put_u32(DATASET_VERSION)?;
    let n = ds.len();
    let periods = ds.periods();
    w.put_u32(n as u32)?;
    w.put_u32(periods as u32)?;
    w.put_u32(STATE_DIM as u32)?;
    // flags bit 0: texts present
    w.put_u32(1)?;
    for t in &ds.trajectories {
        w.put_f32(t.rho as f32)?;
        w.put_u32(t.behavior.tag())?;
    }
    for t in &ds.trajectories {
        for step in 0..periods {
            w.put_f32s(&normalized_row_f32(t, &ds.stats, step))?;
        }
    }
    for t in &ds.trajectories {
        for a in &t.actions {
            w.put_f32(*a as f32)?;
        }
    }
    for t in &ds.trajectories {
        for r in &t.rewards {
            w.put_f32(*r as f32)?;
        }
    }
    for t in &ds.trajectories {
        w.put_f32s(&t.rtg)?;
    }
    for t in &ds.trajectories {
        w.put_f32s(&t.mask)?;
    }
    for t in &ds.trajectories {
        for s in &t.texts {
            w.put_text(&s.task)?;
            w.put_text(&s.history)?;
            w.put_text(&s.strategy)?;
        }
    }
    let checksum = w.hasher.finish();
    w.inner.write_all(&checksum.to_le_bytes())?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<LoadedTrajectory>, DataError> {
    let mut r = HashingReader::new(input);
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Parse {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = r.take_u32("version")?;
    if version != DATASET_VERSION {
        return Err(DataError::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = r.take_u32("trajectory count")? as usize;
    let periods = r.take_u32("periods")? as usize;
    let state_dim = r.take_u32("state_dim")? as usize;
    if state_dim != STATE_DIM {
        return Err(DataError::Parse {
            offset: 16,
            message: format!("state_dim {state_dim}, expected {STATE_DIM}"),
        });
    }
    let flags = r.take_u32("flags")?;
    let has_texts = flags & 1 == 1;

    let mut rhos = Vec::with_capacity(n);
    let mut behaviors = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 4];
        r.take(&mut b, "rho")?;
        rhos.push(f32::from_le_bytes(b));
        let tag = r.take_u32("behavior tag")?;
        let at = r.offset;
        behaviors.push(BehaviorPolicy::from_tag(tag).ok_or(DataError::Parse {
            offset: at,
            message: format!("unknown behavior tag {tag}"),
        })?);
    }
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        states.push(r.take_f32s(periods * state_dim, "states")?);
    }
    let mut columns = |what: &str| -> Result<Vec<Vec<f32>>, DataError> {
        (0..n).map(|_| r.take_f32s(periods, what)).collect()
    };
    let actions = columns("actions")?;
    let rewards = columns("rewards")?;
    let rtg = columns("rtg")?;
    let mask = columns("mask")?;
    let mut texts: Vec<Vec<StepTexts>> = vec![Vec::new(); n];
    if has_texts {
        for traj_texts in texts.iter_mut() {
            for _ in 0..periods {
                traj_texts.push(StepTexts {
                    task: r.take_text("task text")?,
                    history: r.take_text("history text")?,
                    strategy: r.take_text("strategy text")?,
                });
            }
        }
    }
    let computed = r.hasher.finish();
    let mut tail = [0u8; 8];
    let at = r.offset;
    r.inner.read_exact(&mut tail).map_err(|e| DataError::Parse {
        offset: at,
        message: format!("checksum trailer: {e}"),
    })?;
    let stored = u64::from_le_bytes(tail);
    if stored != computed {
        return Err(DataError::ChecksumMismatch { stored, computed });
    }

    let mut out = Vec::with_capacity(n);
    let zips = states
        .into_iter()
        .zip(actions)
        .zip(rewards)
        .zip(rtg)
        .zip(mask)
        .zip(texts);
    for (i, (((((states, actions), rewards), rtg), mask), texts)) in zips.enumerate() {
        out.push(LoadedTrajectory {
            rho: rhos[i],
            behavior: behaviors[i],
            states,
            actions,
            rewards,
            rtg,
            mask,
            texts,
        });
    }
    Ok(out)
}

pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut os = data_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

pub fn make_sidecar(ds: &Dataset) -> DatasetSidecar {
    let semantic = crate::semantics::SemanticConfig::for_market(
        &ds.cfg.market,
        ds.cfg.style,
        ds.seed,
    );
    DatasetSidecar {
        format_version: DATASET_VERSION,
        market: ds.cfg.market.clone(),
        rho_grid: ds.cfg.rho_grid.clone(),
        style: ds.cfg.style.name().to_string(),
        regime: semantic.regime.name().to_string(),
        seed: ds.seed,
        n_trajectories: ds.len(),
        periods: ds.periods(),
        state_dim: STATE_DIM,
        feature_mean: ds.stats.mean.clone(),
        feature_std: ds.stats.std.clone(),
        max_return: ds.max_return(),
        action_noise_sigma: ds.cfg.action_noise_sigma,
        random_scale: ds.cfg.random_scale,
    }
}

/// Writes `<path>` and `<path>.json`.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_dataset(ds, std::io::BufWriter::new(file))?;
    let sidecar = make_sidecar(ds);
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| DataError::Io(format!("sidecar encode: {e}")))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LoadedDataset, DataError> {
    let sc_path = sidecar_path(path);
    if !sc_path.exists() {
        return Err(DataError::SidecarMissing(sc_path));
    }
    let raw = std::fs::read_to_string(&sc_path)?;
    let sidecar: DatasetSidecar = serde_json::from_str(&raw).map_err(|e| DataError::Parse {
        offset: 0,
        message: format!("sidecar decode: {e}"),
    })?;
    let file = std::fs::File::open(path)?;
    let trajectories = read_dataset(std::io::BufReader::new(file))?;
    if trajectories.len() != sidecar.n_trajectories {
        return Err(DataError::Parse {
            offset: 8,
            message: format!(
                "sidecar claims {} trajectories, file has {}",
                sidecar.n_trajectories,
                trajectories.len()
            ),
        });
    }
    Ok(LoadedDataset {
        sidecar,
        trajectories,
    })
}

/// One row per step with every scalar column and the three texts.
pub fn export_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "trajectory".to_string(),
        "step".to_string(),
        "rho".to_string(),
        "behavior".to_string(),
        "action".to_string(),
        "reward".to_string(),
        "rtg".to_string(),
        "mask".to_string(),
    ];
    for d in 0..STATE_DIM {
        header.push(format!("s{d}"));
    }
    header.extend(["task", "history", "strategy"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (i, t) in ds.trajectories.iter().enumerate() {
        for step in 0..t.actions.len() {
            let mut row = vec![
                i.to_string(),
                step.to_string(),
                t.rho.to_string(),
                t.behavior.tag().to_string(),
                t.actions[step].to_string(),
                t.rewards[step].to_string(),
                t.rtg[step].to_string(),
                t.mask[step].to_string(),
            ];
            for v in normalized_row_f32(t, &ds.stats, step) {
                row.push(v.to_string());
            }
            row.push(t.texts[step].task.clone());
            row.push(t.texts[step].history.clone());
            row.push(t.texts[step].strategy.clone());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DataError {
    DataError::Io(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Scenario;
    use crate::data::dataset::DatasetConfig;
    use crate::semantics::Style;

    fn tiny() -> Dataset {
        let mut market = MarketConfig::preset(Scenario::MediumConversion);
        market.periods = 6;
        market.mean_impressions = 25.0;
        Dataset::generate(DatasetConfig::new(market, Style::Standard), 4, 21)
    }

    #[test]
    fn round_trip_preserves_columns_and_texts() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        for (i, t) in back.iter().enumerate() {
            let src = &ds.trajectories[i];
            assert_eq!(t.rho, src.rho as f32);
            assert_eq!(t.behavior, src.behavior);
            assert_eq!(t.actions, src.actions.iter().map(|a| *a as f32).collect::<Vec<_>>());
            assert_eq!(t.rtg, src.rtg);
            assert_eq!(t.texts.len(), src.texts.len());
            assert_eq!(t.texts[3].strategy, src.texts[3].strategy);
            let norm: Vec<f32> = normalized_row_f32(src, &ds.stats, 2);
            assert_eq!(&t.states[2 * STATE_DIM..3 * STATE_DIM], norm.as_slice());
        }
    }

    #[test]
    fn same_seed_serializes_byte_identical() {
        let a = tiny();
        let b = tiny();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_dataset(&a, &mut ba).unwrap();
        write_dataset(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn corruption_is_detected() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let mid = buf.len() / 2;
        buf[mid] ^= 0x40;
        match read_dataset(buf.as_slice()) {
            Err(DataError::ChecksumMismatch { .. }) | Err(DataError::Parse { .. }) => {}
            other => panic!("corruption not caught: {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected_at_offset_zero() {
        let err = read_dataset(b"XXXX\x01\x00\x00\x00".as_slice()).unwrap_err();
        match err {
            DataError::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sbds");
        let ds = tiny();
        save_dataset(&ds, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.sidecar.n_trajectories, 4);
        assert_eq!(back.sidecar.periods, 6);
        assert_eq!(back.sidecar.state_dim, STATE_DIM);
        assert!((back.sidecar.max_return - ds.max_return()).abs() < 1e-6);
        assert_eq!(back.sidecar.regime, "high");
        let stats = back.stats();
        assert_eq!(stats.mean.len(), STATE_DIM);
        assert_eq!(back.state_row(1, 3).len(), STATE_DIM);
    }

    #[test]
    fn missing_sidecar_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sbds");
        let ds = tiny();
        let file = std::fs::File::create(&path).unwrap();
        write_dataset(&ds, file).unwrap();
        match load_dataset(&path) {
            Err(DataError::SidecarMissing(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let ds = tiny();
        let mut buf = Vec::new();
        export_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4 * 6);
        assert!(lines[0].starts_with("trajectory,step,rho,behavior"));
        assert!(lines[0].ends_with("task,history,strategy"));
    }
}
