//! Batched training over a stored dataset: window assembly with an exact-text
//! embedding memo, AdamW updates, a CSV loss log, and checkpoints on a
//! configured cadence.

use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSidecar, LoadedDataset, LoadedTrajectory};
use crate::embed::{EmbedError, SemanticPipeline};
use crate::model::config::ModelConfig;
use crate::model::net::{ModelError, SemBidModel};
use crate::model::tokens::SequenceInputs;
use crate::rng::{fnv1a64, stream, stream_seed};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, Graph, ParamError};

/// Published training length. Desk-scale runs use far fewer steps; the
/// config default below is sized for a laptop, not the paper table.
pub const PAPER_TRAIN_STEPS: usize = 800_000;

#[derive(Debug)]
pub enum TrainError {
    EmptyDataset,
    Embed(EmbedError),
    Model(ModelError),
    Param(ParamError),
    Io(String),
    NonFiniteLoss { step: usize, loss: f64 },
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyDataset => write!(f, "dataset has no trajectories"),
            Self::Embed(e) => write!(f, "embedding: {e}"),
            Self::Model(e) => write!(f, "model: {e}"),
            Self::Param(e) => write!(f, "checkpoint: {e}"),
            Self::Io(m) => write!(f, "io: {m}"),
            Self::NonFiniteLoss { step, loss } => {
                write!(f, "non-finite loss {loss} at step {step}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<EmbedError> for TrainError {
    fn from(e: EmbedError) -> Self {
        Self::Embed(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<ParamError> for TrainError {
    fn from(e: ParamError) -> Self {
        Self::Param(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// When set, the rate is cosine-annealed from `lr` down to this value
    /// over the run. Adam's effective step stays near the rate, so a
    /// constant rate leaves the model orbiting the optimum at that radius;
    /// annealing lets short runs actually settle.
    pub final_lr: Option<f64>,
    pub weight_decay: f64,
    pub max_steps: usize,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    /// Published optimizer settings with a desk-scale step count.
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            batch_size: 64,
            lr: 1e-4,
            final_lr: None,
            weight_decay: 1e-4,
            max_steps: 5000,
            checkpoint_every: 1000,
            log_every: 50,
            seed,
            out_dir: out_dir.into(),
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.final_lr {
            None => self.lr,
            Some(f) => {
                let span = (self.max_steps.max(2) - 1) as f64;
                let t = (step - 1) as f64 / span;
                f + 0.5 * (self.lr - f) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Everything eval needs alongside the raw parameter buffers: the exact
/// architecture plus the dataset statistics the model was normalized against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub dataset: DatasetSidecar,
    pub steps_trained: usize,
    pub final_loss: Option<f64>,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".json");
    checkpoint.with_file_name(name)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: Option<f64>,
    /// Rows as logged to the CSV: (step, loss).
    pub losses: Vec<(usize, f64)>,
    pub skipped_batches: usize,
    pub checkpoint_path: PathBuf,
    pub checkpoint_checksum: u64,
}

/// Per-trajectory semantic channels as shared slices, embedded once through
/// the pipeline memo. Disabled channels stay empty.
struct PreparedTrajectory {
    task: Vec<Rc<Vec<f32>>>,
    hist: Vec<Rc<Vec<f32>>>,
    strat: Vec<Rc<Vec<f32>>>,
}

fn prepare_trajectories(
    cfg: &ModelConfig,
    data: &LoadedDataset,
    pipeline: &mut SemanticPipeline,
) -> Result<Vec<PreparedTrajectory>, TrainError> {
    let mut out = Vec::with_capacity(data.trajectories.len());
    for traj in &data.trajectories {
        let mut p = PreparedTrajectory {
            task: Vec::new(),
            hist: Vec::new(),
            strat: Vec::new(),
        };
        for texts in &traj.texts {
            if cfg.enabled.task {
                p.task.push(pipeline.embed(&texts.task)?);
            }
            if cfg.enabled.history {
                p.hist.push(pipeline.embed(&texts.history)?);
            }
            if cfg.enabled.strategy {
                p.strat.push(pipeline.embed(&texts.strategy)?);
            }
        }
        out.push(p);
    }
    Ok(out)
}

fn flatten(channel: &[Rc<Vec<f32>>]) -> Vec<f32> {
    let mut flat = Vec::with_capacity(channel.len() * channel.first().map_or(0, |v| v.len()));
    for v in channel {
        flat.extend_from_slice(v);
    }
    flat
}

fn window_inputs(traj: &LoadedTrajectory, prepared: &PreparedTrajectory) -> SequenceInputs {
    let steps = traj.texts.len();
    SequenceInputs {
        steps,
        start_step: 0,
        task: flatten(&prepared.task),
        hist: flatten(&prepared.hist),
        strat: flatten(&prepared.strat),
        states: traj.states.clone(),
        rtg: traj.rtg.clone(),
        actions: traj.actions.clone(),
        targets: traj.actions.clone(),
        mask: traj.mask.clone(),
    }
}

/// Mean action over unmasked steps; the action head's bias starts here so
/// the optimizer only has to learn deviations, not the output scale itself.
fn masked_mean_action(data: &LoadedDataset) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for traj in &data.trajectories {
        for (a, m) in traj.actions.iter().zip(&traj.mask) {
            sum += (*a as f64) * (*m as f64);
            n += *m as f64;
        }
    }
    if n > 0.0 {
        sum / n
    } else {
        0.0
    }
}

/// FNV-1a over the whole checkpoint file, for determinism checks.
pub fn checkpoint_file_hash(path: &Path) -> Result<u64, TrainError> {
    let bytes = std::fs::read(path)?;
    Ok(fnv1a64(&bytes))
}

/// Mean masked squared error over the whole dataset, dropout off. This is
/// the quantity the memorization check gates on; a single minibatch loss is
/// too noisy to stand in for it.
pub fn dataset_mse<S: Scalar>(
    model: &SemBidModel<S>,
    data: &LoadedDataset,
    pipeline: &mut SemanticPipeline,
) -> Result<f64, TrainError> {
    let prepared = prepare_trajectories(&model.cfg, data, pipeline)?;
    let windows: Vec<SequenceInputs> = data
        .trajectories
        .iter()
        .zip(&prepared)
        .map(|(t, p)| window_inputs(t, p))
        .collect();
    let mut g: Graph<S> = Graph::new(0, false);
    match model.batch_loss(&mut g, &windows)? {
        Some(id) => Ok(g.value(id)[0].to_f64_lossy()),
        None => Ok(0.0),
    }
}

pub fn save_checkpoint<S: Scalar>(
    model: &SemBidModel<S>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<u64, TrainError> {
    model.params.save(path)?;
    let file = std::fs::File::create(meta_path(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), meta)
        .map_err(|e| TrainError::Io(e.to_string()))?;
    checkpoint_file_hash(path)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(SemBidModel<S>, CheckpointMeta), TrainError> {
    let file = std::fs::File::open(meta_path(path))?;
    let meta: CheckpointMeta = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| TrainError::Io(e.to_string()))?;
    let mut model: SemBidModel<S> = SemBidModel::new(meta.model.clone(), 0)?;
    model.params.load(path)?;
    Ok((model, meta))
}

/// The training procedure: sample a batch of trajectories with replacement,
/// build their token windows, minimize the masked action regression loss.
pub fn train_model<S: Scalar>(
    model: &mut SemBidModel<S>,
    data: &LoadedDataset,
    pipeline: &mut SemanticPipeline,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if data.trajectories.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let prepared = prepare_trajectories(&model.cfg, data, pipeline)?;
    let n = data.trajectories.len();

    if let Some(b) = model.head_bias() {
        let mean = masked_mean_action(data);
        model.params.data_mut(b)[0] = S::of_f64(mean);
    }

    let mut opt = AdamW::new(&model.params);
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    let log_path = cfg.out_dir.join("train_log.csv");
    let mut log = csv::Writer::from_path(&log_path).map_err(|e| TrainError::Io(e.to_string()))?;
    log.write_record(["step", "loss", "elapsed_s"])
        .map_err(|e| TrainError::Io(e.to_string()))?;

    let mut batch_rng = stream(cfg.seed, "train-batch", 0);
    let start = Instant::now();
    let mut losses: Vec<(usize, f64)> = Vec::new();
    let mut skipped = 0usize;
    let mut last_loss: Option<f64> = None;

    for step in 1..=cfg.max_steps {
        let batch: Vec<SequenceInputs> = (0..cfg.batch_size)
            .map(|_| {
                let i = batch_rng.random_range(0..n);
                window_inputs(&data.trajectories[i], &prepared[i])
            })
            .collect();

        let graph_seed = stream_seed(cfg.seed, "train-dropout", step as u64);
        let mut g: Graph<S> = Graph::new(graph_seed, true);
        let loss_id = match model.batch_loss(&mut g, &batch)? {
            Some(id) => id,
            None => {
                eprintln!("warning: step {step}: every sampled step masked, batch skipped");
                skipped += 1;
                continue;
            }
        };
        let loss = g.value(loss_id)[0].to_f64_lossy();
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step, loss });
        }
        model.params.zero_grads();
        g.backward(loss_id).map_err(ModelError::from)?;
        g.flush_grads(&mut model.params);
        opt.lr = cfg.lr_at(step);
        opt.step(&mut model.params);
        last_loss = Some(loss);

        if step == 1 || step == cfg.max_steps || step % cfg.log_every == 0 {
            let elapsed = start.elapsed().as_secs_f64();
            log.write_record([
                step.to_string(),
                format!("{loss:.6}"),
                format!("{elapsed:.3}"),
            ])
            .map_err(|e| TrainError::Io(e.to_string()))?;
            losses.push((step, loss));
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.max_steps {
            let meta = CheckpointMeta {
                model: model.cfg.clone(),
                dataset: data.sidecar.clone(),
                steps_trained: step,
                final_loss: last_loss,
            };
            let path = cfg.out_dir.join(format!("checkpoint_step{step}.bin"));
            save_checkpoint(model, &meta, &path)?;
        }
    }
    log.flush().map_err(|e| TrainError::Io(e.to_string()))?;

    let meta = CheckpointMeta {
        model: model.cfg.clone(),
        dataset: data.sidecar.clone(),
        steps_trained: cfg.max_steps,
        final_loss: last_loss,
    };
    let final_path = cfg.out_dir.join("checkpoint_final.bin");
    let checksum = save_checkpoint(model, &meta, &final_path)?;

    Ok(TrainReport {
        steps: cfg.max_steps,
        final_loss: last_loss,
        losses,
        skipped_batches: skipped,
        checkpoint_path: final_path,
        checkpoint_checksum: checksum,
    })
}
