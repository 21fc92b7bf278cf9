//! Offline dataset generation, container serialization, and CSV export.

pub mod dataset;
pub mod io;

pub use dataset::{BehaviorPolicy, Dataset, DatasetConfig, StepTexts, Trajectory};
pub use io::{
    export_csv, load_dataset, make_sidecar, read_dataset, save_dataset, sidecar_path, DataError,
    DatasetSidecar, LoadedDataset, LoadedTrajectory, DATASET_MAGIC, DATASET_VERSION,
};
