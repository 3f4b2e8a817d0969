//! The two-stage framework: coarse localization on downsampled volumes,
//! fixed-size region crops, and segmentation training with online tuple
//! sampling, plus the configuration grid, sweeps and the commands behind
//! the CLI.

pub mod ablation;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod infer;
pub mod overlay;
pub mod stage1;
pub mod stage2;
pub mod train;

pub use ablation::{run_grid, GridPoint, GridRow, SweepParam, Variant, VARIANTS};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use commands::Workspace;
pub use config::{DatasetConfig, ExperimentConfig, Profile, RegionSource, Stage1Config, TrainConfig};
pub use dataset::{PreparedCase, PreparedData, Split};
pub use infer::{infer, infer_padded, pad_plane};
pub use stage1::{localize, train_stage1, LocalizationResult, Region};
pub use stage2::{build_regions, evaluate_regions, train_stage2, CaseRegion};
pub use train::{train, LogRow, TrainImage, TrainOutcome};
