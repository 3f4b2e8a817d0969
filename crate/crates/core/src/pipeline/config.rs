//! Experiment configuration: one JSON document drives every command.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dims, SceneDistribution};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::network::NetworkSpec;
use crate::sampling::{SamplingConfig, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// CPU-sized geometry: 64x96x96 volumes, 48^3 regions, 32x32 patches.
    Desk,
    /// Full-size geometry: 128^3 regions, 64x64 patches.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::invalid(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

/// Where the stage-2 region is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    /// Average of the stage-1 prediction and the landmark reference.
    Detector,
    /// Landmark reference center alone.
    Reference,
    /// Ground-truth centroid; only meaningful for diagnostics.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Existing dataset; when absent a synthetic one is generated.
    pub manifest: Option<PathBuf>,
    pub synthetic: SceneDistribution,
    pub num_cases: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Isotropic resampling target in mm; `None` keeps the stored grid.
    pub target_spacing: Option<f64>,
    /// Body crop threshold on the normalized 0..255 scale.
    pub body_threshold: f32,
    /// Landmark (bone) threshold on the normalized 0..255 scale.
    pub landmark_threshold: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synthetic: SceneDistribution::desk(),
            num_cases: 100,
            seed: 0,
            split: [0.7, 0.1, 0.2],
            split_seed: 0,
            target_spacing: Some(1.0),
            body_threshold: 10.0,
            landmark_threshold: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub poly_power: f64,
    pub max_iters: usize,
    /// Initialisation, patch order and sampler streams all derive from it.
    pub seed: u64,
    /// In-plane patch side.
    pub patch_size: usize,
    pub patches_per_image: usize,
    /// Iterations between validation checkpoints; 0 keeps the final model.
    pub val_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 30,
            base_lr: 0.01,
            poly_power: 0.9,
            max_iters: 3000,
            seed: 0,
            patch_size: 32,
            patches_per_image: 500,
            val_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iters == 0 || self.patches_per_image == 0 {
            return Err(Error::invalid("batch_size, max_iters and patches_per_image must be > 0"));
        }
        if !(self.base_lr > 0.0) || !(self.poly_power >= 0.0) {
            return Err(Error::invalid("base_lr must be > 0 and poly_power >= 0"));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub downsample_factor: usize,
    /// Five stacked slices in; widths capped at 32.
    pub detector: NetworkSpec,
    /// Cross-entropy only; `patch_size` refers to the downsampled grid.
    pub train: TrainConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            downsample_factor: 2,
            // narrower than the paper-profile detector; shorter runs leave it
            // stuck predicting background everywhere
            detector: NetworkSpec::detection().with_base_width(16),
            train: TrainConfig {
                batch_size: 8,
                max_iters: 3000,
                patches_per_image: 100,
                val_interval: 0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    /// Samplers live in `loss.strategies`.
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub stage1: Stage1Config,
    pub region_size: Dims,
    pub region_source: RegionSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Focal hard plus contour samplers with the pair term.
fn hcp_loss() -> LossConfig {
    LossConfig {
        strategies: vec![SamplingConfig::new(Strategy::FocalHard), SamplingConfig::new(Strategy::Contour)],
        use_pair_term: true,
        ..LossConfig::default()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            dataset: DatasetConfig::default(),
            network: NetworkSpec::default(),
            loss: hcp_loss(),
            train: TrainConfig::default(),
            stage1: Stage1Config::default(),
            region_size: [48; 3],
            region_source: RegionSource::Detector,
        }
    }

    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            dataset: DatasetConfig {
                synthetic: SceneDistribution::paper(),
                ..desk.dataset
            },
            train: TrainConfig {
                patch_size: 64,
                ..desk.train
            },
            stage1: Stage1Config {
                downsample_factor: 4,
                detector: NetworkSpec::detection(),
                train: TrainConfig {
                    patch_size: 64,
                    ..desk.stage1.train
                },
                ..desk.stage1
            },
            region_size: [128; 3],
            ..desk
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Uses `seed` for data generation, splitting and both training stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.dataset.split_seed = seed;
        self.train.seed = seed;
        self.stage1.train.seed = seed;
        self
    }

    /// Reads a JSON file on top of the defaults of `profile` (or of the
    /// file's own `profile` field, or desk). Missing fields keep defaults.
    pub fn load(path: impl AsRef<Path>, profile: Option<Profile>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: Value = serde_json::from_str(&text)?;
        let profile = match profile {
            Some(p) => p,
            None => match overlay.get("profile") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => Profile::Desk,
            },
        };
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut base, overlay);
        base["profile"] = serde_json::to_value(profile)?;
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.dataset.split;
        if s.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions must be in [0, 1] and sum to 1, got {s:?}")));
        }
        if self.dataset.num_cases == 0 && self.dataset.manifest.is_none() {
            return Err(Error::invalid("num_cases must be > 0"));
        }
        self.network.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.stage1.detector.validate()?;
        self.stage1.train.validate()?;
        if self.stage1.downsample_factor == 0 {
            return Err(Error::invalid("downsample_factor must be >= 1"));
        }
        if self.stage1.detector.in_channels != 5 {
            return Err(Error::invalid("the detector reads 5 stacked slices"));
        }
        for (i, a) in self.loss.strategies.iter().enumerate() {
            if self.loss.strategies[..i].iter().any(|b| b.strategy == a.strategy) {
                return Err(Error::invalid(format!("sampler {} listed twice", a.strategy.name())));
            }
        }
        let p = self.train.patch_size;
        let [rz, ry, rx] = self.region_size;
        if ry < p || rx < p || rz < self.network.in_channels {
            return Err(Error::invalid(format!(
                "region {:?} is smaller than a {p}x{p}x{} patch",
                self.region_size, self.network.in_channels
            )));
        }
        let factor = 1 << self.network.depth();
        if !p.is_multiple_of(factor) || ry % factor != 0 || rx % factor != 0 {
            return Err(Error::invalid(format!(
                "patch size and region in-plane size must be multiples of {factor}"
            )));
        }
        if !self.stage1.train.patch_size.is_multiple_of(1 << self.stage1.detector.depth()) {
            return Err(Error::invalid("stage-1 patch size must be a multiple of the detector's pooling factor"));
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `overlay` replace `base`.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
