//! Coarse localization: a light detector on downsampled volumes, averaged
//! with the landmark reference to center a fixed-size region.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Stage1Config};
use super::dataset::PreparedCase;
use super::infer::{infer, pad_plane, unpad_mask};
use super::train::{train, TrainImage, TrainOutcome};
use crate::data::volume::index;
use crate::data::{crop_mask, crop_region, downsample, downsample_mask, region_offset, Dims, Mask, Volume};
use crate::error::Result;
use crate::losses::LossConfig;
use crate::network::{build_detection_unet, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// Center of mass of the coarse mask in full-resolution voxels; `None`
    /// when the detector found nothing.
    pub predicted_centroid: Option<[f64; 3]>,
    pub reference_center: [f64; 3],
    pub final_centroid: [f64; 3],
    /// First voxel of the region, clipped so the region stays in bounds.
    pub crop_offset: Dims,
}

/// A stage-2 region with its labels.
#[derive(Debug, Clone)]
pub struct Region {
    pub volume: Volume,
    pub mask: Mask,
    pub offset: Dims,
}

/// Downsampled detector input, padded so whole-plane inference and
/// patches of `patch` pixels both fit.
pub fn detector_input(volume: &Volume, cfg: &Stage1Config) -> Result<Volume> {
    let down = downsample(volume, cfg.downsample_factor)?;
    pad_plane(&down, 1 << cfg.detector.depth(), cfg.train.patch_size, 0.0)
}

/// Detector labels on the same padded grid as [`detector_input`].
fn detector_labels(case: &PreparedCase, dims: Dims, factor: usize) -> Result<Mask> {
    let down = downsample_mask(&case.mask, case.volume.spacing, factor)?;
    crop_mask(&down, [0; 3], dims)
}

/// Cross-entropy training of the detector on the given cases.
pub fn train_stage1(cases: &[&PreparedCase], cfg: &ExperimentConfig) -> Result<TrainOutcome<f32>> {
    let s1 = &cfg.stage1;
    let mut inputs = Vec::with_capacity(cases.len());
    for c in cases {
        let v = detector_input(&c.volume, s1)?;
        let m = detector_labels(c, v.dims, s1.downsample_factor)?;
        inputs.push((v, m));
    }
    let images: Vec<TrainImage<'_>> = inputs.iter().map(|(volume, mask)| TrainImage { volume, mask }).collect();
    let model = build_detection_unet::<f32>(&s1.detector, s1.train.seed)?;
    let ce_only = LossConfig {
        strategies: Vec::new(),
        ..cfg.loss.clone()
    };
    train(model, &images, &[], &s1.train, &ce_only)
}

/// Coarse foreground on the downsampled grid (unpadded).
pub fn coarse_mask(detector: &ModelState<f32>, volume: &Volume, cfg: &Stage1Config) -> Result<Mask> {
    let input = detector_input(volume, cfg)?;
    let down_dims = downsample(volume, cfg.downsample_factor)?.dims;
    unpad_mask(&infer(detector, &input)?, down_dims)
}

/// Combines a coarse mask (on the grid downsampled by `factor`) with the
/// reference center. An empty mask falls back to the reference alone.
pub fn combine(coarse: &Mask, factor: usize, reference: [f64; 3], dims: Dims, region: Dims) -> LocalizationResult {
    let predicted_centroid = coarse.centroid().map(|c| c.map(|v| v * factor as f64));
    let final_centroid = match predicted_centroid {
        Some(p) => [0, 1, 2].map(|a| 0.5 * (p[a] + reference[a])),
        None => reference,
    };
    LocalizationResult {
        predicted_centroid,
        reference_center: reference,
        final_centroid,
        crop_offset: region_offset(dims, final_centroid, region),
    }
}

pub fn localize(detector: &ModelState<f32>, case: &PreparedCase, cfg: &ExperimentConfig) -> Result<LocalizationResult> {
    let coarse = coarse_mask(detector, &case.volume, &cfg.stage1)?;
    Ok(combine(
        &coarse,
        cfg.stage1.downsample_factor,
        case.reference_center,
        case.volume.dims,
        cfg.region_size,
    ))
}

/// Region of `size` centered on `center`, padded with 0 (air) past the
/// volume.
pub fn extract_region(case: &PreparedCase, center: [f64; 3], size: Dims) -> Result<Region> {
    let (volume, offset) = crop_region(&case.volume, center, size, 0.0)?;
    let mask = crop_mask(&case.mask, offset, size)?;
    Ok(Region { volume, mask, offset })
}

/// Places `mask` at `offset` in an empty grid of `dims`; voxels falling
/// outside the grid (region padding) are dropped.
pub fn paste_clipped(mask: &Mask, offset: Dims, dims: Dims) -> Mask {
    let mut out = Mask::empty(mask.id.clone(), dims);
    for z in 0..mask.dims[0] {
        for y in 0..mask.dims[1] {
            for x in 0..mask.dims[2] {
                let q = [z + offset[0], y + offset[1], x + offset[2]];
                if (0..3).all(|a| q[a] < dims[a]) {
                    out.data[index(dims, q[0], q[1], q[2])] = mask.at(z, y, x);
                }
            }
        }
    }
    out
}

/// Whether the region starting at `offset` holds every foreground voxel.
pub fn contains_mask(mask: &Mask, offset: Dims, size: Dims) -> bool {
    match mask.bounding_box() {
        None => true,
        Some((lo, hi)) => (0..3).all(|a| lo[a] >= offset[a] && hi[a] <= offset[a] + size[a]),
    }
}
