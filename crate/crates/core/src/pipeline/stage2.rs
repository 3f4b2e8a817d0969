//! Fine segmentation on fixed-size regions.

use super::config::{ExperimentConfig, RegionSource};
use super::dataset::PreparedCase;
use super::infer::infer;
use super::stage1::{extract_region, localize, LocalizationResult, Region};
use super::train::{train, TrainImage, TrainOutcome};
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{evaluate, MetricsReport};
use crate::network::{build_metric_unet, ModelState};
use crate::tensor::Element;

/// A case's stage-2 region and, for detector-centered regions, how it was
/// found.
#[derive(Debug, Clone)]
pub struct CaseRegion {
    pub id: String,
    pub region: Region,
    pub localization: Option<LocalizationResult>,
}

/// Regions for `cases`, centered as `source` dictates.
pub fn build_regions(
    cases: &[&PreparedCase],
    cfg: &ExperimentConfig,
    source: RegionSource,
    detector: Option<&ModelState<f32>>,
) -> Result<Vec<CaseRegion>> {
    cases
        .iter()
        .map(|case| {
            let (center, localization) = match source {
                RegionSource::Reference => (case.reference_center, None),
                RegionSource::GroundTruth => (case.mask.centroid().unwrap_or(case.reference_center), None),
                RegionSource::Detector => {
                    let det = detector.ok_or_else(|| {
                        Error::invalid("detector-centered regions need a trained stage-1 detector")
                    })?;
                    let loc = localize(det, case, cfg)?;
                    (loc.final_centroid, Some(loc))
                }
            };
            Ok(CaseRegion {
                id: case.id.clone(),
                region: extract_region(case, center, cfg.region_size)?,
                localization,
            })
        })
        .collect()
}

fn images(regions: &[CaseRegion]) -> Vec<TrainImage<'_>> {
    regions
        .iter()
        .map(|r| TrainImage {
            volume: &r.region.volume,
            mask: &r.region.mask,
        })
        .collect()
}

/// Trains the segmentation network with `loss` (normally `cfg.loss`).
pub fn train_stage2(
    train_regions: &[CaseRegion],
    val_regions: &[CaseRegion],
    cfg: &ExperimentConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome<f32>> {
    let model = build_metric_unet::<f32>(&cfg.network, cfg.train.seed)?;
    train(model, &images(train_regions), &images(val_regions), &cfg.train, loss)
}

#[derive(Debug, Clone)]
pub struct CaseEvaluation {
    pub id: String,
    pub report: MetricsReport,
    pub prediction: Mask,
}

/// Predicts every region and scores it against its labels.
pub fn evaluate_regions<T: Element>(
    model: &ModelState<T>,
    regions: &[CaseRegion],
) -> Result<Vec<CaseEvaluation>> {
    regions
        .iter()
        .map(|r| {
            let prediction = infer(model, &r.region.volume)?;
            Ok(CaseEvaluation {
                id: r.id.clone(),
                report: evaluate(&r.region.mask, &prediction, r.region.volume.spacing)?,
                prediction,
            })
        })
        .collect()
}
