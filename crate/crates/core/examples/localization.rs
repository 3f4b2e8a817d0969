//! Trains the stage-1 detector briefly and reports where it centers the
//! stage-2 region on held-out cases.
//!
//! `cargo run --release --example localization -- 3000` trains for the
//! desk default length; shorter runs often still predict background
//! everywhere and fall back to the landmark reference.

use metricunet::pipeline::stage1::contains_mask;
use metricunet::pipeline::{localize, train_stage1, ExperimentConfig, PreparedData};

fn main() -> metricunet::Result<()> {
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(600);
    let mut cfg = ExperimentConfig::desk().with_seed(1);
    cfg.dataset.num_cases = 16;
    cfg.dataset.split = [0.75, 0.0, 0.25];
    cfg.stage1.train.max_iters = iters;
    let data = PreparedData::synthetic(&cfg.dataset)?;
    let out = train_stage1(&data.subset(&data.split.train), &cfg)?;
    println!(
        "detector: {iters} iterations, ce {:.3} -> {:.3}",
        out.log[0].loss.ce,
        out.log.last().map_or(f64::NAN, |r| r.loss.ce)
    );
    for case in data.subset(&data.split.test) {
        let loc = localize(&out.model, case, &cfg)?;
        let truth = case.mask.centroid().unwrap_or_default();
        println!(
            "{}: detector {:?}, reference {:?}, truth {:?}, blob inside region: {}",
            case.id,
            loc.predicted_centroid.map(|c| c.map(|v| v.round())),
            loc.reference_center.map(|v| v.round()),
            truth.map(|v| v.round()),
            contains_mask(&case.mask, loc.crop_offset, cfg.region_size)
        );
    }
    Ok(())
}
