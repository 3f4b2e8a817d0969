//! Short stage-2 training run with focal-hard and contour sampling, then
//! test-split evaluation and a training-log CSV.

use metricunet::network::NetworkSpec;
use metricunet::pipeline::train::write_log_csv;
use metricunet::pipeline::{build_regions, evaluate_regions, train_stage2, ExperimentConfig, PreparedData, RegionSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let mut cfg = ExperimentConfig::desk().with_seed(2);
    cfg.dataset.num_cases = 20;
    cfg.network = NetworkSpec::default().with_base_width(8);
    cfg.train.max_iters = iters;
    cfg.train.batch_size = 8;
    cfg.train.val_interval = 100;
    let data = PreparedData::synthetic(&cfg.dataset)?;
    let regions = |idx: &[usize]| build_regions(&data.subset(idx), &cfg, RegionSource::Reference, None);
    let (train_r, val_r, test_r) = (regions(&data.split.train)?, regions(&data.split.val)?, regions(&data.split.test)?);

    let out = train_stage2(&train_r, &val_r, &cfg, &cfg.loss)?;
    for (it, dsc) in &out.validation {
        println!("iteration {it}: validation DSC {dsc:.4}");
    }
    println!("kept the weights from iteration {}", out.selected_iter);
    for e in evaluate_regions(&out.model, &test_r)? {
        println!("{}: DSC {:.4}, ASD {:?} mm", e.id, e.report.dsc, e.report.asd_mm.map(|v| (v * 100.0).round() / 100.0));
    }
    let path = std::env::temp_dir().join("train_log.csv");
    let file = std::fs::File::create(&path)?;
    write_log_csv(file, &out.log, &cfg.loss.strategies)?;
    println!("log written to {}", path.display());
    Ok(())
}
