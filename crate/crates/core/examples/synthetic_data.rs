//! Generates a few synthetic scenes, runs the preprocessing chain on them
//! and saves one case to disk.

use metricunet::data::{generate_dataset, SceneDistribution};
use metricunet::pipeline::config::DatasetConfig;
use metricunet::pipeline::dataset::prepare_case;

fn main() -> metricunet::Result<()> {
    let cfg = DatasetConfig::default();
    for (spec, volume, mask) in generate_dataset(&SceneDistribution::desk(), 3, 7)? {
        let (lo, hi) = volume.min_max();
        let case = prepare_case(&volume, &mask, &cfg)?;
        println!(
            "{}: {:?} raw in [{lo:.0}, {hi:.0}], blob {} voxels (analytic {:.0}); body crop {:?} at {:?}, landmark center {:?}",
            volume.id,
            volume.dims,
            mask.count(),
            spec.blob.analytic_volume(),
            case.volume.dims,
            case.body_offset,
            case.reference_center.map(|v| v.round()),
        );
    }
    let dir = std::env::temp_dir().join("metricunet-synthetic");
    let cfg = DatasetConfig { num_cases: 2, ..cfg };
    let manifest = metricunet::pipeline::dataset::write_synthetic(&cfg, &dir)?;
    println!("two cases and a manifest written to {}", manifest.display());
    Ok(())
}
