//! Draws anchors with each sampler from one slice of a synthetic volume and
//! writes the tuples as CSV.

use metricunet::data::{generate_dataset, SceneDistribution};
use metricunet::sampling::{focal_anchor_pool, extract_contour, sample_tuples, write_tuples_csv, LabelMap, SamplingConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, _, mask) = generate_dataset(&SceneDistribution::desk(), 1, 4)?.remove(0);
    let z = mask.centroid().map_or(mask.dims[0] / 2, |c| c[0].round() as usize);
    let [_, h, w] = mask.dims;
    let labels = LabelMap::new(mask.slice(z), h, w)?;
    // a flat prediction: every foreground voxel is hard
    let prob = vec![0.5; h * w];

    println!("slice {z}: {} foreground, {} on the contour, {} hard",
        labels.with_label(1).len(),
        extract_contour(&labels).len(),
        focal_anchor_pool(&prob, &labels, 0.1)?.len());
    let mut batches = Vec::new();
    for s in Strategy::ALL {
        let t = sample_tuples(&prob, &labels, 0, &SamplingConfig { m: 2, ..SamplingConfig::new(s) })?;
        assert!(t.labels_valid(&labels));
        println!("{:<10} {} anchors, {} triplets", s.name(), t.anchors.len(), t.triplet_count());
        batches.push(t);
    }
    let path = std::env::temp_dir().join("tuples.csv");
    write_tuples_csv(std::fs::File::create(&path)?, &batches)
        ?;
    println!("tuples written to {}", path.display());
    Ok(())
}
