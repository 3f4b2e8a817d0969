//! Layer table and parameter counts of the segmentation and detection
//! networks.

use metricunet::network::{build_detection_unet, build_metric_unet, NetworkSpec};

fn main() -> metricunet::Result<()> {
    let spec = NetworkSpec::default();
    println!("{:<16} {:<16} {:>6} {:>6} {:>6} {:>10}", "layer", "kind", "in", "out", "kernel", "params");
    for l in spec.layers() {
        println!(
            "{:<16} {:<16} {:>6} {:>6} {:>6} {:>10}",
            l.name,
            format!("{:?}", l.kind),
            l.in_channels,
            l.out_channels,
            l.kernel,
            l.parameter_count()
        );
    }
    let seg = build_metric_unet::<f32>(&spec, 0)?;
    let det = build_detection_unet::<f32>(&NetworkSpec::detection(), 0)?;
    println!("segmentation network: {} trainable parameters, embedding width {}", seg.parameter_count(), spec.embedding_channels());
    println!("detection network:    {} trainable parameters", det.parameter_count());
    Ok(())
}
