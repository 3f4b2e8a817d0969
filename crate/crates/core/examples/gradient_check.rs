//! Checks backward passes against central finite differences: one conv
//! layer, then the whole network under the combined loss.

use metricunet::losses::{check_model_gradients, LossConfig};
use metricunet::network::{build_metric_unet, NetworkSpec};
use metricunet::sampling::{sample_tuples, LabelMap, SamplingConfig, Strategy, TupleBatch};
use metricunet::tensor::gradcheck::{gradient_check, GradCheckOptions};
use metricunet::tensor::ops::{conv2d, sum};
use metricunet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> metricunet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = GradCheckOptions::default();

    let x = random(&[2, 3, 8, 8], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let err = gradient_check(|t| Ok(sum(&conv2d(&t[0], &t[1], Some(&t[2]), 1, 1)?)), &[x, w, b], &opts)?;
    println!("conv2d: max relative error {err:.2e}");

    let model = build_metric_unet::<f64>(&NetworkSpec::default().with_base_width(8), 1)?;
    let input = random(&[1, 3, 16, 16], &mut rng);
    let labels: Vec<u8> = (0..256).map(|k| u8::from((k / 16_usize).abs_diff(8) + (k % 16).abs_diff(8) < 5)).collect();
    let map = LabelMap::new(&labels, 16, 16)?;
    let prob = model.predict(&input)?.prob;
    let cfg = LossConfig {
        strategies: Strategy::ALL.iter().map(|&s| SamplingConfig::new(s)).collect(),
        use_pair_term: true,
        ..LossConfig::default()
    };
    let tuples = cfg
        .strategies
        .iter()
        .map(|s| sample_tuples(&prob, &map, 0, s).map(|t| vec![t]))
        .collect::<metricunet::Result<Vec<Vec<TupleBatch>>>>()?;
    let report = check_model_gradients(
        &model,
        &input,
        &labels,
        &tuples,
        &cfg,
        &GradCheckOptions {
            eps: 1e-6,
            max_coords_per_input: Some(4),
            ..opts
        },
    )?;
    println!(
        "whole network: max relative error {:.2e} over {} coordinates",
        report.max_rel_error, report.coords_checked
    );
    Ok(())
}
