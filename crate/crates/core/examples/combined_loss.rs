//! One forward pass through a small network and the breakdown of the
//! combined loss, with and without separated gradient routing.

use metricunet::losses::{route_gradients_sep, total_loss, LossConfig};
use metricunet::network::{build_metric_unet, ModelState, NetworkSpec};
use metricunet::sampling::{sample_tuples, LabelMap, SamplingConfig, Strategy};
use metricunet::tensor::Tensor;

fn main() -> metricunet::Result<()> {
    let mut model = build_metric_unet::<f32>(&NetworkSpec::default().with_base_width(8), 3)?;
    let (h, w) = (32, 32);
    let input = Tensor::new(&[1, 3, h, w], (0..3 * h * w).map(|i| ((i * 37) % 101) as f32 / 101.0).collect())?;
    let labels: Vec<u8> = (0..h * w).map(|k| u8::from((k / w).abs_diff(16).pow(2) + (k % w).abs_diff(14).pow(2) < 60)).collect();
    let out = model.forward(&input)?;
    let prob: Vec<f64> = out.prob.iter().map(|&p| f64::from(p)).collect();
    let map = LabelMap::new(&labels, h, w)?;

    for sep in [false, true] {
        let cfg = LossConfig {
            strategies: [Strategy::FocalHard, Strategy::Contour].map(SamplingConfig::new).to_vec(),
            use_pair_term: true,
            sep_mode: sep,
            ..LossConfig::default()
        };
        let tuples = cfg
            .strategies
            .iter()
            .map(|s| sample_tuples(&prob, &map, 0, s).map(|t| vec![t]))
            .collect::<metricunet::Result<Vec<_>>>()?;
        let (parts, b) = total_loss(&out.logits, &labels, &out.embedding, &tuples, &cfg)?;
        let g = route_gradients_sep(&model, &parts, sep);
        let norm = |head: bool| -> f64 {
            model
                .params()
                .iter()
                .filter(|p| p.trainable && ModelState::<f32>::is_head_param(&p.name) == head)
                .flat_map(|p| g.get_or_zeros(&p.tensor))
                .map(|v| f64::from(v).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        println!(
            "sep={sep}: ce {:.4}, metric {:?}, triplets {:?}, total {:.4}; |grad| trunk {:.3e}, head {:.3e}",
            b.ce, b.metric_per_strategy, b.tuple_counts, b.total, norm(false), norm(true)
        );
    }
    Ok(())
}
