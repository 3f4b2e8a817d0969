//! Voxel metric loss, cross-entropy and the combined multi-task objective.
//!
//! The metric loss works on the raw embedding vectors (no normalisation) at
//! sampled coordinates. For every anchor `a` with positives `P` and
//! negatives `N` it averages
//!
//! ```text
//! triplet: max(0, |xa - xp|^2 - |xa - xn|^2 + sigma)   for p in P, n in N
//! pair:    max(0, |xa - xp|^2 - epsilon)              for p in P
//! ```
//!
//! and returns `mean(triplet) + beta * mean(pair)`; the pair term is only
//! present when enabled. Hinges at exactly zero contribute no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelState;
use crate::sampling::{SamplingConfig, TupleBatch};
use crate::tensor::gradcheck::{gradient_check_report, GradCheckOptions, GradCheckReport};
use crate::tensor::ops::{add, mul_scalar, softmax_cross_entropy, NormMode};
use crate::tensor::{Backward, Element, Gradients, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Triplet margin.
    pub sigma: f64,
    /// Positive-pair slack.
    pub epsilon: f64,
    /// Pair-term weight.
    pub beta: f64,
    /// Metric-loss weight in the total.
    pub lambda: f64,
    /// One entry per sampler; may be empty (plain cross-entropy).
    pub strategies: Vec<SamplingConfig>,
    /// Cross-entropy trains only the head; metric loss only the trunk.
    pub sep_mode: bool,
    pub use_pair_term: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sigma: 0.7,
            epsilon: 0.01,
            beta: 0.1,
            lambda: 0.01,
            strategies: Vec::new(),
            sep_mode: false,
            use_pair_term: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        self.strategies.iter().try_for_each(SamplingConfig::validate)
    }

    pub fn metric_params(&self) -> MetricParams {
        MetricParams {
            sigma: self.sigma,
            epsilon: self.epsilon,
            beta: self.beta,
            use_pair_term: self.use_pair_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub sigma: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub use_pair_term: bool,
}

impl Default for MetricParams {
    fn default() -> Self {
        LossConfig::default().metric_params()
    }
}

struct MetricBackward<T: Element> {
    embedding: Tensor<T>,
    /// d(loss)/d(embedding), dense.
    grad: Vec<T>,
}

impl<T: Element> Backward<T> for MetricBackward<T> {
    fn name(&self) -> &'static str {
        "metric_loss"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.embedding.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let g = g[0];
        vec![Some(self.grad.iter().map(|&v| v * g).collect())]
    }
}

fn check_coord(b: &TupleBatch, c: (usize, usize), dims: [usize; 4], role: &str, a: usize) -> Result<()> {
    let [n, _, h, w] = dims;
    if b.image_index >= n || c.0 >= h || c.1 >= w {
        return Err(Error::Index(format!(
            "{role} {c:?} of anchor {a} in image {} is outside a {n}x{h}x{w} embedding",
            b.image_index
        )));
    }
    Ok(())
}

/// Metric loss over all tuples of all images; an empty tuple set gives an
/// exact zero with a zero gradient.
pub fn metric_loss<T: Element>(
    embedding: &Tensor<T>,
    tuples: &[TupleBatch],
    p: MetricParams,
) -> Result<Tensor<T>> {
    let dims = embedding.dims4("metric_loss")?;
    let [_, d, h, w] = dims;
    let hw = h * w;
    let mut n_triplets = 0usize;
    let mut n_pairs = 0usize;
    for b in tuples {
        if b.positives.len() != b.anchors.len() || b.negatives.len() != b.anchors.len() {
            return Err(Error::invalid(format!(
                "image {}: {} anchors, {} positive lists, {} negative lists",
                b.image_index,
                b.anchors.len(),
                b.positives.len(),
                b.negatives.len()
            )));
        }
        for (a, &anchor) in b.anchors.iter().enumerate() {
            check_coord(b, anchor, dims, "anchor", a)?;
            for &c in &b.positives[a] {
                check_coord(b, c, dims, "positive", a)?;
            }
            for &c in &b.negatives[a] {
                check_coord(b, c, dims, "negative", a)?;
            }
            n_triplets += b.positives[a].len() * b.negatives[a].len();
            n_pairs += b.positives[a].len();
        }
    }

    let x = embedding.data();
    // channel-strided offset of (image, i, j) for channel 0
    let base = |img: usize, (i, j): (usize, usize)| img * d * hw + i * w + j;
    let dist = |u: usize, v: usize| -> f64 {
        (0..d)
            .map(|c| {
                let diff = x[u + c * hw].as_f64() - x[v + c * hw].as_f64();
                diff * diff
            })
            .sum()
    };

    let mut grad = vec![0.0f64; x.len()];
    // adds coef * d|x_u - x_v|^2 into grad
    let push = |grad: &mut [f64], u: usize, v: usize, coef: f64| {
        for c in 0..d {
            let diff = x[u + c * hw].as_f64() - x[v + c * hw].as_f64();
            grad[u + c * hw] += 2.0 * coef * diff;
            grad[v + c * hw] -= 2.0 * coef * diff;
        }
    };

    let mut triplet = 0.0f64;
    let mut pair = 0.0f64;
    let wt = if n_triplets > 0 { 1.0 / n_triplets as f64 } else { 0.0 };
    let wp = if p.use_pair_term && n_pairs > 0 {
        p.beta / n_pairs as f64
    } else {
        0.0
    };
    for b in tuples {
        for (a, &anchor) in b.anchors.iter().enumerate() {
            let ua = base(b.image_index, anchor);
            for &pos in &b.positives[a] {
                let up = base(b.image_index, pos);
                let dap = dist(ua, up);
                for &neg in &b.negatives[a] {
                    let un = base(b.image_index, neg);
                    let hinge = dap - dist(ua, un) + p.sigma;
                    if hinge > 0.0 {
                        triplet += hinge;
                        push(&mut grad, ua, up, wt);
                        push(&mut grad, ua, un, -wt);
                    }
                }
                if p.use_pair_term {
                    let hinge = dap - p.epsilon;
                    if hinge > 0.0 {
                        pair += hinge;
                        push(&mut grad, ua, up, wp);
                    }
                }
            }
        }
    }
    let mut value = triplet * wt;
    if p.use_pair_term && n_pairs > 0 {
        value += p.beta * pair / n_pairs as f64;
    }
    Ok(Tensor::from_op(
        vec![],
        vec![T::from_f64(value)],
        Box::new(MetricBackward {
            embedding: embedding.clone(),
            grad: grad.into_iter().map(T::from_f64).collect(),
        }),
    ))
}

/// Graph handles of the individual loss terms.
#[derive(Debug, Clone)]
pub struct LossParts<T: Element> {
    pub ce: Tensor<T>,
    /// One unweighted metric loss per configured strategy.
    pub metric: Vec<Tensor<T>>,
    /// `lambda * sum(metric)`, absent when `lambda == 0` or no strategy runs.
    pub weighted_metric: Option<Tensor<T>>,
    pub total: Tensor<T>,
}

/// Scalar values of one evaluation of the total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub metric_per_strategy: Vec<f64>,
    pub tuple_counts: Vec<usize>,
    pub total: f64,
}

/// `ce + lambda * sum_t metric_t`.
///
/// `tuples[t]` holds the batches sampled by the `t`-th configured strategy.
/// With `lambda == 0` the total is the cross-entropy tensor itself, so
/// values and gradients match a plain cross-entropy run bit for bit.
pub fn total_loss<T: Element>(
    logits: &Tensor<T>,
    labels: &[u8],
    embedding: &Tensor<T>,
    tuples: &[Vec<TupleBatch>],
    cfg: &LossConfig,
) -> Result<(LossParts<T>, LossBreakdown)> {
    cfg.validate()?;
    if tuples.len() != cfg.strategies.len() {
        return Err(Error::invalid(format!(
            "{} tuple sets for {} strategies",
            tuples.len(),
            cfg.strategies.len()
        )));
    }
    let ce = softmax_cross_entropy(logits, labels)?;
    let params = cfg.metric_params();
    let metric = tuples
        .iter()
        .map(|t| metric_loss(embedding, t, params))
        .collect::<Result<Vec<_>>>()?;
    let tuple_counts = tuples
        .iter()
        .map(|t| t.iter().map(TupleBatch::triplet_count).sum())
        .collect();

    let weighted_metric = match metric.split_first() {
        Some((first, rest)) if cfg.lambda != 0.0 => {
            let mut s = first.clone();
            for m in rest {
                s = add(&s, m)?;
            }
            Some(mul_scalar(&s, T::from_f64(cfg.lambda)))
        }
        _ => None,
    };
    let total = match &weighted_metric {
        Some(wm) => add(&ce, wm)?,
        None => ce.clone(),
    };
    let breakdown = LossBreakdown {
        ce: ce.item().as_f64(),
        metric_per_strategy: metric.iter().map(|m| m.item().as_f64()).collect(),
        tuple_counts,
        total: total.item().as_f64(),
    };
    Ok((
        LossParts {
            ce,
            metric,
            weighted_metric,
            total,
        },
        breakdown,
    ))
}

/// Gradients for one optimisation step.
///
/// Without separation this is the plain backward pass of the total loss.
/// With separation the cross-entropy gradient is kept only for head
/// parameters and the weighted metric gradient only for trunk parameters.
pub fn route_gradients_sep<T: Element>(
    model: &ModelState<T>,
    parts: &LossParts<T>,
    sep_mode: bool,
) -> Gradients<T> {
    if !sep_mode {
        return parts.total.backward();
    }
    let mut out = Gradients::default();
    let keep = |out: &mut Gradients<T>, g: &Gradients<T>, head: bool| {
        for p in model.params() {
            if ModelState::<T>::is_head_param(&p.name) == head {
                if let Some(v) = g.get(&p.tensor) {
                    out.insert(p.tensor.id(), v.to_vec());
                }
            }
        }
    };
    keep(&mut out, &parts.ce.backward(), true);
    if let Some(wm) = &parts.weighted_metric {
        keep(&mut out, &wm.backward(), false);
    }
    out
}

/// Gradient check of the total loss through a whole network, in f64.
///
/// The checked inputs are the network input followed by every trainable
/// parameter in model order. Batch norm runs in train mode on a fresh copy
/// for each evaluation, so running statistics never leak between the
/// perturbed passes. `tuples` are fixed up front: sampling is not
/// differentiable.
pub fn check_model_gradients(
    model: &ModelState<f64>,
    input: &Tensor<f64>,
    labels: &[u8],
    tuples: &[Vec<TupleBatch>],
    cfg: &LossConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let names: Vec<String> = model.params().iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let mut inputs = vec![input.clone()];
    inputs.extend(names.iter().map(|n| model.param(n).map(|p| p.tensor.detach())).collect::<Result<Vec<_>>>()?);
    let f = |args: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut m = model.clone();
        m.set_mode(NormMode::Train);
        for (name, t) in names.iter().zip(&args[1..]) {
            m.set_param(name, t.clone())?;
        }
        let out = m.forward(&args[0])?;
        Ok(total_loss(&out.logits, labels, &out.embedding, tuples, cfg)?.0.total)
    };
    gradient_check_report(f, &inputs, opts)
}
