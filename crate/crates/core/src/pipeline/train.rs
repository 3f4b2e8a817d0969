//! The SGD loop shared by both stages.

use std::io::Write;
use std::time::Instant;

use rand::Rng;

use super::config::TrainConfig;
use super::infer::{infer, INPUT_SCALE};
use crate::data::{materialize, sample_patch_origins, Mask, PatchOrigin, Volume};
use crate::error::{Error, Result};
use crate::losses::{route_gradients_sep, total_loss, LossBreakdown, LossConfig};
use crate::metrics::dsc;
use crate::network::ModelState;
use crate::rng::{derive_seed, stream};
use crate::sampling::{sample_tuples, LabelMap, SamplingConfig, TupleBatch};
use crate::tensor::optim::{poly_lr, sgd_step};
use crate::tensor::{Element, Tensor};

/// A training image: intensities on 0..255 and its labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainImage<'a> {
    pub volume: &'a Volume,
    pub mask: &'a Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Element> {
    /// Final model, or the best validation checkpoint when validation ran.
    pub model: ModelState<T>,
    pub log: Vec<LogRow>,
    /// `(iteration, mean validation DSC)` at every checkpoint.
    pub validation: Vec<(usize, f64)>,
    /// Iteration whose parameters were kept.
    pub selected_iter: usize,
    /// Wall time of each iteration; kept out of the log so logs stay
    /// reproducible.
    pub iter_seconds: Vec<f64>,
}

/// Mean DSC of whole-volume predictions.
pub fn mean_dsc<T: Element>(model: &ModelState<T>, images: &[TrainImage<'_>]) -> Result<f64> {
    let mut sum = 0.0;
    for im in images {
        sum += dsc(im.mask, &infer(model, im.volume)?)?;
    }
    Ok(sum / images.len().max(1) as f64)
}

fn sampler_seed(s: &SamplingConfig, base: u64, iter: usize, t: usize, b: usize) -> u64 {
    derive_seed(s.seed, &[base, iter as u64, t as u64, b as u64])
}

/// Trains `model` on random slice-stack patches of `images`.
///
/// Every iteration draws `batch_size` patches from a fixed pool of
/// `patches_per_image` positions per image, runs the configured samplers on
/// the batch's own foreground probabilities, and takes one SGD step on the
/// combined loss at the poly-decayed rate. When `validation` is non-empty
/// and `val_interval > 0` the parameters with the best mean validation DSC
/// are returned.
pub fn train<T: Element>(
    mut model: ModelState<T>,
    images: &[TrainImage<'_>],
    validation: &[TrainImage<'_>],
    cfg: &TrainConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    loss.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    let channels = model.spec().in_channels;
    let size = cfg.patch_size;
    let mut pool: Vec<PatchOrigin> = Vec::with_capacity(images.len() * cfg.patches_per_image);
    for (i, im) in images.iter().enumerate() {
        if im.volume.dims != im.mask.dims {
            return Err(Error::dim("train", format!("image {i}: volume {:?} vs mask {:?}", im.volume.dims, im.mask.dims)));
        }
        pool.extend(sample_patch_origins(im.volume.dims, i, cfg.patches_per_image, size, channels, cfg.seed)?);
    }

    let plane = size * size;
    let mut log = Vec::with_capacity(cfg.max_iters);
    let mut iter_seconds = Vec::with_capacity(cfg.max_iters);
    let mut validation_log = Vec::new();
    let mut best: Option<(f64, usize, ModelState<T>)> = None;
    for iter in 0..cfg.max_iters {
        let started = Instant::now();
        let mut rng = stream(cfg.seed, &[iter as u64, 0x6261_7463_68]);
        let mut input = Vec::with_capacity(cfg.batch_size * channels * plane);
        let mut labels = Vec::with_capacity(cfg.batch_size * plane);
        for _ in 0..cfg.batch_size {
            let o = pool[rng.random_range(0..pool.len())];
            let p = materialize(images[o.case].volume, images[o.case].mask, o, size, channels)?;
            input.extend(p.input.iter().map(|&v| T::from_f64(f64::from(v * INPUT_SCALE))));
            labels.extend_from_slice(&p.label);
        }
        let x = Tensor::new(&[cfg.batch_size, channels, size, size], input)?;
        let out = model.forward(&x)?;

        let prob: Vec<f64> = out.prob.iter().map(|v| v.as_f64()).collect();
        let mut tuples: Vec<Vec<TupleBatch>> = Vec::with_capacity(loss.strategies.len());
        for (t, s) in loss.strategies.iter().enumerate() {
            let mut per_image = Vec::with_capacity(cfg.batch_size);
            for b in 0..cfg.batch_size {
                let lm = LabelMap::new(&labels[b * plane..(b + 1) * plane], size, size)?;
                let sc = SamplingConfig {
                    seed: sampler_seed(s, cfg.seed, iter, t, b),
                    ..s.clone()
                };
                per_image.push(sample_tuples(&prob[b * plane..(b + 1) * plane], &lm, b, &sc)?);
            }
            tuples.push(per_image);
        }

        let (parts, breakdown) = total_loss(&out.logits, &labels, &out.embedding, &tuples, loss)?;
        if !breakdown.total.is_finite() {
            return Err(Error::invalid(format!("loss diverged at iteration {iter}: {}", breakdown.total)));
        }
        let grads = route_gradients_sep(&model, &parts, loss.sep_mode);
        let lr = poly_lr(iter, cfg.max_iters, cfg.base_lr, cfg.poly_power)?;
        sgd_step(model.params_mut(), &grads, lr)?;
        iter_seconds.push(started.elapsed().as_secs_f64());
        log.push(LogRow {
            iter,
            lr,
            loss: breakdown,
        });

        let done = iter + 1;
        if cfg.val_interval > 0 && !validation.is_empty() && (done % cfg.val_interval == 0 || done == cfg.max_iters) {
            let score = mean_dsc(&model, validation)?;
            validation_log.push((done, score));
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, done, model.clone()));
            }
        }
    }
    let (model, selected_iter) = match best {
        Some((_, it, m)) => (m, it),
        None => (model, cfg.max_iters),
    };
    Ok(TrainOutcome {
        model,
        log,
        validation: validation_log,
        selected_iter,
        iter_seconds,
    })
}

/// `iter,lr,ce,metric_<sampler>...,tuples_<sampler>...,total`.
pub fn write_log_csv<W: Write>(mut out: W, log: &[LogRow], strategies: &[SamplingConfig]) -> std::io::Result<()> {
    let names: Vec<&str> = strategies.iter().map(|s| s.strategy.name()).collect();
    let mut header = vec!["iter".to_string(), "lr".into(), "ce".into()];
    header.extend(names.iter().map(|n| format!("metric_{n}")));
    header.extend(names.iter().map(|n| format!("tuples_{n}")));
    header.push("total".into());
    writeln!(out, "{}", header.join(","))?;
    for r in log {
        let mut row = vec![r.iter.to_string(), format!("{:e}", r.lr), format!("{:e}", r.loss.ce)];
        row.extend(r.loss.metric_per_strategy.iter().map(|v| format!("{v:e}")));
        row.extend(r.loss.tuple_counts.iter().map(ToString::to_string));
        row.push(format!("{:e}", r.loss.total));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            acc += v;
            if i >= w {
                acc -= values[i - w];
            }
            acc / (i + 1).min(w) as f64
        })
        .collect()
}
