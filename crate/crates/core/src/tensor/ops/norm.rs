use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

struct BatchNormBackward<T: Element> {
    input: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    n: usize,
    c: usize,
    hw: usize,
    train: bool,
}

impl<T: Element> Backward<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm2d"
    }

    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone(), self.gamma.clone(), self.beta.clone()]
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, c, hw) = (self.n, self.c, self.hw);
        let m = (n * hw) as f64;
        let mut gx = vec![T::zero(); self.input.numel()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sg, mut sgx) = (0.0f64, 0.0f64);
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    sg += g[i].as_f64();
                    sgx += (g[i] * self.xhat[i]).as_f64();
                }
            }
            gbeta[ch] = T::from_f64(sg);
            ggamma[ch] = T::from_f64(sgx);
            let scale = self.gamma.data()[ch] * self.inv_std[ch];
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    gx[i] = if self.train {
                        let centred = g[i].as_f64() - sg / m - self.xhat[i].as_f64() * sgx / m;
                        scale * T::from_f64(centred)
                    } else {
                        scale * g[i]
                    };
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

/// Batch normalisation over the `N, H, W` axes of `[N, C, H, W]`.
///
/// In train mode the batch statistics normalise the input and the updated
/// running statistics are returned alongside the output; in eval mode the
/// supplied running statistics are used and `None` is returned.
pub fn batch_norm2d<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: NormMode,
    cfg: BatchNormConfig,
) -> Result<(Tensor<T>, Option<RunningStats<T>>)> {
    let [n, c, h, w] = input.dims4("batch_norm2d")?;
    for (what, len) in [
        ("gamma", gamma.numel()),
        ("beta", beta.numel()),
        ("running mean", stats.mean.len()),
        ("running var", stats.var.len()),
    ] {
        if len != c {
            return Err(Error::dim(
                "batch_norm2d",
                format!("{what} has {len} entries for {c} channels (axis 1)"),
            ));
        }
    }
    let hw = h * w;
    let m = n * hw;
    if mode == NormMode::Train && m == 0 {
        return Err(Error::dim("batch_norm2d", "empty batch in train mode"));
    }
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];
    let mut new_stats = stats.clone();
    for ch in 0..c {
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut sum = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    sum += x[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    ss += x[off..off + hw]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = ss / m as f64;
                let unbiased = if m > 1 { ss / (m - 1) as f64 } else { var };
                let mo = cfg.momentum;
                new_stats.mean[ch] =
                    T::from_f64((1.0 - mo) * stats.mean[ch].as_f64() + mo * mean);
                new_stats.var[ch] =
                    T::from_f64((1.0 - mo) * stats.var[ch].as_f64() + mo * unbiased);
                (mean, var)
            }
            NormMode::Eval => (stats.mean[ch].as_f64(), stats.var[ch].as_f64()),
        };
        let istd = 1.0 / (var + cfg.eps).sqrt();
        inv_std[ch] = T::from_f64(istd);
        let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
        let mean_t = T::from_f64(mean);
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean_t) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gm * xh + bt;
            }
        }
    }
    let train = mode == NormMode::Train;
    let y = Tensor::from_op(
        vec![n, c, h, w],
        out,
        Box::new(BatchNormBackward {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
            n,
            c,
            hw,
            train,
        }),
    );
    Ok((y, train.then_some(new_stats)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradient_check, GradCheckOptions};
    use crate::tensor::ops::weighted_sum;
    use crate::testutil::random_tensor;

    #[test]
    fn eval_identity() {
        let x = random_tensor(&[2, 3, 4, 4], 1);
        let (y, stats) = batch_norm2d(
            &x,
            &Tensor::full(&[3], 1.0),
            &Tensor::zeros(&[3]),
            &RunningStats::new(3),
            NormMode::Eval,
            BatchNormConfig { eps: 0.0, ..Default::default() },
        )
        .unwrap();
        assert!(stats.is_none());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn train_normalises_each_channel() {
        let x = random_tensor(&[3, 2, 5, 5], 2);
        let (y, stats) = batch_norm2d(
            &x,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            &RunningStats::new(2),
            NormMode::Train,
            BatchNormConfig { eps: 0.0, ..Default::default() },
        )
        .unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|s| y.data()[(s * 2 + ch) * 25..(s * 2 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 75.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 75.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
        let stats = stats.unwrap();
        // momentum 0.1 from (0, 1)
        assert!(stats.mean.iter().all(|m| m.abs() < 0.2));
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor::<f64>::new(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (_, stats) = batch_norm2d(
            &x,
            &Tensor::full(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &RunningStats::new(1),
            NormMode::Train,
            BatchNormConfig::default(),
        )
        .unwrap();
        let stats = stats.unwrap();
        // mean 3, unbiased var 14/3
        assert!((stats.mean[0] - 0.3).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_channel_is_finite() {
        let x = Tensor::<f64>::full(&[2, 1, 3, 3], 4.0);
        let (y, _) = batch_norm2d(
            &x,
            &Tensor::full(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &RunningStats::new(1),
            NormMode::Train,
            BatchNormConfig::default(),
        )
        .unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random_tensor(&[2, 3, 4, 4], 3);
        let gamma = random_tensor(&[3], 4);
        let beta = random_tensor(&[3], 5);
        let proj = random_tensor(&[2, 3, 4, 4], 6);
        for mode in [NormMode::Train, NormMode::Eval] {
            let stats = RunningStats {
                mean: vec![0.1, -0.2, 0.3],
                var: vec![0.5, 1.5, 2.0],
            };
            let err = gradient_check(
                |t| {
                    let (y, _) =
                        batch_norm2d(&t[0], &t[1], &t[2], &stats, mode, BatchNormConfig::default())?;
                    weighted_sum(&y, proj.data())
                },
                &[x.clone(), gamma.clone(), beta.clone()],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(err < 1e-4, "{mode:?}: {err}");
        }
    }
}
