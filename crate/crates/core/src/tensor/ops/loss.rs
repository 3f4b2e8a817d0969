use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct CrossEntropyBackward<T: Element> {
    logits: Tensor<T>,
    /// softmax probabilities minus the one-hot target, already divided by
    /// the number of voxels
    residual: Vec<T>,
}

impl<T: Element> Backward<T> for CrossEntropyBackward<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.logits.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let g = g[0];
        vec![Some(self.residual.iter().map(|&r| r * g).collect())]
    }
}

/// Two-class softmax cross-entropy averaged over every voxel of the batch.
///
/// `logits` is `[N, 2, H, W]`; `labels` holds `N*H*W` values in `{0, 1}`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[u8]) -> Result<Tensor<T>> {
    let [n, c, h, w] = logits.dims4("softmax_cross_entropy")?;
    if c != 2 {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("expected 2 classes on axis 1, got {c}"),
        ));
    }
    let hw = h * w;
    if labels.len() != n * hw {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels for {} voxels", labels.len(), n * hw),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label value {bad} is not in {{0, 1}}")));
    }
    let z = logits.data();
    let count = (n * hw) as f64;
    let mut residual = vec![T::zero(); z.len()];
    let mut total = 0.0f64;
    for s in 0..n {
        for p in 0..hw {
            let i0 = (s * 2) * hw + p;
            let i1 = i0 + hw;
            let (a, b) = (z[i0].as_f64(), z[i1].as_f64());
            let mx = a.max(b);
            let lse = mx + ((a - mx).exp() + (b - mx).exp()).ln();
            let label = labels[s * hw + p];
            total += lse - if label == 1 { b } else { a };
            let p1 = (b - lse).exp();
            let p0 = (a - lse).exp();
            residual[i0] = T::from_f64((p0 - f64::from(u8::from(label == 0))) / count);
            residual[i1] = T::from_f64((p1 - f64::from(label)) / count);
        }
    }
    Ok(Tensor::from_op(
        vec![],
        vec![T::from_f64(total / count)],
        Box::new(CrossEntropyBackward {
            logits: logits.clone(),
            residual,
        }),
    ))
}

/// Foreground (channel 1) softmax probability of `[N, 2, H, W]` logits,
/// laid out as `[N, H, W]`.
pub fn softmax_foreground<T: Element>(logits: &Tensor<T>) -> Result<Vec<T>> {
    let [n, c, h, w] = logits.dims4("softmax_foreground")?;
    if c != 2 {
        return Err(Error::dim(
            "softmax_foreground",
            format!("expected 2 classes on axis 1, got {c}"),
        ));
    }
    let hw = h * w;
    let z = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for s in 0..n {
        for p in 0..hw {
            let d = z[(s * 2) * hw + p] - z[(s * 2 + 1) * hw + p];
            out.push(T::one() / (T::one() + d.exp()));
        }
    }
    Ok(out)
}
