//! Named parameters, plain SGD and the polynomial learning-rate schedule.

use super::{Element, Gradients, Tensor};
use crate::error::{Error, Result};

/// A named tensor owned by a model. Non-trainable parameters (batch-norm
/// running statistics) are stored the same way but skipped by the optimiser.
#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Self {
        let tensor = if trainable {
            tensor.requiring_grad()
        } else {
            tensor.detach()
        };
        Self {
            name: name.into(),
            tensor,
            trainable,
        }
    }
}

/// `base_lr * (1 - iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base_lr: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::invalid(format!(
            "poly schedule needs 0 <= iter <= max_iter, got {iter}/{max_iter}"
        )));
    }
    if base_lr < 0.0 {
        return Err(Error::invalid(format!("negative learning rate {base_lr}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// `p <- p - lr * g` for every trainable parameter that received a gradient.
///
/// Updated parameters become fresh leaf tensors. Returns how many were
/// updated.
pub fn sgd_step<T: Element>(
    params: &mut [Parameter<T>],
    grads: &Gradients<T>,
    lr: f64,
) -> Result<usize> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::invalid(format!("invalid learning rate {lr}")));
    }
    let lr = T::from_f64(lr);
    let mut updated = 0;
    for p in params.iter_mut().filter(|p| p.trainable) {
        let Some(g) = grads.get(&p.tensor) else {
            continue;
        };
        let data = p
            .tensor
            .data()
            .iter()
            .zip(g)
            .map(|(&w, &g)| w - lr * g)
            .collect();
        p.tensor = Tensor::leaf(p.tensor.shape(), data)?;
        updated += 1;
    }
    Ok(updated)
}
