//! Differentiable operations.
//!
//! Layer kernels live in submodules; the small elementwise and reduction
//! helpers used to assemble losses are defined here.

mod conv;
mod loss;
mod norm;
mod pool;

pub use conv::{conv2d, conv_transpose2d};
pub use loss::{softmax_cross_entropy, softmax_foreground};
pub use norm::{batch_norm2d, BatchNormConfig, NormMode, RunningStats};
pub use pool::max_pool2d;

use super::{Backward, Element, Tensor};
use crate::error::{Error, Result};

struct AddBackward<T: Element> {
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Element> Backward<T> for AddBackward<T> {
    fn name(&self) -> &'static str {
        "add"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

/// Elementwise `a + b` for tensors of identical shape.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "add",
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Box::new(AddBackward {
            a: a.clone(),
            b: b.clone(),
        }),
    ))
}

struct ScaleBackward<T: Element> {
    x: Tensor<T>,
    factor: T,
}

impl<T: Element> Backward<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.x.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.factor).collect())]
    }
}

pub fn mul_scalar<T: Element>(x: &Tensor<T>, factor: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * factor).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        Box::new(ScaleBackward {
            x: x.clone(),
            factor,
        }),
    )
}

struct WeightedSumBackward<T: Element> {
    x: Tensor<T>,
    weights: Option<Vec<T>>,
}

impl<T: Element> Backward<T> for WeightedSumBackward<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.x.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let g = g[0];
        let grad = match &self.weights {
            Some(w) => w.iter().map(|&w| w * g).collect(),
            None => vec![g; self.x.numel()],
        };
        vec![Some(grad)]
    }
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().copied().sum();
    Tensor::from_op(
        vec![],
        vec![s],
        Box::new(WeightedSumBackward {
            x: x.clone(),
            weights: None,
        }),
    )
}

/// `sum_i w_i x_i` with fixed weights; handy for projecting a tensor onto a
/// scalar in gradient checks.
pub fn weighted_sum<T: Element>(x: &Tensor<T>, weights: &[T]) -> Result<Tensor<T>> {
    if weights.len() != x.numel() {
        return Err(Error::dim(
            "weighted_sum",
            format!("{} weights for {} elements", weights.len(), x.numel()),
        ));
    }
    let s = x.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
    Ok(Tensor::from_op(
        vec![],
        vec![s],
        Box::new(WeightedSumBackward {
            x: x.clone(),
            weights: Some(weights.to_vec()),
        }),
    ))
}

struct ReluBackward<T: Element> {
    x: Tensor<T>,
}

impl<T: Element> Backward<T> for ReluBackward<T> {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.x.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let grad = self
            .x
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(grad)]
    }
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_op(x.shape().to_vec(), data, Box::new(ReluBackward { x: x.clone() }))
}

struct ConcatBackward<T: Element> {
    a: Tensor<T>,
    b: Tensor<T>,
    outer: usize,
    a_inner: usize,
    b_inner: usize,
}

impl<T: Element> Backward<T> for ConcatBackward<T> {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut ga = Vec::with_capacity(self.a.numel());
        let mut gb = Vec::with_capacity(self.b.numel());
        let row = self.a_inner + self.b_inner;
        for o in 0..self.outer {
            let chunk = &g[o * row..(o + 1) * row];
            ga.extend_from_slice(&chunk[..self.a_inner]);
            gb.extend_from_slice(&chunk[self.a_inner..]);
        }
        vec![Some(ga), Some(gb)]
    }
}

/// Concatenate along `axis`; all other dimensions must agree.
pub fn concat<T: Element>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || axis >= sa.len() {
        return Err(Error::dim(
            "concat",
            format!("cannot join {sa:?} and {sb:?} on axis {axis}"),
        ));
    }
    for (d, (&x, &y)) in sa.iter().zip(sb).enumerate() {
        if d != axis && x != y {
            return Err(Error::dim(
                "concat",
                format!("axis {d} differs ({x} vs {y}) when joining on axis {axis}"),
            ));
        }
    }
    let outer: usize = sa[..axis].iter().product();
    let inner: usize = sa[axis + 1..].iter().product();
    let a_inner = sa[axis] * inner;
    let b_inner = sb[axis] * inner;
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * a_inner..(o + 1) * a_inner]);
        data.extend_from_slice(&b.data()[o * b_inner..(o + 1) * b_inner]);
    }
    let mut shape = sa.to_vec();
    shape[axis] += sb[axis];
    Ok(Tensor::from_op(
        shape,
        data,
        Box::new(ConcatBackward {
            a: a.clone(),
            b: b.clone(),
            outer,
            a_inner,
            b_inner,
        }),
    ))
}
