use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct MaxPoolBackward<T: Element> {
    input: Tensor<T>,
    argmax: Vec<u32>,
}

impl<T: Element> Backward<T> for MaxPoolBackward<T> {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }
    fn parents(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); self.input.numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            gx[src as usize] = gx[src as usize] + gv;
        }
        vec![Some(gx)]
    }
}

/// 2x2 max pooling with stride 2.
///
/// Ties go to the first maximal element of the window in row-major order,
/// which receives the whole gradient.
pub fn max_pool2d<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("max_pool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "max_pool2d",
            format!("spatial size {h}x{w} must be even on axes 2 and 3"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Box::new(MaxPoolBackward {
            input: input.clone(),
            argmax,
        }),
    ))
}
