use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[C, H, W]` into `[C*kh*kw, oh*ow]`.
fn im2col<T: Element>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[C, H, W]`.
fn col2im<T: Element>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dBackward<T: Element> {
    input: Tensor<T>,
    weight: Tensor<T>,
    bias: Option<Tensor<T>>,
    n: usize,
    f: usize,
    geo: Geometry,
}

impl<T: Element> Backward<T> for Conv2dBackward<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn parents(&self) -> Vec<Tensor<T>> {
        let mut p = vec![self.input.clone(), self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }

    fn backward(&self, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let g = &self.geo;
        let (rows, ncols, f) = (g.rows(), g.cols(), self.f);
        let in_sz = g.c * g.h * g.w;
        let need_x = self.input.requires_grad();
        let need_w = self.weight.requires_grad();
        let w = self.weight.data();
        let x = self.input.data();

        let mut gx = need_x.then(|| vec![T::zero(); self.input.numel()]);
        let mut gw = need_w.then(|| vec![T::zero(); self.weight.numel()]);
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * ncols]
        };
        let mut dcols = if need_x && !g.is_pointwise() {
            vec![T::zero(); rows * ncols]
        } else {
            Vec::new()
        };

        for s in 0..self.n {
            let gy_s = &gy[s * f * ncols..(s + 1) * f * ncols];
            if let Some(gw) = gw.as_mut() {
                let x_s = &x[s * in_sz..(s + 1) * in_sz];
                let cols_s: &[T] = if g.is_pointwise() {
                    x_s
                } else {
                    im2col(x_s, g, &mut cols);
                    &cols
                };
                // gW[F, R] += gY[F, P] * cols[R, P]^T
                T::gemm(
                    f,
                    ncols,
                    rows,
                    T::one(),
                    gy_s,
                    ncols as isize,
                    1,
                    cols_s,
                    1,
                    ncols as isize,
                    T::one(),
                    gw,
                    rows as isize,
                    1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gx_s = &mut gx[s * in_sz..(s + 1) * in_sz];
                // dcols[R, P] = W[F, R]^T * gY[F, P]
                if g.is_pointwise() {
                    T::gemm(
                        rows,
                        f,
                        ncols,
                        T::one(),
                        w,
                        1,
                        rows as isize,
                        gy_s,
                        ncols as isize,
                        1,
                        T::zero(),
                        gx_s,
                        ncols as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        rows,
                        f,
                        ncols,
                        T::one(),
                        w,
                        1,
                        rows as isize,
                        gy_s,
                        ncols as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        ncols as isize,
                        1,
                    );
                    col2im(&dcols, g, gx_s);
                }
            }
        }

        let gb = self.bias.as_ref().map(|_| {
            let mut gb = vec![T::zero(); f];
            for s in 0..self.n {
                for (fi, acc) in gb.iter_mut().enumerate() {
                    let start = (s * f + fi) * ncols;
                    *acc = *acc + gy[start..start + ncols].iter().copied().sum();
                }
            }
            gb
        });

        let mut out = vec![gx, gw];
        if self.bias.is_some() {
            out.push(gb);
        }
        out
    }
}

/// 2-D cross-correlation of `input [N,C,H,W]` with `weight [F,C,kh,kw]`.
///
/// Output is `[N, F, H', W']` with `H' = (H + 2p - kh)/s + 1`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("conv2d")?;
    let [f, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::dim(
            "conv2d",
            format!("input has {c} channels (axis 1) but weight expects {wc} (axis 1)"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (axes 2,3)"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?} does not match {f} filters (axis 0)", b.shape()),
            ));
        }
    }
    let geo = Geometry {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    };
    let (rows, ncols) = (geo.rows(), geo.cols());
    let in_sz = c * h * w;
    let mut out = vec![T::zero(); n * f * ncols];
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * ncols]
    };
    for s in 0..n {
        let x_s = &input.data()[s * in_sz..(s + 1) * in_sz];
        let out_s = &mut out[s * f * ncols..(s + 1) * f * ncols];
        if let Some(b) = bias {
            for (fi, &bv) in b.data().iter().enumerate() {
                out_s[fi * ncols..(fi + 1) * ncols].fill(bv);
            }
        }
        let cols_s: &[T] = if geo.is_pointwise() {
            x_s
        } else {
            im2col(x_s, &geo, &mut cols);
            &cols
        };
        T::gemm(
            f,
            rows,
            ncols,
            T::one(),
            weight.data(),
            rows as isize,
            1,
            cols_s,
            ncols as isize,
            1,
            if bias.is_some() { T::one() } else { T::zero() },
            out_s,
            ncols as isize,
            1,
        );
    }
    Ok(Tensor::from_op(
        vec![n, f, geo.oh, geo.ow],
        out,
        Box::new(Conv2dBackward {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            n,
            f,
            geo,
        }),
    ))
}

struct ConvTransposeBackward<T: Element> {
    input: Tensor<T>,
    weight: Tensor<T>,
    bias: Option<Tensor<T>>,
    n: usize,
    c: usize,
    f: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl<T: Element> ConvTransposeBackward<T> {
    /// Rearranges `[F, H*k, W*k]` into the `[F*k*k, H*W]` column layout.
    fn gather(&self, g: &[T], cols: &mut [T]) {
        let (k, h, w) = (self.k, self.h, self.w);
        let ow = w * k;
        let hw = h * w;
        for fi in 0..self.f {
            for a in 0..k {
                for b in 0..k {
                    let row = (fi * k + a) * k + b;
                    for i in 0..h {
                        for j in 0..w {
                            cols[row * hw + i * w + j] =
                                g[fi * h * k * ow + (i * k + a) * ow + j * k + b];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Backward<T> for ConvTransposeBackward<T> {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn parents(&self) -> Vec<Tensor<T>> {
        let mut p = vec![self.input.clone(), self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }

    fn backward(&self, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let (c, f, k) = (self.c, self.f, self.k);
        let hw = self.h * self.w;
        let rows = f * k * k;
        let out_sz = f * hw * k * k;
        let need_x = self.input.requires_grad();
        let need_w = self.weight.requires_grad();
        let mut gx = need_x.then(|| vec![T::zero(); self.input.numel()]);
        let mut gw = need_w.then(|| vec![T::zero(); self.weight.numel()]);
        let mut cols = vec![T::zero(); rows * hw];
        for s in 0..self.n {
            self.gather(&gy[s * out_sz..(s + 1) * out_sz], &mut cols);
            if let Some(gx) = gx.as_mut() {
                // gX[C, P] = W[C, R] * cols[R, P]
                T::gemm(
                    c,
                    rows,
                    hw,
                    T::one(),
                    self.weight.data(),
                    rows as isize,
                    1,
                    &cols,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut gx[s * c * hw..(s + 1) * c * hw],
                    hw as isize,
                    1,
                );
            }
            if let Some(gw) = gw.as_mut() {
                // gW[C, R] += X[C, P] * cols[R, P]^T
                T::gemm(
                    c,
                    hw,
                    rows,
                    T::one(),
                    &self.input.data()[s * c * hw..(s + 1) * c * hw],
                    hw as isize,
                    1,
                    &cols,
                    1,
                    hw as isize,
                    T::one(),
                    gw,
                    rows as isize,
                    1,
                );
            }
        }
        let gb = self.bias.as_ref().map(|_| {
            let plane = hw * k * k;
            let mut gb = vec![T::zero(); f];
            for s in 0..self.n {
                for (fi, acc) in gb.iter_mut().enumerate() {
                    let start = (s * f + fi) * plane;
                    *acc = *acc + gy[start..start + plane].iter().copied().sum();
                }
            }
            gb
        });
        let mut out = vec![gx, gw];
        if self.bias.is_some() {
            out.push(gb);
        }
        out
    }
}

/// Transposed convolution with kernel size equal to stride (no overlap).
///
/// `input [N,C,H,W]`, `weight [C,F,k,k]` gives `[N, F, H*k, W*k]`.
pub fn conv_transpose2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("conv_transpose2d")?;
    let [wc, f, kh, kw] = weight.dims4("conv_transpose2d")?;
    if wc != c {
        return Err(Error::dim(
            "conv_transpose2d",
            format!("input has {c} channels (axis 1) but weight expects {wc} (axis 0)"),
        ));
    }
    if kh != stride || kw != stride || stride == 0 {
        return Err(Error::dim(
            "conv_transpose2d",
            format!("kernel {kh}x{kw} must equal stride {stride}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("bias shape {:?} does not match {f} filters", b.shape()),
            ));
        }
    }
    let k = stride;
    let hw = h * w;
    let rows = f * k * k;
    let (oh, ow) = (h * k, w * k);
    let mut out = vec![T::zero(); n * f * oh * ow];
    let mut cols = vec![T::zero(); rows * hw];
    for s in 0..n {
        // cols[R, P] = W[C, R]^T * X[C, P]
        T::gemm(
            rows,
            c,
            hw,
            T::one(),
            weight.data(),
            1,
            rows as isize,
            &input.data()[s * c * hw..(s + 1) * c * hw],
            hw as isize,
            1,
            T::zero(),
            &mut cols,
            hw as isize,
            1,
        );
        let out_s = &mut out[s * f * oh * ow..(s + 1) * f * oh * ow];
        for fi in 0..f {
            let bv = bias.map_or(T::zero(), |b| b.data()[fi]);
            for a in 0..k {
                for b in 0..k {
                    let row = (fi * k + a) * k + b;
                    for i in 0..h {
                        for j in 0..w {
                            out_s[fi * oh * ow + (i * k + a) * ow + j * k + b] =
                                cols[row * hw + i * w + j] + bv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, f, oh, ow],
        out,
        Box::new(ConvTransposeBackward {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            n,
            c,
            f,
            h,
            w,
            k,
        }),
    ))
}
