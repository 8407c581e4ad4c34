use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor, Var};

/// `(batch, channels, height, width)` of a 3-d or 4-d image tensor, plus
/// whether it carried a batch axis.
pub(crate) fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(Error::shape(op, format!("expected (C,H,W) or (B,C,H,W), got {shape:?}"))),
    }
}

pub(crate) fn out_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `(C,H,W)` image into a `(C*kh*kw, Ho*Wo)` column matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw = g.positions();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * hw;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

/// Adjoint of [`im2col`]: scatter-adds columns back onto the image.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let hw = g.positions();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * hw;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_weight_bias<T: Real>(
    op: &'static str,
    c: usize,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize)> {
    let [o, ci, kh, kw] = *weight.shape() else {
        return Err(Error::shape(op, format!("weight must be (O,C,kh,kw), got {:?}", weight.shape())));
    };
    if ci != c {
        return Err(Error::shape(op, format!("input has {c} channels, weight expects {ci}")));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::shape(op, format!("bias {:?} for {o} output channels", b.shape())));
        }
    }
    Ok((o, kh, kw))
}

/// Runs `out_b = W * cols_b + bias` for each batch item.
pub(crate) fn columns_forward<T: Real>(
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cols: &[T],
    batch: usize,
    ck: usize,
    hw: usize,
) -> Vec<T> {
    let o = weight.shape()[0];
    let mut out = vec![T::zero(); batch * o * hw];
    for bi in 0..batch {
        let dst = &mut out[bi * o * hw..(bi + 1) * o * hw];
        gemm(false, false, o, hw, ck, T::one(), weight.data(), &cols[bi * ck * hw..], T::zero(), dst);
        if let Some(b) = bias {
            for (oc, row) in dst.chunks_mut(hw).enumerate() {
                let bv = b.data()[oc];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Weight and bias gradients shared by plain and deformable convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn columns_param_grads<T: Real>(
    g: &[T],
    cols: &[T],
    weight_shape: &[usize],
    batch: usize,
    ck: usize,
    hw: usize,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let o = weight_shape[0];
    let gw = need_w.then(|| {
        let mut gw = Tensor::zeros(weight_shape);
        for bi in 0..batch {
            gemm(
                false,
                true,
                o,
                ck,
                hw,
                T::one(),
                &g[bi * o * hw..],
                &cols[bi * ck * hw..],
                T::one(),
                gw.data_mut(),
            );
        }
        gw
    });
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); o];
        for bi in 0..batch {
            for (oc, acc) in gb.iter_mut().enumerate() {
                let start = (bi * o + oc) * hw;
                *acc += g[start..start + hw].iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        Tensor::from_parts(vec![o], gb)
    });
    (gw, gb)
}

/// Column-space gradient `W^T * g_b` for batch item `bi`.
pub(crate) fn columns_input_grad<T: Real>(
    g: &[T],
    weight: &Tensor<T>,
    bi: usize,
    ck: usize,
    hw: usize,
    out: &mut [T],
) {
    let o = weight.shape()[0];
    gemm(true, false, ck, hw, o, T::one(), weight.data(), &g[bi * o * hw..], T::zero(), out);
}

/// 2-d cross-correlation with zero padding.
///
/// `x` is `(C,H,W)` or `(B,C,H,W)`, `weight` is `(O,C,kh,kw)`, `bias` is
/// `(O)`. Lowered to im2col + GEMM; differentiable in all three.
pub fn conv2d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    let xv = x.value();
    let (b, c, h, w, batched) = image_dims("conv2d", xv.shape())?;
    let wv = weight.value();
    let bv = bias.map(|b| b.value());
    let (o, kh, kw) = check_weight_bias("conv2d", c, &wv, bv.as_deref())?;
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded {h}x{w}")));
    }
    let geom = ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    };
    let (ck, hw) = (geom.taps(), geom.positions());
    let mut cols = vec![T::zero(); b * ck * hw];
    for bi in 0..b {
        im2col(&xv.data()[bi * c * h * w..(bi + 1) * c * h * w], &geom, &mut cols[bi * ck * hw..(bi + 1) * ck * hw]);
    }
    let out = columns_forward(&wv, bv.as_deref(), &cols, b, ck, hw);
    let value = Tensor::from_parts(out_shape(batched, b, o, geom.ho, geom.wo), out);

    let cols = Rc::new(cols);
    let x_shape = xv.shape().to_vec();
    let w_shape = wv.shape().to_vec();
    drop(xv);
    let mut parents = vec![x, weight];
    parents.extend(bias);
    x.tape().record(value, &parents, move |g, needs| {
        let gd = g.data();
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(&x_shape);
            let mut dcols = vec![T::zero(); ck * hw];
            for bi in 0..b {
                columns_input_grad(gd, &wv, bi, ck, hw, &mut dcols);
                col2im(&dcols, &geom, &mut gx.data_mut()[bi * c * h * w..(bi + 1) * c * h * w]);
            }
            gx
        });
        let need_b = needs.get(2).copied().unwrap_or(false);
        let (gw, gb) = columns_param_grads(gd, &cols, &w_shape, b, ck, hw, needs[1], need_b);
        let mut out = vec![gx, gw];
        if needs.len() == 3 {
            out.push(gb);
        }
        out
    })
}
