//! Deformable convolution (offsets only, one deformable group).
//!
//! Offset layout: for a `kh x kw` kernel the offset tensor has `2*kh*kw`
//! channels, tap-major (`tap = ky*kw + kx`), with `dy` at channel `2*tap`
//! and `dx` at `2*tap + 1`, in pixel units. Samples that fall outside the
//! image read zero.

use std::rc::Rc;

use super::conv::{check_weight_bias, columns_forward, columns_input_grad, columns_param_grads, image_dims, out_shape};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

const OUTSIDE: usize = usize::MAX;

/// Bilinear footprint of one sampling point: corners (y0,x0), (y0,x0+1),
/// (y0+1,x0), (y0+1,x0+1) as flat plane indices, `OUTSIDE` when off-image.
#[derive(Clone, Copy)]
struct Footprint<T> {
    idx: [usize; 4],
    ly: T,
    lx: T,
}

impl<T: Real> Footprint<T> {
    fn at(py: T, px: T, h: usize, w: usize) -> Self {
        let y0 = py.floor();
        let x0 = px.floor();
        let (ly, lx) = (py - y0, px - x0);
        let y0 = y0.to_isize().unwrap_or(isize::MIN / 2);
        let x0 = x0.to_isize().unwrap_or(isize::MIN / 2);
        let flat = |y: isize, x: isize| {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                y as usize * w + x as usize
            } else {
                OUTSIDE
            }
        };
        Footprint {
            idx: [flat(y0, x0), flat(y0, x0 + 1), flat(y0 + 1, x0), flat(y0 + 1, x0 + 1)],
            ly,
            lx,
        }
    }

    fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.ly) * (one - self.lx),
            (one - self.ly) * self.lx,
            self.ly * (one - self.lx),
            self.ly * self.lx,
        ]
    }

    fn corners(&self, plane: &[T]) -> [T; 4] {
        self.idx.map(|i| if i == OUTSIDE { T::zero() } else { plane[i] })
    }

    fn sample(&self, plane: &[T]) -> T {
        let v = self.corners(plane);
        let wt = self.weights();
        (0..4).fold(T::zero(), |acc, j| acc + wt[j] * v[j])
    }

    /// `(d sample / d py, d sample / d px)`.
    fn slopes(&self, plane: &[T]) -> (T, T) {
        let [v00, v01, v10, v11] = self.corners(plane);
        let one = T::one();
        let dy = (one - self.lx) * (v10 - v00) + self.lx * (v11 - v01);
        let dx = (one - self.ly) * (v01 - v00) + self.ly * (v11 - v10);
        (dy, dx)
    }
}

/// Stride-1, "same"-padded deformable convolution.
///
/// `x` is `(C,H,W)` or `(B,C,H,W)`, `weight` `(O,C,kh,kw)` with odd
/// kernel extents, `offsets` `(2*kh*kw,H,W)` (batched like `x`).
/// Differentiable w.r.t. input, weight, bias and offsets.
pub fn deformable_conv2d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    offsets: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (b, c, h, w, batched) = image_dims("deformable_conv2d", xv.shape())?;
    let wv = weight.value();
    let bv = bias.map(|b| b.value());
    let (o, kh, kw) = check_weight_bias("deformable_conv2d", c, &wv, bv.as_deref())?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape("deformable_conv2d", format!("kernel {kh}x{kw} must be odd")));
    }
    let taps = kh * kw;
    let ov = offsets.value();
    let want = out_shape(batched, b, 2 * taps, h, w);
    if ov.shape() != want.as_slice() {
        return Err(Error::shape(
            "deformable_conv2d",
            format!("offsets {:?}, expected {want:?}", ov.shape()),
        ));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    let ck = c * taps;

    // One footprint per (batch, tap, position), shared by all channels.
    let mut prints = Vec::with_capacity(b * taps * hw);
    for bi in 0..b {
        let off = &ov.data()[bi * 2 * taps * hw..(bi + 1) * 2 * taps * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let tap = ky * kw + kx;
                let (dy, dx) = (&off[2 * tap * hw..], &off[(2 * tap + 1) * hw..]);
                for oy in 0..h {
                    for ox in 0..w {
                        let p = oy * w + ox;
                        let py = T::from_usize(oy + ky).unwrap() - T::from_usize(ph).unwrap() + dy[p];
                        let px = T::from_usize(ox + kx).unwrap() - T::from_usize(pw).unwrap() + dx[p];
                        prints.push(Footprint::at(py, px, h, w));
                    }
                }
            }
        }
    }

    let mut cols = vec![T::zero(); b * ck * hw];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &xv.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for tap in 0..taps {
                let fp = &prints[(bi * taps + tap) * hw..(bi * taps + tap + 1) * hw];
                let row = &mut cols[(bi * ck + ci * taps + tap) * hw..(bi * ck + ci * taps + tap + 1) * hw];
                for (dst, f) in row.iter_mut().zip(fp) {
                    *dst = f.sample(plane);
                }
            }
        }
    }
    let out = columns_forward(&wv, bv.as_deref(), &cols, b, ck, hw);
    let value = Tensor::from_parts(out_shape(batched, b, o, h, w), out);

    let cols = Rc::new(cols);
    let w_shape = wv.shape().to_vec();
    let off_shape = ov.shape().to_vec();
    let has_bias = bias.is_some();
    let mut parents = vec![x, weight];
    parents.extend(bias);
    parents.push(offsets);
    x.tape().record(value, &parents, move |g, needs| {
        let gd = g.data();
        let need_x = needs[0];
        let need_off = needs[needs.len() - 1];
        let need_b = has_bias && needs[2];
        let (gw, gb) = columns_param_grads(gd, &cols, &w_shape, b, ck, hw, needs[1], need_b);

        let mut gx = need_x.then(|| Tensor::zeros(xv.shape()));
        let mut goff = need_off.then(|| Tensor::zeros(&off_shape));
        if need_x || need_off {
            let mut dcols = vec![T::zero(); ck * hw];
            for bi in 0..b {
                columns_input_grad(gd, &wv, bi, ck, hw, &mut dcols);
                for ci in 0..c {
                    let plane_at = (bi * c + ci) * hw;
                    let plane = &xv.data()[plane_at..plane_at + hw];
                    for tap in 0..taps {
                        let fp = &prints[(bi * taps + tap) * hw..(bi * taps + tap + 1) * hw];
                        let drow = &dcols[(ci * taps + tap) * hw..(ci * taps + tap + 1) * hw];
                        if let Some(gx) = gx.as_mut() {
                            let gplane = &mut gx.data_mut()[plane_at..plane_at + hw];
                            for (f, &d) in fp.iter().zip(drow) {
                                let wt = f.weights();
                                for j in 0..4 {
                                    if f.idx[j] != OUTSIDE {
                                        gplane[f.idx[j]] += wt[j] * d;
                                    }
                                }
                            }
                        }
                        if let Some(goff) = goff.as_mut() {
                            let base = bi * 2 * taps * hw;
                            let (gy, gxo) = goff.data_mut()[base + 2 * tap * hw..base + (2 * tap + 2) * hw].split_at_mut(hw);
                            for (p, (f, &d)) in fp.iter().zip(drow).enumerate() {
                                let (sy, sx) = f.slopes(plane);
                                gy[p] += sy * d;
                                gxo[p] += sx * d;
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![gx, gw];
        if has_bias {
            out.push(gb);
        }
        out.push(goff);
        out
    })
}
