use crate::error::{Error, Result};
use crate::tensor::{Var, Real};

use super::conv::{image_dims, out_shape};

/// `(B, C*r*r, H, W) -> (B, C, r*H, r*W)`; also accepts unbatched input.
///
/// `out[c, h*r + i, w*r + j] = in[c*r*r + i*r + j, h, w]`. Pure index
/// rearrangement, so the round trip with [`pixel_unshuffle`] is exact.
pub fn pixel_shuffle<'t, T: Real>(x: Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let (b, cr, h, w, batched) = image_dims("pixel_shuffle", &x.shape())?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cr} channels not divisible by r^2 = {}", r * r),
        ));
    }
    let c = cr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut index = Vec::with_capacity(b * cr * h * w);
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let ch = ci * r * r + (oy % r) * r + ox % r;
                    index.push(((bi * cr + ch) * h + oy / r) * w + ox / r);
                }
            }
        }
    }
    x.gather(index.into(), &out_shape(batched, b, c, ho, wo))
}

/// Inverse of [`pixel_shuffle`]: `(B, C, r*H, r*W) -> (B, C*r*r, H, W)`.
pub fn pixel_unshuffle<'t, T: Real>(x: Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let (b, c, hr, wr, batched) = image_dims("pixel_unshuffle", &x.shape())?;
    if r == 0 || hr % r != 0 || wr % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("{hr}x{wr} not divisible by {r}"),
        ));
    }
    let (h, w) = (hr / r, wr / r);
    let cr = c * r * r;
    let mut index = Vec::with_capacity(b * cr * h * w);
    for bi in 0..b {
        for ch in 0..cr {
            let (ci, i, j) = (ch / (r * r), (ch / r) % r, ch % r);
            for y in 0..h {
                for xx in 0..w {
                    index.push(((bi * c + ci) * hr + y * r + i) * wr + xx * r + j);
                }
            }
        }
    }
    x.gather(index.into(), &out_shape(batched, b, cr, h, w))
}
