use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Source taps along one axis for half-pixel-centred (align-corners=false)
/// upsampling: `(i0, i1, frac)` per output index. Negative source
/// coordinates clamp to zero and the far edge replicates, so constants and
/// value bounds are preserved.
fn axis_taps(len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..len * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of the last two axes by an integer `scale`
/// (align-corners=false).
pub fn bilinear_resize<'t, T: Real>(x: Var<'t, T>, scale: usize) -> Result<Var<'t, T>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    if shape.len() < 2 || scale == 0 {
        return Err(Error::shape("bilinear_resize", format!("{shape:?} with scale {scale}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = xv.numel() / (h * w);
    let (ho, wo) = (h * scale, w * scale);
    let rows = axis_taps(h, scale);
    let cols: Vec<(usize, usize, T)> = axis_taps(w, scale)
        .into_iter()
        .map(|(a, b, l)| (a, b, T::from_f64c(l)))
        .collect();
    let rows: Vec<(usize, usize, T)> = rows.into_iter().map(|(a, b, l)| (a, b, T::from_f64c(l))).collect();

    let one = T::one();
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let src = &xv.data()[p * h * w..(p + 1) * h * w];
        for &(y0, y1, ly) in &rows {
            let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, lx) in &cols {
                let top = (one - lx) * r0[x0] + lx * r0[x1];
                let bot = (one - lx) * r1[x0] + lx * r1[x1];
                out.push((one - ly) * top + ly * bot);
            }
        }
    }
    let mut out_shape = shape.clone();
    let n = out_shape.len();
    out_shape[n - 2] = ho;
    out_shape[n - 1] = wo;
    drop(xv);
    Ok(x.unary(Tensor::from_parts(out_shape, out), move |g| {
        let mut gx = Tensor::zeros(&shape);
        let gxd = gx.data_mut();
        for p in 0..planes {
            let dst = &mut gxd[p * h * w..(p + 1) * h * w];
            let gp = &g.data()[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let gv = gp[oy * wo + ox];
                    let (top, bot) = ((one - ly) * gv, ly * gv);
                    dst[y0 * w + x0] += (one - lx) * top;
                    dst[y0 * w + x1] += lx * top;
                    dst[y1 * w + x0] += (one - lx) * bot;
                    dst[y1 * w + x1] += lx * bot;
                }
            }
        }
        gx
    }))
}
