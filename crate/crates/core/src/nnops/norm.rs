use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Layer normalization over the last axis with affine `gamma`, `beta`.
/// Uses the biased variance.
pub fn layer_norm<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let c = *xv.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
    let (gv, bv) = (gamma.value(), beta.value());
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!("gamma {:?} / beta {:?} for {c} features", gv.shape(), bv.shape()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("layer_norm eps {eps}")));
    }
    let eps = T::from_f64c(eps);
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let rows = xv.numel() / c;
    let mut xhat = Vec::with_capacity(xv.numel());
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(xv.numel());
    for row in xv.data().chunks(c) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_c;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (j, &v) in row.iter().enumerate() {
            let n = (v - mean) * is;
            xhat.push(n);
            out.push(n * gv.data()[j] + bv.data()[j]);
        }
    }
    let value = Tensor::from_parts(xv.shape().to_vec(), out);
    let shape = xv.shape().to_vec();
    drop(xv);
    x.tape().record(value, &[x, gamma, beta], move |g, needs| {
        let mut ggamma = needs[1].then(|| vec![T::zero(); c]);
        let mut gbeta = needs[2].then(|| vec![T::zero(); c]);
        let mut gx = needs[0].then(|| Vec::with_capacity(rows * c));
        let mut dxhat = vec![T::zero(); c];
        for r in 0..rows {
            let (gr, xr) = (&g.data()[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
            if let Some(gg) = ggamma.as_mut() {
                for j in 0..c {
                    gg[j] += gr[j] * xr[j];
                }
            }
            if let Some(gb) = gbeta.as_mut() {
                for j in 0..c {
                    gb[j] += gr[j];
                }
            }
            if let Some(gx) = gx.as_mut() {
                let mut mean_d = T::zero();
                let mut mean_dx = T::zero();
                for j in 0..c {
                    dxhat[j] = gr[j] * gv.data()[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xr[j];
                }
                mean_d *= inv_c;
                mean_dx *= inv_c;
                for j in 0..c {
                    gx.push(inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx));
                }
            }
        }
        vec![
            gx.map(|d| Tensor::from_parts(shape.clone(), d)),
            ggamma.map(|d| Tensor::from_parts(vec![c], d)),
            gbeta.map(|d| Tensor::from_parts(vec![c], d)),
        ]
    })
}
