use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Softmax along `axis`, max-subtracted for stability.
pub fn softmax<'t, T: Real>(x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape("softmax", format!("axis {axis} of {shape:?}")));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); xv.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(xv.data()[at(k)]));
            let mut total = T::zero();
            for k in 0..len {
                let e = (xv.data()[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    let y = std::rc::Rc::new(Tensor::from_parts(shape.clone(), out));
    let ys = y.clone();
    drop(xv);
    Ok(x.unary((*y).clone(), move |g| {
        let mut gx = vec![T::zero(); ys.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot = (0..len).fold(T::zero(), |a, k| a + g.data()[at(k)] * ys.data()[at(k)]);
                for k in 0..len {
                    gx[at(k)] = ys.data()[at(k)] * (g.data()[at(k)] - dot);
                }
            }
        }
        Tensor::from_parts(shape.clone(), gx)
    }))
}

/// `y = x W^T + b` over the last axis; `weight` is `(out, in)`.
pub fn linear<'t, T: Real>(x: Var<'t, T>, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    let [n_out, n_in] = *wv.shape() else {
        return Err(Error::shape("linear", format!("weight {:?}", wv.shape())));
    };
    if xv.shape().last() != Some(&n_in) {
        return Err(Error::shape("linear", format!("input {:?} for weight {:?}", xv.shape(), wv.shape())));
    }
    let bv = bias.map(|b| b.value());
    if let Some(b) = &bv {
        if b.shape() != [n_out] {
            return Err(Error::shape("linear", format!("bias {:?} for {n_out} outputs", b.shape())));
        }
    }
    let rows = xv.numel() / n_in;
    let mut out = vec![T::zero(); rows * n_out];
    crate::tensor::gemm(false, true, rows, n_out, n_in, T::one(), xv.data(), wv.data(), T::zero(), &mut out);
    if let Some(b) = &bv {
        for row in out.chunks_mut(n_out) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    let mut out_shape = xv.shape().to_vec();
    *out_shape.last_mut().unwrap() = n_out;
    let value = Tensor::from_parts(out_shape, out);
    let mut parents = vec![x, weight];
    parents.extend(bias);
    x.tape().record(value, &parents, move |g, needs| {
        let gd = g.data();
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(xv.shape());
            crate::tensor::gemm(false, false, rows, n_in, n_out, T::one(), gd, wv.data(), T::zero(), gx.data_mut());
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(wv.shape());
            crate::tensor::gemm(true, false, n_out, n_in, rows, T::one(), gd, xv.data(), T::zero(), gw.data_mut());
            gw
        });
        let mut out = vec![gx, gw];
        if needs.len() == 3 {
            out.push(needs[2].then(|| {
                let mut gb = vec![T::zero(); n_out];
                for row in gd.chunks(n_out) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::from_parts(vec![n_out], gb)
            }));
        }
        out
    })
}

/// GELU, tanh approximation.
pub fn gelu<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let k = T::from_f64c((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64c(0.044715);
    let half = T::from_f64c(0.5);
    let three = T::from_f64c(3.0);
    let value = xv.map(|v| half * v * (T::one() + (k * (v + a * v * v * v)).tanh()));
    x.unary(value, move |g| {
        let mut gx = g.clone();
        for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
            let t = (k * (v + a * v * v * v)).tanh();
            let d = half * (T::one() + t) + half * v * (T::one() - t * t) * k * (T::one() + three * a * v * v);
            *gv *= d;
        }
        gx
    })
}

/// Leaky ReLU with negative-side `slope`.
pub fn leaky_relu<'t, T: Real>(x: Var<'t, T>, slope: f64) -> Var<'t, T> {
    let xv = x.value();
    let s = T::from_f64c(slope);
    let value = xv.map(|v| if v > T::zero() { v } else { v * s });
    x.unary(value, move |g| {
        let mut gx = g.clone();
        for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
            if v <= T::zero() {
                *gv *= s;
            }
        }
        gx
    })
}
