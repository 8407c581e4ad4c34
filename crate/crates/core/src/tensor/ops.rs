use std::rc::Rc;

use super::{gemm, strides_of, Real, Tensor, Var};
use crate::error::{Error, Result};

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn same_shape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    /// Records a single-input op; cannot fail because the parent is on `self.tape`.
    pub(crate) fn unary(
        &self,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var<'t, T> {
        self.tape
            .record(value, &[*self], move |g, _| vec![Some(backward(g))])
            .expect("single-parent op on its own tape")
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("add", self, &other)?;
        let value = zip_map(&self.value(), &other.value(), |a, b| a + b);
        self.tape
            .record(value, &[*self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("sub", self, &other)?;
        let value = zip_map(&self.value(), &other.value(), |a, b| a - b);
        self.tape.record(value, &[*self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mul", self, &other)?;
        let (a, b) = (self.value(), other.value());
        let value = zip_map(&a, &b, |x, y| x * y);
        self.tape.record(value, &[*self, other], move |g, needs| {
            vec![
                needs[0].then(|| zip_map(g, &b, |gv, bv| gv * bv)),
                needs[1].then(|| zip_map(g, &a, |gv, av| gv * av)),
            ]
        })
    }

    pub fn scale(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64c(c);
        let value = self.value().map(|v| v * c);
        self.unary(value, move |g| g.map(|v| v * c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64c(c);
        let value = self.value().map(|v| v + c);
        self.unary(value, |g| g.clone())
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self) -> Var<'t, T> {
        let x = self.value();
        let value = x.map(|v| v.abs());
        self.unary(value, move |g| {
            zip_map(g, &x, |gv, xv| {
                if xv > T::zero() {
                    gv
                } else if xv < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })
        })
    }

    /// Sum of all elements as a 0-d tensor. Accumulates in index order.
    pub fn sum(&self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let total = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.unary(Tensor::scalar(total), move |g| Tensor::full(&shape, g.data()[0]))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        let value = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(value, move |g| {
            Tensor::from_parts(old.clone(), g.data().to_vec())
        }))
    }

    /// `out[i] = self[index[i]]`; the backward pass scatter-adds, so
    /// repeated indices act as a broadcast.
    pub fn gather(&self, index: Rc<[usize]>, out_shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let n: usize = out_shape.iter().product();
        if n != index.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices for shape {out_shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {} elements", x.numel()),
            ));
        }
        let data = index.iter().map(|&i| x.data()[i]).collect();
        let in_shape = x.shape().to_vec();
        Ok(self.unary(
            Tensor::from_parts(out_shape.to_vec(), data),
            move |g| {
                let mut gx = Tensor::zeros(&in_shape);
                let buf = gx.data_mut();
                for (&i, &gv) in index.iter().zip(g.data()) {
                    buf[i] += gv;
                }
                gx
            },
        ))
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let (out_shape, index) = permute_index(&shape, axes);
        self.gather(index.into(), &out_shape)
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {axis} range {start}..{} of {shape:?}", start + len),
            ));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &indices)
    }

    /// Picks (possibly repeated) positions along `axis`.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || indices.is_empty() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(Error::shape(
                "index_select",
                format!("axis {axis} indices {indices:?} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut index = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * shape[axis] + i) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = indices.len();
        self.gather(index.into(), &out_shape)
    }

    /// Matrix product of the last two axes, optionally transposing either
    /// operand. Accepts `(m, k)` or batched `(batch, m, k)` operands with
    /// equal batch sizes.
    pub fn matmul(&self, other: Var<'t, T>, trans_a: bool, trans_b: bool) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let dims = |s: &[usize]| -> Option<(usize, usize, usize)> {
            match *s {
                [r, c] => Some((1, r, c)),
                [b, r, c] => Some((b, r, c)),
                _ => None,
            }
        };
        let err = || Error::shape("matmul", format!("{sa:?} x {sb:?} (ta={trans_a}, tb={trans_b})"));
        let ((ba, ra, ca), (bb, rb, cb)) = match (dims(&sa), dims(&sb)) {
            (Some(a), Some(b)) if sa.len() == sb.len() => (a, b),
            _ => return Err(err()),
        };
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if ba != bb || k != k2 {
            return Err(err());
        }
        let (a, b) = (self.value(), other.value());
        let mut out = vec![T::zero(); ba * m * n];
        for i in 0..ba {
            gemm(
                trans_a,
                trans_b,
                m,
                n,
                k,
                T::one(),
                &a.data()[i * m * k..],
                &b.data()[i * k * n..],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out_shape = if sa.len() == 2 { vec![m, n] } else { vec![ba, m, n] };
        let value = Tensor::from_parts(out_shape, out);
        let batch = ba;
        self.tape.record(value, &[*self, other], move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                let mut ga = Tensor::zeros(a.shape());
                for i in 0..batch {
                    let dst = &mut ga.data_mut()[i * m * k..(i + 1) * m * k];
                    let (gs, bs) = (&gd[i * m * n..], &b.data()[i * k * n..]);
                    if trans_a {
                        gemm(trans_b, true, k, m, n, T::one(), bs, gs, T::zero(), dst);
                    } else {
                        gemm(false, !trans_b, m, k, n, T::one(), gs, bs, T::zero(), dst);
                    }
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = Tensor::zeros(b.shape());
                for i in 0..batch {
                    let dst = &mut gb.data_mut()[i * k * n..(i + 1) * k * n];
                    let (gs, as_) = (&gd[i * m * n..], &a.data()[i * m * k..]);
                    if trans_b {
                        gemm(true, trans_a, n, k, m, T::one(), gs, as_, T::zero(), dst);
                    } else {
                        gemm(!trans_a, false, k, n, m, T::one(), as_, gs, T::zero(), dst);
                    }
                }
                gb
            });
            vec![ga, gb]
        })
    }
}

/// Output shape and source index map for an axis permutation.
pub(crate) fn permute_index(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        index.push(src);
        for d in (0..out_shape.len()).rev() {
            counter[d] += 1;
            src += src_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (out_shape, index)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let base = first.shape();
    if axis >= base.len() {
        return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
    }
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    for v in &values {
        let s = v.shape();
        if s.len() != base.len()
            || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (v, &w) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    drop(values);
    first.tape.record(Tensor::from_parts(out_shape, data), vars, move |g, needs| {
        let mut offset = 0;
        let mut out = Vec::with_capacity(shapes.len());
        for ((shape, &w), &need) in shapes.iter().zip(&widths).zip(needs) {
            if need {
                let mut buf = Vec::with_capacity(outer * w);
                for o in 0..outer {
                    let start = o * total + offset;
                    buf.extend_from_slice(&g.data()[start..start + w]);
                }
                out.push(Some(Tensor::from_parts(shape.clone(), buf)));
            } else {
                out.push(None);
            }
            offset += w;
        }
        out
    })
}
