//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 5 and 6 train several models for thousands of steps and only
//! run with `STASUNET_SLOW=1`; otherwise they print SKIPPED.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stasunet::data::Motion;
use stasunet::metrics::{psnr, ssim};
use stasunet::model::{gradcheck_model, l1_loss, ModelConfig};
use stasunet::nnops::{
    bilinear_resize, conv2d, deformable_conv2d, gelu, layer_norm, leaky_relu, linear, pixel_shuffle, pixel_unshuffle,
    softmax,
};
use stasunet::params::{Ctx, ParamBuilder, ParamStore};
use stasunet::swin::{
    cyclic_shift, dual_upsample, patch_merging, shifted_window_mask, swin_block_pair, window_attention,
    window_partition, window_reverse, DualUpsample, PatchMerging, SwinBlockParams, WindowGrid,
};
use stasunet::tensor::{concat, finite_diff_check};
use stasunet::{align, Result, Tape, Tensor, Var};
use stasunet_cli::experiment::{frame_count, histmatch, overfit, SynthSplit};

type Outcome = std::result::Result<String, String>;

/// Number, name, check, and whether it belongs to the slow suite.
type Criterion = (u32, &'static str, fn() -> Outcome, bool);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn f64s(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

// ---------------------------------------------------------------------------
// Criterion 1: kernels against float64 brute force.

fn conv_oracle(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(b * o * oh * ow);
    for bi in 0..b {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = bias[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ic) * h + iy as usize) * w + ix as usize];
                                s += wt[((oc * c + ic) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

fn layer_norm_oracle(x: &[f64], c: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for (i, v) in row.iter().enumerate() {
            out.push((v - mean) / (var + eps).sqrt() * gamma[i] + beta[i]);
        }
    }
    out
}

/// SSIM by explicit 11x11 window sums.
fn ssim_oracle(a: &[f64], b: &[f64], (c, h, w): (usize, usize, usize)) -> f64 {
    let mut k = [[0.0f64; 11]; 11];
    let mut ks = 0.0;
    for (y, row) in k.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let d2 = (y as f64 - 5.0).powi(2) + (x as f64 - 5.0).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            ks += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, row) in k.iter().enumerate() {
                    for (dx, kv) in row.iter().enumerate() {
                        let i = (ch * h + y0 + dy) * w + x0 + dx;
                        let wgt = kv / ks;
                        ma += wgt * a[i];
                        mb += wgt * b[i];
                        aa += wgt * a[i] * a[i];
                        bb += wgt * b[i] * b[i];
                        ab += wgt * a[i] * b[i];
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total += acc / count;
    }
    total / c as f64
}

/// Windowed multi-head attention from the raw parameters. The relative
/// bias table is indexed by `(dy + w - 1) * (2w - 1) + (dx + w - 1)` with
/// `dy = row_i - row_j`; masked pairs are dropped from the softmax. `x` is
/// a `(H, W, C)` grid that has already been rolled.
#[allow(clippy::too_many_arguments)]
fn attention_oracle(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    win: usize,
    heads: usize,
    shift: usize,
    qkv: (&[f64], &[f64]),
    proj: (&[f64], &[f64]),
    table: &[f64],
) -> Vec<f64> {
    let d = c / heads;
    let n = win * win;
    let span = 2 * win - 1;
    // Region label of a rolled position along one axis.
    let region = |p: usize, len: usize| {
        if shift == 0 || p < len - win {
            0
        } else if p < len - shift {
            1
        } else {
            2
        }
    };
    let mut out = vec![0.0; (h / win) * (w / win) * n * c];
    let mut wi = 0;
    for wy in 0..h / win {
        for wx in 0..w / win {
            let pos = |t: usize| (wy * win + t / win, wx * win + t % win);
            let tok = |t: usize| {
                let (y, xx) = pos(t);
                &x[(y * w + xx) * c..(y * w + xx + 1) * c]
            };
            let lin = |t: usize, o: usize| qkv.1[o] + (0..c).map(|e| qkv.0[o * c + e] * tok(t)[e]).sum::<f64>();
            let mut mixed = vec![0.0; n * c];
            for hd in 0..heads {
                for i in 0..n {
                    let (yi, xi) = pos(i);
                    let mut logits = Vec::with_capacity(n);
                    for j in 0..n {
                        let (yj, xj) = pos(j);
                        if (region(yi, h), region(xi, w)) != (region(yj, h), region(xj, w)) {
                            logits.push(None);
                            continue;
                        }
                        let dot: f64 = (0..d).map(|e| lin(i, hd * d + e) * lin(j, c + hd * d + e)).sum();
                        let dy = (i / win) as isize - (j / win) as isize + win as isize - 1;
                        let dx = (i % win) as isize - (j % win) as isize + win as isize - 1;
                        let r = dy as usize * span + dx as usize;
                        logits.push(Some(dot / (d as f64).sqrt() + table[r * heads + hd]));
                    }
                    let mx = logits.iter().flatten().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = logits.iter().flatten().map(|l| (l - mx).exp()).sum();
                    for (j, l) in logits.iter().enumerate() {
                        if let Some(l) = l {
                            let a = (l - mx).exp() / z;
                            for e in 0..d {
                                mixed[i * c + hd * d + e] += a * lin(j, 2 * c + hd * d + e);
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                for o in 0..c {
                    out[(wi * n + i) * c + o] = proj.1[o] + (0..c).map(|e| proj.0[o * c + e] * mixed[i * c + e]).sum::<f64>();
                }
            }
            wi += 1;
        }
    }
    out
}

fn criterion_1() -> Outcome {
    const N: usize = 100;
    let mut r = rng(1);
    let (mut conv_err, mut ln_err, mut ssim_err, mut attn_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..N {
        let (b, c, o) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
        let (h, w) = (r.random_range(3..=9), r.random_range(3..=9));
        let k = [1, 3, 5][r.random_range(0..3)];
        let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=2));
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        let x = Tensor::<f32>::rand_uniform(&[b, c, h, w], -1.0, 1.0, &mut r);
        let wt = Tensor::<f32>::rand_uniform(&[o, c, k, k], -1.0, 1.0, &mut r);
        let bias = Tensor::<f32>::rand_uniform(&[o], -1.0, 1.0, &mut r);
        let tape = Tape::<f32>::new();
        let y = conv2d(
            tape.constant(x.clone()),
            tape.constant(wt.clone()),
            Some(tape.constant(bias.clone())),
            stride,
            pad,
        )
        .map_err(|e| e.to_string())?
        .value();
        let want = conv_oracle(&f64s(&x), (b, c, h, w), &f64s(&wt), (o, k), &f64s(&bias), stride, pad);
        conv_err = conv_err.max(max_diff(&f64s(&y), &want));
    }
    for _ in 0..N {
        let (rows, c) = (r.random_range(1..=6), r.random_range(1..=16));
        let x = Tensor::<f32>::rand_uniform(&[rows, c], -2.0, 2.0, &mut r);
        let g = Tensor::<f32>::rand_uniform(&[c], -1.5, 1.5, &mut r);
        let bt = Tensor::<f32>::rand_uniform(&[c], -1.0, 1.0, &mut r);
        let tape = Tape::<f32>::new();
        let y = layer_norm(tape.constant(x.clone()), tape.constant(g.clone()), tape.constant(bt.clone()), 1e-5)
            .map_err(|e| e.to_string())?
            .value();
        let want = layer_norm_oracle(&f64s(&x), c, &f64s(&g), &f64s(&bt), 1e-5);
        ln_err = ln_err.max(max_diff(&f64s(&y), &want));
    }
    for _ in 0..N {
        let (h, w) = (r.random_range(11..=18), r.random_range(11..=18));
        let a = Tensor::<f32>::rand_uniform(&[3, h, w], 0.0, 1.0, &mut r);
        let noise = Tensor::<f32>::rand_uniform(&[3, h, w], -0.3, 0.3, &mut r);
        let mut b = a.clone();
        for (v, n) in b.data_mut().iter_mut().zip(noise.data()) {
            *v = (*v + n).clamp(0.0, 1.0);
        }
        let got = ssim(&a, &b).map_err(|e| e.to_string())?;
        ssim_err = ssim_err.max((got - ssim_oracle(&f64s(&a), &f64s(&b), (3, h, w))).abs());
    }
    for trial in 0..N as u64 {
        let c = [4, 8][r.random_range(0..2)];
        let heads = [1, 2, 4][r.random_range(0..3)];
        let win = r.random_range(2..=4);
        let (gh, gw) = (win * r.random_range(1..=2), win * r.random_range(1..=2));
        let shift = if r.random_bool(0.5) { win / 2 } else { 0 };
        let mut store = ParamStore::new();
        let p = SwinBlockParams::new(&mut ParamBuilder::new(&mut store, trial), "b", c, win, heads, shift, 2)
            .map_err(|e| e.to_string())?;
        let shape = store.get(p.rel_bias).shape().to_vec();
        *store.get_mut(p.rel_bias) = Tensor::randn(&shape, 0.5, &mut r);
        for id in [p.qkv.bias.unwrap(), p.proj.bias.unwrap()] {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::randn(&shape, 0.2, &mut r);
        }
        let x = Tensor::<f32>::randn(&[gh, gw, c], 1.0, &mut r);
        let tape = Tape::<f32>::new();
        let ctx = Ctx::new(&tape, &store, false);
        let mask = (shift > 0).then(|| shifted_window_mask::<f32>(gh, gw, win, shift).unwrap());
        let g = window_partition(tape.constant(x.clone()), win).map_err(|e| e.to_string())?;
        let got = window_attention(&ctx, &g, &p, mask.as_ref()).map_err(|e| e.to_string())?.windows.value();
        let get = |id| f64s(store.get(id));
        let want = attention_oracle(
            &f64s(&x),
            (gh, gw, c),
            win,
            heads,
            shift,
            (&get(p.qkv.weight), &get(p.qkv.bias.unwrap())),
            (&get(p.proj.weight), &get(p.proj.bias.unwrap())),
            &get(p.rel_bias),
        );
        attn_err = attn_err.max(max_diff(&f64s(&got), &want));
    }
    let detail = format!(
        "{N} instances each, max abs error conv2d {conv_err:.1e}, layer_norm {ln_err:.1e}, ssim {ssim_err:.1e}, window_attention {attn_err:.1e}"
    );
    ensure(conv_err < 1e-5 && ln_err < 1e-5 && ssim_err < 1e-5 && attn_err < 1e-4, detail)
}

// ---------------------------------------------------------------------------
// Criterion 2: finite differences.

/// Pins the higher-ranked closure signature the gradient checker needs.
fn probe<F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>>(f: F) -> F {
    f
}

/// Random projection to a scalar, so every output element matters.
fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = Tensor::<f64>::randn(&y.shape(), 1.0, &mut rng(seed));
    Ok(y.mul(y.tape().constant(w))?.sum())
}

/// Values at least 0.2 away from zero, for ops with a kink there.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::<f64>::randn(shape, 1.0, &mut rng(seed)).map(|v| v + 0.2 * v.signum())
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::<f64>::randn(shape, 1.0, &mut rng(seed))
}

fn criterion_2() -> Outcome {
    const TOL: f64 = 1e-2;
    const H: f64 = 1e-6;
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut check = |name: &'static str, err: Result<f64>| -> Outcome {
        let e = err.map_err(|e| format!("{name}: {e}"))?;
        results.push((name, e));
        Ok(String::new())
    };

    let a = randn(&[3, 4], 10);
    let b = randn(&[3, 4], 11);
    check("add", finite_diff_check(probe(|v| project(v.add(v.tape().constant(b.clone()))?, 1)), &a, H))?;
    check("sub", finite_diff_check(probe(|v| project(v.tape().constant(b.clone()).sub(v)?, 1)), &a, H))?;
    check("mul", finite_diff_check(probe(|v| project(v.mul(v)?, 1)), &a, H))?;
    check("scale", finite_diff_check(probe(|v| project(v.scale(-2.5), 1)), &a, H))?;
    check("add_scalar", finite_diff_check(probe(|v| project(v.add_scalar(0.7).mul(v)?, 1)), &a, H))?;
    check("neg", finite_diff_check(probe(|v| project(v.neg().mul(v)?, 1)), &a, H))?;
    check("abs", finite_diff_check(probe(|v| project(v.abs(), 1)), &off_zero(&[3, 4], 12), H))?;
    check("sum", finite_diff_check(probe(|v| Ok(v.mul(v)?.sum())), &a, H))?;
    check("mean", finite_diff_check(probe(|v| Ok(v.mul(v)?.mean())), &a, H))?;
    check("reshape", finite_diff_check(probe(|v| project(v.reshape(&[2, 6])?, 1)), &a, H))?;
    let idx: Rc<[usize]> = vec![3, 3, 0, 11, 7, 5].into();
    check("gather", finite_diff_check(probe(|v| project(v.gather(idx.clone(), &[2, 3])?, 1)), &a, H))?;
    let t3 = randn(&[2, 3, 4], 13);
    check("permute", finite_diff_check(probe(|v| project(v.permute(&[2, 0, 1])?, 1)), &t3, H))?;
    check("narrow", finite_diff_check(probe(|v| project(v.narrow(2, 1, 2)?, 1)), &t3, H))?;
    check("index_select", finite_diff_check(probe(|v| project(v.index_select(1, &[2, 0, 2])?, 1)), &t3, H))?;
    check(
        "concat",
        finite_diff_check(probe(|v| project(concat(&[v, v.scale(2.0), v], 1)?, 1)), &t3, H),
    )?;
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let other = randn(&[4, 4], 14);
        let name = ["matmul", "matmul^T.", "matmul.^T", "matmul^T^T"][ta as usize + 2 * tb as usize];
        let x = randn(&[2, 4, 4], 15);
        check(
            name,
            finite_diff_check(
                probe(|v| {
                    let o = v.tape().constant(Tensor::new(&[2, 4, 4], [other.data(), other.data()].concat())?);
                    project(v.matmul(o, ta, tb)?.add(o.matmul(v, tb, ta)?)?, 1)
                }),
                &x,
                H,
            ),
        )?;
    }
    check("softmax", finite_diff_check(probe(|v| project(softmax(v, 1)?, 1)), &t3, H))?;
    let lw = randn(&[5, 4], 16);
    let lb = randn(&[5], 17);
    check(
        "linear",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(linear(v, t.constant(lw.clone()), Some(t.constant(lb.clone())))?, 1)
            }),
            &t3,
            H,
        ),
    )?;
    check(
        "linear.weight",
        finite_diff_check(probe(|v| project(linear(v.tape().constant(t3.clone()), v, None)?, 1)), &lw, H),
    )?;
    check("gelu", finite_diff_check(probe(|v| project(gelu(v), 1)), &t3, H))?;
    check("leaky_relu", finite_diff_check(probe(|v| project(leaky_relu(v, 0.1), 1)), &off_zero(&[2, 3, 4], 18), H))?;

    let img = randn(&[2, 3, 6, 5], 19);
    let cw = randn(&[4, 3, 3, 3], 20);
    let cb = randn(&[4], 21);
    for (stride, pad) in [(1, 1), (2, 0), (2, 2)] {
        check(
            "conv2d",
            finite_diff_check(
                probe(|v| {
                    let t = v.tape();
                    project(conv2d(v, t.constant(cw.clone()), Some(t.constant(cb.clone())), stride, pad)?, 2)
                }),
                &img,
                H,
            ),
        )?;
        check(
            "conv2d.weight",
            finite_diff_check(
                probe(|v| project(conv2d(v.tape().constant(img.clone()), v, None, stride, pad)?, 2)),
                &cw,
                H,
            ),
        )?;
    }
    check(
        "conv2d.bias",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(conv2d(t.constant(img.clone()), t.constant(cw.clone()), Some(v), 1, 1)?, 2)
            }),
            &cb,
            H,
        ),
    )?;

    // Offsets well inside (0, 1) keep every tap away from grid lines.
    let dimg = randn(&[3, 6, 6], 22);
    let dw = randn(&[2, 3, 3, 3], 23);
    let mut orng = rng(24);
    let offs = Tensor::<f64>::from_fn(&[18, 6, 6], |_| {
        let frac = orng.random_range(0.2..0.8);
        frac + orng.random_range(-2i32..=1) as f64
    });
    check(
        "deformable_conv2d",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(deformable_conv2d(v, t.constant(dw.clone()), None, t.constant(offs.clone()))?, 3)
            }),
            &dimg,
            H,
        ),
    )?;
    check(
        "deformable_conv2d.offsets",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(deformable_conv2d(t.constant(dimg.clone()), t.constant(dw.clone()), None, v)?, 3)
            }),
            &offs,
            H,
        ),
    )?;
    check(
        "deformable_conv2d.weight",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(deformable_conv2d(t.constant(dimg.clone()), v, None, t.constant(offs.clone()))?, 3)
            }),
            &dw,
            H,
        ),
    )?;

    let gamma = randn(&[4], 25);
    let beta = randn(&[4], 26);
    check(
        "layer_norm",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(layer_norm(v, t.constant(gamma.clone()), t.constant(beta.clone()), 1e-5)?, 4)
            }),
            &t3,
            H,
        ),
    )?;
    check(
        "layer_norm.gamma",
        finite_diff_check(
            probe(|v| {
                let t = v.tape();
                project(layer_norm(t.constant(t3.clone()), v, t.constant(beta.clone()), 1e-5)?, 4)
            }),
            &gamma,
            H,
        ),
    )?;
    check("bilinear_resize", finite_diff_check(probe(|v| project(bilinear_resize(v, 2)?, 5)), &dimg, H))?;
    let shuf = randn(&[8, 3, 2], 27);
    check("pixel_shuffle", finite_diff_check(probe(|v| project(pixel_shuffle(v, 2)?, 6)), &shuf, H))?;
    check("pixel_unshuffle", finite_diff_check(probe(|v| project(pixel_unshuffle(v, 2)?, 6)), &dimg, H))?;
    let gt = randn(&[2, 3, 4], 28);
    let pred = gt.clone().map(|v| v) ;
    let pred = {
        let mut p = pred;
        let shift = off_zero(&[2, 3, 4], 29);
        for (x, s) in p.data_mut().iter_mut().zip(shift.data()) {
            *x += s;
        }
        p
    };
    check(
        "l1_loss",
        finite_diff_check(probe(|v| l1_loss(v, v.tape().constant(gt.clone()))), &pred, H),
    )?;

    let grid = randn(&[8, 8, 4], 30);
    check("cyclic_shift", finite_diff_check(probe(|v| project(cyclic_shift(v, 3)?, 7)), &grid, H))?;
    check(
        "window_partition/reverse",
        finite_diff_check(
            probe(|v| {
                let g = window_partition(v, 4)?;
                let doubled = WindowGrid { windows: g.windows.mul(g.windows)?, ..g };
                project(window_reverse(&doubled)?, 7)
            }),
            &grid,
            H,
        ),
    )?;

    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, 31);
    let a_blk = SwinBlockParams::new(&mut pb, "a", 4, 4, 2, 0, 2).map_err(|e| e.to_string())?;
    let b_blk = SwinBlockParams::new(&mut pb, "b", 4, 4, 2, 2, 2).map_err(|e| e.to_string())?;
    let merge = PatchMerging::new(&mut pb, "m", 4).map_err(|e| e.to_string())?;
    let up = DualUpsample::new(&mut pb, "u", 4).map_err(|e| e.to_string())?;
    let ap = align::AlignParams::new(&mut pb, "al", 4).map_err(|e| e.to_string())?;
    for p in [&a_blk, &b_blk] {
        let shape = store.get(p.rel_bias).shape().to_vec();
        *store.get_mut(p.rel_bias) = Tensor::randn(&shape, 0.5, &mut rng(32));
    }
    let mut jr = rng(33);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("offset") {
            let shape = store.get(id).shape().to_vec();
            let amp = if store.name(id).ends_with("bias") { 0.4 } else { 0.02 };
            *store.get_mut(id) = Tensor::from_fn(&shape, |_| jr.random_range(-amp..amp));
        }
    }
    check(
        "window_attention",
        finite_diff_check(
            probe(|v| {
                let ctx = Ctx::new(v.tape(), &store, false);
                let g = window_partition(v, 4)?;
                project(window_reverse(&window_attention(&ctx, &g, &b_blk, None)?)?, 8)
            }),
            &grid,
            H,
        ),
    )?;
    check(
        "swin_block_pair",
        finite_diff_check(
            probe(|v| {
                let ctx = Ctx::new(v.tape(), &store, false);
                project(swin_block_pair(&ctx, v, &a_blk, &b_blk)?, 8)
            }),
            &grid,
            H,
        ),
    )?;
    check(
        "patch_merging",
        finite_diff_check(
            probe(|v| {
                let ctx = Ctx::new(v.tape(), &store, false);
                project(patch_merging(&ctx, v, &merge)?, 8)
            }),
            &grid,
            H,
        ),
    )?;
    check(
        "dual_upsample",
        finite_diff_check(
            probe(|v| {
                let ctx = Ctx::new(v.tape(), &store, false);
                project(dual_upsample(&ctx, v, &up)?, 8)
            }),
            &grid,
            H,
        ),
    )?;
    let frames = Tensor::<f64>::rand_uniform(&[3, 3, 8, 8], 0.0, 1.0, &mut rng(34));
    check(
        "align_stack",
        finite_diff_check(
            probe(|v| {
                let ctx = Ctx::new(v.tape(), &store, false);
                project(align::align_stack(&ctx, v, 1, &ap)?.features, 9)
            }),
            &frames,
            H,
        ),
    )?;

    let op_worst = results.iter().fold(("", 0.0f64), |m, &(n, e)| if e > m.1 { (n, e) } else { m });
    let samples = gradcheck_model(&ModelConfig::toy(), 64, 24, 7, 1e-5).map_err(|e| e.to_string())?;
    let model_worst = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    let failing: Vec<_> = results.iter().filter(|(_, e)| *e >= TOL).collect();
    let detail = format!(
        "{} op checks, worst {} {:.1e}{}; toy model {} params sampled, worst {:.1e}",
        results.len(),
        op_worst.0,
        op_worst.1,
        if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") },
        samples.len(),
        model_worst
    );
    ensure(failing.is_empty() && model_worst < 2e-2, detail)
}

// ---------------------------------------------------------------------------
// Criterion 3: structural identities.

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let tape = Tape::<f32>::new();
    let mut exact = true;
    for _ in 0..50 {
        let rr = r.random_range(1..=3);
        let (c, h, w) = (r.random_range(1..=3), r.random_range(1..=4) * rr, r.random_range(1..=4) * rr);
        let x = Tensor::<f32>::randn(&[c * rr * rr, h, w], 1.0, &mut r);
        let back = pixel_unshuffle(pixel_shuffle(tape.constant(x.clone()), rr).unwrap(), rr).unwrap().value();
        exact &= *back == x;
        let y = Tensor::<f32>::randn(&[c, h, w], 1.0, &mut r);
        let back = pixel_shuffle(pixel_unshuffle(tape.constant(y.clone()), rr).unwrap(), rr).unwrap().value();
        exact &= *back == y;

        let win = r.random_range(1..=4);
        let (gh, gw) = (win * r.random_range(1..=3), win * r.random_range(1..=3));
        let g = Tensor::<f32>::randn(&[gh, gw, c], 1.0, &mut r);
        let part = window_partition(tape.constant(g.clone()), win).unwrap();
        exact &= *window_reverse(&part).unwrap().value() == g;
        let s = r.random_range(-7i64..=7) as isize;
        let back = cyclic_shift(cyclic_shift(tape.constant(g.clone()), s).unwrap(), -s).unwrap().value();
        exact &= *back == g;
    }

    let mut deform_err = 0.0f64;
    for _ in 0..30 {
        let (c, o, h, w) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(3..=8), r.random_range(3..=8));
        let k = [1, 3, 5][r.random_range(0..3)];
        let x = Tensor::<f32>::randn(&[c, h, w], 1.0, &mut r);
        let wt = Tensor::<f32>::randn(&[o, c, k, k], 1.0, &mut r);
        let b = Tensor::<f32>::randn(&[o], 1.0, &mut r);
        let (xv, wv, bv) = (tape.constant(x), tape.constant(wt), tape.constant(b));
        let zero = tape.constant(Tensor::zeros(&[2 * k * k, h, w]));
        let d = deformable_conv2d(xv, wv, Some(bv), zero).unwrap().value();
        let p = conv2d(xv, wv, Some(bv), 1, k / 2).unwrap().value();
        deform_err = deform_err.max(d.max_abs_diff(&p));
    }

    let mut ident_err = 0.0f64;
    for seed in 0..10u64 {
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::new(&mut store, seed);
        let a = SwinBlockParams::new(&mut pb, "a", 8, 4, 2, 0, 4).unwrap();
        let b = SwinBlockParams::new(&mut pb, "b", 8, 4, 2, 2, 4).unwrap();
            for p in [&a, &b] {
            for id in [p.proj.weight, p.proj.bias.unwrap(), p.fc2.weight, p.fc2.bias.unwrap()] {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        let x = Tensor::<f32>::randn(&[8, 8, 8], 1.0, &mut r);
        let ctx = Ctx::new(&tape, &store, false);
        let y = swin_block_pair(&ctx, tape.constant(x.clone()), &a, &b).unwrap().value();
        ident_err = ident_err.max(y.max_abs_diff(&x));
    }
    let detail = format!(
        "roundtrips bit-exact: {exact}; zero-offset deformable vs plain conv {deform_err:.1e}; zero-branch block pair {ident_err:.1e}"
    );
    ensure(exact && deform_err < 1e-6 && ident_err < 1e-6, detail)
}

// ---------------------------------------------------------------------------
// Criteria 4-6: training.

fn split(train: usize, test: usize) -> SynthSplit {
    SynthSplit {
        train_scenes: train,
        test_scenes: test,
        frames: 8,
        size: ModelConfig::toy().crop_size,
        motion: Motion::Mixed,
        seed: 2024,
    }
}

fn progress(m: &str) {
    eprintln!("    {m}");
}

fn criterion_4() -> Outcome {
    let cfg = ModelConfig::toy();
    let mut log = progress;
    let r = overfit(&cfg, &split(1, 0), 10, 500, &mut log).map_err(|e| e.to_string())?;
    let ratio = r.final_l1 / r.initial_l1;
    let gain = r.model.psnr - r.stretched.psnr;
    let detail = format!(
        "L1 {:.4} -> {:.4} (ratio {ratio:.3}, need < 0.25); PSNR model {:.2} dB vs stretched input {:.2} dB (gain {gain:.2}, need >= 3)",
        r.initial_l1, r.final_l1, r.model.psnr, r.stretched.psnr
    );
    ensure(ratio < 0.25 && gain >= 3.0, detail)
}

fn criterion_5() -> Outcome {
    let mut log = progress;
    let rows = frame_count(&ModelConfig::toy(), &[1, 5], &split(8, 8), 10, 2000, &mut log).map_err(|e| e.to_string())?;
    let (one, five) = (rows[0].1, rows[1].1);
    let detail = format!(
        "mean PSNR 1 frame {:.3} dB, 5 frames {:.3} dB (SSIM {:.4} / {:.4})",
        one.psnr, five.psnr, one.ssim, five.ssim
    );
    ensure(five.psnr >= one.psnr, detail)
}

fn criterion_6() -> Outcome {
    let mut log = progress;
    let r = histmatch(&ModelConfig::toy(), &split(8, 8), 10, 20, 2000, &mut log).map_err(|e| e.to_string())?;
    let detail = format!(
        "trained at 10%, tested at 20%: PSNR without matching {:.3} dB, with {:.3} dB",
        r.plain.psnr, r.matched.psnr
    );
    ensure(r.matched.psnr > r.plain.psnr, detail)
}

// ---------------------------------------------------------------------------
// Criterion 7: metric closed forms.

fn criterion_7() -> Outcome {
    let a = Tensor::<f32>::rand_uniform(&[3, 32, 32], 0.1, 0.8, &mut rng(7));
    let b = a.map(|v| v + 0.1);
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    let c = Tensor::full(&[3, 32, 32], 0.4f32);
    let d = Tensor::full(&[3, 32, 32], 0.6f32);
    let s = ssim(&c, &d).map_err(|e| e.to_string())?;
    let (x, y) = (0.4f32 as f64, 0.6f32 as f64);
    let c1 = 0.01f64 * 0.01;
    let lum = (2.0 * x * y + c1) / (x * x + y * y + c1);
    let detail = format!("PSNR {p:.5} dB (want 20.00 +- 0.01); SSIM {s:.8} vs luminance term {lum:.8}");
    ensure((p - 20.0).abs() <= 0.01 && (s - lum).abs() <= 1e-6, detail)
}

// ---------------------------------------------------------------------------
// Criterion 8: reruns are byte-identical.

fn snapshot(dir: &Path, into: &mut BTreeMap<String, Vec<u8>>, root: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            snapshot(&p, into, root);
        } else {
            into.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
        }
    }
}

/// Runs every command once in `work` and returns all files written plus
/// the stdout of the commands whose output is their artifact.
fn pipeline(work: &Path) -> std::result::Result<BTreeMap<String, Vec<u8>>, String> {
    let bin = env!("CARGO_BIN_EXE_stasunet");
    let small = [
        "--set", "num_frames=3", "--set", "base_channels=8", "--set", "align_channels=8", "--set", "crop_size=32",
    ];
    let w = |p: &str| work.join(p).display().to_string();
    let mut runs: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth", "--scenes", "3", "--frames", "5", "--size", "32", "--seed", "9", "--out", &w("data")]
            .into_iter()
            .map(String::from)
            .collect()),
        ("train", ["train", "--data", &w("data"), "--steps", "3", "--ckpt-every", "2", "--ckpt", &w("run/model.stas")]
            .into_iter()
            .map(String::from)
            .chain(small.iter().map(|s| s.to_string()))
            .collect()),
        ("enhance", ["enhance", "--ckpt", &w("run/model.stas"), "--in", &w("data/scene0002/20"), "--out", &w("out"), "--histmatch", &w("data/scene0000/10")]
            .into_iter()
            .map(String::from)
            .collect()),
        ("eval", ["eval", "--pred", &w("out"), "--gt", &w("data/scene0002/100"), "--csv", &w("metrics.csv")]
            .into_iter()
            .map(String::from)
            .collect()),
        ("gradcheck", ["gradcheck", "--samples", "4"].into_iter().map(String::from).chain(small.iter().map(|s| s.to_string())).collect()),
        ("experiment", ["experiment", "overfit", "--steps", "2", "--frames", "3", "--out", &w("exp")]
            .into_iter()
            .map(String::from)
            .chain(small.iter().map(|s| s.to_string()))
            .collect()),
    ];
    let mut files = BTreeMap::new();
    for (name, args) in runs.drain(..) {
        let o = Command::new(bin).args(&args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{name} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        if matches!(name, "eval" | "gradcheck") {
            files.insert(format!("<stdout of {name}>"), o.stdout);
        }
    }
    snapshot(work, &mut files, work);
    Ok(files)
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = tmp.path().join("work");
    let first = pipeline(&work)?;
    fs::remove_dir_all(&work).map_err(|e| e.to_string())?;
    let second = pipeline(&work)?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let detail = format!(
        "synth, train, enhance, eval, gradcheck, experiment rerun: {} artifacts compared, {} differ{}",
        first.len().max(second.len()),
        differing.len(),
        if differing.is_empty() { String::new() } else { format!(" {differing:?}") }
    );
    ensure(differing.is_empty() && first.len() == second.len() && first.len() > 40, detail)
}

// ---------------------------------------------------------------------------

fn main() {
    let slow = std::env::var("STASUNET_SLOW").is_ok_and(|v| v == "1");
    let criteria: [Criterion; 8] = [
        (1, "kernel oracles", criterion_1, false),
        (2, "gradient suite", criterion_2, false),
        (3, "structural identities", criterion_3, false),
        (4, "overfit one scene", criterion_4, false),
        (5, "frame-count trend", criterion_5, true),
        (6, "histogram-matching trend", criterion_6, true),
        (7, "metric closed forms", criterion_7, false),
        (8, "reproducibility", criterion_8, false),
    ];
    let mut failed = 0;
    for (n, name, run, is_slow) in criteria {
        if is_slow && !slow {
            println!("criterion {n} {name}: SKIPPED (slow suite, set STASUNET_SLOW=1)");
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({d}; {secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
