//! Shifted-window transformer blocks on `(H, W, C)` token grids.

use crate::error::{Error, Result};
use crate::nnops::{bilinear_resize, gelu, leaky_relu, pixel_shuffle, softmax};
use crate::params::{Ctx, Init, LayerNorm, Linear, ParamBuilder, ParamId};
use crate::tensor::{concat, Real, Tensor, Var};

/// Additive mask value for forbidden attention pairs.
pub const MASK_NEG: f64 = -1e9;

fn grid_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(op, format!("expected (H, W, C), got {shape:?}"))),
    }
}

/// Windows of a token grid: `windows` is `(num_windows, w*w, C)`.
#[derive(Clone, Copy)]
pub struct WindowGrid<'t, T: Real> {
    pub windows: Var<'t, T>,
    pub height: usize,
    pub width: usize,
    pub window: usize,
}

/// Flat source index of every `(window, token, channel)` slot.
fn partition_index(h: usize, w: usize, c: usize, win: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(h * w * c);
    for wy in 0..h / win {
        for wx in 0..w / win {
            for ty in 0..win {
                for tx in 0..win {
                    let base = ((wy * win + ty) * w + wx * win + tx) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    index
}

pub fn window_partition<'t, T: Real>(x: Var<'t, T>, window: usize) -> Result<WindowGrid<'t, T>> {
    let (h, w, c) = grid_dims("window_partition", &x.shape())?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(
            "window_partition",
            format!("{h}x{w} grid not divisible by window {window}"),
        ));
    }
    let nw = (h / window) * (w / window);
    let windows = x.gather(partition_index(h, w, c, window).into(), &[nw, window * window, c])?;
    Ok(WindowGrid {
        windows,
        height: h,
        width: w,
        window,
    })
}

pub fn window_reverse<'t, T: Real>(g: &WindowGrid<'t, T>) -> Result<Var<'t, T>> {
    let shape = g.windows.shape();
    let c = *shape.last().unwrap_or(&0);
    let fwd = partition_index(g.height, g.width, c, g.window);
    if shape.iter().product::<usize>() != fwd.len() {
        return Err(Error::shape(
            "window_reverse",
            format!("{shape:?} for a {}x{} grid", g.height, g.width),
        ));
    }
    let mut inv = vec![0; fwd.len()];
    for (dst, &src) in fwd.iter().enumerate() {
        inv[src] = dst;
    }
    g.windows.gather(inv.into(), &[g.height, g.width, c])
}

/// Toroidal roll by `(-s, -s)`: `out[i][j] = x[(i + s) mod H][(j + s) mod W]`.
/// A negative `s` undoes it.
pub fn cyclic_shift<'t, T: Real>(x: Var<'t, T>, s: isize) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims("cyclic_shift", &x.shape())?;
    if s == 0 {
        return Ok(x);
    }
    let mut index = Vec::with_capacity(h * w * c);
    for i in 0..h {
        let si = (i as isize + s).rem_euclid(h as isize) as usize;
        for j in 0..w {
            let sj = (j as isize + s).rem_euclid(w as isize) as usize;
            let base = (si * w + sj) * c;
            index.extend(base..base + c);
        }
    }
    x.gather(index.into(), &[h, w, c])
}

/// Region label of each position of a rolled grid along one axis.
fn band(i: usize, n: usize, window: usize, shift: usize) -> usize {
    if i < n - window {
        0
    } else if i < n - shift {
        1
    } else {
        2
    }
}

/// `(num_windows, w*w, w*w)` mask: 0 where two tokens of a window came
/// from the same region before the roll, [`MASK_NEG`] elsewhere.
pub fn shifted_window_mask<T: Real>(h: usize, w: usize, window: usize, shift: usize) -> Result<Tensor<T>> {
    if window == 0 || !h.is_multiple_of(window) || !w.is_multiple_of(window) || shift >= window {
        return Err(Error::shape(
            "shifted_window_mask",
            format!("{h}x{w} grid, window {window}, shift {shift}"),
        ));
    }
    let n = window * window;
    let nw = (h / window) * (w / window);
    let mut labels = Vec::with_capacity(nw * n);
    for wy in 0..h / window {
        for wx in 0..w / window {
            for ty in 0..window {
                for tx in 0..window {
                    let (y, x) = (wy * window + ty, wx * window + tx);
                    labels.push(if shift == 0 {
                        0
                    } else {
                        3 * band(y, h, window, shift) + band(x, w, window, shift)
                    });
                }
            }
        }
    }
    let neg = T::from_f64c(MASK_NEG);
    Ok(Tensor::from_fn(&[nw, n, n], |idx| {
        let k = idx / (n * n);
        let (i, j) = ((idx / n) % n, idx % n);
        if labels[k * n + i] == labels[k * n + j] {
            T::zero()
        } else {
            neg
        }
    }))
}

/// Index into the flattened `((2w-1)^2)` bias table for each token pair.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = i / window + window - 1 - j / window;
            let dx = i % window + window - 1 - j % window;
            out.push(dy * span + dx);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SwinBlockParams {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    /// `((2w-1)^2, heads)`.
    pub rel_bias: ParamId,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
    pub window: usize,
    pub heads: usize,
    pub shift: usize,
}

impl SwinBlockParams {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        dim: usize,
        window: usize,
        heads: usize,
        shift: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{dim} channels over {heads} heads")));
        }
        if window == 0 || shift >= window {
            return Err(Error::InvalidArgument(format!("window {window} shift {shift}")));
        }
        let span = 2 * window - 1;
        Ok(SwinBlockParams {
            ln1: b.layer_norm(&format!("{name}.ln1"), dim)?,
            qkv: b.linear(&format!("{name}.qkv"), dim, 3 * dim, true)?,
            proj: b.linear(&format!("{name}.proj"), dim, dim, true)?,
            rel_bias: b.param(&format!("{name}.rel_bias"), &[span * span, heads], Init::Zeros)?,
            ln2: b.layer_norm(&format!("{name}.ln2"), dim)?,
            fc1: b.linear(&format!("{name}.fc1"), dim, mlp_ratio * dim, true)?,
            fc2: b.linear(&format!("{name}.fc2"), mlp_ratio * dim, dim, true)?,
            dim,
            window,
            heads,
            shift,
        })
    }
}

/// Post-softmax attention weights `(num_windows, heads, n, n)` and values
/// `(num_windows * heads, n, d)`.
fn attention_parts<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    g: &WindowGrid<'t, T>,
    p: &SwinBlockParams,
    mask: Option<&Tensor<T>>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = g.windows.shape();
    let [nw, n, c] = shape[..] else {
        return Err(Error::shape("window_attention", format!("windows {shape:?}")));
    };
    if c != p.dim || n != p.window * p.window {
        return Err(Error::shape(
            "window_attention",
            format!("windows {shape:?} for dim {} window {}", p.dim, p.window),
        ));
    }
    let (heads, d) = (p.heads, c / p.heads);
    let qkv = p
        .qkv
        .forward(ctx, g.windows)?
        .reshape(&[nw, n, 3, heads, d])?
        .permute(&[2, 0, 3, 1, 4])?;
    let part = |s: usize| qkv.narrow(0, s, 1)?.reshape(&[nw * heads, n, d]);
    let q = part(0)?.scale(1.0 / (d as f64).sqrt());
    let (k, v) = (part(1)?, part(2)?);
    let mut scores = q.matmul(k, false, true)?;

    let rel = relative_position_index(p.window);
    let mut bias_index = Vec::with_capacity(nw * heads * n * n);
    for _ in 0..nw {
        for h in 0..heads {
            bias_index.extend(rel.iter().map(|&r| r * heads + h));
        }
    }
    let bias = ctx.p(p.rel_bias).gather(bias_index.into(), &[nw * heads, n, n])?;
    scores = scores.add(bias)?;

    if let Some(m) = mask {
        if m.shape() != [nw, n, n] {
            return Err(Error::shape(
                "window_attention",
                format!("mask {:?} for {nw} windows of {n} tokens", m.shape()),
            ));
        }
        let mut data = Vec::with_capacity(nw * heads * n * n);
        for k in 0..nw {
            let row = &m.data()[k * n * n..(k + 1) * n * n];
            for _ in 0..heads {
                data.extend_from_slice(row);
            }
        }
        let full = Tensor::new(&[nw * heads, n, n], data)?;
        scores = scores.add(ctx.tape().constant(full))?;
    }
    let attn = softmax(scores, 2)?;
    Ok((attn, v))
}

/// Attention weights of every window and head, `(num_windows, heads, n, n)`.
pub fn attention_weights<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    g: &WindowGrid<'t, T>,
    p: &SwinBlockParams,
    mask: Option<&Tensor<T>>,
) -> Result<Var<'t, T>> {
    let (attn, _) = attention_parts(ctx, g, p, mask)?;
    let [nwh, n, _] = attn.shape()[..] else { unreachable!() };
    attn.reshape(&[nwh / p.heads, p.heads, n, n])
}

/// Multi-head self-attention inside every window, followed by the output
/// projection.
pub fn window_attention<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    g: &WindowGrid<'t, T>,
    p: &SwinBlockParams,
    mask: Option<&Tensor<T>>,
) -> Result<WindowGrid<'t, T>> {
    let (attn, v) = attention_parts(ctx, g, p, mask)?;
    let shape = g.windows.shape();
    let (nw, n, c) = (shape[0], shape[1], shape[2]);
    let heads = p.heads;
    let out = attn
        .matmul(v, false, false)?
        .reshape(&[nw, heads, n, c / heads])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[nw, n, c])?;
    Ok(WindowGrid {
        windows: p.proj.forward(ctx, out)?,
        ..*g
    })
}

/// One pre-norm transformer block: windowed attention (rolled when
/// `p.shift > 0`) and an MLP, each with a residual connection.
pub fn swin_block<'t, T: Real>(ctx: &Ctx<'t, T>, x: Var<'t, T>, p: &SwinBlockParams) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims("swin_block", &x.shape())?;
    if c != p.dim {
        return Err(Error::shape("swin_block", format!("{c} channels, block expects {}", p.dim)));
    }
    if h % p.window != 0 || w % p.window != 0 {
        return Err(Error::shape(
            "swin_block",
            format!("{h}x{w} grid not divisible by window {}", p.window),
        ));
    }
    let s = p.shift as isize;
    let y = cyclic_shift(p.ln1.forward(ctx, x)?, s)?;
    let mask = (p.shift > 0)
        .then(|| shifted_window_mask::<T>(h, w, p.window, p.shift))
        .transpose()?;
    let attended = window_attention(ctx, &window_partition(y, p.window)?, p, mask.as_ref())?;
    let y = cyclic_shift(window_reverse(&attended)?, -s)?;
    let x = x.add(y)?;
    let m = p.fc2.forward(ctx, gelu(p.fc1.forward(ctx, p.ln2.forward(ctx, x)?)?))?;
    x.add(m)
}

/// A regular block followed by a shifted one.
pub fn swin_block_pair<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    x: Var<'t, T>,
    a: &SwinBlockParams,
    b: &SwinBlockParams,
) -> Result<Var<'t, T>> {
    // The second block is unshifted only when its window spans the grid.
    if a.shift != 0 || (b.shift != b.window / 2 && b.shift != 0) {
        return Err(Error::InvalidArgument(format!(
            "block pair shifts ({}, {}), expected (0, {})",
            a.shift,
            b.shift,
            b.window / 2
        )));
    }
    let x = swin_block(ctx, x, a)?;
    swin_block(ctx, x, b)
}

#[derive(Clone, Debug)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerging {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        Ok(PatchMerging {
            norm: b.layer_norm(&format!("{name}.norm"), 4 * dim)?,
            reduction: b.linear(&format!("{name}.reduction"), 4 * dim, 2 * dim, false)?,
        })
    }
}

/// Gathers each 2x2 neighbourhood into `4C` channels, ordered
/// `(0,0), (1,0), (0,1), (1,1)` as `(row, col)` offsets.
pub fn merge_gather<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims("patch_merging", &x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("patch_merging", format!("odd grid {h}x{w}")));
    }
    let mut index = Vec::with_capacity(h * w * c);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let base = ((2 * i + dy) * w + 2 * j + dx) * c;
                index.extend(base..base + c);
            }
        }
    }
    x.gather(index.into(), &[h / 2, w / 2, 4 * c])
}

pub fn patch_merging<'t, T: Real>(ctx: &Ctx<'t, T>, x: Var<'t, T>, p: &PatchMerging) -> Result<Var<'t, T>> {
    let merged = p.norm.forward(ctx, merge_gather(x)?)?;
    p.reduction.forward(ctx, merged)
}

/// Bilinear and pixel-shuffle upsampling branches, concatenated and
/// reduced by a 1x1 projection. Linears on `(H, W, C)` act as 1x1 convs.
#[derive(Clone, Debug)]
pub struct DualUpsample {
    pub shuffle_in: Linear,
    pub shuffle_out: Linear,
    pub bilinear_in: Linear,
    pub bilinear_out: Linear,
    pub merge: Linear,
    pub dim: usize,
}

impl DualUpsample {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("dual upsample needs even channels, got {dim}")));
        }
        let half = dim / 2;
        let mut conv1 = |suffix: &str, cin: usize, cout: usize, bias: bool| {
            b.linear_init(&format!("{name}.{suffix}"), cin, cout, bias, Init::He { fan_in: cin })
        };
        Ok(DualUpsample {
            shuffle_in: conv1("shuffle_in", dim, 2 * dim, true)?,
            shuffle_out: conv1("shuffle_out", half, half, false)?,
            bilinear_in: conv1("bilinear_in", dim, dim, true)?,
            bilinear_out: conv1("bilinear_out", dim, half, false)?,
            merge: conv1("merge", dim, half, false)?,
            dim,
        })
    }
}

const UP_SLOPE: f64 = 0.1;

fn to_chw<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.permute(&[2, 0, 1])
}

fn to_hwc<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.permute(&[1, 2, 0])
}

/// The bilinear branch alone, `(H, W, C) -> (2H, 2W, C/2)`.
pub fn bilinear_branch<'t, T: Real>(ctx: &Ctx<'t, T>, x: Var<'t, T>, p: &DualUpsample) -> Result<Var<'t, T>> {
    let y = leaky_relu(p.bilinear_in.forward(ctx, x)?, UP_SLOPE);
    let y = to_hwc(bilinear_resize(to_chw(y)?, 2)?)?;
    p.bilinear_out.forward(ctx, y)
}

/// The pixel-shuffle branch alone, `(H, W, C) -> (2H, 2W, C/2)`.
pub fn shuffle_branch<'t, T: Real>(ctx: &Ctx<'t, T>, x: Var<'t, T>, p: &DualUpsample) -> Result<Var<'t, T>> {
    let y = leaky_relu(p.shuffle_in.forward(ctx, x)?, UP_SLOPE);
    let y = to_hwc(pixel_shuffle(to_chw(y)?, 2)?)?;
    p.shuffle_out.forward(ctx, y)
}

/// `(H, W, C) -> (2H, 2W, C/2)`.
pub fn dual_upsample<'t, T: Real>(ctx: &Ctx<'t, T>, x: Var<'t, T>, p: &DualUpsample) -> Result<Var<'t, T>> {
    let (_, _, c) = grid_dims("dual_upsample", &x.shape())?;
    if c != p.dim {
        return Err(Error::shape("dual_upsample", format!("{c} channels, expected {}", p.dim)));
    }
    let both = concat(&[shuffle_branch(ctx, x, p)?, bilinear_branch(ctx, x, p)?], 2)?;
    p.merge.forward(ctx, both)
}
