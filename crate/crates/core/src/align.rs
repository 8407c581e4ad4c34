//! Pyramid, cascading, deformable alignment of neighbouring frames onto a
//! target frame.
//!
//! Every frame of a stack (the target included) is aligned onto the target.
//! Offset-predicting convs start at zero, so a fresh module behaves like
//! plain convolution with identity alignment.

use crate::error::{Error, Result};
use crate::nnops::{bilinear_resize, leaky_relu};
use crate::params::{Conv2d, Ctx, DeformConv2d, Init, ParamBuilder};
use crate::tensor::{concat, Real, Var};

pub const LEVELS: usize = 3;
pub const KERNEL: usize = 3;
const SLOPE: f64 = 0.1;
const OFFSET_CH: usize = 2 * KERNEL * KERNEL;

/// Feature maps at three scales, finest first. Each level is `(B, C, h, w)`.
#[derive(Clone, Copy)]
pub struct FramePyramid<'t, T: Real> {
    pub levels: [Var<'t, T>; LEVELS],
}

#[derive(Clone, Debug)]
pub struct AlignParams {
    pub channels: usize,
    /// Two stride-1 convs at full resolution, then one stride-2 conv per
    /// coarser level.
    pub feat: [Conv2d; 2],
    pub down: [Conv2d; LEVELS - 1],
    /// Offset predictors, finest level first.
    pub offset: [Conv2d; LEVELS],
    pub dcn: [DeformConv2d; LEVELS],
    /// Fuse the deformed features with the upsampled coarser result at
    /// levels 1 and 2.
    pub fuse: [Conv2d; LEVELS - 1],
    pub final_offset: Conv2d,
    pub final_dcn: DeformConv2d,
}

impl AlignParams {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        let c = channels;
        if c == 0 {
            return Err(Error::InvalidArgument("alignment needs at least one channel".into()));
        }
        let k = KERNEL;
        let conv = |b: &mut ParamBuilder, n: &str, cin, cout, stride| b.conv(&format!("{name}.{n}"), cin, cout, k, stride, None);
        let offset = |b: &mut ParamBuilder, n: &str, cin| b.conv(&format!("{name}.{n}"), cin, OFFSET_CH, k, 1, Some(Init::Zeros));
        Ok(AlignParams {
            channels: c,
            feat: [conv(b, "feat0", 3, c, 1)?, conv(b, "feat1", c, c, 1)?],
            down: [conv(b, "down2", c, c, 2)?, conv(b, "down3", c, c, 2)?],
            offset: [
                offset(b, "offset1", 2 * c + OFFSET_CH)?,
                offset(b, "offset2", 2 * c + OFFSET_CH)?,
                offset(b, "offset3", 2 * c)?,
            ],
            dcn: [
                b.deform_conv(&format!("{name}.dcn1"), c, c, k)?,
                b.deform_conv(&format!("{name}.dcn2"), c, c, k)?,
                b.deform_conv(&format!("{name}.dcn3"), c, c, k)?,
            ],
            fuse: [conv(b, "fuse1", 2 * c, c, 1)?, conv(b, "fuse2", 2 * c, c, 1)?],
            final_offset: offset(b, "final_offset", 2 * c)?,
            final_dcn: b.deform_conv(&format!("{name}.final_dcn"), c, c, k)?,
        })
    }

    /// Every offset-predicting conv.
    pub fn offset_convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.offset.iter().chain(std::iter::once(&self.final_offset))
    }
}

/// Feature pyramid of `frames`, `(B, 3, H, W)` or `(3, H, W)`.
pub fn extract_pyramid<'t, T: Real>(ctx: &Ctx<'t, T>, frames: Var<'t, T>, p: &AlignParams) -> Result<FramePyramid<'t, T>> {
    let shape = frames.shape();
    let frames = match shape.len() {
        3 => frames.reshape(&[1, shape[0], shape[1], shape[2]])?,
        4 => frames,
        _ => return Err(Error::shape("extract_pyramid", format!("frames {shape:?}"))),
    };
    let s = frames.shape();
    if s[1] != 3 {
        return Err(Error::shape("extract_pyramid", format!("expected RGB frames, got {s:?}")));
    }
    let factor = 1 << (LEVELS - 1);
    if s[2] % factor != 0 || s[3] % factor != 0 {
        return Err(Error::shape(
            "extract_pyramid",
            format!("frame {}x{} not divisible by {factor}", s[2], s[3]),
        ));
    }
    let mut l1 = frames;
    for conv in &p.feat {
        l1 = leaky_relu(conv.forward(ctx, l1)?, SLOPE);
    }
    let l2 = leaky_relu(p.down[0].forward(ctx, l1)?, SLOPE);
    let l3 = leaky_relu(p.down[1].forward(ctx, l2)?, SLOPE);
    Ok(FramePyramid { levels: [l1, l2, l3] })
}

fn cat<'t, T: Real>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    concat(parts, 1)
}

/// Coarse-to-fine alignment of `neighbor` onto `target`; returns aligned
/// level-1 features `(B, C, H, W)`.
pub fn cascade_align<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    neighbor: &FramePyramid<'t, T>,
    target: &FramePyramid<'t, T>,
    p: &AlignParams,
) -> Result<Var<'t, T>> {
    for (l, (a, b)) in neighbor.levels.iter().zip(&target.levels).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "cascade_align",
                format!("level {} neighbor {:?} vs target {:?}", l + 1, a.shape(), b.shape()),
            ));
        }
    }
    let top = LEVELS - 1;
    let (nb, tg) = (neighbor.levels[top], target.levels[top]);
    let mut offsets = p.offset[top].forward(ctx, cat(&[nb, tg])?)?;
    let mut feat = leaky_relu(p.dcn[top].forward(ctx, nb, offsets)?, SLOPE);

    for l in (0..top).rev() {
        let (nb, tg) = (neighbor.levels[l], target.levels[l]);
        // Offsets are in pixels, so they double with the resolution.
        let up_off = bilinear_resize(offsets, 2)?.scale(2.0);
        offsets = p.offset[l].forward(ctx, cat(&[nb, tg, up_off])?)?;
        let deformed = p.dcn[l].forward(ctx, nb, offsets)?;
        let fused = p.fuse[l].forward(ctx, cat(&[deformed, bilinear_resize(feat, 2)?])?)?;
        feat = if l > 0 { leaky_relu(fused, SLOPE) } else { fused };
    }

    let final_off = p.final_offset.forward(ctx, cat(&[feat, target.levels[0]])?)?;
    Ok(leaky_relu(p.final_dcn.forward(ctx, feat, final_off)?, SLOPE))
}

/// Aligned features of a whole stack.
#[derive(Clone, Copy)]
pub struct AlignedFeatures<'t, T: Real> {
    /// `(2N+1, C, H, W)` in temporal order.
    pub features: Var<'t, T>,
    pub target_index: usize,
}

/// Aligns every frame of `frames` `(F, 3, H, W)` onto frame `target_index`.
/// All frames share one batched pass through the module.
pub fn align_stack<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    frames: Var<'t, T>,
    target_index: usize,
    p: &AlignParams,
) -> Result<AlignedFeatures<'t, T>> {
    let shape = frames.shape();
    if shape.len() != 4 || target_index >= shape[0] {
        return Err(Error::shape(
            "align_stack",
            format!("frames {shape:?} with target {target_index}"),
        ));
    }
    let n = shape[0];
    let pyr = extract_pyramid(ctx, frames, p)?;
    let repeat = vec![target_index; n];
    let mut levels = pyr.levels;
    for (dst, src) in levels.iter_mut().zip(&pyr.levels) {
        *dst = src.index_select(0, &repeat)?;
    }
    let target = FramePyramid { levels };
    Ok(AlignedFeatures {
        features: cascade_align(ctx, &pyr, &target, p)?,
        target_index,
    })
}
