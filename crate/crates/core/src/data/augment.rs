//! Paired random crop and flips.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FrameStack;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One crop window and flip choice, applied identically to every image of
/// a training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentPlan {
    pub top: usize,
    pub left: usize,
    pub crop: usize,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentPlan {
    pub fn sample(seed: u64, h: usize, w: usize, crop: usize) -> Result<Self> {
        if crop == 0 || crop > h || crop > w {
            return Err(Error::Data(format!("crop {crop} does not fit a {h}x{w} frame")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(AugmentPlan {
            top: rng.random_range(0..=h - crop),
            left: rng.random_range(0..=w - crop),
            crop,
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
        })
    }

    /// Applies the plan to the last two axes of `t`.
    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::Data(format!("cannot crop shape {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if self.top + self.crop > h || self.left + self.crop > w {
            return Err(Error::Data(format!("crop {self:?} outside a {h}x{w} image")));
        }
        let planes = t.numel() / (h * w);
        let c = self.crop;
        let mut out = Vec::with_capacity(planes * c * c);
        for p in 0..planes {
            for y in 0..c {
                let sy = self.top + if self.flip_v { c - 1 - y } else { y };
                for x in 0..c {
                    let sx = self.left + if self.flip_h { c - 1 - x } else { x };
                    out.push(t.data()[(p * h + sy) * w + sx]);
                }
            }
        }
        let mut shape = s.to_vec();
        let n = shape.len();
        shape[n - 2] = c;
        shape[n - 1] = c;
        Tensor::new(&shape, out)
    }
}

fn flip(t: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let plan = AugmentPlan {
        top: 0,
        left: 0,
        crop: h.min(w),
        flip_h: horizontal,
        flip_v: !horizontal,
    };
    assert_eq!(h, w, "flip helpers take square images");
    plan.apply(t).expect("full-frame crop")
}

/// Mirrors a square image left-right.
pub fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    flip(t, true)
}

/// Mirrors a square image top-bottom.
pub fn flip_vertical(t: &Tensor<f32>) -> Tensor<f32> {
    flip(t, false)
}

/// Random crop of side `crop` plus random flips, shared by the whole
/// stack and the ground truth.
pub fn augment(stack: &FrameStack, gt: &Tensor<f32>, crop: usize, seed: u64) -> Result<(FrameStack, Tensor<f32>)> {
    let s = stack.frames.shape();
    if gt.shape() != &s[1..] {
        return Err(Error::Data(format!("ground truth {:?} vs frames {s:?}", gt.shape())));
    }
    let plan = AugmentPlan::sample(seed, s[2], s[3], crop)?;
    Ok((
        FrameStack {
            frames: plan.apply(&stack.frames)?,
            target_index: stack.target_index,
        },
        plan.apply(gt)?,
    ))
}
