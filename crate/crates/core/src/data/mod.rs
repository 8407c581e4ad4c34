//! Clips, frame stacks, synthetic scenes, degradation, augmentation,
//! histogram matching and on-disk datasets.

mod augment;
mod degrade;
mod histogram;
mod io;
mod pairs;
mod synth;

pub use augment::{augment, flip_horizontal, flip_vertical, AugmentPlan};
pub use degrade::{darken, Degradation};
pub use histogram::{histogram_match, histogram_match_to, ks_distance, stretch, Histogram, BINS};
pub use io::{frame_name, load_frames, load_image, save_frames, save_image, Dataset, LEVEL_DIRS};
pub use pairs::TrainingSet;
pub use synth::{synth_scene, Motion, SceneSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames of one scene at one light level; each frame is `(3, H, W)` in
/// `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Tensor<f32>>,
    pub light_level: f64,
    pub scene_id: String,
    pub fps: f64,
}

impl Clip {
    pub fn new(frames: Vec<Tensor<f32>>, light_level: f64, scene_id: impl Into<String>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Data("clip has no frames".into()))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Data(format!("frames must be (3, H, W), got {shape:?}")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape.as_slice()) {
            return Err(Error::Data(format!("frame {i} is {:?}, frame 0 is {shape:?}", f.shape())));
        }
        if !(light_level > 0.0 && light_level <= 1.0) {
            return Err(Error::Data(format!("light level {light_level} outside (0, 1]")));
        }
        Ok(Clip {
            frames,
            light_level,
            scene_id: scene_id.into(),
            fps: 25.0,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(H, W)` of every frame.
    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }
}

/// `2N+1` consecutive frames around a target, as one `(F, 3, H, W)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub frames: Tensor<f32>,
    pub target_index: usize,
}

impl FrameStack {
    /// Frames `t-N ..= t+N` of `clip`, replicating the first/last frame
    /// past either end.
    pub fn from_clip(clip: &Clip, t: usize, num_frames: usize) -> Result<Self> {
        if num_frames.is_multiple_of(2) || t >= clip.len() {
            return Err(Error::Data(format!(
                "stack of {num_frames} around frame {t} of {}",
                clip.len()
            )));
        }
        let n = num_frames / 2;
        let last = clip.len() - 1;
        let picks: Vec<usize> = (0..num_frames).map(|k| (t + k).saturating_sub(n).min(last)).collect();
        Self::from_frames(picks.iter().map(|&i| &clip.frames[i]), n)
    }

    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a Tensor<f32>>, target_index: usize) -> Result<Self> {
        let mut shape = None;
        let mut data = Vec::new();
        let mut count = 0;
        for f in frames {
            match &shape {
                None => shape = Some(f.shape().to_vec()),
                Some(s) if s.as_slice() != f.shape() => {
                    return Err(Error::Data(format!("frame size {:?} vs {s:?}", f.shape())));
                }
                _ => {}
            }
            data.extend_from_slice(f.data());
            count += 1;
        }
        let s = shape.ok_or_else(|| Error::Data("empty stack".into()))?;
        if target_index >= count {
            return Err(Error::Data(format!("target {target_index} of {count} frames")));
        }
        let mut full = vec![count];
        full.extend(s);
        Ok(FrameStack {
            frames: Tensor::new(&full, data)?,
            target_index,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame `i` as `(3, H, W)`.
    pub fn frame(&self, i: usize) -> Tensor<f32> {
        let s = self.frames.shape();
        let per = s[1..].iter().product::<usize>();
        Tensor::new(&s[1..], self.frames.data()[i * per..(i + 1) * per].to_vec()).expect("frame shape")
    }
}

/// Deterministic 64-bit mix of two words (SplitMix64 finaliser), for
/// deriving independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
