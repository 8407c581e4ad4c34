//! Paired low-light / normal-light clips and seeded training samples.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{augment, mix_seed, Clip, FrameStack};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frame-aligned low/normal clip pairs.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pairs: Vec<(Clip, Clip)>,
}

impl TrainingSet {
    /// Each pair is `(low, gt)`; both must have the same length and size.
    pub fn new(pairs: Vec<(Clip, Clip)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        for (low, gt) in &pairs {
            if low.len() != gt.len() || low.frame_size() != gt.frame_size() {
                return Err(Error::Data(format!(
                    "scene `{}`: low-light clip is {} frames of {:?}, ground truth {} of {:?}",
                    low.scene_id,
                    low.len(),
                    low.frame_size(),
                    gt.len(),
                    gt.frame_size()
                )));
            }
        }
        Ok(TrainingSet { pairs })
    }

    pub fn pairs(&self) -> &[(Clip, Clip)] {
        &self.pairs
    }

    /// The training sample for `step`: a random pair, a random target frame
    /// with its edge-replicated stack, and a shared random crop and flip.
    /// A pure function of `(seed, step)`, which is what makes resumed runs
    /// match unbroken ones.
    pub fn sample(&self, seed: u64, step: u64, num_frames: usize, crop: usize) -> Result<(FrameStack, Tensor<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, step));
        let (low, gt) = &self.pairs[rng.random_range(0..self.pairs.len())];
        let t = rng.random_range(0..low.len());
        let stack = FrameStack::from_clip(low, t, num_frames)?;
        augment(&stack, &gt.frames[t], crop, rng.next_u64())
    }
}
