//! Low-light degradation: gain, gamma, signal-dependent shot noise and
//! constant read noise, clipped to `[0, 1]`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{mix_seed, Clip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = clip(level * x^gamma + shot + read)` with
/// `shot ~ N(0, shot_gain * level * x)` and `read ~ N(0, read_sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub gamma: f64,
    pub shot_gain: f64,
    pub read_sigma: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Degradation {
            gamma: 1.1,
            shot_gain: 0.004,
            read_sigma: 0.003,
        }
    }
}

impl Degradation {
    pub fn noiseless(gamma: f64) -> Self {
        Degradation {
            gamma,
            shot_gain: 0.0,
            read_sigma: 0.0,
        }
    }

    /// Degrades one frame; `seed` fixes the noise.
    pub fn apply_frame(&self, frame: &Tensor<f32>, level: f64, seed: u64) -> Result<Tensor<f32>> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::InvalidArgument(format!("light level {level} outside (0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = self.shot_gain > 0.0 || self.read_sigma > 0.0;
        let data = frame
            .data()
            .iter()
            .map(|&x| {
                let x = x as f64;
                let mut y = level * x.powf(self.gamma);
                if noisy {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    y += z1 * (self.shot_gain * level * x.max(0.0)).sqrt() + z2 * self.read_sigma;
                }
                y.clamp(0.0, 1.0) as f32
            })
            .collect();
        Tensor::new(frame.shape(), data)
    }

    /// Degrades every frame; frame `k` uses noise seed `mix(seed, k)`.
    pub fn apply(&self, clip: &Clip, level: f64, seed: u64) -> Result<Clip> {
        let frames = clip
            .frames
            .iter()
            .enumerate()
            .map(|(k, f)| self.apply_frame(f, level, mix_seed(seed, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Clip {
            frames,
            light_level: level,
            scene_id: clip.scene_id.clone(),
            fps: clip.fps,
        })
    }
}

/// [`Degradation::apply`] with default noise settings.
pub fn darken(clip: &Clip, level: f64, noise_seed: u64) -> Result<Clip> {
    Degradation::default().apply(clip, level, noise_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, Motion};

    #[test]
    fn identity_and_pure_gain() {
        let clip = synth_scene(1, 2, 16, Motion::Mixed).unwrap();
        let same = Degradation::noiseless(1.0).apply(&clip, 1.0, 0).unwrap();
        assert_eq!(same.frames, clip.frames);
        let dim = Degradation::noiseless(1.0).apply(&clip, 0.1, 0).unwrap();
        for (a, b) in dim.frames.iter().zip(&clip.frames) {
            for (&y, &x) in a.data().iter().zip(b.data()) {
                assert_eq!(y, (0.1 * x as f64) as f32);
            }
        }
        assert!(darken(&clip, 0.0, 1).is_err());
        assert!(darken(&clip, 1.5, 1).is_err());
    }

    #[test]
    fn noise_is_zero_mean() {
        let d = Degradation {
            gamma: 1.0,
            ..Degradation::default()
        };
        let x = 0.6;
        let frame = Tensor::full(&[1, 1000, 1000], x as f32);
        let y = d.apply_frame(&frame, 0.1, 42).unwrap();
        // At 0.06 the clip bounds are over 3 sigma away, so clipping is negligible.
        let n = y.numel() as f64;
        let mean = y.data().iter().map(|&v| v as f64 - 0.1 * x).sum::<f64>() / n;
        let sigma = (d.shot_gain * 0.1 * x + d.read_sigma.powi(2)).sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn seeded_and_aligned() {
        let clip = synth_scene(5, 3, 16, Motion::Translate).unwrap();
        let a = darken(&clip, 0.2, 9).unwrap();
        assert_eq!(a, darken(&clip, 0.2, 9).unwrap());
        assert_ne!(a, darken(&clip, 0.2, 10).unwrap());
        assert_eq!(a.len(), clip.len());
        assert_eq!(a.light_level, 0.2);
    }

    #[test]
    fn correlation_peaks_at_zero_shift() {
        let clip = synth_scene(6, 3, 32, Motion::Mixed).unwrap();
        let low = darken(&clip, 0.1, 3).unwrap();
        for (a, b) in low.frames.iter().zip(&clip.frames) {
            let centred = |t: &Tensor<f32>| {
                let m = t.sum_f64() / t.numel() as f64;
                t.data().iter().map(|&v| v as f64 - m).collect::<Vec<_>>()
            };
            let (a, b) = (centred(a), centred(b));
            let corr = |dy: i64, dx: i64| {
                let mut s = 0.0;
                for c in 0..3 {
                    for y in 4..28i64 {
                        for x in 4..28i64 {
                            let i = (c * 32 + y as usize) * 32 + x as usize;
                            let j = (c * 32 + (y + dy) as usize) * 32 + (x + dx) as usize;
                            s += a[i] * b[j];
                        }
                    }
                }
                s
            };
            let best = (-3..=3)
                .flat_map(|dy| (-3..=3).map(move |dx| (dy, dx)))
                .max_by(|p, q| corr(p.0, p.1).total_cmp(&corr(q.0, q.1)))
                .unwrap();
            assert_eq!(best, (0, 0));
        }
    }
}
