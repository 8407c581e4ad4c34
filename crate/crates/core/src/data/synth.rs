//! Procedural normal-light clips: band-limited sinusoid textures with soft
//! discs, under a few kinds of motion.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    /// The whole scene pans by an integer velocity.
    Translate,
    /// The texture rotates about the frame centre; discs drift.
    RotateTexture,
    /// The texture pans; discs drift independently.
    Mixed,
}

impl std::str::FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(Motion::Translate),
            "rotate" | "rotate-texture" => Ok(Motion::RotateTexture),
            "mixed" => Ok(Motion::Mixed),
            _ => Err(Error::InvalidArgument(format!("unknown motion `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

#[derive(Clone, Debug)]
struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
    vy: f64,
    vx: f64,
}

/// Every random choice of a scene, drawn once from its seed.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub motion: Motion,
    /// Integer pan in pixels per frame, `(dy, dx)`.
    pub velocity: (i64, i64),
    /// Texture rotation per frame in radians.
    pub spin: f64,
    base: [f64; 3],
    waves: [Vec<Wave>; 3],
    discs: Vec<Disc>,
}

const EDGE: f64 = 1.5;

impl SceneSpec {
    pub fn from_seed(seed: u64, motion: Motion, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = size as f64;
        let velocity = loop {
            let v = (rng.random_range(-1..=1), rng.random_range(-1..=1));
            if v != (0, 0) {
                break v;
            }
        };
        let spin = rng.random_range(0.02..0.05) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = [(); 3].map(|_| rng.random_range(0.3..0.7));
        let waves = [(); 3].map(|_| {
            (0..6)
                .map(|_| {
                    let f = rng.random_range(0.02..0.16);
                    let theta = rng.random_range(0.0..TAU);
                    Wave {
                        fy: f * theta.sin(),
                        fx: f * theta.cos(),
                        phase: rng.random_range(0.0..TAU),
                        amp: rng.random_range(0.02..0.06),
                    }
                })
                .collect()
        });
        let discs = (0..5)
            .map(|_| Disc {
                cy: rng.random_range(0.0..s),
                cx: rng.random_range(0.0..s),
                radius: rng.random_range(0.06..0.18) * s,
                color: [(); 3].map(|_| rng.random_range(0.05..0.95)),
                vy: rng.random_range(-1.5..1.5),
                vx: rng.random_range(-1.5..1.5),
            })
            .collect();
        SceneSpec {
            seed,
            motion,
            velocity,
            spin,
            base,
            waves,
            discs,
        }
    }

    fn texture(&self, c: usize, y: f64, x: f64) -> f64 {
        self.base[c]
            + self.waves[c]
                .iter()
                .map(|w| w.amp * (TAU * (w.fy * y + w.fx * x) + w.phase).sin())
                .sum::<f64>()
    }

    fn over_discs(&self, c: usize, mut v: f64, y: f64, x: f64, t: f64) -> f64 {
        for d in &self.discs {
            let (cy, cx) = (d.cy + d.vy * t, d.cx + d.vx * t);
            let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            let a = ((d.radius - r) / EDGE + 0.5).clamp(0.0, 1.0);
            v = v * (1.0 - a) + d.color[c] * a;
        }
        v
    }

    /// Value of channel `c` at pixel `(y, x)` of frame `k`.
    pub fn sample(&self, c: usize, y: usize, x: usize, k: usize, size: usize) -> f64 {
        let (y, x, t) = (y as f64, x as f64, k as f64);
        let (vy, vx) = (self.velocity.0 as f64, self.velocity.1 as f64);
        let v = match self.motion {
            Motion::Translate => {
                // Discs are painted in scene coordinates and pan with it.
                let (sy, sx) = (y + vy * t, x + vx * t);
                self.over_discs(c, self.texture(c, sy, sx), sy, sx, 0.0)
            }
            Motion::Mixed => self.over_discs(c, self.texture(c, y + vy * t, x + vx * t), y, x, t),
            Motion::RotateTexture => {
                let ctr = (size as f64 - 1.0) / 2.0;
                let (s, co) = (self.spin * t).sin_cos();
                let (dy, dx) = (y - ctr, x - ctr);
                let (ry, rx) = (co * dy - s * dx + ctr, s * dy + co * dx + ctr);
                self.over_discs(c, self.texture(c, ry, rx), y, x, t)
            }
        };
        v.clamp(0.0, 1.0)
    }
}

/// A normal-light clip of `num_frames` square frames of side `size`.
pub fn synth_scene(seed: u64, num_frames: usize, size: usize, motion: Motion) -> Result<Clip> {
    if num_frames == 0 || size == 0 {
        return Err(Error::InvalidArgument(format!("{num_frames} frames of size {size}")));
    }
    let spec = SceneSpec::from_seed(seed, motion, size);
    let frames = (0..num_frames)
        .map(|k| {
            Tensor::from_fn(&[3, size, size], |i| {
                let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
                spec.sample(c, y, x, k, size) as f32
            })
        })
        .collect();
    Clip::new(frames, 1.0, format!("scene{seed:04}"))
}
