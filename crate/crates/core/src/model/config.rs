use std::fmt::Write as _;

use crate::error::{Error, Result};

macro_rules! model_config {
    ($($(#[$doc:meta])* $field:ident: $ty:ty,)*) => {
        /// Architecture and optimiser hyperparameters.
        #[derive(Clone, Debug, PartialEq)]
        pub struct ModelConfig {
            $($(#[$doc])* pub $field: $ty,)*
        }

        impl ModelConfig {
            /// Every key accepted by [`ModelConfig::set`], in echo order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one field from its text form. Unknown keys are an error.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.trim().parse().map_err(|e| {
                            Error::InvalidArgument(format!("{key}={value}: {e}"))
                        })?;
                    })*
                    _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs, in [`Self::KEYS`] order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}

model_config! {
    /// Frames per input stack, `2N+1`.
    num_frames: usize,
    patch_size: usize,
    window_size: usize,
    /// Token width of the first U-Net level.
    base_channels: usize,
    /// Feature width inside the alignment module.
    align_channels: usize,
    unet_levels: usize,
    swin_pairs_per_level: usize,
    mlp_ratio: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    crop_size: usize,
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown preset `{s}` (toy|paper)"))),
        }
    }
}

/// Window size and shift of one U-Net level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelWindow {
    pub window: usize,
    pub shift: usize,
}

impl ModelConfig {
    /// Desk-scale settings: 64 px crops, 16 channels, three levels.
    pub fn toy() -> Self {
        ModelConfig {
            num_frames: 5,
            patch_size: 4,
            window_size: 8,
            base_channels: 16,
            align_channels: 16,
            unet_levels: 3,
            swin_pairs_per_level: 1,
            mlp_ratio: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            crop_size: 64,
            seed: 0,
        }
    }

    /// Full-size settings: 512 px crops, five levels, four block pairs.
    pub fn paper() -> Self {
        ModelConfig {
            base_channels: 96,
            align_channels: 64,
            unet_levels: 5,
            swin_pairs_per_level: 4,
            lr: 1e-6,
            crop_size: 512,
            ..Self::toy()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Toy => Self::toy(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn target_index(&self) -> usize {
        self.num_frames / 2
    }

    /// Token width at U-Net level `l`.
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels << l
    }

    pub fn heads(&self, l: usize) -> usize {
        (self.channels(l) / 8).max(1)
    }

    /// Number of dual upsamplers between the first token grid and the
    /// output resolution.
    pub fn output_upsamples(&self) -> usize {
        (self.patch_size / 2).trailing_zeros() as usize
    }

    /// Token grid side for a frame side `n`: the aligned features are
    /// pixel-shuffled x2 before `patch_size` patches.
    fn grid(&self, n: usize) -> Option<usize> {
        (2 * n).is_multiple_of(self.patch_size).then_some(2 * n / self.patch_size)
    }

    /// Per-level windows, fixed by the crop size. A grid smaller than the
    /// configured window uses one window covering it, with no shift.
    pub fn level_windows(&self) -> Vec<LevelWindow> {
        let g = self.grid(self.crop_size).unwrap_or(0);
        (0..self.unet_levels)
            .map(|l| {
                let side = g >> l;
                if side > 0 && side <= self.window_size {
                    LevelWindow { window: side, shift: 0 }
                } else {
                    LevelWindow {
                        window: self.window_size,
                        shift: self.window_size / 2,
                    }
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_frames == 0 || self.num_frames.is_multiple_of(2) {
            return bad(format!("num_frames must be odd, got {}", self.num_frames));
        }
        if self.patch_size < 2 || !self.patch_size.is_power_of_two() {
            return bad(format!("patch_size must be a power of two >= 2, got {}", self.patch_size));
        }
        if self.window_size == 0 || self.unet_levels == 0 || self.swin_pairs_per_level == 0 || self.mlp_ratio == 0 {
            return bad("window_size, unet_levels, swin_pairs_per_level and mlp_ratio must be positive".into());
        }
        if self.align_channels == 0 || !(self.num_frames * self.align_channels).is_multiple_of(4) {
            return bad(format!(
                "first upsample: num_frames * align_channels = {} must be divisible by 4",
                self.num_frames * self.align_channels
            ));
        }
        let ups = self.output_upsamples();
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(1 << ups) {
            return bad(format!(
                "output upsampling: base_channels {} must be divisible by {}",
                self.base_channels,
                1 << ups
            ));
        }
        for l in 0..self.unet_levels {
            let (c, h) = (self.channels(l), self.heads(l));
            if c % h != 0 {
                return bad(format!("level {}: {c} channels not divisible by {h} heads", l + 1));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam: betas in [0, 1) and eps > 0 required".into());
        }
        self.check_frame_size(self.crop_size, self.crop_size)
    }

    /// Checks that an `h x w` frame passes every stage, naming the first
    /// stage that rejects it.
    pub fn check_frame_size(&self, h: usize, w: usize) -> Result<()> {
        let stage = |name: &str, m: String| Err(Error::InvalidArgument(format!("{name}: {m}")));
        if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
            return stage("alignment pyramid", format!("frame {h}x{w} must have sides divisible by 4"));
        }
        let (Some(gh), Some(gw)) = (self.grid(h), self.grid(w)) else {
            return stage(
                "patch partition",
                format!("twice the frame size {h}x{w} must be divisible by patch {}", self.patch_size),
            );
        };
        for (l, lw) in self.level_windows().iter().enumerate() {
            let div = 1 << l;
            if gh % div != 0 || gw % div != 0 {
                return stage(
                    &format!("patch merging into level {}", l + 1),
                    format!("token grid {gh}x{gw} not divisible by {div}"),
                );
            }
            let (lh, lw_) = (gh / div, gw / div);
            if lh % lw.window != 0 || lw_ % lw.window != 0 {
                return stage(
                    &format!("window attention at level {}", l + 1),
                    format!("grid {lh}x{lw_} not divisible by window {}", lw.window),
                );
            }
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!("line {}: expected key=value, got `{line}`", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
    }

    #[test]
    fn toy_windows() {
        let w = ModelConfig::toy().level_windows();
        assert_eq!(w, vec![LevelWindow { window: 8, shift: 4 }, LevelWindow { window: 8, shift: 4 }, LevelWindow { window: 8, shift: 0 }]);
        let mut small = ModelConfig::toy();
        small.crop_size = 32;
        assert_eq!(small.level_windows()[2], LevelWindow { window: 4, shift: 0 });
        small.validate().unwrap();
    }

    #[test]
    fn kv_roundtrip_and_unknown_keys() {
        let mut c = ModelConfig::paper();
        c.seed = 77;
        let mut d = ModelConfig::toy();
        d.apply_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(c, d);
        assert!(d.set("depth", "3").is_err());
        assert!(d.set("lr", "fast").is_err());
        assert!(parse_kv("no equals sign").is_err());
    }

    #[test]
    fn invalid_configs_name_the_stage() {
        let mut c = ModelConfig::toy();
        c.num_frames = 4;
        assert!(c.validate().is_err());
        let c = ModelConfig::toy();
        let e = c.check_frame_size(64, 68).unwrap_err().to_string();
        assert!(e.contains("window attention"), "{e}");
        assert!(c.check_frame_size(66, 64).unwrap_err().to_string().contains("alignment"));
        c.check_frame_size(128, 64).unwrap();
    }
}
