//! Full network: alignment, first upsample, patch embedding, Swin U-Net,
//! reconstruction; plus loss, optimiser and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::{parse_kv, LevelWindow, ModelConfig, Preset};
pub use gradcheck::{gradcheck_model, GradSample};
pub use train::{adam_step, fit, l1_loss, train_step, AdamState};

use crate::align::{align_stack, AlignParams};
use crate::data::{Clip, FrameStack};
use crate::error::{Error, Result};
use crate::nnops::{pixel_shuffle, pixel_unshuffle};
use crate::params::{Conv2d, Ctx, LayerNorm, Linear, ParamBuilder, ParamStore};
use crate::swin::{dual_upsample, patch_merging, swin_block_pair, DualUpsample, PatchMerging, SwinBlockParams};
use crate::tensor::{concat, Real, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Stage {
    pub pairs: Vec<(SwinBlockParams, SwinBlockParams)>,
}

impl Stage {
    fn new(b: &mut ParamBuilder, name: &str, cfg: &ModelConfig, level: usize) -> Result<Self> {
        let lw = cfg.level_windows()[level];
        let (c, h) = (cfg.channels(level), cfg.heads(level));
        let pairs = (0..cfg.swin_pairs_per_level)
            .map(|k| {
                let a = SwinBlockParams::new(b, &format!("{name}.pair{k}.a"), c, lw.window, h, 0, cfg.mlp_ratio)?;
                let s = SwinBlockParams::new(b, &format!("{name}.pair{k}.b"), c, lw.window, h, lw.shift, cfg.mlp_ratio)?;
                Ok((a, s))
            })
            .collect::<Result<_>>()?;
        Ok(Stage { pairs })
    }

    fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, mut x: Var<'t, T>) -> Result<Var<'t, T>> {
        for (a, b) in &self.pairs {
            x = swin_block_pair(ctx, x, a, b)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: DualUpsample,
    /// Restores the width after concatenating the skip connection.
    pub reduce: Linear,
    pub stage: Stage,
}

/// Layer layout of the network; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct StaSunet {
    pub cfg: ModelConfig,
    pub align: AlignParams,
    pub embed_conv: Conv2d,
    pub patch_proj: Linear,
    pub patch_norm: LayerNorm,
    pub encoder: Vec<Stage>,
    pub merges: Vec<PatchMerging>,
    pub decoder: Vec<DecoderStage>,
    pub out_norm: LayerNorm,
    pub out_up: Vec<DualUpsample>,
    pub out_conv: Conv2d,
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Shape { op, detail } => Error::Shape {
            op,
            detail: format!("{detail} (in {stage})"),
        },
        other => other,
    }
}

impl StaSunet {
    /// Lays out the network and initialises its parameters from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let b = &mut ParamBuilder::new(&mut store, cfg.seed);
        let c0 = cfg.base_channels;
        let shuffled = cfg.num_frames * cfg.align_channels / 4;
        let p = cfg.patch_size;
        let align = AlignParams::new(b, "align", cfg.align_channels)?;
        let embed_conv = b.conv("embed.conv", shuffled, c0, 3, 1, None)?;
        let patch_proj = b.linear("embed.proj", c0 * p * p, c0, true)?;
        let patch_norm = b.layer_norm("embed.norm", c0)?;
        let levels = cfg.unet_levels;
        let mut encoder = Vec::with_capacity(levels);
        let mut merges = Vec::with_capacity(levels - 1);
        for l in 0..levels {
            encoder.push(Stage::new(b, &format!("enc{l}"), cfg, l)?);
            if l + 1 < levels {
                merges.push(PatchMerging::new(b, &format!("enc{l}.merge"), cfg.channels(l))?);
            }
        }
        let mut decoder = Vec::with_capacity(levels - 1);
        for l in (0..levels - 1).rev() {
            let c = cfg.channels(l);
            decoder.push(DecoderStage {
                up: DualUpsample::new(b, &format!("dec{l}.up"), 2 * c)?,
                reduce: b.linear(&format!("dec{l}.reduce"), 2 * c, c, true)?,
                stage: Stage::new(b, &format!("dec{l}"), cfg, l)?,
            });
        }
        let out_norm = b.layer_norm("out.norm", c0)?;
        let out_up = (0..cfg.output_upsamples())
            .map(|k| DualUpsample::new(b, &format!("out.up{k}"), c0 >> k))
            .collect::<Result<Vec<_>>>()?;
        let out_conv = b.conv("out.conv", c0 >> cfg.output_upsamples(), 3, 3, 1, None)?;
        let model = StaSunet {
            cfg: cfg.clone(),
            align,
            embed_conv,
            patch_proj,
            patch_norm,
            encoder,
            merges,
            decoder,
            out_norm,
            out_up,
            out_conv,
        };
        Ok((model, store))
    }

    /// Checks that `store` has exactly this layout's names and shapes.
    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        let (_, fresh) = Self::new(&self.cfg)?;
        if fresh.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, config needs {}",
                store.len(),
                fresh.len()
            )));
        }
        for ((na, ta), (nb, tb)) in fresh.iter().zip(store.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {na} {:?}, found {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Restores a frame from `frames` `(num_frames, 3, H, W)`; returns
    /// `(3, H, W)`, unclamped.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, frames: Var<'t, T>) -> Result<Var<'t, T>> {
        let cfg = &self.cfg;
        let shape = frames.shape();
        if shape.len() != 4 || shape[0] != cfg.num_frames || shape[1] != 3 {
            return Err(Error::shape(
                "forward",
                format!("expected ({}, 3, H, W) frames, got {shape:?}", cfg.num_frames),
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        cfg.check_frame_size(h, w)?;

        let aligned = align_stack(ctx, frames, cfg.target_index(), &self.align).map_err(|e| stage_err("alignment", e))?;
        let stacked = aligned.features.reshape(&[cfg.num_frames * cfg.align_channels, h, w])?;
        let up = pixel_shuffle(stacked, 2)?;
        let emb = self.embed_conv.forward(ctx, up)?;
        let patches = pixel_unshuffle(emb, cfg.patch_size)?.permute(&[1, 2, 0])?;
        let mut x = self.patch_norm.forward(ctx, self.patch_proj.forward(ctx, patches)?)?;

        let mut skips = Vec::with_capacity(cfg.unet_levels);
        for (l, stage) in self.encoder.iter().enumerate() {
            x = stage.forward(ctx, x).map_err(|e| stage_err(&format!("encoder level {}", l + 1), e))?;
            if let Some(m) = self.merges.get(l) {
                skips.push(x);
                x = patch_merging(ctx, x, m)?;
            }
        }
        for dec in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let upx = dual_upsample(ctx, x, &dec.up)?;
            x = dec.reduce.forward(ctx, concat(&[upx, skip], 2)?)?;
            x = dec.stage.forward(ctx, x)?;
        }
        x = self.out_norm.forward(ctx, x)?;
        for up in &self.out_up {
            x = dual_upsample(ctx, x, up)?;
        }
        self.out_conv.forward(ctx, x.permute(&[2, 0, 1])?)
    }

    /// Restores every frame of `clip` from its edge-replicated stack.
    pub fn enhance_clip(&self, store: &ParamStore, clip: &Clip) -> Result<Vec<Tensor<f32>>> {
        let (h, w) = clip.frame_size();
        self.cfg.check_frame_size(h, w)?;
        (0..clip.len())
            .map(|t| self.enhance(store, &FrameStack::from_clip(clip, t, self.cfg.num_frames)?.frames))
            .collect()
    }

    /// Inference without gradients; the result is clamped to `[0, 1]`.
    pub fn enhance(&self, store: &ParamStore, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::<f32>::new();
        let ctx = Ctx::new(&tape, store, false);
        let out = self.forward(&ctx, tape.constant(frames.clone()))?;
        let out = out.value().map(|v| v.clamp(0.0, 1.0));
        Ok(out)
    }
}
