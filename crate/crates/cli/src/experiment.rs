//! Train-and-evaluate runs on in-memory synthetic data: an overfit check,
//! input frame count, and histogram matching across light levels.

use std::fmt::Write as _;
use std::fs;

use stasunet::data::{mix_seed, stretch, synth_scene, Clip, Histogram, Motion, TrainingSet};
use stasunet::metrics::{psnr, ssim};
use stasunet::model::{fit, l1_loss, AdamState, ModelConfig, Preset, StaSunet};
use stasunet::params::{Ctx, ParamStore};
use stasunet::{Result, Tape, Tensor};

use crate::args::{ExperimentArgs, ExperimentKind};
use crate::config::{resolve_model, Echo};
use crate::enhance::match_clip;
use crate::error::{CliError, CliResult};
use crate::synth::{darken_pct, scene_seed};

/// Quantiles of the contrast-stretch baseline.
pub const STRETCH_LO: f64 = 0.005;
pub const STRETCH_HI: f64 = 0.995;

/// Progress sink; experiments report one line per event.
pub type Log<'a> = &'a mut dyn FnMut(&str);

/// Synthetic scene counts and sizes. Frames are square with side `size`.
#[derive(Clone, Debug)]
pub struct SynthSplit {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub frames: usize,
    pub size: usize,
    pub motion: Motion,
    pub seed: u64,
}

impl SynthSplit {
    /// `(low, gt)` pairs of scenes `range` at `pct` percent light.
    fn pairs(&self, range: std::ops::Range<usize>, pct: u32) -> Result<Vec<(Clip, Clip)>> {
        range
            .map(|k| {
                let s = scene_seed(self.seed, k);
                let gt = synth_scene(s, self.frames, self.size, self.motion)?;
                Ok((darken_pct(&gt, pct, s)?, gt))
            })
            .collect()
    }

    pub fn train(&self, pct: u32) -> Result<Vec<(Clip, Clip)>> {
        self.pairs(0..self.train_scenes, pct)
    }

    /// Test scenes follow the training scenes, so they never overlap.
    pub fn test(&self, pct: u32) -> Result<Vec<(Clip, Clip)>> {
        self.pairs(self.train_scenes..self.train_scenes + self.test_scenes, pct)
    }
}

/// Mean PSNR and SSIM over every frame of every pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

fn score_frames(pred: &[Tensor<f32>], gt: &[Tensor<f32>], acc: &mut (f64, f64, usize)) -> Result<()> {
    for (p, g) in pred.iter().zip(gt) {
        acc.0 += psnr(p, g)?;
        acc.1 += ssim(p, g)?;
        acc.2 += 1;
    }
    Ok(())
}

fn finish(acc: (f64, f64, usize)) -> Scores {
    Scores {
        psnr: acc.0 / acc.2 as f64,
        ssim: acc.1 / acc.2 as f64,
    }
}

/// Scores the model on `pairs`, with `prepare` applied to each low-light
/// clip before inference.
pub fn score_model(
    model: &StaSunet,
    store: &ParamStore,
    pairs: &[(Clip, Clip)],
    prepare: impl Fn(&Clip) -> Result<Clip>,
) -> Result<Scores> {
    let mut acc = (0.0, 0.0, 0);
    for (low, gt) in pairs {
        let out = model.enhance_clip(store, &prepare(low)?)?;
        score_frames(&out, &gt.frames, &mut acc)?;
    }
    Ok(finish(acc))
}

/// Trains a fresh model for `steps` updates, logging every `every` steps.
pub fn train_fresh(
    cfg: &ModelConfig,
    set: &TrainingSet,
    steps: u64,
    log: Log,
) -> Result<(StaSunet, ParamStore, Vec<f32>)> {
    let (model, mut store) = StaSunet::new(cfg)?;
    let mut state = AdamState::new(&store);
    let mut losses = Vec::with_capacity(steps as usize);
    let every = (steps / 20).max(1);
    fit(&model, &mut store, &mut state, set, cfg.seed, steps, |s, l, _, _| {
        losses.push(l);
        if s % every == 0 || s + 1 == steps {
            log(&format!("step={s} loss={l} num_frames={}", cfg.num_frames));
        }
        Ok(())
    })?;
    Ok((model, store, losses))
}

/// Mean full-frame L1 of the unclamped network output over a clip.
pub fn clip_l1(model: &StaSunet, store: &ParamStore, low: &Clip, gt: &Clip) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..low.len() {
        let stack = stasunet::data::FrameStack::from_clip(low, t, model.cfg.num_frames)?;
        let tape = Tape::<f32>::new();
        let ctx = Ctx::new(&tape, store, false);
        let pred = model.forward(&ctx, tape.constant(stack.frames))?;
        total += l1_loss(pred, tape.constant(gt.frames[t].clone()))?.value().item()? as f64;
    }
    Ok(total / low.len() as f64)
}

#[derive(Clone, Debug)]
pub struct OverfitReport {
    pub initial_l1: f64,
    pub final_l1: f64,
    pub model: Scores,
    /// The darkened input after a per-channel percentile stretch.
    pub stretched: Scores,
    pub losses: Vec<f32>,
}

/// Trains on a single scene and scores the same clip.
pub fn overfit(cfg: &ModelConfig, split: &SynthSplit, pct: u32, steps: u64, log: Log) -> Result<OverfitReport> {
    let one = SynthSplit {
        train_scenes: 1,
        ..split.clone()
    };
    let pairs = one.train(pct)?;
    let (low, gt) = &pairs[0];
    let (model, init) = StaSunet::new(cfg)?;
    let initial_l1 = clip_l1(&model, &init, low, gt)?;
    let set = TrainingSet::new(pairs.clone())?;
    let (model, store, losses) = train_fresh(cfg, &set, steps, log)?;
    let final_l1 = clip_l1(&model, &store, low, gt)?;
    let scores = score_model(&model, &store, &pairs, |c| Ok(c.clone()))?;
    let mut acc = (0.0, 0.0, 0);
    let stretched = low
        .frames
        .iter()
        .map(|f| stretch(f, STRETCH_LO, STRETCH_HI))
        .collect::<Result<Vec<_>>>()?;
    score_frames(&stretched, &gt.frames, &mut acc)?;
    Ok(OverfitReport {
        initial_l1,
        final_l1,
        model: scores,
        stretched: finish(acc),
        losses,
    })
}

/// One model per entry of `counts`, trained and tested on the same scenes.
pub fn frame_count(
    base: &ModelConfig,
    counts: &[usize],
    split: &SynthSplit,
    pct: u32,
    steps: u64,
    log: Log,
) -> Result<Vec<(usize, Scores)>> {
    let set = TrainingSet::new(split.train(pct)?)?;
    let test = split.test(pct)?;
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let cfg = ModelConfig {
            num_frames: n,
            ..base.clone()
        };
        cfg.validate()?;
        let (model, store, _) = train_fresh(&cfg, &set, steps, log)?;
        let s = score_model(&model, &store, &test, |c| Ok(c.clone()))?;
        log(&format!("num_frames={n} psnr_db={:.4} ssim={:.6}", s.psnr, s.ssim));
        rows.push((n, s));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug)]
pub struct HistmatchReport {
    pub plain: Scores,
    pub matched: Scores,
}

/// Trains at `train_pct`, tests at `test_pct`. The matched run maps each
/// test frame onto the histogram pooled over all training inputs.
pub fn histmatch(
    cfg: &ModelConfig,
    split: &SynthSplit,
    train_pct: u32,
    test_pct: u32,
    steps: u64,
    log: Log,
) -> Result<HistmatchReport> {
    let train = split.train(train_pct)?;
    let reference = Histogram::pooled(train.iter().flat_map(|(low, _)| &low.frames))?;
    let set = TrainingSet::new(train)?;
    let test = split.test(test_pct)?;
    let (model, store, _) = train_fresh(cfg, &set, steps, log)?;
    let plain = score_model(&model, &store, &test, |c| Ok(c.clone()))?;
    let matched = score_model(&model, &store, &test, |c| match_clip(c, &reference))?;
    Ok(HistmatchReport { plain, matched })
}

pub fn run(a: &ExperimentArgs) -> CliResult<()> {
    let cfg = resolve_model(&a.model, Preset::Toy)?;
    let (default_steps, default_train) = match a.kind {
        ExperimentKind::Overfit => (500, 1),
        _ => (2000, 8),
    };
    let steps = a.steps.unwrap_or(default_steps);
    let split = SynthSplit {
        train_scenes: a.train_scenes.unwrap_or(default_train),
        test_scenes: a.test_scenes.unwrap_or(8),
        frames: a.frames.unwrap_or(8),
        size: cfg.crop_size,
        motion: Motion::Mixed,
        seed: mix_seed(cfg.seed, 0x5eed),
    };
    if split.train_scenes == 0 || split.frames == 0 || (a.kind != ExperimentKind::Overfit && split.test_scenes == 0) {
        return Err(CliError::Usage("scene and frame counts must be positive".into()));
    }
    let counts = a.frame_counts.clone();
    if let Some(bad) = counts.iter().find(|&&n| n % 2 == 0) {
        return Err(CliError::Usage(format!("frame counts must be odd, got {bad}")));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let mut echo = Echo::new("experiment");
    echo.push("kind", format!("{:?}", a.kind).to_lowercase())
        .push("steps", steps)
        .push("train_scenes", split.train_scenes)
        .push("test_scenes", split.test_scenes)
        .push("frames", split.frames)
        .push("size", split.size)
        .push("frame_counts", counts.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .model(&cfg);
    echo.emit(&a.out.join("experiment_config.txt"))?;

    let mut log = |m: &str| println!("{m}");
    let mut csv = String::new();
    match a.kind {
        ExperimentKind::Overfit => {
            let r = overfit(&cfg, &split, 10, steps, &mut log)?;
            csv.push_str("metric,value\n");
            let _ = writeln!(csv, "initial_l1,{}", r.initial_l1);
            let _ = writeln!(csv, "final_l1,{}", r.final_l1);
            let _ = writeln!(csv, "model_psnr_db,{}", r.model.psnr);
            let _ = writeln!(csv, "stretched_psnr_db,{}", r.stretched.psnr);
            println!(
                "initial_l1={:.6} final_l1={:.6} ratio={:.4} model_psnr_db={:.4} stretched_psnr_db={:.4}",
                r.initial_l1,
                r.final_l1,
                r.final_l1 / r.initial_l1,
                r.model.psnr,
                r.stretched.psnr
            );
        }
        ExperimentKind::FrameCount => {
            let rows = frame_count(&cfg, &counts, &split, 10, steps, &mut log)?;
            csv.push_str("num_frames,psnr_db,ssim\n");
            for (n, s) in rows {
                let _ = writeln!(csv, "{n},{},{}", s.psnr, s.ssim);
            }
        }
        ExperimentKind::Histmatch => {
            let r = histmatch(&cfg, &split, 10, 20, steps, &mut log)?;
            csv.push_str("histmatch,psnr_db,ssim\n");
            let _ = writeln!(csv, "off,{},{}", r.plain.psnr, r.plain.ssim);
            let _ = writeln!(csv, "on,{},{}", r.matched.psnr, r.matched.ssim);
            println!(
                "plain_psnr_db={:.4} matched_psnr_db={:.4} plain_ssim={:.6} matched_ssim={:.6}",
                r.plain.psnr, r.matched.psnr, r.plain.ssim, r.matched.ssim
            );
        }
    }
    let path = a.out.join("results.csv");
    fs::write(&path, csv).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}
