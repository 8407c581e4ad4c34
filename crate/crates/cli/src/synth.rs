//! `synth`: a synthetic paired dataset on disk.

use std::fs;
use std::path::Path;

use stasunet::data::{darken, mix_seed, save_frames, synth_scene, Clip, Dataset, Motion};

use crate::args::SynthArgs;
use crate::config::Echo;
use crate::error::{CliError, CliResult};

pub fn scene_id(k: usize) -> String {
    format!("scene{k:04}")
}

/// Seed of scene `k` of a dataset generated with `seed`.
pub fn scene_seed(seed: u64, k: usize) -> u64 {
    mix_seed(seed, k as u64)
}

/// The scene darkened to `pct` percent, with noise seeded by scene and
/// level so every level of every scene draws independent noise.
pub fn darken_pct(gt: &Clip, pct: u32, scene_seed: u64) -> stasunet::Result<Clip> {
    darken(gt, pct as f64 / 100.0, mix_seed(scene_seed, pct as u64))
}

pub fn check_levels(levels: &[u32]) -> CliResult<()> {
    if levels.is_empty() {
        return Err(CliError::Usage("at least one light level is required".into()));
    }
    if let Some(l) = levels.iter().find(|&&l| l == 0 || l > 100) {
        return Err(CliError::Usage(format!("light level {l} is outside 1..=100 percent")));
    }
    Ok(())
}

fn is_empty_dir(dir: &Path) -> CliResult<bool> {
    if !dir.exists() {
        return Ok(true);
    }
    let mut entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(entries.next().is_none())
}

pub fn run(a: &SynthArgs) -> CliResult<()> {
    check_levels(&a.levels)?;
    if a.scenes == 0 || a.frames == 0 || a.size == 0 {
        return Err(CliError::Usage("--scenes, --frames and --size must be positive".into()));
    }
    let motion: Motion = a.motion.parse()?;
    let test = a.test_scenes.unwrap_or(if a.scenes >= 2 { (a.scenes / 5).max(1) } else { 0 });
    if test > a.scenes {
        return Err(CliError::Usage(format!("{test} test scenes out of {}", a.scenes)));
    }
    if !a.force && !is_empty_dir(&a.out)? {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to write into it",
            a.out.display()
        )));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let mut levels: Vec<u32> = a.levels.iter().copied().filter(|&l| l != 100).collect();
    levels.sort_unstable_by(|x, y| y.cmp(x));
    levels.dedup();

    let mut echo = Echo::new("synth");
    echo.push("scenes", a.scenes)
        .push("frames", a.frames)
        .push("size", a.size)
        .push("levels", levels.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
        .push("motion", &a.motion)
        .push("seed", a.seed)
        .push("test_scenes", test)
        .path("out", &a.out);
    echo.emit(&a.out.join("synth_config.txt"))?;

    let mut ids = Vec::with_capacity(a.scenes);
    for k in 0..a.scenes {
        let id = scene_id(k);
        let s = scene_seed(a.seed, k);
        let gt = synth_scene(s, a.frames, a.size, motion)?;
        save_frames(&gt, &a.out.join(&id).join("100"))?;
        for &pct in &levels {
            save_frames(&darken_pct(&gt, pct, s)?, &a.out.join(&id).join(pct.to_string()))?;
        }
        println!("event=scene id={id} frames={}", a.frames);
        ids.push(id);
    }
    let (train, test) = ids.split_at(a.scenes - test);
    Dataset::write_manifests(&a.out, train, test)?;
    println!("event=done scenes={} train={} test={}", a.scenes, train.len(), test.len());
    Ok(())
}
