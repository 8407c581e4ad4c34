//! `train`: the optimisation loop over a dataset directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use stasunet::data::{Dataset, TrainingSet};
use stasunet::model::{fit, load_checkpoint, save_checkpoint, AdamState, ModelConfig, Preset, StaSunet};

use crate::args::TrainArgs;
use crate::config::{model_args_given, resolve_model, Echo};
use crate::error::{CliError, CliResult};
use crate::synth::check_levels;

const LOSS_HEADER: &str = "step,loss\n";

/// Loads `(low, gt)` pairs of every training scene at every level, after
/// checking the layout and that frames fit the model.
pub fn load_training_set(root: &Path, levels: &[u32], cfg: &ModelConfig) -> CliResult<TrainingSet> {
    let ds = Dataset::open(root).map_err(CliError::data)?;
    if ds.train.is_empty() {
        return Err(CliError::Data(format!("{}: train.txt lists no scenes", root.display())));
    }
    let mut dirs: Vec<String> = levels.iter().map(u32::to_string).collect();
    dirs.push("100".into());
    let dir_refs: Vec<&str> = dirs.iter().map(String::as_str).collect();
    ds.validate(&dir_refs).map_err(CliError::data)?;

    let mut pairs = Vec::new();
    for scene in &ds.train {
        let gt = ds.load(scene, "100").map_err(CliError::data)?;
        let (h, w) = gt.frame_size();
        if h < cfg.crop_size || w < cfg.crop_size {
            return Err(CliError::Data(format!(
                "scene `{scene}`: {h}x{w} frames are smaller than crop_size {}",
                cfg.crop_size
            )));
        }
        for l in levels {
            pairs.push((ds.load(scene, &l.to_string()).map_err(CliError::data)?, gt.clone()));
        }
    }
    TrainingSet::new(pairs).map_err(CliError::data)
}

/// Keeps the rows of an existing loss log for steps before `upto`, so a
/// resumed run rewrites exactly what an unbroken run would have.
fn truncated_loss_log(path: &Path, upto: u64) -> CliResult<String> {
    let mut out = String::from(LOSS_HEADER);
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(out);
    };
    for line in text.lines().skip(1) {
        let step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Data(format!("{}: malformed row `{line}`", path.display())))?;
        if step < upto {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn data_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    check_levels(&a.levels)?;
    if a.ckpt_every == 0 {
        return Err(CliError::Usage("--ckpt-every must be positive".into()));
    }
    let log_dir: PathBuf = match &a.log_dir {
        Some(d) => d.clone(),
        None => a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let log_dir = if log_dir.as_os_str().is_empty() { PathBuf::from(".") } else { log_dir };
    fs::create_dir_all(&log_dir).map_err(data_err(&log_dir))?;

    let resume = a.resume && a.ckpt.exists();
    let (cfg, restored) = if resume {
        if model_args_given(&a.model) {
            return Err(CliError::Usage(
                "--resume takes the model config from the checkpoint; drop --preset/--config/--set".into(),
            ));
        }
        let ck = load_checkpoint(&a.ckpt).map_err(CliError::data)?;
        let state = ck.adam.unwrap_or_else(|| AdamState::new(&ck.params));
        (ck.config, Some((ck.params, state)))
    } else {
        (resolve_model(&a.model, Preset::Toy)?, None)
    };
    let (model, init) = StaSunet::new(&cfg)?;
    let (mut store, mut state) = match restored {
        Some((params, state)) => {
            model.check_store(&params).map_err(CliError::data)?;
            (params, state)
        }
        None => {
            let state = AdamState::new(&init);
            (init, state)
        }
    };

    let mut echo = Echo::new("train");
    echo.path("data", &a.data)
        .push("levels", a.levels.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
        .push("steps", a.steps)
        .path("ckpt", &a.ckpt)
        .push("ckpt_every", a.ckpt_every)
        .push("resumed_from_step", state.step)
        .model(&cfg);
    echo.emit(&log_dir.join("train_config.txt"))?;

    let set = load_training_set(&a.data, &a.levels, &cfg)?;
    println!("event=data pairs={} params={}", set.pairs().len(), store.num_scalars());

    let loss_path = log_dir.join("loss.csv");
    let mut log = if resume {
        truncated_loss_log(&loss_path, state.step)?
    } else {
        String::from(LOSS_HEADER)
    };
    fs::write(&loss_path, &log).map_err(data_err(&loss_path))?;

    let start = Instant::now();
    let result = fit(&model, &mut store, &mut state, &set, cfg.seed, a.steps, |step, loss, store, state| {
        println!("step={step} loss={loss} wall_s={:.3}", start.elapsed().as_secs_f64());
        let _ = writeln!(log, "{step},{loss}");
        if state.step % a.ckpt_every == 0 {
            fs::write(&loss_path, &log).map_err(|e| stasunet::Error::Data(format!("{}: {e}", loss_path.display())))?;
            save_checkpoint(&a.ckpt, &cfg, store, Some(state))?;
            println!("event=checkpoint step={} path={}", state.step, a.ckpt.display());
        }
        Ok(())
    });
    fs::write(&loss_path, &log).map_err(data_err(&loss_path))?;
    result?;
    save_checkpoint(&a.ckpt, &cfg, &store, Some(&state)).map_err(CliError::data)?;
    println!(
        "event=done steps={} wall_s={:.3} ckpt={}",
        state.step,
        start.elapsed().as_secs_f64(),
        a.ckpt.display()
    );
    Ok(())
}
