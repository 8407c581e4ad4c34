//! `enhance` and `eval`.

use std::fs;
use std::path::Path;

use stasunet::data::{histogram_match_to, load_frames, save_frames, Clip, Histogram};
use stasunet::metrics::MetricReport;
use stasunet::model::{load_checkpoint, StaSunet};

use crate::args::{EnhanceArgs, EvalArgs};
use crate::config::Echo;
use crate::error::{CliError, CliResult};

/// Pooled histogram of up to `limit` evenly spaced frames of `clip`.
pub fn reference_histogram(clip: &Clip, limit: Option<usize>) -> CliResult<Histogram> {
    let n = clip.len();
    let take = limit.unwrap_or(n).clamp(1, n);
    let picks = (0..take).map(|i| &clip.frames[i * n / take]);
    Ok(Histogram::pooled(picks)?)
}

/// Matches every frame of `clip` to `reference`.
pub fn match_clip(clip: &Clip, reference: &Histogram) -> stasunet::Result<Clip> {
    let frames = clip
        .frames
        .iter()
        .map(|f| histogram_match_to(f, reference))
        .collect::<stasunet::Result<Vec<_>>>()?;
    Ok(Clip { frames, ..clip.clone() })
}

pub fn run_enhance(a: &EnhanceArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.ckpt).map_err(CliError::data)?;
    let (model, _) = StaSunet::new(&ck.config)?;
    model.check_store(&ck.params).map_err(CliError::data)?;
    let mut clip = load_frames(&a.input).map_err(CliError::data)?;
    let (h, w) = clip.frame_size();
    ck.config
        .check_frame_size(h, w)
        .map_err(|e| CliError::Data(format!("{h}x{w} frames do not fit the checkpoint's model: {e}")))?;

    let mut echo = Echo::new("enhance");
    echo.path("ckpt", &a.ckpt).path("in", &a.input).path("out", &a.out);
    if let Some(r) = &a.histmatch {
        echo.path("histmatch", r);
        if let Some(n) = a.ref_frames {
            echo.push("ref_frames", n);
        }
    }
    echo.model(&ck.config);
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    echo.emit(&a.out.join("enhance_config.txt"))?;

    if let Some(ref_dir) = &a.histmatch {
        let reference = load_frames(ref_dir).map_err(CliError::data)?;
        let hist = reference_histogram(&reference, a.ref_frames)?;
        clip = match_clip(&clip, &hist).map_err(CliError::data)?;
        println!("event=histmatch reference={} frames={}", ref_dir.display(), reference.len());
    }
    let restored = model.enhance_clip(&ck.params, &clip)?;
    let out = Clip {
        frames: restored,
        light_level: 1.0,
        ..clip
    };
    save_frames(&out, &a.out)?;
    println!("event=done frames={} out={}", out.len(), a.out.display());
    Ok(())
}

pub fn evaluate_dirs(pred: &Path, gt: &Path) -> CliResult<MetricReport> {
    let p = load_frames(pred).map_err(CliError::data)?;
    let g = load_frames(gt).map_err(CliError::data)?;
    if p.len() != g.len() {
        return Err(CliError::Data(format!(
            "{} has {} frames but {} has {}",
            pred.display(),
            p.len(),
            gt.display(),
            g.len()
        )));
    }
    MetricReport::compute(&p.frames, &g.frames).map_err(CliError::data)
}

pub fn run_eval(a: &EvalArgs) -> CliResult<()> {
    let mut echo = Echo::new("eval");
    echo.path("pred", &a.pred).path("gt", &a.gt);
    if let Some(c) = &a.csv {
        echo.path("csv", c);
    }
    echo.print();
    let report = evaluate_dirs(&a.pred, &a.gt)?;
    match &a.csv {
        Some(path) => fs::write(path, report.to_csv()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => print!("{}", report.to_csv()),
    }
    println!(
        "mean_psnr_db={:.4} mean_ssim={:.6} frames={}",
        report.mean_psnr(),
        report.mean_ssim(),
        report.frames()
    );
    Ok(())
}
