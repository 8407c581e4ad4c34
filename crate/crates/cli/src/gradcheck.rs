//! `gradcheck`: central differences against the tape on a fresh model.

use stasunet::model::{gradcheck_model, Preset};

use crate::args::GradcheckArgs;
use crate::config::{resolve_model, Echo};
use crate::error::{CliError, CliResult};

pub fn run(a: &GradcheckArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let cfg = resolve_model(&a.model, Preset::Toy)?;
    let size = a.size.unwrap_or(cfg.crop_size);
    cfg.check_frame_size(size, size)?;
    let mut echo = Echo::new("gradcheck");
    echo.push("samples", a.samples)
        .push("size", size)
        .push("tol", a.tol)
        .push("step", a.step)
        .model(&cfg);
    echo.print();

    let samples = gradcheck_model(&cfg, size, a.samples, cfg.seed, a.step)?;
    let mut worst = 0.0f64;
    for s in &samples {
        println!(
            "param={} index={} analytic={:.6e} numeric={:.6e} rel_error={:.3e}",
            s.param, s.index, s.analytic, s.numeric, s.rel_error
        );
        worst = worst.max(s.rel_error);
    }
    let ok = worst < a.tol;
    println!(
        "max_rel_error={worst:.3e} samples={} tol={} status={}",
        samples.len(),
        a.tol,
        if ok { "pass" } else { "fail" }
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("max relative error {worst:.3e} >= {}", a.tol)))
    }
}
