//! End-to-end finite-difference check of the whole network.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, StaSunet};
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Tape, Tensor};

/// One checked parameter scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, 1e-6)`.
    pub rel_error: f64,
}

/// Offset predictors start at zero, which puts every deformable tap on an
/// integer grid point where bilinear sampling has a kink. Small random
/// values move the taps to fractional positions.
fn jitter_offsets(store: &ParamStore, tensors: &mut [Tensor<f64>], rng: &mut ChaCha8Rng) {
    for id in store.ids() {
        let name = store.name(id);
        if name.starts_with("align.") && name.contains("offset") {
            let amp = if name.ends_with(".bias") { 0.4 } else { 0.02 };
            for v in tensors[id.index()].data_mut() {
                *v = rng.random_range(-amp..amp);
            }
        }
    }
}

/// Group of a parameter name: the part before the first dot, so every
/// encoder and decoder level counts separately.
fn module_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Checks `samples` parameter scalars of a freshly initialised model
/// against central differences of step `h`, in `f64`. Every top-level
/// module is sampled at least once when `samples` allows. The loss is a
/// fixed random projection of the output, which is smooth in the output.
pub fn gradcheck_model(cfg: &ModelConfig, size: usize, samples: usize, seed: u64, h: f64) -> Result<Vec<GradSample>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {h}")));
    }
    let (model, store) = StaSunet::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = store.tensors::<f64>();
    jitter_offsets(&store, &mut params, &mut rng);
    let frames = Tensor::<f64>::rand_uniform(&[cfg.num_frames, 3, size, size], 0.0, 1.0, &mut rng);
    let weights = Tensor::<f64>::randn(&[3, size, size], 1.0, &mut rng);

    let loss = |params: Vec<Tensor<f64>>, trainable: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let tape = Tape::<f64>::new();
        let ctx = Ctx::from_tensors(&tape, params, trainable);
        let out = model.forward(&ctx, tape.constant(frames.clone()))?;
        let l = out.mul(tape.constant(weights.clone()))?.mean();
        let value = l.value().item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("gradcheck loss {value}")));
        }
        if !trainable {
            return Ok((value, None));
        }
        let mut grads = tape.backward(l)?;
        Ok((value, Some(ctx.param_grads(&mut grads)?)))
    };
    let (_, grads) = loss(params.clone(), true)?;
    let grads = grads.expect("trainable pass returns gradients");

    // One tensor per module first, then random tensors for the rest.
    let mut ids: Vec<_> = store.ids().collect();
    ids.shuffle(&mut rng);
    let mut picked = Vec::with_capacity(samples);
    let mut seen = Vec::new();
    for &id in &ids {
        let m = module_of(store.name(id));
        if !seen.contains(&m) {
            seen.push(m);
            picked.push(id);
        }
    }
    picked.truncate(samples);
    while picked.len() < samples {
        picked.push(ids[rng.random_range(0..ids.len())]);
    }

    let mut out = Vec::with_capacity(samples);
    for id in picked {
        let index = rng.random_range(0..params[id.index()].numel());
        let eval = |delta: f64| {
            let mut p = params.clone();
            p[id.index()].data_mut()[index] += delta;
            loss(p, false).map(|r| r.0)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let analytic = grads[id.index()].data()[index];
        out.push(GradSample {
            param: store.name(id).to_string(),
            index,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / analytic.abs().max(1e-6),
        });
    }
    Ok(out)
}
