use super::{ModelConfig, StaSunet};
use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Mean absolute error. The gradient is `sign(pred - gt) / n`, with
/// sign(0) = 0.
pub fn l1_loss<'t, T: Real>(pred: Var<'t, T>, gt: Var<'t, T>) -> Result<Var<'t, T>> {
    let (p, g) = (pred.value(), gt.value());
    if p.shape() != g.shape() {
        return Err(Error::shape("l1_loss", format!("{:?} vs {:?}", p.shape(), g.shape())));
    }
    let n = T::from_usize(p.numel()).unwrap();
    let sign: Vec<T> = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(&a, &b)| {
            let d = a - b;
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let total = p.data().iter().zip(g.data()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
    let shape = p.shape().to_vec();
    drop((p, g));
    pred.tape().record(Tensor::scalar(total / n), &[pred, gt], move |up, needs| {
        let s = up.data()[0] / n;
        let gp = Tensor::new(&shape, sign.iter().map(|&v| v * s).collect()).expect("shape");
        vec![needs[0].then(|| gp.clone()), needs[1].then(|| gp.map(|v| -v))]
    })
}

/// Adam moments, in [`ParamStore`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Every gradient is checked before
/// anything is written, so a NaN leaves parameters and state untouched.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor<f32>], state: &mut AdamState, cfg: &ModelConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {}/{} moments",
            store.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() || state.m[id.index()].shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("gradient of {}", store.name(id))));
        }
        if !g.is_finite() {
            return Err(Error::NanGradient(store.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let p = store.get_mut(id).data_mut();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, &g) in grads[i].data().iter().enumerate() {
            let g = g as f64;
            let mk = b1 * m[k] as f64 + (1.0 - b1) * g;
            let vk = b2 * v[k] as f64 + (1.0 - b2) * g * g;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = cfg.lr * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
            p[k] = (p[k] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Forward, L1 loss, backward and one Adam update on a single sample.
/// Returns the loss before the update.
pub fn train_step(
    model: &StaSunet,
    store: &mut ParamStore,
    state: &mut AdamState,
    frames: &Tensor<f32>,
    gt: &Tensor<f32>,
) -> Result<f32> {
    let tape = Tape::<f32>::new();
    let ctx = Ctx::new(&tape, store, true);
    let pred = model.forward(&ctx, tape.constant(frames.clone()))?;
    let loss = l1_loss(pred, tape.constant(gt.clone()))?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g = ctx.param_grads(&mut grads)?;
    drop(ctx);
    adam_step(store, &g, state, &model.cfg)?;
    Ok(value)
}

/// Trains until `state.step == total_steps`. The sample for update `s` is
/// `set.sample(seed, s, ..)`, so stopping, checkpointing and resuming give
/// the same trajectory as an unbroken run. `on_step` sees the step index
/// and its pre-update loss after each update.
pub fn fit(
    model: &StaSunet,
    store: &mut ParamStore,
    state: &mut AdamState,
    set: &TrainingSet,
    seed: u64,
    total_steps: u64,
    mut on_step: impl FnMut(u64, f32, &ParamStore, &AdamState) -> Result<()>,
) -> Result<()> {
    let cfg = &model.cfg;
    while state.step < total_steps {
        let s = state.step;
        let (stack, gt) = set.sample(seed, s, cfg.num_frames, cfg.crop_size)?;
        let loss = train_step(model, store, state, &stack.frames, &gt)?;
        on_step(s, loss, store, state)?;
    }
    Ok(())
}
