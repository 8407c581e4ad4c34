//! Named parameter storage and the thin layer wrappers built on it.
//!
//! Layers hold [`ParamId`]s, not tensors. A [`Ctx`] binds every parameter
//! to a leaf on a fresh tape for one forward pass.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nnops;
use crate::tensor::{Grads, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered name -> tensor map. Insertion order is the canonical order used
/// by checkpoints and optimizers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let (idx, _) = self.entries.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies of all tensors in canonical order, cast to `T`.
    pub fn tensors<T: Real>(&self) -> Vec<Tensor<T>> {
        self.entries.values().map(|t| t.cast()).collect()
    }
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    /// Normal with the given std, resampled outside two std.
    TruncNormal { std: f64 },
}

/// Registers parameters with deterministic initial values.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let rng = &mut self.rng;
        let mut normal = |std: f64, clip: Option<f64>| -> f32 {
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if clip.is_none_or(|c| z.abs() <= c) {
                    return (z * std) as f32;
                }
            }
        };
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| normal(std, None))
            }
            Init::TruncNormal { std } => Tensor::from_fn(shape, |_| normal(std, Some(2.0))),
        };
        self.store.insert(name, t)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, init: Option<Init>) -> Result<Conv2d> {
        let init = init.unwrap_or(Init::He { fan_in: cin * k * k });
        Ok(Conv2d {
            weight: self.param(&format!("{name}.weight"), &[cout, cin, k, k], init)?,
            bias: Some(self.param(&format!("{name}.bias"), &[cout], Init::Zeros)?),
            stride,
            padding: k / 2,
        })
    }

    pub fn deform_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<DeformConv2d> {
        Ok(DeformConv2d {
            weight: self.param(&format!("{name}.weight"), &[cout, cin, k, k], Init::He { fan_in: cin * k * k })?,
            bias: Some(self.param(&format!("{name}.bias"), &[cout], Init::Zeros)?),
        })
    }

    /// Transformer linear, truncated-normal initialised.
    pub fn linear(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Linear> {
        self.linear_init(name, cin, cout, bias, Init::TruncNormal { std: 0.02 })
    }

    pub fn linear_init(&mut self, name: &str, cin: usize, cout: usize, bias: bool, init: Init) -> Result<Linear> {
        Ok(Linear {
            weight: self.param(&format!("{name}.weight"), &[cout, cin], init)?,
            bias: if bias {
                Some(self.param(&format!("{name}.bias"), &[cout], Init::Zeros)?)
            } else {
                None
            },
        })
    }

    pub fn layer_norm(&mut self, name: &str, c: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.param(&format!("{name}.gamma"), &[c], Init::Ones)?,
            beta: self.param(&format!("{name}.beta"), &[c], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

/// Parameters bound to one tape.
pub struct Ctx<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    /// Binds `store`, as trainable leaves when `trainable`, else constants.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore, trainable: bool) -> Self {
        Self::from_tensors(tape, store.tensors(), trainable)
    }

    pub fn from_tensors(tape: &'t Tape<T>, tensors: Vec<Tensor<T>>, trainable: bool) -> Self {
        let vars = tensors
            .into_iter()
            .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect();
        Ctx { tape, vars }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Rebinds one parameter to an arbitrary var, e.g. a probe leaf.
    pub fn bind(&mut self, id: ParamId, var: Var<'t, T>) {
        self.vars[id.0] = var;
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradients of every bound parameter, in canonical order.
    pub fn param_grads(&self, grads: &mut Grads<T>) -> Result<Vec<Tensor<T>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nnops::conv2d(x, ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct DeformConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl DeformConv2d {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>, offsets: Var<'t, T>) -> Result<Var<'t, T>> {
        nnops::deformable_conv2d(x, ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), offsets)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nnops::linear(x, ctx.p(self.weight), self.bias.map(|b| ctx.p(b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nnops::layer_norm(x, ctx.p(self.gamma), ctx.p(self.beta), self.eps)
    }
}
