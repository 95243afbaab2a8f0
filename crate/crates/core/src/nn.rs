//! Named parameter storage, checkpoints and the per-forward binding context.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::{Adam, BnOptions, BnState, Gradients, Mode, Tape, Tensor, Var};

/// Learned parameters and batch-norm running statistics, keyed by dotted name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    bn: BTreeMap<String, BnState>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    params: Vec<ManifestEntry>,
    buffers: Vec<ManifestEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.insert(name.to_string(), t).is_some() {
            return Err(Error::Structure(format!("duplicate parameter {name}")));
        }
        Ok(())
    }

    pub fn insert_bn(&mut self, name: &str, channels: usize) -> Result<()> {
        if self.bn.insert(name.to_string(), BnState::new(channels)).is_some() {
            return Err(Error::Structure(format!("duplicate batch-norm state {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Structure(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Structure(format!("unknown parameter {name}")))
    }

    pub fn bn(&self, name: &str) -> Result<&BnState> {
        self.bn
            .get(name)
            .ok_or_else(|| Error::Structure(format!("unknown batch-norm state {name}")))
    }

    pub fn bn_mut(&mut self, name: &str) -> Result<&mut BnState> {
        self.bn
            .get_mut(name)
            .ok_or_else(|| Error::Structure(format!("unknown batch-norm state {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Writes one GDVT file per tensor plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            params: Vec::new(),
            buffers: Vec::new(),
        };
        for (name, t) in &self.params {
            let file = format!("{name}.gdvt");
            write_tensor(&dir.join(&file), t)?;
            manifest.params.push(ManifestEntry {
                name: name.clone(),
                file,
                shape: t.shape().to_vec(),
            });
        }
        for (name, state) in &self.bn {
            let c = state.running_mean.len();
            for (suffix, values) in [("running_mean", &state.running_mean), ("running_var", &state.running_var)] {
                let full = format!("{name}.{suffix}");
                let file = format!("{full}.gdvt");
                write_tensor(&dir.join(&file), &Tensor::new(&[c], values.clone())?)?;
                manifest.buffers.push(ManifestEntry {
                    name: full,
                    file,
                    shape: vec![c],
                });
            }
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads tensors into an already-constructed store; every name and shape
    /// must match.
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.params.len() != self.params.len() {
            return Err(Error::Format {
                path,
                msg: format!("{} params, model expects {}", manifest.params.len(), self.params.len()),
            });
        }
        for entry in &manifest.params {
            let t = read_tensor(&dir.join(&entry.file))?;
            let slot = self.get_mut(&entry.name)?;
            if t.shape() != slot.shape() || t.shape() != entry.shape.as_slice() {
                return Err(Error::shape("load", slot.shape(), t.shape()));
            }
            *slot = t;
        }
        for entry in &manifest.buffers {
            let t = read_tensor(&dir.join(&entry.file))?;
            let (bn_name, field) = entry
                .name
                .rsplit_once('.')
                .ok_or_else(|| Error::Structure(format!("bad buffer name {}", entry.name)))?;
            let state = self.bn_mut(bn_name)?;
            let target = match field {
                "running_mean" => &mut state.running_mean,
                "running_var" => &mut state.running_var,
                _ => return Err(Error::Structure(format!("bad buffer name {}", entry.name))),
            };
            if target.len() != t.len() {
                return Err(Error::shape("load", &[target.len()], t.shape()));
            }
            *target = t.into_data();
        }
        Ok(())
    }

    /// Round every parameter through `f32`, matching what a checkpoint stores.
    pub fn narrow_to_f32(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for s in self.bn.values_mut() {
            s.running_mean.iter_mut().for_each(|v| *v = *v as f32 as f64);
            s.running_var.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Applies one optimizer step to every bound parameter that received a
    /// gradient; unreached parameters are left untouched.
    pub fn apply_gradients(&mut self, adam: &mut Adam, bound: &BTreeMap<String, Var>, grads: &Gradients) -> Result<()> {
        adam.begin_step();
        for (name, t) in self.params.iter_mut() {
            if let Some(g) = bound.get(name).and_then(|v| grads.get(*v)) {
                adam.update(name, t.data_mut(), g)?;
            }
        }
        Ok(())
    }
}

/// Binds store parameters onto a fresh [`Tape`] for one forward pass.
pub struct Ctx<'s> {
    pub tape: Tape,
    store: &'s mut ParamStore,
    bound: BTreeMap<String, Var>,
    pub mode: Mode,
    pub bn: BnOptions,
    frozen: bool,
}

impl<'s> Ctx<'s> {
    pub fn new(store: &'s mut ParamStore, mode: Mode, bn: BnOptions) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            bn,
            frozen: false,
        }
    }

    /// Binds parameters as constants: no gradients, no backward closures.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// The tape variable for a named parameter, bound on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?.clone();
        let v = if self.frozen { self.tape.constant(t) } else { self.tape.param(t) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn batch_norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let state = self.store.bn_mut(name)?;
        self.tape.batch_norm(x, gamma, beta, state, self.mode, self.bn)
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Backward from `loss` followed by one optimizer step.
    pub fn step(self, loss: Var, adam: &mut Adam) -> Result<()> {
        let grads = self.tape.backward(loss)?;
        self.store.apply_gradients(adam, &self.bound, &grads)
    }
}

/// He-normal initialization with fan-in `fan_in`.
pub fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// Fully connected layer over node rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        store.insert(&weight, he_normal(rng, &[cin, cout], cin))?;
        store.insert(&bias, Tensor::zeros(&[cout]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight)?;
        let b = ctx.param(&self.bias)?;
        ctx.tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: String,
    pub bias: Option<String>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = format!("{name}.weight");
        store.insert(&weight, he_normal(rng, &[cout, cin, k, k], cin * k * k))?;
        let bias = if bias {
            let b = format!("{name}.bias");
            store.insert(&b, Tensor::zeros(&[cout]))?;
            Some(b)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight)?;
        let b = self.bias.as_deref().map(|b| ctx.param(b)).transpose()?;
        ctx.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        store.insert(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?;
        store.insert(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        store.insert_bn(name, channels)?;
        Ok(BatchNorm { name: name.to_string() })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        ctx.batch_norm(x, &self.name)
    }
}
