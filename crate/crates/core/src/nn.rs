//! Small building blocks over [`ParamStore`] and [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Normal weights with std [`INIT_STD`], zero bias.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        Self::with_std(store, name, input, output, INIT_STD, rng)
    }

    pub fn with_std(store: &mut ParamStore, name: &str, input: usize, output: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        let weight = store.insert(&format!("{name}.weight"), normal_tensor(&[input, output], std, rng))?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[1, output]))?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = store.insert(&format!("{name}.weight"), Tensor::zeros(&[input, output]))?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[1, output]))?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    /// Looks the parameters up by name, checking shapes.
    pub fn find(store: &ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = lookup(store, &format!("{name}.weight"), &[input, output])?;
        let bias = lookup(store, &format!("{name}.bias"), &[1, output])?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, params.var(self.weight))?;
        tape.add_row(y, params.var(self.bias))
    }

    /// Forward for a single vector without a tape.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let input = Tensor::matrix(1, x.len(), x.to_vec())?;
        let mut y = input.matmul(store.get(self.weight))?.into_data();
        for (o, b) in y.iter_mut().zip(store.get(self.bias).data()) {
            *o += b;
        }
        Ok(y)
    }

    pub fn scalar_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        let gain = store.insert(&format!("{name}.gain"), Tensor::filled(&[1, width], 1.0))?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[1, width]))?;
        Ok(Self { gain, bias })
    }

    pub fn find(store: &ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: lookup(store, &format!("{name}.gain"), &[1, width])?,
            bias: lookup(store, &format!("{name}.bias"), &[1, width])?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        tape.layer_norm(x, params.var(self.gain), params.var(self.bias), LAYER_NORM_EPS)
    }
}

/// Finds a parameter by name and checks its shape.
pub fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store.id(name).ok_or_else(|| crate::Error::Lookup {
        what: "parameter",
        key: name.into(),
    })?;
    if store.get(id).shape() != shape {
        return Err(crate::Error::Dimension {
            op: "parameter shape",
            left: shape.to_vec(),
            right: store.get(id).shape().to_vec(),
        });
    }
    Ok(id)
}
