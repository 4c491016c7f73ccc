//! Named parameter storage shared by every model component.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of learnable leaf tensors.
///
/// Components hold [`ParamId`] handles and read the current tensors at
/// forward time; optimizers swap in fresh leaves with [`ModelParams::set_data`].
#[derive(Debug, Clone, Default)]
pub struct ModelParams<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        data: Vec<T>,
        shape: &[usize],
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.tensors.len();
        self.tensors.push(Tensor::param(data, shape)?);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Replaces a parameter's values with a fresh leaf of the same shape.
    pub fn set_data(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let shape = self.tensors[id.0].shape().to_vec();
        if data.len() != self.tensors[id.0].numel() {
            return Err(Error::dim(
                "set_data",
                self.names[id.0].clone(),
                format!("{} values for shape {shape:?}", data.len()),
            ));
        }
        self.tensors[id.0] = Tensor::param(data, &shape)?;
        Ok(())
    }

    /// Accumulated gradient of every parameter; zeros where none reached it.
    pub fn grads(&self) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .map(|t| {
                t.grad()
                    .map(|g| g.clone())
                    .unwrap_or_else(|| vec![T::zero(); t.numel()])
            })
            .collect()
    }

    pub fn zero_grad(&self) {
        self.tensors.iter().for_each(|t| t.zero_grad());
    }

    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| t.to_vec()).collect()
    }

    pub fn restore(&mut self, values: Vec<Vec<T>>) -> Result<()> {
        for (i, v) in values.into_iter().enumerate() {
            self.set_data(ParamId(i), v)?;
        }
        Ok(())
    }
}

/// Training/evaluation switch plus the dropout random stream.
pub struct ForwardCtx {
    training: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Identity in evaluation mode.
    pub fn dropout<T: Real>(&mut self, x: &Tensor<T>, rate: f64) -> Tensor<T> {
        if self.training {
            x.dropout(rate, &mut self.rng)
        } else {
            x.clone()
        }
    }
}

pub(crate) fn uniform<T: Real>(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect()
}

pub(crate) fn normal<T: Real>(rng: &mut impl Rng, n: usize, std: f64) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
}

/// Dense layer `y = x W + b` with `W` stored (in, out).
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = params.register(
            format!("{name}.weight"),
            uniform(rng, fan_in * fan_out, bound),
            &[fan_in, fan_out],
        )?;
        let bias = if bias {
            Some(params.register(format!("{name}.bias"), vec![T::zero(); fan_out], &[fan_out])?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(params.get(self.weight))?;
        match self.bias {
            Some(b) => y.add_broadcast(params.get(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        name: &str,
        dim: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            gain: params.register(format!("{name}.gain"), vec![T::one(); dim], &[dim])?,
            bias: params.register(format!("{name}.bias"), vec![T::zero(); dim], &[dim])?,
            eps,
        })
    }

    pub fn forward<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(
            params.get(self.gain),
            params.get(self.bias),
            T::lit(self.eps),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_lookup_and_replace() {
        let mut p = ModelParams::<f64>::new();
        let a = p.register("a", vec![1.0, 2.0], &[2]).unwrap();
        assert!(p.register("a", vec![0.0], &[1]).is_err());
        assert_eq!(p.id("a"), Some(a));
        assert_eq!(p.name(a), "a");
        p.get(a).mul(p.get(a)).unwrap().sum().backward().unwrap();
        assert_eq!(p.grads()[0], vec![2.0, 4.0]);
        p.set_data(a, vec![5.0, 6.0]).unwrap();
        assert!(p.get(a).grad().is_none());
        assert_eq!(p.get(a).to_vec(), vec![5.0, 6.0]);
        assert!(p.set_data(a, vec![1.0]).is_err());
    }
}
