use crate::adapters::{init_adapter, AdapterConfig, Method};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::rng::Prng;
use crate::{AdaptedLinear, Tape, Tensor};

/// Frozen dense layer of a pretrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Pretrained multilayer perceptron, `tanh` between layers and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    pub layers: Vec<Linear>,
}

impl BaseModel {
    /// Random weights `N(0, gain²/fan_in)` and biases `N(0, 0.1²)`.
    pub fn random(dims: &[usize], gain: f64, rng: &mut Prng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                weight: rng.normal_tensor(&[w[0], w[1]], gain / (w[0] as f64).sqrt()),
                bias: rng.normal_tensor(&[w[1]], 0.1),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.shape()[0]];
        dims.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        dims
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = crate::adapters::linear_forward(&h, &l.weight, &l.bias)?;
            if i + 1 < self.layers.len() {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }
}

/// A pretrained model with an adapter on every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<AdaptedLinear>,
}

impl ToyModel {
    pub fn attach(base: &BaseModel, config: &AdapterConfig, rng: &mut Prng) -> Result<Self> {
        let layers = base
            .layers
            .iter()
            .map(|l| {
                let (d, f) = l.weight.dims2()?;
                let adapter = init_adapter(config, d, f, rng)?;
                AdaptedLinear::new(l.weight.clone(), l.bias.clone(), adapter)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn method(&self) -> Method {
        self.layers[0].adapter.method()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<Vec<Var>> {
        self.layers.iter().map(|l| l.register(tape)).collect()
    }

    pub fn forward_on(&self, tape: &mut Tape, x: Var, params: &[Vec<Var>]) -> Result<Var> {
        let mut h = x;
        for (i, (layer, p)) in self.layers.iter().zip(params).enumerate() {
            h = layer.forward_on(tape, h, p)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Forward through merged weights: plain linear layers, no adapters.
    pub fn merged(&self) -> Result<BaseModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Linear {
                    weight: l.merge()?,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BaseModel { layers })
    }

    /// Bit-exact comparison of the frozen weights against a base snapshot.
    pub fn base_unchanged(&self, base: &BaseModel) -> bool {
        self.layers.len() == base.layers.len()
            && self
                .layers
                .iter()
                .zip(&base.layers)
                .all(|(a, b)| a.weight == b.weight && a.bias == b.bias)
    }

    pub fn metrics(&self, n: usize) -> Result<MetricsRecord> {
        MetricsRecord::from_layers(self.method(), n, &self.layers)
    }
}
