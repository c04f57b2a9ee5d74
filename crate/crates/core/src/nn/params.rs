use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::topology::NetworkTopology;
use crate::error::{EbmError, Result};
use crate::tensor::Tensor;

/// Weight `(f_out, f_in, kh, kw)` and bias `(f_out)` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weight initialization. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`, i.e. variance `gain² / fan_in`.
    FanInUniform { gain: f64 },
    /// `N(0, (gain² / fan_in))`.
    FanInNormal { gain: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::FanInUniform { gain: 1.0 }
    }
}

impl InitScheme {
    pub fn target_variance(&self, fan_in: usize) -> f64 {
        match *self {
            InitScheme::FanInUniform { gain } | InitScheme::FanInNormal { gain } => {
                gain * gain / fan_in as f64
            }
        }
    }
}

/// Parameters of the energy network together with the topology they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    topology: NetworkTopology,
    layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn new(topology: NetworkTopology, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != topology.layers().len() {
            return Err(EbmError::InvalidConfig(format!(
                "topology has {} layers but {} parameter sets were given",
                topology.layers().len(),
                layers.len()
            )));
        }
        for (i, (spec, p)) in topology.layers().iter().zip(&layers).enumerate() {
            p.weight
                .ensure_shape(&spec.weight_shape(), &format!("layer {i} weight"))?;
            p.bias
                .ensure_shape(&[spec.f_out], &format!("layer {i} bias"))?;
            p.weight.ensure_finite(&format!("layer {i} weight"))?;
            p.bias.ensure_finite(&format!("layer {i} bias"))?;
        }
        Ok(Self { topology, layers })
    }

    pub fn init(topology: &NetworkTopology, seed: u64, scheme: InitScheme) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = topology
            .layers()
            .iter()
            .map(|spec| {
                let shape = spec.weight_shape();
                let fan_in = spec.fan_in() as f64;
                let weight = match scheme {
                    InitScheme::FanInUniform { gain } => {
                        let bound = gain * (3.0 / fan_in).sqrt();
                        sample_tensor(
                            shape,
                            &mut rng,
                            Uniform::new_inclusive(-bound, bound).unwrap(),
                        )
                    }
                    InitScheme::FanInNormal { gain } => {
                        let std = gain / fan_in.sqrt();
                        sample_tensor(shape, &mut rng, Normal::new(0.0, std).unwrap())
                    }
                };
                LayerParams {
                    weight,
                    bias: Tensor::zeros(vec![spec.f_out]),
                }
            })
            .collect();
        Self {
            topology: topology.clone(),
            layers,
        }
    }

    /// Same topology, every weight and bias zero.
    pub fn zeros(topology: &NetworkTopology) -> Self {
        Self {
            topology: topology.clone(),
            layers: zero_layers(topology),
        }
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Flat views over every parameter array, weights before bias per layer.
    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
    }
}

fn sample_tensor(shape: Vec<usize>, rng: &mut impl Rng, dist: impl Distribution<f64>) -> Tensor {
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

fn zero_layers(topology: &NetworkTopology) -> Vec<LayerParams> {
    topology
        .layers()
        .iter()
        .map(|spec| LayerParams {
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros(vec![spec.f_out]),
        })
        .collect()
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    layers: Vec<LayerParams>,
}

impl ParamGrads {
    pub fn zeros(topology: &NetworkTopology) -> Self {
        Self {
            layers: zero_layers(topology),
        }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().flat_map(|s| s.iter()).all(|&v| v == 0.0)
    }

    /// `self - other`, element-wise.
    pub fn difference(&self, other: &ParamGrads) -> ParamGrads {
        let mut out = self.clone();
        for (a, b) in out.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x -= y;
            }
        }
        out
    }
}
