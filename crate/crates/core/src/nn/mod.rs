//! Convolutional energy network: topology, parameters, exact forward pass
//! and hand-derived reverse-mode gradients.

mod activation;
pub mod checkpoint;
mod conv;
mod network;
mod params;
mod topology;

pub use activation::{elu, elu_grad, Activation, EluActivation};
pub use params::{InitScheme, LayerParams, ModelParams, ParamGrads};
pub use topology::{ConvLayerSpec, NetworkTopology};

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything the Langevin sampler can descend: a scalar energy with an input
/// gradient.
pub trait EnergyFunction: Sync {
    fn energy(&self, x: &Tensor) -> Result<f64>;
    fn energy_and_input_gradient(&self, x: &Tensor) -> Result<(f64, Tensor)>;
}

pub fn forward_energy(params: &ModelParams, image: &Tensor) -> Result<f64> {
    params.forward_energy(image)
}

pub fn input_gradient(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    params.input_gradient(image)
}

pub fn param_gradient(params: &ModelParams, batch: &[Tensor]) -> Result<ParamGrads> {
    params.param_gradient(batch)
}

pub fn init_params(topology: &NetworkTopology, seed: u64, scheme: InitScheme) -> ModelParams {
    ModelParams::init(topology, seed, scheme)
}
