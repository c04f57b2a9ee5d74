//! Short-run Stochastic Gradient Langevin Dynamics for negative samples.
//!
//! Each chain starts from i.i.d. uniform noise and takes a fixed number of
//! updates `x ← x − (λ/2)·∂E/∂x + s·ε`, `ε ~ N(0, I)`, optionally clamped to
//! the data range. Only input gradients are computed; no parameter-gradient
//! state exists on this path.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EbmError, Result};
use crate::nn::EnergyFunction;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub enabled: bool,
    pub capacity: usize,
    pub reinit_prob: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            capacity: 10_000,
            reinit_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Langevin step size λ.
    pub step_size: f64,
    /// Standard deviation of the injected noise; `None` means `sqrt(λ)`.
    pub noise_scale: Option<f64>,
    pub n_steps: usize,
    pub init_low: f64,
    pub init_high: f64,
    pub clamp: bool,
    pub clamp_low: f64,
    pub clamp_high: f64,
    pub buffer: ReplayConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            noise_scale: None,
            n_steps: 100,
            init_low: 0.0,
            init_high: 1.0,
            clamp: true,
            clamp_low: 0.0,
            clamp_high: 1.0,
            buffer: ReplayConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EbmError::InvalidConfig(format!("sampler: {m}")));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if let Some(s) = self.noise_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("noise_scale must be non-negative");
            }
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if !(self.init_low < self.init_high) {
            return bad("init_low must be below init_high");
        }
        if self.clamp && !(self.clamp_low < self.clamp_high) {
            return bad("clamp_low must be below clamp_high");
        }
        if self.buffer.enabled {
            if self.buffer.capacity == 0 {
                return bad("buffer.capacity must be at least 1");
            }
            if !(0.0..=1.0).contains(&self.buffer.reinit_prob) {
                return bad("buffer.reinit_prob must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn effective_noise(&self) -> f64 {
        self.noise_scale.unwrap_or_else(|| self.step_size.sqrt())
    }
}

/// Uniform noise on `[init_low, init_high]`.
pub fn init_chain(rng: &mut impl Rng, shape: &[usize], config: &SamplerConfig) -> Tensor {
    let dist = Uniform::new_inclusive(config.init_low, config.init_high)
        .expect("bounds checked by SamplerConfig::validate");
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
}

fn diverged<F: EnergyFunction + ?Sized>(f: &F, x: &Tensor, chain: usize, step: usize) -> EbmError {
    EbmError::SamplerDiverged {
        chain,
        step,
        energy: f.energy(x).unwrap_or(f64::NAN),
    }
}

fn step_inner<F: EnergyFunction + ?Sized>(
    f: &F,
    x: &Tensor,
    config: &SamplerConfig,
    rng: &mut impl Rng,
    chain: usize,
    step: usize,
) -> Result<(f64, Tensor)> {
    let (energy, grad) = match f.energy_and_input_gradient(x) {
        Ok(v) => v,
        Err(EbmError::NonFinite { .. }) => return Err(diverged(f, x, chain, step)),
        Err(e) => return Err(e),
    };
    let half_step = 0.5 * config.step_size;
    let noise = config.effective_noise();
    let mut next = x.clone();
    for (v, g) in next.data_mut().iter_mut().zip(grad.data()) {
        *v -= half_step * g;
        if noise > 0.0 {
            let eps: f64 = StandardNormal.sample(rng);
            *v += noise * eps;
        }
        if config.clamp {
            *v = v.clamp(config.clamp_low, config.clamp_high);
        }
    }
    if !next.is_finite() {
        return Err(EbmError::SamplerDiverged {
            chain,
            step,
            energy,
        });
    }
    Ok((energy, next))
}

/// One Langevin update of `x`.
///
/// Errors report the step as 0; use [`ChainState`] for multi-step chains
/// with real step indices.
pub fn sgld_step<F: EnergyFunction + ?Sized>(
    f: &F,
    x: &Tensor,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    step_inner(f, x, config, rng, 0, 0).map(|(_, next)| next)
}

/// A single Langevin chain with its own random stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub sample: Tensor,
    pub step: usize,
    pub chain: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    /// Chain `index` from `master_seed`: stream `index` of a ChaCha8
    /// generator seeded with the master seed.
    pub fn new(master_seed: u64, index: usize, shape: &[usize], config: &SamplerConfig) -> Self {
        let mut rng = chain_rng(master_seed, index);
        let sample = init_chain(&mut rng, shape, config);
        Self {
            sample,
            step: 0,
            chain: index,
            rng,
        }
    }

    /// Continues from an existing sample (replay-buffer restarts).
    pub fn resume(master_seed: u64, index: usize, sample: Tensor) -> Self {
        Self {
            sample,
            step: 0,
            chain: index,
            rng: chain_rng(master_seed, index),
        }
    }

    /// Advances one step and returns the energy at the pre-step sample.
    pub fn advance<F: EnergyFunction + ?Sized>(
        &mut self,
        f: &F,
        config: &SamplerConfig,
    ) -> Result<f64> {
        let (energy, next) = step_inner(
            f,
            &self.sample,
            config,
            &mut self.rng,
            self.chain,
            self.step,
        )?;
        self.sample = next;
        self.step += 1;
        Ok(energy)
    }

    pub fn run<F: EnergyFunction + ?Sized>(
        mut self,
        f: &F,
        config: &SamplerConfig,
    ) -> Result<Tensor> {
        for _ in 0..config.n_steps {
            self.advance(f, config)?;
        }
        Ok(self.sample)
    }
}

fn chain_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `batch_size` fresh chains for `n_steps` each.
///
/// One `u64` is drawn from `rng` as the master seed and chain `i` uses
/// stream `i`, so the result does not depend on how chains are scheduled
/// across threads.
pub fn sample_negatives<F: EnergyFunction + ?Sized>(
    f: &F,
    shape: &[usize],
    batch_size: usize,
    config: &SamplerConfig,
    rng: &mut impl RngCore,
) -> Result<Vec<Tensor>> {
    config.validate()?;
    if batch_size == 0 {
        return Err(EbmError::EmptyBatch {
            context: "sample_negatives".into(),
        });
    }
    let master = rng.next_u64();
    (0..batch_size)
        .into_par_iter()
        .map(|i| ChainState::new(master, i, shape, config).run(f, config))
        .collect()
}

/// Persistent-chain store. Experimental: fresh chains are the supported mode.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: VecDeque<Tensor>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds samples, evicting the oldest beyond capacity.
    pub fn push(&mut self, sample: Tensor) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }
}

/// Like [`sample_negatives`], but each chain restarts from a buffered sample
/// unless the buffer is empty or a reinitialization draw succeeds.
pub fn sample_negatives_persistent<F: EnergyFunction + ?Sized>(
    f: &F,
    shape: &[usize],
    batch_size: usize,
    config: &SamplerConfig,
    rng: &mut impl RngCore,
    buffer: &mut ReplayBuffer,
) -> Result<Vec<Tensor>> {
    config.validate()?;
    if batch_size == 0 {
        return Err(EbmError::EmptyBatch {
            context: "sample_negatives_persistent".into(),
        });
    }
    let master = rng.next_u64();
    let mut pick = chain_rng(master, usize::MAX);
    let starts: Vec<ChainState> = (0..batch_size)
        .map(|i| {
            if buffer.is_empty() || pick.random::<f64>() < config.buffer.reinit_prob {
                ChainState::new(master, i, shape, config)
            } else {
                let j = pick.random_range(0..buffer.len());
                ChainState::resume(master, i, buffer.samples[j].clone())
            }
        })
        .collect();
    let out: Vec<Tensor> = starts
        .into_par_iter()
        .map(|c| c.run(f, config))
        .collect::<Result<_>>()?;
    for s in &out {
        buffer.push(s.clone());
    }
    Ok(out)
}

/// Energies of one chain at every state, `n_steps + 1` values including the
/// initial noise.
pub fn energy_trace<F: EnergyFunction + ?Sized>(
    f: &F,
    shape: &[usize],
    config: &SamplerConfig,
    rng: &mut impl RngCore,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut chain = ChainState::new(rng.next_u64(), 0, shape, config);
    let mut trace = Vec::with_capacity(config.n_steps + 1);
    for _ in 0..config.n_steps {
        trace.push(chain.advance(f, config)?);
    }
    trace.push(f.energy(&chain.sample)?);
    Ok(trace)
}

pub fn write_energy_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("step,energy\n");
    for (i, e) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{e}\n"));
    }
    let mut file = std::fs::File::create(path).map_err(|e| EbmError::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| EbmError::io(path, e))
}

/// `E(x) = ½‖x‖²`, whose Langevin stationary law is the standard normal.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticEnergy;

impl EnergyFunction for QuadraticEnergy {
    fn energy(&self, x: &Tensor) -> Result<f64> {
        Ok(0.5 * x.sum_squares())
    }

    fn energy_and_input_gradient(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        Ok((0.5 * x.sum_squares(), x.clone()))
    }
}

/// Energy independent of the input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEnergy(pub f64);

impl EnergyFunction for ConstantEnergy {
    fn energy(&self, _x: &Tensor) -> Result<f64> {
        Ok(self.0)
    }

    fn energy_and_input_gradient(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        Ok((self.0, Tensor::zeros(x.shape().to_vec())))
    }
}
