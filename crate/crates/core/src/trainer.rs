//! Contrastive-divergence training of the energy network on normal images.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EbmError, Result};
use crate::nn::{checkpoint, InitScheme, ModelParams, NetworkTopology, ParamGrads};
use crate::sampler::{sample_negatives, sample_negatives_persistent, ReplayBuffer, SamplerConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight α of the `α·(mean E(pos)² + mean E(neg)²)` penalty.
    pub energy_reg: f64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Abort when either batch's mean |energy| exceeds this.
    pub divergence_guard: f64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            optimizer: OptimizerKind::default(),
            batch_size: 16,
            epochs: 10,
            seed: 0,
            energy_reg: 1e-3,
            checkpoint_every: 0,
            divergence_guard: 1e6,
            init: InitScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EbmError::InvalidConfig(format!("trainer: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.energy_reg >= 0.0) {
            return bad("energy_reg must be non-negative");
        }
        if !(self.divergence_guard > 0.0) {
            return bad("divergence_guard must be positive");
        }
        if let OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub pos_energy: f64,
    pub neg_energy: f64,
    /// `neg_energy - pos_energy`.
    pub gap: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    /// Equality on everything except wall-clock time.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.pos_energy.to_bits() == b.pos_energy.to_bits()
                    && a.neg_energy.to_bits() == b.neg_energy.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
            })
    }

    /// Mean energy gap over the trailing `fraction` of iterations.
    pub fn tail_gap(&self, fraction: f64) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let tail = &self.records[n - take..];
        Some(tail.iter().map(|r| r.gap).sum::<f64>() / take as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,pos_energy,neg_energy,gap,grad_norm,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                r.iteration, r.pos_energy, r.neg_energy, r.gap, r.grad_norm, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::binio::write_file(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct CdGradient {
    pub grads: ParamGrads,
    pub pos_energy: f64,
    pub neg_energy: f64,
}

/// Gradient of `mean E(pos) − mean E(neg) + α·(mean E(pos)² + mean E(neg)²)`.
///
/// Positive and negative contributions are accumulated separately and
/// subtracted once, so identical batches with `α = 0` cancel exactly.
pub fn cd_gradient(
    params: &ModelParams,
    pos_batch: &[Tensor],
    neg_batch: &[Tensor],
    energy_reg: f64,
) -> Result<CdGradient> {
    let (Some(first), false) = (pos_batch.first(), neg_batch.is_empty()) else {
        return Err(EbmError::EmptyBatch {
            context: "cd_gradient".into(),
        });
    };
    for x in pos_batch.iter().chain(neg_batch) {
        x.ensure_shape(first.shape(), "cd_gradient batch")?;
    }
    let topology = params.topology();
    let mut pos_grads = ParamGrads::zeros(topology);
    let mut neg_grads = ParamGrads::zeros(topology);

    let inv_pos = 1.0 / pos_batch.len() as f64;
    let mut pos_sum = 0.0;
    for x in pos_batch {
        pos_sum += params.accumulate_param_gradient(
            x,
            |e| inv_pos * (1.0 + 2.0 * energy_reg * e),
            &mut pos_grads,
        )?;
    }
    let inv_neg = 1.0 / neg_batch.len() as f64;
    let mut neg_sum = 0.0;
    for x in neg_batch {
        neg_sum += params.accumulate_param_gradient(
            x,
            |e| inv_neg * (1.0 - 2.0 * energy_reg * e),
            &mut neg_grads,
        )?;
    }
    let grads = pos_grads.difference(&neg_grads);
    if !grads.slices().flat_map(|s| s.iter()).all(|v| v.is_finite()) {
        return Err(EbmError::NonFinite {
            context: "cd gradient".into(),
        });
    }
    Ok(CdGradient {
        grads,
        pos_energy: pos_sum * inv_pos,
        neg_energy: neg_sum * inv_neg,
    })
}

/// Adam or SGD state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = match kind {
            OptimizerKind::Adam { .. } => params.slices().map(|s| vec![0.0; s.len()]).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            kind,
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.slices_mut().zip(grads.slices()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let state = self.first.iter_mut().zip(self.second.iter_mut());
                for ((p, g), (m, v)) in params.slices_mut().zip(grads.slices()).zip(state) {
                    for i in 0..p.len() {
                        let d = g[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

pub fn optimizer_step(params: &mut ModelParams, grads: &ParamGrads, state: &mut Optimizer) {
    state.step(params, grads);
}

/// Trains from a fresh initialization; see [`fit_observed`].
pub fn fit(
    dataset: &[Tensor],
    topology: &NetworkTopology,
    config: &TrainConfig,
    sampler: &SamplerConfig,
) -> Result<(ModelParams, TrainHistory)> {
    fit_observed(dataset, topology, config, sampler, None, &mut |_| {})
}

/// Runs `epochs × ⌈N / batch_size⌉` CD iterations over `dataset`.
///
/// The dataset holds images only; labels and masks cannot reach the
/// trainer. When `checkpoint_dir` is set and `checkpoint_every > 0`,
/// `iter_NNNNNN.ckpt` files are written there. `observer` sees each record
/// as it is produced.
pub fn fit_observed(
    dataset: &[Tensor],
    topology: &NetworkTopology,
    config: &TrainConfig,
    sampler: &SamplerConfig,
    checkpoint_dir: Option<&Path>,
    observer: &mut dyn FnMut(&TrainRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    sampler.validate()?;
    let first = dataset.first().ok_or_else(|| EbmError::EmptyBatch {
        context: "training dataset".into(),
    })?;
    let shape = first.shape().to_vec();
    let (h, w, c) = first.image_dims()?;
    topology.validate_input(h, w, c)?;
    for x in dataset {
        x.ensure_shape(&shape, "training dataset")?;
    }

    let mut params = ModelParams::init(topology, config.seed, config.init);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut buffer = sampler
        .buffer
        .enabled
        .then(|| ReplayBuffer::new(sampler.buffer.capacity));
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let start = Instant::now();
    let mut iteration = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let pos: Vec<Tensor> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let neg = match buffer.as_mut() {
                Some(buf) => {
                    sample_negatives_persistent(&params, &shape, pos.len(), sampler, &mut rng, buf)?
                }
                None => sample_negatives(&params, &shape, pos.len(), sampler, &mut rng)?,
            };
            let cd = cd_gradient(&params, &pos, &neg, config.energy_reg)?;
            let worst = cd.pos_energy.abs().max(cd.neg_energy.abs());
            if !(worst <= config.divergence_guard) {
                return Err(EbmError::TrainingDiverged {
                    iteration,
                    energy: if cd.pos_energy.abs() >= cd.neg_energy.abs() {
                        cd.pos_energy
                    } else {
                        cd.neg_energy
                    },
                    guard: config.divergence_guard,
                });
            }
            optimizer.step(&mut params, &cd.grads);

            let record = TrainRecord {
                iteration,
                pos_energy: cd.pos_energy,
                neg_energy: cd.neg_energy,
                gap: cd.neg_energy - cd.pos_energy,
                grad_norm: cd.grads.norm(),
                seconds: start.elapsed().as_secs_f64(),
            };
            observer(&record);
            history.records.push(record);
            iteration += 1;

            if let Some(dir) = checkpoint_dir {
                if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 {
                    checkpoint::save(&params, &dir.join(format!("iter_{iteration:06}.ckpt")))?;
                }
            }
        }
    }
    Ok((params, history))
}
