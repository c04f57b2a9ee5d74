//! Gradient-map anomaly scores.
//!
//! For an image `x` the gradient map is `g = ∂ log p(x)/∂x = −∂E/∂x` (the
//! log-partition term does not depend on `x`). Per-location, per-channel
//! training statistics turn it into `l = (g − μ)/σ`. Pixel scores are the
//! L_r norm over channels and image scores the L_r norm over pixels.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{EbmError, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

pub const STATS_MAGIC: &[u8; 8] = b"EBMSTAT1";
pub const SCORE_MAP_MAGIC: &[u8; 8] = b"EBMSMAP1";
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Energy,
    Raw,
    Standardized,
}

impl ScoreKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Energy => "energy",
            ScoreKind::Raw => "raw",
            ScoreKind::Standardized => "standardized",
        }
    }

    fn code(&self) -> u32 {
        match self {
            ScoreKind::Energy => 0,
            ScoreKind::Raw => 1,
            ScoreKind::Standardized => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ScoreKind::Energy),
            1 => Some(ScoreKind::Raw),
            2 => Some(ScoreKind::Standardized),
            _ => None,
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Norm order `r` used for both channel and pixel aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
#[derive(Default)]
pub enum NormOrder {
    L1,
    #[default]
    L2,
}

impl TryFrom<u32> for NormOrder {
    type Error = EbmError;

    fn try_from(r: u32) -> Result<Self> {
        match r {
            1 => Ok(NormOrder::L1),
            2 => Ok(NormOrder::L2),
            other => Err(EbmError::InvalidNorm(other)),
        }
    }
}

impl From<NormOrder> for u32 {
    fn from(r: NormOrder) -> u32 {
        match r {
            NormOrder::L1 => 1,
            NormOrder::L2 => 2,
        }
    }
}

impl NormOrder {
    /// `(Σ |v|^r)^{1/r}`.
    pub fn norm(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            NormOrder::L1 => values.into_iter().map(f64::abs).sum(),
            NormOrder::L2 => values.into_iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    /// `(h, w, c)`.
    pub values: Tensor,
    pub source: String,
}

impl GradientMap {
    pub fn new(values: Tensor, source: impl Into<String>) -> Result<Self> {
        values.image_dims()?;
        values.ensure_finite("gradient map")?;
        Ok(Self {
            values,
            source: source.into(),
        })
    }

    pub fn named(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }
}

/// `g(x) = −∂E/∂x`.
pub fn gradient_map(params: &ModelParams, image: &Tensor) -> Result<GradientMap> {
    let grad = params.input_gradient(image)?;
    Ok(GradientMap {
        values: grad.map(|v| -v),
        source: String::new(),
    })
}

/// Streaming per-element mean and second central moment (Welford), with
/// the pairwise merge of Chan et al. for parallel partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    shape: Vec<usize>,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, sample: &Tensor) -> Result<()> {
        sample.ensure_shape(&self.shape, "pixel statistics")?;
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self
            .mean
            .iter_mut()
            .zip(self.m2.iter_mut())
            .zip(sample.data())
        {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.shape != other.shape {
            return Err(EbmError::ShapeMismatch {
                context: "merging pixel statistics".into(),
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
        }
        self.count += other.count;
        Ok(())
    }

    /// Population (1/N) statistics with `σ = max(σ, epsilon)`.
    pub fn finish(&self, epsilon: f64) -> Result<PixelStats> {
        if self.count < 2 {
            return Err(EbmError::InvalidConfig(format!(
                "pixel statistics need at least 2 gradient maps, got {}",
                self.count
            )));
        }
        check_floor(epsilon)?;
        let n = self.count as f64;
        let sigma: Vec<f64> = self
            .m2
            .iter()
            .map(|&s| (s / n).max(0.0).sqrt().max(epsilon))
            .collect();
        Ok(PixelStats {
            mu: Tensor::new(self.shape.clone(), self.mean.clone())?,
            sigma: Tensor::new(self.shape.clone(), sigma)?,
            count: self.count,
            epsilon,
        })
    }
}

fn check_floor(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(EbmError::InvalidConfig(format!(
            "sigma floor must be positive, got {epsilon}"
        )))
    }
}

/// Per-location, per-channel mean and standard deviation of training
/// gradient maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub count: u64,
    pub epsilon: f64,
}

impl PixelStats {
    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    /// Mask of locations whose σ was raised to the floor.
    pub fn floored(&self) -> Vec<bool> {
        self.sigma
            .data()
            .iter()
            .map(|&s| s <= self.epsilon)
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(STATS_MAGIC);
        w.u32(self.shape().len() as u32);
        for &d in self.shape() {
            w.u64(d as u64);
        }
        w.f64s(self.mu.data());
        w.f64s(self.sigma.data());
        w.u64(self.count);
        w.f64(self.epsilon);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("stats", bytes, STATS_MAGIC)?;
        let ndims = r.u32()? as usize;
        if ndims == 0 || ndims > 8 {
            return Err(r.error(format!("implausible dimension count {ndims}")));
        }
        let shape = (0..ndims)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error("shape overflow"))?;
        let mu = Tensor::new(shape.clone(), r.f64s(n)?)?;
        let sigma = Tensor::new(shape, r.f64s(n)?)?;
        let count = r.u64()?;
        let epsilon = r.f64()?;
        r.finish()?;
        if count < 2 {
            return Err(EbmError::Format {
                what: "stats",
                message: format!("sample count {count} < 2"),
            });
        }
        check_floor(epsilon)?;
        if !mu.is_finite() || !sigma.data().iter().all(|&s| s.is_finite() && s >= epsilon) {
            return Err(EbmError::Format {
                what: "stats",
                message: "non-finite mean or sigma below floor".into(),
            });
        }
        Ok(Self {
            mu,
            sigma,
            count,
            epsilon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::binio::write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

pub fn fit_pixel_stats<'a>(
    train_maps: impl IntoIterator<Item = &'a GradientMap>,
    epsilon: f64,
) -> Result<PixelStats> {
    let mut it = train_maps.into_iter().peekable();
    let first = it.peek().ok_or_else(|| {
        EbmError::InvalidConfig("pixel statistics need at least 2 gradient maps, got 0".into())
    })?;
    let mut acc = MomentAccumulator::new(first.shape());
    for map in it {
        acc.push(&map.values)?;
    }
    acc.finish(epsilon)
}

/// Parallel variant: partial accumulators over chunks, merged in order.
pub fn fit_pixel_stats_parallel(
    train_maps: &[GradientMap],
    epsilon: f64,
    chunk: usize,
) -> Result<PixelStats> {
    let first = train_maps.first().ok_or_else(|| {
        EbmError::InvalidConfig("pixel statistics need at least 2 gradient maps, got 0".into())
    })?;
    let shape = first.shape().to_vec();
    let partials: Vec<MomentAccumulator> = train_maps
        .par_chunks(chunk.max(1))
        .map(|maps| {
            let mut acc = MomentAccumulator::new(&shape);
            for m in maps {
                acc.push(&m.values)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = MomentAccumulator::new(&shape);
    for p in &partials {
        total.merge(p)?;
    }
    total.finish(epsilon)
}

/// `l = (g − μ)/σ`, element-wise.
pub fn standardize(g: &GradientMap, stats: &PixelStats) -> Result<GradientMap> {
    g.values.ensure_shape(stats.shape(), "standardize")?;
    let data = g
        .values
        .data()
        .iter()
        .zip(stats.mu.data())
        .zip(stats.sigma.data())
        .map(|((&v, &m), &s)| (v - m) / s)
        .collect();
    Ok(GradientMap {
        values: Tensor::new(g.values.shape().to_vec(), data)?,
        source: g.source.clone(),
    })
}

/// Per-pixel scores `a(x)`, shape `(h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub values: Tensor,
    pub r: NormOrder,
    pub kind: ScoreKind,
}

impl ScoreMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn encode(&self) -> Vec<u8> {
        let (h, w) = self.dims();
        let mut out = Writer::new(SCORE_MAP_MAGIC);
        out.u64(h as u64);
        out.u64(w as u64);
        out.u32(self.kind.code());
        out.u32(self.r.into());
        out.f64s(self.values.data());
        out.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("score map", bytes, SCORE_MAP_MAGIC)?;
        let h = r.u64()? as usize;
        let w = r.u64()? as usize;
        let kind_code = r.u32()?;
        let kind = ScoreKind::from_code(kind_code)
            .ok_or_else(|| r.error(format!("unknown kind {kind_code}")))?;
        let norm = NormOrder::try_from(r.u32()?)?;
        let n = h.checked_mul(w).ok_or_else(|| r.error("shape overflow"))?;
        let values = Tensor::new(vec![h, w], r.f64s(n)?)?;
        r.finish()?;
        Ok(Self {
            values,
            r: norm,
            kind,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::binio::write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

/// `a(x) = (Σ_k |v_k(x)|^r)^{1/r}` over channels.
pub fn pixel_scores(map: &GradientMap, r: NormOrder, kind: ScoreKind) -> Result<ScoreMap> {
    let (h, w, c) = map.values.image_dims()?;
    let values: Vec<f64> = map
        .values
        .data()
        .chunks_exact(c)
        .map(|px| {
            if c == 1 {
                px[0].abs()
            } else {
                r.norm(px.iter().copied())
            }
        })
        .collect();
    Ok(ScoreMap {
        values: Tensor::new(vec![h, w], values)?,
        r,
        kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub value: f64,
    pub kind: ScoreKind,
    /// `None` for energy scores.
    pub r: Option<NormOrder>,
}

/// `A = (Σ_x a(x)^r)^{1/r}` over a pixel score map.
pub fn aggregate(scores: &ScoreMap) -> ImageScore {
    ImageScore {
        value: scores.r.norm(scores.values.data().iter().copied()),
        kind: scores.kind,
        r: Some(scores.r),
    }
}

pub fn image_score(map: &GradientMap, r: NormOrder, kind: ScoreKind) -> Result<ImageScore> {
    Ok(aggregate(&pixel_scores(map, r, kind)?))
}

/// Plain energy as an anomaly score (higher is more anomalous).
pub fn energy_score(params: &ModelParams, image: &Tensor) -> Result<ImageScore> {
    Ok(ImageScore {
        value: params.forward_energy(image)?,
        kind: ScoreKind::Energy,
        r: None,
    })
}

/// Every score for one image.
#[derive(Debug, Clone)]
pub struct ImageScores {
    pub energy: ImageScore,
    pub raw: ImageScore,
    pub standardized: Option<ImageScore>,
    pub raw_map: ScoreMap,
    pub standardized_map: Option<ScoreMap>,
}

impl ImageScores {
    pub fn all(&self) -> Vec<ImageScore> {
        let mut v = vec![self.energy, self.raw];
        v.extend(self.standardized);
        v
    }
}

/// Energy, raw and (when `stats` is given) standardized scores of one image.
pub fn score_image(
    params: &ModelParams,
    stats: Option<&PixelStats>,
    image: &Tensor,
    r: NormOrder,
) -> Result<ImageScores> {
    let (energy, grad) = params.energy_and_input_gradient(image)?;
    let g = GradientMap {
        values: grad.map(|v| -v),
        source: String::new(),
    };
    let raw_map = pixel_scores(&g, r, ScoreKind::Raw)?;
    let (standardized, standardized_map) = match stats {
        Some(stats) => {
            let l = standardize(&g, stats)?;
            let m = pixel_scores(&l, r, ScoreKind::Standardized)?;
            (Some(aggregate(&m)), Some(m))
        }
        None => (None, None),
    };
    Ok(ImageScores {
        energy: ImageScore {
            value: energy,
            kind: ScoreKind::Energy,
            r: None,
        },
        raw: aggregate(&raw_map),
        standardized,
        raw_map,
        standardized_map,
    })
}
