//! TOML run configuration shared by every CLI command.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! root = "data"
//! category = "synthetic"
//! image_size = 32
//! channels = 1
//!
//! [model]
//! base_width = 8
//!
//! [trainer]
//! learning_rate = 1e-4
//! epochs = 8
//!
//! [sampler]
//! step_size = 0.01
//! n_steps = 100
//!
//! [scoring]
//! r = 2
//!
//! [eval]
//! bins = 40
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ChannelMode, HeatmapRender, SyntheticSpec};
use crate::error::{EbmError, Result};
use crate::nn::NetworkTopology;
use crate::sampler::SamplerConfig;
use crate::scoring::{NormOrder, DEFAULT_SIGMA_FLOOR};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `<category>/train`, `<category>/test`, ...
    pub root: PathBuf,
    pub category: String,
    /// Network input side; images are resized to `image_size × image_size`.
    pub image_size: usize,
    pub channels: ChannelMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            category: "synthetic".into(),
            image_size: 128,
            channels: ChannelMode::Rgb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel count of the stem layer; 32 gives the published topology.
    pub base_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { base_width: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub r: NormOrder,
    pub sigma_floor: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            r: NormOrder::L2,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { bins: 40 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `trainer.seed` and `synth.seed` when set.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub trainer: TrainConfig,
    pub sampler: SamplerConfig,
    pub scoring: ScoringConfig,
    pub eval: EvalConfig,
    pub synth: SyntheticSpec,
    pub render: HeatmapRender,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| EbmError::InvalidConfig(format!("config: {e}")))?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EbmError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the global seed and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.set_seed(seed);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.trainer.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.sampler.validate()?;
        self.synth.validate()?;
        self.topology()?;
        if !(self.scoring.sigma_floor > 0.0) {
            return Err(EbmError::InvalidConfig(
                "scoring.sigma_floor must be positive".into(),
            ));
        }
        if self.eval.bins == 0 {
            return Err(EbmError::InvalidConfig(
                "eval.bins must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.render.alpha) {
            return Err(EbmError::InvalidConfig(format!(
                "render.alpha {} outside [0, 1]",
                self.render.alpha
            )));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<NetworkTopology> {
        NetworkTopology::for_input_size(
            self.data.image_size,
            self.data.channels.channels(),
            self.model.base_width,
        )
    }

    /// `(h, w, c)` of every preprocessed image.
    pub fn input_shape(&self) -> Vec<usize> {
        vec![
            self.data.image_size,
            self.data.image_size,
            self.data.channels.channels(),
        ]
    }
}
