use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::codec::Granularity;
use crate::error::{Error, Result};
use crate::net::NetConfig;

/// Weights of the bidirectional and regularization terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.5,
            alpha2: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Network shape; the vertex count comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub conv_widths: Vec<usize>,
    pub latent: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = NetConfig::new(1);
        ModelShape {
            conv_widths: d.conv_widths,
            latent: d.latent,
            lstm_layers: d.lstm_layers,
            lstm_hidden: d.lstm_hidden,
        }
    }
}

impl ModelShape {
    pub fn net_config(&self, vertices: usize, init_seed: u64) -> NetConfig {
        NetConfig {
            vertices,
            conv_widths: self.conv_widths.clone(),
            latent: self.latent,
            lstm_layers: self.lstm_layers,
            lstm_hidden: self.lstm_hidden,
            init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Windows per iteration.
    pub batch: usize,
    /// Window length n (frames per chain, endpoints included).
    pub seq_len: usize,
    pub adam: AdamConfig,
    pub test_fraction: f64,
    /// Keep every `stride`-th frame.
    pub stride: usize,
    pub seed: u64,
    /// Entries of the forward chain's initial LSTM state.
    pub init_state: f64,
    /// Iterations between checkpoints (0 = never).
    pub checkpoint_interval: u64,
    pub loss: LossWeights,
    pub model: ModelShape,
    pub normalization: Granularity,
    /// Sample the latent code during training.
    pub sample_latent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 7000,
            batch: 8,
            seq_len: 32,
            adam: AdamConfig::default(),
            test_fraction: 0.2,
            stride: 1,
            seed: 0,
            init_state: 0.1,
            checkpoint_interval: 500,
            loss: LossWeights::default(),
            model: ModelShape::default(),
            normalization: Granularity::default(),
            sample_latent: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.seq_len < 2 {
            return bad(format!(
                "sequence length must be >= 2, got {}",
                self.seq_len
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.batch == 0 || self.stride == 0 {
            return bad("batch and stride must be positive".into());
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return bad(format!("bad Adam settings {:?}", self.adam));
        }
        self.loss.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
