use serde::{Deserialize, Serialize};

use crate::data::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;
use crate::sensor_graph::AdjacencyMethod;

/// Everything a training run depends on besides the data.
///
/// JSON keys are the field names, except `d`, `w` and `batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "d")]
    pub segment_len: usize,
    pub overlap: f64,
    #[serde(rename = "w")]
    pub window: usize,
    pub gamma: f64,
    pub adjacency: AdjacencyMethod,
    pub lr: f64,
    #[serde(rename = "batch")]
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Channel count; `None` takes it from the data.
    pub channels: Option<usize>,
    pub gat_out: usize,
    pub gat_heads: usize,
    pub enc_heads: usize,
    pub ff_hidden: usize,
    pub token_dim: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            segment_len: 100,
            overlap: 0.5,
            window: 10,
            gamma: 100.0,
            adjacency: AdjacencyMethod::TopK { k: 3 },
            lr: 1e-4,
            batch_size: 32,
            epochs: 15,
            seed: 0,
            channels: None,
            gat_out: 8,
            gat_heads: 3,
            enc_heads: 8,
            ff_hidden: 256,
            token_dim: 8,
            train_subjects: 12,
            test_subjects: 6,
        }
    }
}

impl TrainConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            segment_len: self.segment_len,
            overlap: self.overlap,
            window: self.window,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Model dimensions for data with `data_channels` channels.
    pub fn model_config(&self, data_channels: usize) -> Result<ModelConfig> {
        if let Some(c) = self.channels {
            if c != data_channels {
                return Err(Error::invalid(format!(
                    "config expects {c} channels but the data has {data_channels}"
                )));
            }
        }
        let cfg = ModelConfig {
            channels: data_channels,
            segment_len: self.segment_len,
            window: self.window,
            gat_out: self.gat_out,
            gat_heads: self.gat_heads,
            enc_heads: self.enc_heads,
            ff_hidden: self.ff_hidden,
            token_dim: self.token_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        crate::data::segment_stride(self.segment_len, self.overlap)?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        self.model_config(self.channels.unwrap_or(2)).map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
