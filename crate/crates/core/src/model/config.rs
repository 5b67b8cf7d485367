use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output classes of the fusion head.
pub const NUM_CLASSES: usize = 4;

/// Every dimension the network's parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels `c` (graph nodes and encoder tokens).
    pub channels: usize,
    /// Segment length `d`.
    pub segment_len: usize,
    /// Window width `w`.
    pub window: usize,
    /// Per-head GAT output width `F'`.
    pub gat_out: usize,
    pub gat_heads: usize,
    pub enc_heads: usize,
    /// Encoder feed-forward hidden width `f`.
    pub ff_hidden: usize,
    /// Per-token down-sampled width `p`.
    pub token_dim: usize,
}

impl ModelConfig {
    /// Desk-scale defaults for `channels` sensors.
    pub fn with_channels(channels: usize) -> Self {
        ModelConfig {
            channels,
            segment_len: 100,
            window: 10,
            gat_out: 8,
            gat_heads: 3,
            enc_heads: 8,
            ff_hidden: 256,
            token_dim: 8,
        }
    }

    /// Small dimensions used for exhaustive gradient checking.
    pub fn toy() -> Self {
        ModelConfig {
            channels: 6,
            segment_len: 20,
            window: 4,
            gat_out: 4,
            gat_heads: 3,
            enc_heads: 4,
            ff_hidden: 32,
            token_dim: 4,
        }
    }

    /// Windows per segment, `m = d / w`.
    pub fn windows(&self) -> usize {
        self.segment_len / self.window
    }

    /// Attention head width `d_k = floor(d / H_t)`.
    pub fn head_dim(&self) -> usize {
        self.segment_len / self.enc_heads
    }

    /// Width of each stream's embedding, `E = c * p`.
    pub fn embedding_dim(&self) -> usize {
        self.channels * self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("segment_len", self.segment_len),
            ("window", self.window),
            ("gat_out", self.gat_out),
            ("gat_heads", self.gat_heads),
            ("enc_heads", self.enc_heads),
            ("ff_hidden", self.ff_hidden),
            ("token_dim", self.token_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model dimension {name} must be positive")));
        }
        if !self.segment_len.is_multiple_of(self.window) {
            return Err(Error::invalid(format!(
                "window {} does not divide segment length {}",
                self.window, self.segment_len
            )));
        }
        if self.head_dim() == 0 {
            return Err(Error::invalid(format!(
                "{} encoder heads leave no width for a segment of length {}",
                self.enc_heads, self.segment_len
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (c, d, w, m) = (self.channels, self.segment_len, self.window, self.windows());
        let (fo, hs, ht, dk, f, p) = (
            self.gat_out,
            self.gat_heads,
            self.enc_heads,
            self.head_dim(),
            self.ff_hidden,
            self.token_dim,
        );
        let e = c * p;
        let spatial = m * (hs * (w * fo + 2 * fo) + c * hs * fo * e + e);
        let encoder = 3 * ht * d * dk + ht * dk * d + d + 2 * d + d * f + f + f * d + d + 2 * d + d * p + p;
        let fusion = 2 * e * NUM_CLASSES + NUM_CLASSES;
        spatial + encoder + fusion
    }
}
