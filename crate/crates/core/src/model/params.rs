//! Parameter inventory and initialization.
//!
//! All tensors live in one flat list whose order is fixed by [`ParamLayout`]
//! and doubles as the checkpoint order:
//!
//! 1. spatial stream, for each window `g`: per GAT head `proj` (`w×F'`) and
//!    `attn` (`2F'×1`), then the window's dense `weight` (`c·H_s·F' × c·p`)
//!    and `bias` (`c·p`);
//! 2. encoder: per head `wq`, `wk`, `wv` (`d×d_k`), then `wo`, `bo`,
//!    `ln1_gain`, `ln1_bias`, `ff1_w`, `ff1_b`, `ff2_w`, `ff2_b`,
//!    `ln2_gain`, `ln2_bias`, `down_w`, `down_b`;
//! 3. fusion: `weight` (`2·c·p × 4`) and `bias` (`4`).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

impl Init {
    pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatHeadIds {
    pub proj: usize,
    pub attn: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatialIds {
    /// `[window][head]`
    pub gat: Vec<Vec<GatHeadIds>>,
    pub dense_w: Vec<usize>,
    pub dense_b: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderIds {
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub wo: usize,
    pub bo: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub down_w: usize,
    pub down_b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionIds {
    pub w: usize,
    pub b: usize,
}

/// Names, shapes and positions of every parameter tensor for one config.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub spatial: SpatialIds,
    pub encoder: EncoderIds,
    pub fusion: FusionIds,
    specs: Vec<ParamSpec>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        self.add(name, vec![fan_in, fan_out], Init::Glorot { fan_in, fan_out })
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.add(name, vec![n], Init::Zeros)
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let c = config.channels;
        let e = config.embedding_dim();
        let fo = config.gat_out;

        let mut gat = Vec::new();
        let (mut dense_w, mut dense_b) = (Vec::new(), Vec::new());
        for g in 0..config.windows() {
            let heads = (0..config.gat_heads)
                .map(|h| GatHeadIds {
                    proj: b.weight(format!("spatial.window{g}.head{h}.proj"), config.window, fo),
                    attn: b.weight(format!("spatial.window{g}.head{h}.attn"), 2 * fo, 1),
                })
                .collect();
            gat.push(heads);
            dense_w.push(b.weight(format!("spatial.window{g}.dense.weight"), c * config.gat_heads * fo, e));
            dense_b.push(b.bias(format!("spatial.window{g}.dense.bias"), e));
        }

        let (d, dk, ht) = (config.segment_len, config.head_dim(), config.enc_heads);
        let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
        for h in 0..ht {
            wq.push(b.weight(format!("encoder.head{h}.wq"), d, dk));
            wk.push(b.weight(format!("encoder.head{h}.wk"), d, dk));
            wv.push(b.weight(format!("encoder.head{h}.wv"), d, dk));
        }
        let encoder = EncoderIds {
            wq,
            wk,
            wv,
            wo: b.weight("encoder.wo".into(), ht * dk, d),
            bo: b.bias("encoder.bo".into(), d),
            ln1_gain: b.add("encoder.ln1.gain".into(), vec![d], Init::Ones),
            ln1_bias: b.bias("encoder.ln1.bias".into(), d),
            ff1_w: b.weight("encoder.ff1.weight".into(), d, config.ff_hidden),
            ff1_b: b.bias("encoder.ff1.bias".into(), config.ff_hidden),
            ff2_w: b.weight("encoder.ff2.weight".into(), config.ff_hidden, d),
            ff2_b: b.bias("encoder.ff2.bias".into(), d),
            ln2_gain: b.add("encoder.ln2.gain".into(), vec![d], Init::Ones),
            ln2_bias: b.bias("encoder.ln2.bias".into(), d),
            down_w: b.weight("encoder.down.weight".into(), d, config.token_dim),
            down_b: b.bias("encoder.down.bias".into(), config.token_dim),
        };

        let fusion = FusionIds {
            w: b.weight("fusion.weight".into(), 2 * e, NUM_CLASSES),
            b: b.bias("fusion.bias".into(), NUM_CLASSES),
        };

        ParamLayout {
            spatial: SpatialIds { gat, dense_w, dense_b },
            encoder,
            fusion,
            specs: b.specs,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// All parameters of both streams and the fusion head.
#[derive(Clone, Debug, PartialEq)]
pub struct DsGtfParams {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    tensors: Vec<Tensor>,
}

impl DsGtfParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs()
            .iter()
            .map(|spec| match spec.init {
                Init::Glorot { fan_in, fan_out } => {
                    let bound = Init::glorot_bound(fan_in, fan_out);
                    let n = spec.shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                    Tensor::new(spec.shape.clone(), data)
                }
                Init::Zeros => Ok(Tensor::zeros(&spec.shape)),
                Init::Ones => Ok(Tensor::full(&spec.shape, 1.0)),
            })
            .collect::<Result<_>>()?;
        Ok(DsGtfParams {
            config: *config,
            layout: Arc::new(layout),
            tensors,
        })
    }

    /// Wraps tensors that must match the layout of `config` in order and shape.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if tensors.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.specs().iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Shape {
                    op: "load parameters",
                    left: spec.shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(DsGtfParams {
            config: *config,
            layout: Arc::new(layout),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Rounds every value to the nearest `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}
