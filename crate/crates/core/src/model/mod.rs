//! The dual-stream network: a per-window graph-attention spatial stream, a
//! transformer-encoder temporal stream, and a dense + softmax fusion head.

mod checkpoint;
mod config;
pub mod layers;
mod params;

use crate::data::WindowedSegment;
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};
use crate::sensor_graph::AdjacencyMatrix;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT};
pub use config::{ModelConfig, NUM_CLASSES};
pub use params::{DsGtfParams, EncoderIds, FusionIds, GatHeadIds, Init, ParamLayout, ParamSpec, SpatialIds};

/// Softmax output over the four task classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassProbabilities(pub [f64; NUM_CLASSES]);

impl ClassProbabilities {
    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    fn from_tensor(t: &Tensor) -> Self {
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(t.data());
        ClassProbabilities(out)
    }
}

/// Projection and attention vector of one GAT head.
#[derive(Clone, Debug, PartialEq)]
pub struct GatHead {
    pub proj: Tensor,
    pub attn: Tensor,
}

impl DsGtfParams {
    /// Copies out the GAT heads that process window `g`.
    pub fn gat_heads(&self, g: usize) -> Vec<GatHead> {
        self.layout().spatial.gat[g]
            .iter()
            .map(|h| GatHead {
                proj: self.tensors()[h.proj].clone(),
                attn: self.tensors()[h.attn].clone(),
            })
            .collect()
    }
}

fn constant_params<'a>(tape: &mut Tape<'a>, params: &'a DsGtfParams) -> Vec<Var> {
    params.tensors().iter().map(|t| tape.constant_ref(t)).collect()
}

fn check_windows(params: &DsGtfParams, windows: &[Tensor]) -> Result<()> {
    let m = params.config().windows();
    if windows.len() != m {
        return Err(Error::invalid(format!(
            "model expects {m} windows, got {}",
            windows.len()
        )));
    }
    Ok(())
}

/// Graph attention over `c×w` node features; returns `c×(H·F')`.
pub fn gat_forward(node_feats: &Tensor, adj: &AdjacencyMatrix, heads: &[GatHead]) -> Result<Tensor> {
    if node_feats.rows() != adj.n() {
        return Err(Error::Shape {
            op: "gat_forward",
            left: vec![adj.n()],
            right: node_feats.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(node_feats);
    let vars: Vec<layers::GatHeadVars> = heads
        .iter()
        .map(|h| layers::GatHeadVars {
            proj: tape.constant_ref(&h.proj),
            attn: tape.constant_ref(&h.attn),
        })
        .collect();
    let out = layers::gat_layer(&mut tape, x, adj.mask(), &vars)?;
    Ok(tape.value(out).clone())
}

/// Spatial-stream embedding (`1×(c·p)`) of one segment's windows.
pub fn spatial_forward(windows: &[Tensor], adj: &AdjacencyMatrix, params: &DsGtfParams) -> Result<Tensor> {
    check_windows(params, windows)?;
    let mut tape = Tape::new();
    let vars = constant_params(&mut tape, params);
    let xs: Vec<Var> = windows.iter().map(|w| tape.constant_ref(w)).collect();
    let out = layers::spatial_stream(&mut tape, &xs, adj, &params.layout().spatial, &vars)?;
    Ok(tape.value(out).clone())
}

/// Temporal-stream embedding (`1×(c·p)`) of a normalized `c×d` segment.
pub fn temporal_forward(segment: &Tensor, params: &DsGtfParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = constant_params(&mut tape, params);
    let x = tape.constant_ref(segment);
    let out = layers::temporal_stream(&mut tape, x, &params.layout().encoder, &vars)?;
    Ok(tape.value(out).clone())
}

pub fn forward(ws: &WindowedSegment, adj: &AdjacencyMatrix, params: &DsGtfParams) -> Result<ClassProbabilities> {
    check_windows(params, &ws.windows)?;
    let mut tape = Tape::new();
    let vars = constant_params(&mut tape, params);
    let seg = tape.constant_ref(&ws.segment);
    let windows: Vec<Var> = ws.windows.iter().map(|w| tape.constant_ref(w)).collect();
    let probs = layers::forward_on_tape(&mut tape, params.config(), params.layout(), &vars, seg, &windows, adj)?;
    Ok(ClassProbabilities::from_tensor(tape.value(probs)))
}

/// Loss, prediction and parameter gradients for a single labeled segment.
pub struct SampleGradient {
    pub loss: f64,
    pub probs: ClassProbabilities,
    /// One entry per parameter tensor in layout order; `None` means zero.
    pub grads: Vec<Option<Vec<f64>>>,
}

pub fn sample_gradient(ws: &WindowedSegment, adj: &AdjacencyMatrix, params: &DsGtfParams) -> Result<SampleGradient> {
    check_windows(params, &ws.windows)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t)).collect();
    let seg = tape.constant_ref(&ws.segment);
    let windows: Vec<Var> = ws.windows.iter().map(|w| tape.constant_ref(w)).collect();
    let probs = layers::forward_on_tape(&mut tape, params.config(), params.layout(), &vars, seg, &windows, adj)?;
    let loss = tape.cross_entropy(probs, &[ws.label.index()])?;
    let mut grads = tape.backward(loss)?;
    Ok(SampleGradient {
        loss: tape.value(loss).item(),
        probs: ClassProbabilities::from_tensor(tape.value(probs)),
        grads: vars.iter().map(|&v| grads.take(v)).collect(),
    })
}

/// Mean cross-entropy of a batch, built on `tape` from parameter vars.
pub fn batch_loss_on_tape(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    layout: &ParamLayout,
    params: &[Var],
    batch: &[WindowedSegment],
    adj: &AdjacencyMatrix,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(batch.len());
    for ws in batch {
        let seg = tape.constant(ws.segment.clone());
        let windows: Vec<Var> = ws.windows.iter().map(|w| tape.constant(w.clone())).collect();
        rows.push(layers::forward_on_tape(
            tape, config, layout, params, seg, &windows, adj,
        )?);
    }
    let probs = tape.concat_rows(&rows)?;
    let labels: Vec<usize> = batch.iter().map(|ws| ws.label.index()).collect();
    tape.cross_entropy(probs, &labels)
}

/// Finite-difference check of the batch cross-entropy against every parameter tensor.
pub fn gradient_check(
    params: &DsGtfParams,
    adj: &AdjacencyMatrix,
    batch: &[WindowedSegment],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let config = *params.config();
    let layout = params.layout();
    finite_diff_check(
        |tape, vars| batch_loss_on_tape(tape, &config, layout, vars, batch, adj),
        params.tensors(),
        opts,
    )
}
