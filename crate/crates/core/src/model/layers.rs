//! The network expressed as tape operations.
//!
//! Functions here take [`Var`]s for both inputs and parameters so the same
//! code serves inference, training, and finite-difference probing.

use super::config::ModelConfig;
use super::params::{EncoderIds, FusionIds, ParamLayout, SpatialIds};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::sensor_graph::AdjacencyMatrix;

/// Negative slope applied to GAT attention logits.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub struct GatHeadVars {
    /// `w×F'`
    pub proj: Var,
    /// `2F'×1`, source half first.
    pub attn: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionHeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// One multi-head graph attention layer: `c×w` node features to `c×(H·F')`.
///
/// Per head, `e_ij = leaky_relu(a_src·z_i + a_dst·z_j)` over the neighbors of
/// `i` (where `z = X W`), normalized by a masked softmax, and the output row is
/// `elu(sum_j alpha_ij z_j)`. Heads are concatenated along features.
pub fn gat_layer(tape: &mut Tape<'_>, x: Var, mask: &[bool], heads: &[GatHeadVars]) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let z = tape.matmul(x, head.proj)?;
        let width = tape.value(z).cols();
        if tape.value(head.attn).numel() != 2 * width {
            return Err(Error::Shape {
                op: "gat attention vector",
                left: vec![2 * width, 1],
                right: tape.value(head.attn).shape().to_vec(),
            });
        }
        let a_src = tape.slice_rows(head.attn, 0, width)?;
        let a_dst = tape.slice_rows(head.attn, width, width)?;
        let s_src = tape.matmul(z, a_src)?;
        let s_dst = tape.matmul(z, a_dst)?;
        let logits = tape.outer_add(s_src, s_dst)?;
        let logits = tape.leaky_relu(logits, GAT_LEAKY_SLOPE)?;
        let alpha = tape.masked_softmax(logits, Some(mask))?;
        let agg = tape.matmul(alpha, z)?;
        outs.push(tape.elu(agg)?);
    }
    tape.concat_cols(&outs)
}

/// Per window: GAT, flatten, window-specific dense; the window outputs are summed.
pub fn spatial_stream(
    tape: &mut Tape<'_>,
    windows: &[Var],
    adj: &AdjacencyMatrix,
    ids: &SpatialIds,
    params: &[Var],
) -> Result<Var> {
    if windows.len() != ids.gat.len() || windows.is_empty() {
        return Err(Error::invalid(format!(
            "spatial stream has parameters for {} windows, got {}",
            ids.gat.len(),
            windows.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (g, &x) in windows.iter().enumerate() {
        if tape.value(x).rows() != adj.n() {
            return Err(Error::Shape {
                op: "spatial window",
                left: vec![adj.n()],
                right: tape.value(x).shape().to_vec(),
            });
        }
        let heads: Vec<GatHeadVars> = ids.gat[g]
            .iter()
            .map(|h| GatHeadVars {
                proj: params[h.proj],
                attn: params[h.attn],
            })
            .collect();
        let h = gat_layer(tape, x, adj.mask(), &heads)?;
        let len = tape.value(h).numel();
        let flat = tape.reshape(h, &[1, len])?;
        let dense = tape.matmul(flat, params[ids.dense_w[g]])?;
        let dense = tape.add_row(dense, params[ids.dense_b[g]])?;
        total = Some(match total {
            None => dense,
            Some(acc) => tape.add(acc, dense)?,
        });
    }
    Ok(total.expect("at least one window"))
}

/// Scaled dot-product self-attention over the rows of `x`, heads concatenated.
pub fn multi_head_self_attention(tape: &mut Tape<'_>, x: Var, heads: &[AttentionHeadVars]) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let q = tape.matmul(x, head.wq)?;
        let k = tape.matmul(x, head.wk)?;
        let v = tape.matmul(x, head.wv)?;
        let dk = tape.value(q).cols();
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let alpha = tape.softmax(scores)?;
        outs.push(tape.matmul(alpha, v)?);
    }
    tape.concat_cols(&outs)
}

/// One post-norm encoder block over the `c` channel rows, then per-token
/// down-sampling to `p` and a row-major flatten to `1×(c·p)`.
pub fn temporal_stream(tape: &mut Tape<'_>, segment: Var, ids: &EncoderIds, params: &[Var]) -> Result<Var> {
    let heads: Vec<AttentionHeadVars> = (0..ids.wq.len())
        .map(|h| AttentionHeadVars {
            wq: params[ids.wq[h]],
            wk: params[ids.wk[h]],
            wv: params[ids.wv[h]],
        })
        .collect();
    let p = |i: usize| params[i];

    let attended = multi_head_self_attention(tape, segment, &heads).map_err(|e| e.in_stage("encoder attention"))?;
    let h1 = (|| {
        let proj = tape.matmul(attended, p(ids.wo))?;
        let proj = tape.add_row(proj, p(ids.bo))?;
        let res = tape.add(segment, proj)?;
        tape.layer_norm(res, p(ids.ln1_gain), p(ids.ln1_bias))
    })()
    .map_err(|e| e.in_stage("encoder residual 1"))?;
    let h2 = (|| {
        let ff = tape.matmul(h1, p(ids.ff1_w))?;
        let ff = tape.add_row(ff, p(ids.ff1_b))?;
        let ff = tape.relu(ff)?;
        let ff = tape.matmul(ff, p(ids.ff2_w))?;
        let ff = tape.add_row(ff, p(ids.ff2_b))?;
        let res = tape.add(h1, ff)?;
        tape.layer_norm(res, p(ids.ln2_gain), p(ids.ln2_bias))
    })()
    .map_err(|e| e.in_stage("encoder feed-forward"))?;
    (|| {
        let down = tape.matmul(h2, p(ids.down_w))?;
        let down = tape.add_row(down, p(ids.down_b))?;
        let len = tape.value(down).numel();
        tape.reshape(down, &[1, len])
    })()
    .map_err(|e| e.in_stage("encoder down-sampling"))
}

/// `softmax(concat(temporal, spatial) W + b)` as a `1×4` row.
pub fn fusion_head(tape: &mut Tape<'_>, temporal: Var, spatial: Var, ids: &FusionIds, params: &[Var]) -> Result<Var> {
    let joined = tape.concat_cols(&[temporal, spatial])?;
    let logits = tape.matmul(joined, params[ids.w])?;
    let logits = tape.add_row(logits, params[ids.b])?;
    tape.softmax(logits)
}

/// Full forward pass for one segment; returns the `1×4` class probabilities.
pub fn forward_on_tape(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    layout: &ParamLayout,
    params: &[Var],
    segment: Var,
    windows: &[Var],
    adj: &AdjacencyMatrix,
) -> Result<Var> {
    if adj.n() != config.channels {
        return Err(Error::invalid(format!(
            "adjacency has {} nodes but the model expects {} channels",
            adj.n(),
            config.channels
        )));
    }
    let seg_shape = tape.value(segment).shape();
    if seg_shape != [config.channels, config.segment_len] {
        return Err(Error::Shape {
            op: "segment",
            left: vec![config.channels, config.segment_len],
            right: seg_shape.to_vec(),
        });
    }
    let temporal =
        temporal_stream(tape, segment, &layout.encoder, params).map_err(|e| e.in_stage("temporal stream"))?;
    let spatial =
        spatial_stream(tape, windows, adj, &layout.spatial, params).map_err(|e| e.in_stage("spatial stream"))?;
    fusion_head(tape, temporal, spatial, &layout.fusion, params).map_err(|e| e.in_stage("fusion head"))
}
