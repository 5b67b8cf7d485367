use serde::{Deserialize, Serialize};

use super::{Recording, TaskLabel};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Added to the channel standard deviation before dividing.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Segment length, overlap and window width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            segment_len: 100,
            overlap: 0.5,
            window: 10,
        }
    }
}

/// Hop between consecutive segment starts, `d * (1 - overlap)`, which must be a positive integer.
pub fn segment_stride(segment_len: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap must lie in [0,1), got {overlap}")));
    }
    let stride = segment_len as f64 * (1.0 - overlap);
    let rounded = stride.round();
    if rounded < 1.0 || (stride - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "segment length {segment_len} with overlap {overlap} gives non-integer stride {stride}"
        )));
    }
    Ok(rounded as usize)
}

/// Raw `c×d` segments starting at `0, s, 2s, ...`; a trailing partial segment is dropped.
pub fn segment_recording(rec: &Recording, segment_len: usize, overlap: f64) -> Result<Vec<Tensor>> {
    let stride = segment_stride(segment_len, overlap)?;
    let (c, t) = (rec.channels(), rec.samples());
    if segment_len == 0 || t < segment_len {
        return Err(Error::invalid(format!(
            "recording of {t} samples is shorter than segment length {segment_len}"
        )));
    }
    let count = (t - segment_len) / stride + 1;
    Ok((0..count)
        .map(|s| {
            let start = s * stride;
            let mut data = Vec::with_capacity(c * segment_len);
            for ch in 0..c {
                data.extend(rec.channel(ch)[start..start + segment_len].iter().map(|&v| v as f64));
            }
            Tensor::from_parts(vec![c, segment_len], data)
        })
        .collect())
}

/// Per-channel z-score with population standard deviation.
pub fn normalize_segment(seg: &Tensor) -> Tensor {
    let d = seg.cols();
    let mut out = Vec::with_capacity(seg.numel());
    for row in seg.data().chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64).sqrt();
        out.extend(row.iter().map(|v| (v - mean) / (std + NORMALIZE_EPS)));
    }
    Tensor::from_parts(seg.shape().to_vec(), out)
}

/// Splits `c×d` into `d / w` contiguous `c×w` windows.
pub fn window_segment(seg: &Tensor, window: usize) -> Result<Vec<Tensor>> {
    let (c, d) = (seg.rows(), seg.cols());
    if window == 0 || d % window != 0 {
        return Err(Error::invalid(format!(
            "window {window} does not divide segment length {d}"
        )));
    }
    Ok((0..d / window)
        .map(|g| {
            let mut data = Vec::with_capacity(c * window);
            for r in 0..c {
                data.extend_from_slice(&seg.row(r)[g * window..(g + 1) * window]);
            }
            Tensor::from_parts(vec![c, window], data)
        })
        .collect())
}

/// A normalized segment together with its windows, label and subject.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSegment {
    pub subject_id: String,
    pub label: TaskLabel,
    pub segment: Tensor,
    pub windows: Vec<Tensor>,
}

impl WindowedSegment {
    /// Normalizes `raw` and windows it.
    pub fn from_raw(subject_id: impl Into<String>, label: TaskLabel, raw: &Tensor, window: usize) -> Result<Self> {
        let segment = normalize_segment(raw);
        let windows = window_segment(&segment, window)?;
        Ok(WindowedSegment {
            subject_id: subject_id.into(),
            label,
            segment,
            windows,
        })
    }
}

/// Segment, normalize and window one recording.
pub fn prepare_segments(rec: &Recording, pipeline: &PipelineConfig) -> Result<Vec<WindowedSegment>> {
    segment_recording(rec, pipeline.segment_len, pipeline.overlap)?
        .iter()
        .map(|raw| WindowedSegment::from_raw(rec.subject_id.clone(), rec.label, raw, pipeline.window))
        .collect()
}
