use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::subject_segments;
use crate::config::TrainConfig;
use crate::data::{Dataset, WindowedSegment};
use crate::error::{Error, Result};
use crate::model::{forward, DsGtfParams};
use crate::sensor_graph::AdjacencyMatrix;

/// Per-subject segment accuracy with the across-subject mean and population std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_subject: Vec<(String, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_accuracies(per_subject: Vec<(String, f64)>) -> Result<Self> {
        if per_subject.is_empty() {
            return Err(Error::invalid("no subjects to evaluate"));
        }
        let n = per_subject.len() as f64;
        let mean = per_subject.iter().map(|(_, a)| a).sum::<f64>() / n;
        let var = per_subject.iter().map(|(_, a)| (a - mean).powi(2)).sum::<f64>() / n;
        Ok(EvalReport {
            per_subject,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn accuracy_of(&self, subject: &str) -> Option<f64> {
        self.per_subject.iter().find(|(s, _)| s == subject).map(|&(_, a)| a)
    }
}

/// Fraction of `segments` whose argmax prediction equals the label.
pub fn evaluate_segments(params: &DsGtfParams, adj: &AdjacencyMatrix, segments: &[WindowedSegment]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to evaluate"));
    }
    let hits = segments
        .par_iter()
        .map(|ws| forward(ws, adj, params).map(|p| (p.argmax() == ws.label.index()) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / segments.len() as f64)
}

/// Evaluates `subjects` in the given order.
pub fn evaluate(
    params: &DsGtfParams,
    adj: &AdjacencyMatrix,
    dataset: &Dataset,
    subjects: &[String],
    config: &TrainConfig,
) -> Result<EvalReport> {
    let model = config.model_config(dataset.layout.len())?;
    if model != *params.config() {
        return Err(Error::invalid(format!(
            "checkpoint dims {:?} do not match the data and config {:?}",
            params.config(),
            model
        )));
    }
    let mut rows = Vec::with_capacity(subjects.len());
    for s in subjects {
        let segs = subject_segments(dataset, std::slice::from_ref(s), config)?;
        rows.push((s.clone(), evaluate_segments(params, adj, &segs)?));
    }
    EvalReport::from_accuracies(rows)
}

pub fn write_eval_csv(mut w: impl Write, report: &EvalReport) -> std::io::Result<()> {
    writeln!(w, "subject,accuracy")?;
    for (s, a) in &report.per_subject {
        writeln!(w, "{s},{a:.6}")?;
    }
    writeln!(w, "mean,{:.6}", report.mean)?;
    writeln!(w, "std,{:.6}", report.std)
}
