use std::io::Write;

use super::{evaluate, train, EvalReport};
use crate::config::TrainConfig;
use crate::data::{Dataset, DatasetSplit};
use crate::sensor_graph::{build_adjacency, connectivity_report, AdjacencyMethod};

/// One variant of an adjacency sweep. A failed variant keeps its error text.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: AdjacencyMethod,
    /// Off-diagonal edge count; `None` when the adjacency could not be built.
    pub edges: Option<usize>,
    pub outcome: Result<EvalReport, String>,
}

/// Trains and evaluates one model per variant, each from `base.seed`.
pub fn sweep_adjacency(
    dataset: &Dataset,
    split: &DatasetSplit,
    base: &TrainConfig,
    variants: &[AdjacencyMethod],
    mut on_row: impl FnMut(&SweepRow),
) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(variants.len());
    for &method in variants {
        let edges = build_adjacency(&dataset.layout, base.gamma, method)
            .ok()
            .map(|a| connectivity_report(&a).edges);
        let config = TrainConfig {
            adjacency: method,
            ..base.clone()
        };
        let outcome = train(dataset, split, &config)
            .and_then(|out| evaluate(&out.params, &out.adjacency, dataset, &split.test_subjects, &config))
            .map_err(|e| e.to_string());
        let row = SweepRow { method, edges, outcome };
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Failed rows carry `failed` in both accuracy columns.
pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "method,param,edges,mean_acc,std_acc")?;
    for r in rows {
        let edges = r.edges.map(|e| e.to_string()).unwrap_or_default();
        write!(w, "{},{},{edges},", r.method.name(), r.method.param_string())?;
        match &r.outcome {
            Ok(rep) => writeln!(w, "{:.6},{:.6}", rep.mean, rep.std)?,
            Err(_) => writeln!(w, "failed,failed")?,
        }
    }
    Ok(())
}
