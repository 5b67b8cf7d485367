//! Mini-batch training with Adam, per-subject evaluation and adjacency sweeps.

mod artifacts;
mod eval;
mod sweep;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{prepare_segments, Dataset, DatasetSplit, WindowedSegment};
use crate::error::{Error, Result};
use crate::model::{sample_gradient, DsGtfParams};
use crate::numerics::{AdamState, Tensor};
use crate::sensor_graph::{build_adjacency, AdjacencyMatrix};

pub use artifacts::{load_checkpoint, save_checkpoint, write_training_artifacts, CheckpointHeader, TrainingArtifacts};
pub use eval::{evaluate, evaluate_segments, write_eval_csv, EvalReport};
pub use sweep::{sweep_adjacency, write_sweep_csv, SweepRow};

/// Samples per gradient task. Fixed so the summation order never depends on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

pub struct TrainOutcome {
    /// Final-epoch parameters, rounded to f32 as stored in checkpoints.
    pub params: DsGtfParams,
    pub metrics: Vec<EpochMetrics>,
    pub adjacency: AdjacencyMatrix,
    /// The input config with `channels` filled in from the data.
    pub config: TrainConfig,
}

/// Every subject in `subjects` must exist in `dataset`.
pub(crate) fn check_subjects(dataset: &Dataset, subjects: &[String]) -> Result<()> {
    match subjects.iter().find(|s| !dataset.has_subject(s)) {
        Some(s) => Err(Error::UnknownSubject(s.clone())),
        None => Ok(()),
    }
}

/// Segments of `subjects`, in subject order then recording order.
pub fn subject_segments(dataset: &Dataset, subjects: &[String], config: &TrainConfig) -> Result<Vec<WindowedSegment>> {
    check_subjects(dataset, subjects)?;
    let pipeline = config.pipeline();
    let mut out = Vec::new();
    for s in subjects {
        for rec in dataset.recordings_of(s) {
            out.extend(prepare_segments(rec, &pipeline)?);
        }
    }
    Ok(out)
}

fn check_leakage(split: &DatasetSplit, segments: &[WindowedSegment], order: &[usize]) -> Result<()> {
    match order
        .iter()
        .map(|&i| &segments[i])
        .find(|ws| split.is_test(&ws.subject_id))
    {
        Some(ws) => Err(Error::SubjectLeakage(ws.subject_id.clone())),
        None => Ok(()),
    }
}

struct BatchResult {
    grads: Vec<Tensor>,
    loss_sum: f64,
    correct: usize,
}

struct Partial {
    grads: Vec<Option<Vec<f64>>>,
    loss_sum: f64,
    correct: usize,
}

impl Partial {
    fn empty(n: usize) -> Self {
        Partial {
            grads: vec![None; n],
            loss_sum: 0.0,
            correct: 0,
        }
    }

    fn absorb(&mut self, grads: Vec<Option<Vec<f64>>>, loss: f64, correct: bool) {
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match acc {
                None => *acc = Some(g),
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
            }
        }
        self.loss_sum += loss;
        self.correct += correct as usize;
    }
}

/// Mean gradient over `batch`, plus the summed loss and correct count.
fn batch_gradient(batch: &[&WindowedSegment], adj: &AdjacencyMatrix, params: &DsGtfParams) -> Result<BatchResult> {
    let n = params.tensors().len();
    let partials: Vec<Result<Partial>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut p = Partial::empty(n);
            for ws in chunk {
                let sg = sample_gradient(ws, adj, params)?;
                p.absorb(sg.grads, sg.loss, sg.probs.argmax() == ws.label.index());
            }
            Ok(p)
        })
        .collect();
    let mut total = Partial::empty(n);
    for p in partials {
        let p = p?;
        total.absorb(p.grads, p.loss_sum, false);
        total.correct += p.correct;
    }
    let inv = 1.0 / batch.len() as f64;
    let grads = total
        .grads
        .into_iter()
        .zip(params.tensors())
        .map(|(g, t)| match g {
            None => Tensor::zeros(t.shape()),
            Some(mut g) => {
                g.iter_mut().for_each(|v| *v *= inv);
                Tensor::new(t.shape().to_vec(), g).expect("gradient shape matches its parameter")
            }
        })
        .collect();
    Ok(BatchResult {
        grads,
        loss_sum: total.loss_sum,
        correct: total.correct,
    })
}

pub fn train(dataset: &Dataset, split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, split, config, |_| {})
}

/// Trains on `split.train_subjects`; `on_epoch` sees each epoch's metrics as they complete.
pub fn train_with_progress(
    dataset: &Dataset,
    split: &DatasetSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let split = DatasetSplit::new(split.train_subjects.clone(), split.test_subjects.clone())?;
    check_subjects(dataset, &split.test_subjects)?;
    let model_config = config.model_config(dataset.layout.len())?;
    let resolved = TrainConfig {
        channels: Some(model_config.channels),
        ..config.clone()
    };
    let adjacency = build_adjacency(&dataset.layout, config.gamma, config.adjacency)?;
    let segments = subject_segments(dataset, &split.train_subjects, config)?;
    if segments.is_empty() {
        return Err(Error::invalid("the training subjects yield no segments"));
    }

    let mut params = DsGtfParams::init(&model_config, config.seed)?;
    let mut adam = AdamState::new(config.adam(), params.tensors());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        check_leakage(&split, &segments, &order)?;

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let wrap = |e: Error| Error::Training {
                epoch,
                batch: b + 1,
                source: Box::new(e),
            };
            let batch: Vec<&WindowedSegment> = idx.iter().map(|&i| &segments[i]).collect();
            let res = batch_gradient(&batch, &adjacency, &params).map_err(wrap)?;
            if !res.loss_sum.is_finite() {
                return Err(wrap(Error::NonFinite { op: "batch loss" }));
            }
            adam.step(params.tensors_mut(), &res.grads).map_err(wrap)?;
            loss_sum += res.loss_sum;
            correct += res.correct;
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / segments.len() as f64,
            train_acc: correct as f64 / segments.len() as f64,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    params.round_to_f32();
    Ok(TrainOutcome {
        params,
        metrics,
        adjacency,
        config: resolved,
    })
}

pub fn write_metrics_csv(mut w: impl Write, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,train_acc")?;
    for m in metrics {
        writeln!(w, "{},{:.6},{:.6}", m.epoch, m.train_loss, m.train_acc)?;
    }
    Ok(())
}
