use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_metrics_csv, TrainOutcome};
use crate::config::TrainConfig;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, DsGtfParams, CHECKPOINT_FORMAT};

/// First line of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    /// Always has `channels` set.
    pub config: TrainConfig,
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, params: &DsGtfParams) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        config: TrainConfig {
            channels: Some(params.config().channels),
            ..config.clone()
        },
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, &header, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, DsGtfParams)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (header, params) = read_checkpoint(&mut BufReader::new(file), |h: &CheckpointHeader| {
        if h.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported format {:?}", h.format),
            ));
        }
        let c = h
            .config
            .channels
            .ok_or_else(|| Error::format("checkpoint", "header config lacks channels"))?;
        h.config.model_config(c)
    })?;
    Ok((header.config, params))
}

/// Paths written by [`write_training_artifacts`].
#[derive(Clone, Debug)]
pub struct TrainingArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub split: PathBuf,
}

/// Writes `checkpoint.bin`, `metrics.csv` and `split.json` under `dir`.
pub fn write_training_artifacts(dir: &Path, outcome: &TrainOutcome, split: &DatasetSplit) -> Result<TrainingArtifacts> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = TrainingArtifacts {
        checkpoint: dir.join("checkpoint.bin"),
        metrics: dir.join("metrics.csv"),
        split: dir.join("split.json"),
    };
    save_checkpoint(&paths.checkpoint, &outcome.config, &outcome.params)?;

    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome.metrics).expect("writing to memory");
    fs::write(&paths.metrics, buf).map_err(|e| Error::io(&paths.metrics, e))?;

    let text = serde_json::to_string_pretty(split)? + "\n";
    fs::write(&paths.split, text).map_err(|e| Error::io(&paths.split, e))?;
    Ok(paths)
}
