//! Recordings, segmentation and windowing, subject splits, synthetic data,
//! and the on-disk recording/manifest formats.

mod io;
mod segment;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_recording, write_recording, Dataset, Manifest, ManifestRecording, ManifestSubject, RECORDING_MAGIC};
pub use segment::{
    normalize_segment, prepare_segments, segment_recording, segment_stride, window_segment, PipelineConfig,
    WindowedSegment, NORMALIZE_EPS,
};
pub use split::{split_subjects, DatasetSplit};
pub use synth::{synthesize_dataset, ClassSignalSpec, SynthConfig, SyntheticDataset};

/// The four task categories, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabel {
    Resting,
    StoryMath,
    WorkingMemory,
    Motor,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 4] = [
        TaskLabel::Resting,
        TaskLabel::StoryMath,
        TaskLabel::WorkingMemory,
        TaskLabel::Motor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLabel::Resting => "resting",
            TaskLabel::StoryMath => "story_math",
            TaskLabel::WorkingMemory => "working_memory",
            TaskLabel::Motor => "motor",
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task label {s:?}")))
    }
}

/// One subject's continuous recording for one task, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub label: TaskLabel,
    channels: usize,
    samples: usize,
    data: Vec<f32>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        label: TaskLabel,
        channels: usize,
        samples: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(Error::invalid("a recording needs at least 2 channels"));
        }
        if samples == 0 || data.len() != channels * samples {
            return Err(Error::invalid(format!(
                "recording data has {} values, expected {channels}x{samples}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "recording" });
        }
        Ok(Recording {
            subject_id: subject_id.into(),
            label,
            channels,
            samples,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }
}
