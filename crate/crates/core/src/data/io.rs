//! Recording binary files, the JSON manifest, and whole-dataset load/save.
//!
//! Recording layout (all little-endian):
//!
//! ```text
//! "DSGTF1\0"  7 bytes magic
//! 0x00        1 pad byte
//! u32         channel count c
//! u64         sample count T
//! f32 * c*T   channel-major samples
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Recording, TaskLabel};
use crate::error::{Error, Result};
use crate::sensor_graph::SensorLayout;

pub const RECORDING_MAGIC: &[u8; 7] = b"DSGTF1\0";

pub fn write_recording(w: &mut impl Write, rec: &Recording) -> std::io::Result<()> {
    w.write_all(RECORDING_MAGIC)?;
    w.write_all(&[0])?;
    w.write_all(&(rec.channels() as u32).to_le_bytes())?;
    w.write_all(&(rec.samples() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(rec.data().len() * 4);
    for v in rec.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_recording(r: &mut impl Read, subject_id: &str, label: TaskLabel) -> Result<Recording> {
    let bad = |detail: String| Error::format("recording file", detail);
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &header[..7] != RECORDING_MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let channels = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let samples = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
    let samples = usize::try_from(samples).map_err(|_| bad("sample count overflows".into()))?;
    let count = channels
        .checked_mul(samples)
        .ok_or_else(|| bad("channel x sample count overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| bad(format!("reading samples: {e}")))?;
    if bytes.len() != count * 4 {
        return Err(bad(format!("expected {} data bytes, found {}", count * 4, bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Recording::new(subject_id, label, channels, samples, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecording {
    pub label: TaskLabel,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub id: String,
    pub recordings: Vec<ManifestRecording>,
}

/// JSON index of a dataset; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub layout: String,
    pub subjects: Vec<ManifestSubject>,
}

/// A sensor layout plus every recording of every subject, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: SensorLayout,
    pub recordings: Vec<Recording>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl Dataset {
    pub fn new(layout: SensorLayout, recordings: Vec<Recording>) -> Result<Self> {
        if let Some(r) = recordings.iter().find(|r| r.channels() != layout.len()) {
            return Err(Error::invalid(format!(
                "recording {}/{} has {} channels but the layout has {}",
                r.subject_id,
                r.label,
                r.channels(),
                layout.len()
            )));
        }
        Ok(Dataset { layout, recordings })
    }

    /// Subject ids in order of first appearance.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.recordings {
            if !ids.contains(&r.subject_id) {
                ids.push(r.subject_id.clone());
            }
        }
        ids
    }

    pub fn has_subject(&self, id: &str) -> bool {
        self.recordings.iter().any(|r| r.subject_id == id)
    }

    pub fn recordings_of<'a>(&'a self, subject: &'a str) -> impl Iterator<Item = &'a Recording> + 'a {
        self.recordings.iter().filter(move |r| r.subject_id == subject)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let layout = SensorLayout::read_csv(&resolve(base, &manifest.layout))?;
        let mut recordings = Vec::new();
        for subj in &manifest.subjects {
            for rec in &subj.recordings {
                let path = resolve(base, &rec.file);
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                recordings.push(read_recording(&mut BufReader::new(file), &subj.id, rec.label)?);
            }
        }
        Dataset::new(layout, recordings)
    }

    /// Writes `manifest.json`, `layout.csv` and `recordings/<subject>_<label>.bin` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let rec_dir = dir.join("recordings");
        fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
        self.layout.write_csv(&dir.join("layout.csv"))?;

        let mut subjects: Vec<ManifestSubject> = Vec::new();
        for rec in &self.recordings {
            let name = format!("{}_{}.bin", rec.subject_id, rec.label);
            let path = rec_dir.join(&name);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            write_recording(&mut w, rec)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
            let entry = ManifestRecording {
                label: rec.label,
                file: format!("recordings/{name}"),
            };
            match subjects.iter_mut().find(|s| s.id == rec.subject_id) {
                Some(s) => s.recordings.push(entry),
                None => subjects.push(ManifestSubject {
                    id: rec.subject_id.clone(),
                    recordings: vec![entry],
                }),
            }
        }
        let manifest = Manifest {
            layout: "layout.csv".into(),
            subjects,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
