//! Labeled multi-channel recordings with a known class signature.
//!
//! Each class drives its own channel subset with a sinusoid at its own
//! frequency. Subjects differ by per-channel gain, recordings by per-channel
//! phase, and every channel receives white noise of the configured amplitude.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Recording, TaskLabel};
use crate::error::{Error, Result};
use crate::sensor_graph::{Channel, SensorLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSignalSpec {
    /// Sinusoid frequency per class, in cycles per sample.
    pub frequencies: [f64; 4],
    /// Channels driven per class; `None` uses `max(1, channels / 4)`.
    pub channels_per_class: Option<usize>,
    /// Range of the per-subject, per-channel gain.
    pub gain_range: (f64, f64),
}

impl Default for ClassSignalSpec {
    fn default() -> Self {
        ClassSignalSpec {
            frequencies: [0.03, 0.07, 0.12, 0.19],
            channels_per_class: None,
            gain_range: (0.5, 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    pub channels: usize,
    pub samples_per_task: usize,
    pub seed: u64,
    /// Standard deviation of the additive white noise.
    pub noise: f64,
    pub signal: ClassSignalSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 18,
            channels: 16,
            samples_per_task: 2000,
            seed: 0,
            noise: 0.0,
            signal: ClassSignalSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 subjects"));
        }
        if self.channels < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 channels"));
        }
        if self.samples_per_task == 0 {
            return Err(Error::invalid("samples_per_task must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise must be a non-negative number"));
        }
        let f = &self.signal.frequencies;
        if f.iter().any(|&v| !(v > 0.0 && v < 0.5)) {
            return Err(Error::invalid("class frequencies must lie in (0, 0.5) cycles/sample"));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if f[i] == f[j] {
                    return Err(Error::invalid("class frequencies must be distinct"));
                }
            }
        }
        if let Some(n) = self.signal.channels_per_class {
            if n == 0 || n > self.channels {
                return Err(Error::invalid("channels_per_class must lie in 1..=channels"));
            }
        }
        let (lo, hi) = self.signal.gain_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("gain_range must be positive and ordered"));
        }
        Ok(())
    }

    pub fn channels_per_class(&self) -> usize {
        self.signal.channels_per_class.unwrap_or((self.channels / 4).max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub layout: SensorLayout,
    pub recordings: Vec<Recording>,
    /// Channels driven by each class, in class-index order.
    pub class_channels: [Vec<usize>; 4],
}

pub(crate) fn subject_id(index: usize, total: usize) -> String {
    let width = total.to_string().len().max(2);
    format!("S{:0width$}", index + 1)
}

/// Points drawn uniformly on the unit sphere.
fn sphere_layout(rng: &mut ChaCha8Rng, channels: usize) -> Result<SensorLayout> {
    let chans = (0..channels)
        .map(|i| loop {
            let v: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-9 {
                break Channel::new(format!("A{:03}", i + 1), [v[0] / norm, v[1] / norm, v[2] / norm]);
            }
        })
        .collect();
    SensorLayout::new(chans)
}

pub fn synthesize_dataset(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = sphere_layout(&mut rng, config.channels)?;

    let c = config.channels;
    let per_class = config.channels_per_class();
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let class_channels: [Vec<usize>; 4] = std::array::from_fn(|k| {
        let mut chans: Vec<usize> = (0..per_class).map(|i| order[(k * per_class + i) % c]).collect();
        chans.sort_unstable();
        chans.dedup();
        chans
    });

    let t = config.samples_per_task;
    let (gain_lo, gain_hi) = config.signal.gain_range;
    let mut recordings = Vec::with_capacity(config.subjects * 4);
    for s in 0..config.subjects {
        let id = subject_id(s, config.subjects);
        let gains: Vec<f64> = (0..c).map(|_| rng.random_range(gain_lo..=gain_hi)).collect();
        for label in TaskLabel::ALL {
            let freq = config.signal.frequencies[label.index()];
            let active = &class_channels[label.index()];
            let mut data = vec![0f32; c * t];
            for ch in 0..c {
                let phase = rng.random_range(0.0..TAU);
                let driven = active.contains(&ch);
                for (i, v) in data[ch * t..(ch + 1) * t].iter_mut().enumerate() {
                    let mut x = 0.0;
                    if driven {
                        x += gains[ch] * (TAU * freq * i as f64 + phase).sin();
                    }
                    if config.noise > 0.0 {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        x += config.noise * n;
                    }
                    *v = x as f32;
                }
            }
            recordings.push(Recording::new(id.clone(), label, c, t, data)?);
        }
    }

    Ok(SyntheticDataset {
        layout,
        recordings,
        class_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig {
            samples_per_task: 200,
            seed: 4,
            ..Default::default()
        };
        let a = synthesize_dataset(&cfg).unwrap();
        assert_eq!(a.recordings.len(), 72);
        assert_eq!(a.layout.len(), 16);
        assert_eq!(a, synthesize_dataset(&cfg).unwrap());
        for ch in a.layout.channels() {
            let r = (ch.x * ch.x + ch.y * ch.y + ch.z * ch.z).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
        let other = synthesize_dataset(&SynthConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.recordings[0], other.recordings[0]);
    }

    #[test]
    fn noise_free_inactive_channels_are_silent() {
        let cfg = SynthConfig {
            subjects: 2,
            channels: 8,
            samples_per_task: 50,
            ..Default::default()
        };
        let ds = synthesize_dataset(&cfg).unwrap();
        for rec in &ds.recordings {
            let active = &ds.class_channels[rec.label.index()];
            for ch in 0..8 {
                let silent = rec.channel(ch).iter().all(|&v| v == 0.0);
                assert_eq!(silent, !active.contains(&ch));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                subjects: 1,
                ..Default::default()
            },
            SynthConfig {
                channels: 1,
                ..Default::default()
            },
            SynthConfig {
                noise: -1.0,
                ..Default::default()
            },
            SynthConfig {
                signal: ClassSignalSpec {
                    frequencies: [0.1, 0.1, 0.2, 0.3],
                    ..Default::default()
                },
                ..Default::default()
            },
        ] {
            assert!(synthesize_dataset(&cfg).is_err());
        }
    }

    #[test]
    fn subject_ids_are_padded() {
        assert_eq!(subject_id(0, 18), "S01");
        assert_eq!(subject_id(99, 120), "S100");
    }
}
