//! Adjacent-drive measurement vectors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{check_len, invalid, EitError, Result};

/// Drive-major ordering: for drive `j` the measured pairs are `j+2, …, j+E−2` (mod E).
pub const ORDERING_TAG: &str = "adjacent-drive-major";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    electrodes: usize,
    amplitude: f64,
    values: Vec<f64>,
}

/// Number of measurements for `e` electrodes: `e(e−3)`.
pub fn frame_len(e: usize) -> usize {
    e * (e - 3)
}

/// `(drive, measured pair)` for every frame entry, zero-based, in frame order.
pub fn measurement_pairs(e: usize) -> Vec<(usize, usize)> {
    (0..e)
        .flat_map(|j| (0..e - 3).map(move |t| (j, (j + 2 + t) % e)))
        .collect()
}

/// Frame position of `(drive j, pair k)`, or `None` when the pair touches a driven electrode.
pub fn pair_index(e: usize, j: usize, k: usize) -> Option<usize> {
    let offset = (k + e - j) % e;
    (2..=e - 2).contains(&offset).then(|| j * (e - 3) + offset - 2)
}

#[derive(Serialize, Deserialize)]
struct FrameHeader {
    electrodes: usize,
    amplitude: f64,
    count: usize,
    ordering: String,
    frames: usize,
}

impl MeasurementFrame {
    pub fn new(electrodes: usize, amplitude: f64, values: Vec<f64>) -> Result<Self> {
        if electrodes < 4 {
            return Err(invalid("electrode count", format!("need at least 4, got {electrodes}")));
        }
        check_len("measurement frame", frame_len(electrodes), values.len())?;
        Ok(Self {
            electrodes,
            amplitude,
            values,
        })
    }

    pub fn zeros(electrodes: usize, amplitude: f64) -> Self {
        Self::new(electrodes, amplitude, vec![0.0; frame_len(electrodes)]).expect("valid length")
    }

    /// Builds a frame from per-drive electrode potentials `potentials[j][i]`.
    pub fn from_electrode_potentials(amplitude: f64, potentials: &[Vec<f64>]) -> Result<Self> {
        let e = potentials.len();
        let values = measurement_pairs(e)
            .into_iter()
            .map(|(j, k)| potentials[j][k] - potentials[j][(k + 1) % e])
            .collect();
        Self::new(e, amplitude, values)
    }

    pub fn electrodes(&self) -> usize {
        self.electrodes
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value measured on pair `k` while driving pair `j`.
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        pair_index(self.electrodes, j, k).map(|i| self.values[i])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn rms(&self) -> f64 {
        self.norm() / (self.values.len() as f64).sqrt()
    }

    /// Time difference `self − reference`.
    pub fn difference(&self, reference: &Self) -> Result<Self> {
        if self.electrodes != reference.electrodes {
            return Err(EitError::Incompatible {
                artifact: "frame electrode count".into(),
                expected: self.electrodes.to_string(),
                found: reference.electrodes.to_string(),
            });
        }
        if self.amplitude != reference.amplitude {
            return Err(EitError::Incompatible {
                artifact: "frame drive amplitude".into(),
                expected: self.amplitude.to_string(),
                found: reference.amplitude.to_string(),
            });
        }
        let values = self.values.iter().zip(&reference.values).map(|(a, b)| a - b).collect();
        Self::new(self.electrodes, self.amplitude, values)
    }

    /// Adds i.i.d. Gaussian noise with standard deviation `level × RMS(self)`.
    pub fn with_noise(&self, level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0) {
            return Err(invalid("noise level", format!("must be non-negative, got {level}")));
        }
        if level == 0.0 {
            return Ok(self.clone());
        }
        let sigma = level * self.rms();
        let mut z = vec![0.0f64; self.values.len()];
        diffkit::fill_gaussian(&mut diffkit::seeded_rng(seed), &mut z);
        let values = self.values.iter().zip(&z).map(|(v, n)| v + sigma * n).collect();
        Self::new(self.electrodes, self.amplitude, values)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            electrodes: self.electrodes,
            amplitude: self.amplitude,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Writes frames sharing one electrode count as `<stem>.json` + `<stem>.f32`.
pub fn save_frames(dir: &Path, stem: &str, frames: &[MeasurementFrame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| invalid("frames", "nothing to save"))?;
    fs::create_dir_all(dir)?;
    let mut flat = Vec::with_capacity(frames.len() * first.len());
    for f in frames {
        if f.electrodes != first.electrodes || f.amplitude != first.amplitude {
            return Err(invalid("frames", "mixed electrode counts or amplitudes"));
        }
        flat.extend(f.values.iter().map(|&v| v as f32));
    }
    let header = FrameHeader {
        electrodes: first.electrodes,
        amplitude: first.amplitude,
        count: first.len(),
        ordering: ORDERING_TAG.into(),
        frames: frames.len(),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&header)?)?;
    blob::write_f32(&dir.join(format!("{stem}.f32")), &flat)
}

pub fn load_frames(dir: &Path, stem: &str) -> Result<Vec<MeasurementFrame>> {
    let header: FrameHeader = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
    if header.ordering != ORDERING_TAG {
        return Err(EitError::Format(format!("unknown frame ordering `{}`", header.ordering)));
    }
    let flat = blob::read_f32(&dir.join(format!("{stem}.f32")), Some(header.count * header.frames))?;
    flat.chunks_exact(header.count.max(1))
        .map(|c| MeasurementFrame::new(header.electrodes, header.amplitude, c.iter().map(|&v| f64::from(v)).collect()))
        .collect()
}
