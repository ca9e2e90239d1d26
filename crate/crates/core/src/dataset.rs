//! Labelled corpus of (filtered noisy frame, normalized phantom image) pairs.
//!
//! Pair `n` uses base phantom `n / n_noise` and noise replicate `n % n_noise`.
//! Images are stored once per base phantom.

use std::fs;
use std::path::Path;

use diffkit::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{invalid, EitError, Result};
use crate::filter::FilterParams;
use crate::frame::MeasurementFrame;
use crate::geometry::GridSize;
use crate::hash::Fingerprint;
use crate::phantom::{render, sample_phantom, Family, LungPhantomParams};
use crate::workbench::{Workbench, WorkbenchConfig};

pub const DATASET_FORMAT: u32 = 1;
pub const DEFAULT_BASE: usize = 200;
pub const DEFAULT_NOISE_REPLICATES: usize = 10;
pub const DEFAULT_NOISE_LEVEL: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 2017;
pub const TRAIN_FRACTION: f64 = 0.8;
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_base: usize,
    pub n_noise: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub family: Family,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_base: DEFAULT_BASE,
            n_noise: DEFAULT_NOISE_REPLICATES,
            noise_level: DEFAULT_NOISE_LEVEL,
            seed: DEFAULT_SEED,
            family: Family::Mixed,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_base == 0 || self.n_noise == 0 {
            return Err(invalid("dataset counts", format!("n_base and n_noise must be at least 1, got {} and {}", self.n_base, self.n_noise)));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(invalid("noise level", format!("must be non-negative, got {}", self.noise_level)));
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.n_base * self.n_noise
    }
}

/// Base-phantom indices of each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    /// Contiguous 80/10/10 split by base index; every split but train may be empty.
    pub fn contiguous(n_base: usize) -> Self {
        let n_val = (n_base as f64 * VAL_FRACTION).floor() as usize;
        let n_test = (n_base as f64 * (1.0 - TRAIN_FRACTION - VAL_FRACTION)).round() as usize;
        let n_train = n_base.saturating_sub(n_val + n_test).max(1);
        let n_val = n_val.min(n_base - n_train);
        Self {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n_base).collect(),
        }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub config: DatasetConfig,
    pub workbench: WorkbenchConfig,
    pub workbench_fingerprint: String,
    pub mesh_hash: String,
    pub filter: FilterParams,
    pub grid: GridSize,
    pub electrodes: usize,
    pub frame_len: usize,
    pub pairs: usize,
    /// Largest |γ̇| over the base phantoms; images are γ̇ / c_norm.
    pub c_norm: f64,
    pub images_hash: String,
    pub frames_hash: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    manifest: DatasetManifest,
    images: Vec<f32>,
    frames: Vec<f32>,
    splits: Splits,
    phantoms: Vec<LungPhantomParams>,
}

pub fn phantom_seed(seed: u64, base: usize) -> u64 {
    derive_seed(seed, "phantom", base as u64)
}

pub fn noise_seed(seed: u64, pair: usize) -> u64 {
    derive_seed(seed, "noise", pair as u64)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// The stored frame for pair `n`, computed from scratch.
pub fn regenerate_frame(wb: &Workbench, config: &DatasetConfig, pair: usize) -> Result<Vec<f32>> {
    let params = sample_phantom(config.family, &wb.domain(), phantom_seed(config.seed, pair / config.n_noise));
    let clean = wb.simulate_filtered(&render(&params, wb.mesh()))?;
    Ok(to_f32(clean.with_noise(config.noise_level, noise_seed(config.seed, pair))?.values()))
}

/// Samples, simulates, filters and replicates with noise; parallel over base phantoms.
pub fn build_dataset(wb: &Workbench, config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let domain = wb.domain();
    let phantoms: Vec<LungPhantomParams> = (0..config.n_base)
        .map(|b| sample_phantom(config.family, &domain, phantom_seed(config.seed, b)))
        .collect();
    let simulated: Vec<(Vec<f64>, Vec<f64>, Vec<f32>)> = phantoms
        .par_iter()
        .enumerate()
        .map(|(b, p)| -> Result<_> {
            let gd = render(p, wb.mesh());
            let clean = wb.simulate_filtered(&gd)?;
            let mut frames = Vec::with_capacity(config.n_noise * clean.len());
            for r in 0..config.n_noise {
                let noisy = clean.with_noise(config.noise_level, noise_seed(config.seed, b * config.n_noise + r))?;
                frames.extend(to_f32(noisy.values()));
            }
            let image = wb.rasterize(&gd)?;
            Ok((gd, image, frames))
        })
        .collect::<Result<_>>()?;
    let c_norm = simulated.iter().flat_map(|(gd, _, _)| gd.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if c_norm == 0.0 {
        return Err(invalid("dataset", "every phantom is identically zero"));
    }
    let mut images = Vec::with_capacity(config.n_base * wb.grid().len());
    let mut frames = Vec::with_capacity(config.pairs() * wb.frame_len());
    for (_, image, f) in &simulated {
        images.extend(image.iter().map(|v| (v / c_norm) as f32));
        frames.extend_from_slice(f);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT,
        config: *config,
        workbench: *wb.config(),
        workbench_fingerprint: wb.fingerprint(),
        mesh_hash: wb.mesh_hash().to_string(),
        filter: wb.filter().params(),
        grid: wb.grid().size(),
        electrodes: wb.electrodes(),
        frame_len: wb.frame_len(),
        pairs: config.pairs(),
        c_norm,
        images_hash: Fingerprint::new().f32s(&images).hex(),
        frames_hash: Fingerprint::new().f32s(&frames).hex(),
    };
    Ok(Dataset {
        manifest,
        images,
        frames,
        splits: Splits::contiguous(config.n_base),
        phantoms,
    })
}

impl Dataset {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn phantoms(&self) -> &[LungPhantomParams] {
        &self.phantoms
    }

    pub fn len(&self) -> usize {
        self.manifest.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.pairs == 0
    }

    pub fn n_base(&self) -> usize {
        self.manifest.config.n_base
    }

    pub fn n_noise(&self) -> usize {
        self.manifest.config.n_noise
    }

    pub fn c_norm(&self) -> f64 {
        self.manifest.c_norm
    }

    pub fn image_len(&self) -> usize {
        self.manifest.grid.width * self.manifest.grid.height
    }

    pub fn base_of(&self, pair: usize) -> usize {
        pair / self.n_noise()
    }

    /// Normalized image of base phantom `b`.
    pub fn image(&self, b: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[b * n..(b + 1) * n]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn frame(&self, pair: usize) -> &[f32] {
        let n = self.manifest.frame_len;
        &self.frames[pair * n..(pair + 1) * n]
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    /// Filtered noisy frame as a measurement frame in f64.
    pub fn measurement(&self, pair: usize) -> Result<MeasurementFrame> {
        MeasurementFrame::new(
            self.manifest.electrodes,
            crate::fem::DEFAULT_AMPLITUDE,
            self.frame(pair).iter().map(|&v| v as f64).collect(),
        )
    }

    /// Base indices of a split.
    pub fn bases(&self, split: Split) -> &[usize] {
        self.splits.get(split)
    }

    /// Pair indices of a split, in base-major order.
    pub fn pairs_in(&self, split: Split) -> Vec<usize> {
        let r = self.n_noise();
        self.splits.get(split).iter().flat_map(|&b| b * r..(b + 1) * r).collect()
    }

    /// Identifies the exact stored contents.
    pub fn hash(&self) -> String {
        Fingerprint::new()
            .str(&self.manifest.images_hash)
            .str(&self.manifest.frames_hash)
            .f64s(&[self.manifest.c_norm])
            .hex()
    }

    /// Indices of pairs whose regenerated frame differs bitwise from the stored one.
    pub fn regeneration_mismatches(&self, wb: &Workbench, pairs: &[usize]) -> Result<Vec<usize>> {
        wb.check_fingerprint("dataset workbench", &self.manifest.workbench_fingerprint)?;
        let bad: Vec<Option<usize>> = pairs
            .par_iter()
            .map(|&n| -> Result<Option<usize>> {
                let fresh = regenerate_frame(wb, &self.manifest.config, n)?;
                let same = fresh.iter().zip(self.frame(n)).all(|(a, b)| a.to_bits() == b.to_bits());
                Ok(if same { None } else { Some(n) })
            })
            .collect::<Result<_>>()?;
        Ok(bad.into_iter().flatten().collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        blob::write_f32(&dir.join("images.f32"), &self.images)?;
        blob::write_f32(&dir.join("frames.f32"), &self.frames)?;
        fs::write(dir.join("splits.json"), serde_json::to_string_pretty(&self.splits)?)?;
        fs::write(dir.join("phantoms.json"), serde_json::to_string(&self.phantoms)?)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != DATASET_FORMAT {
            return Err(EitError::Format(format!("dataset format {} is not {DATASET_FORMAT}", manifest.format)));
        }
        let n_img = manifest.config.n_base * manifest.grid.width * manifest.grid.height;
        let images = blob::read_f32(&dir.join("images.f32"), Some(n_img))?;
        let frames = blob::read_f32(&dir.join("frames.f32"), Some(manifest.pairs * manifest.frame_len))?;
        for (what, expected, data) in [("images", &manifest.images_hash, &images), ("frames", &manifest.frames_hash, &frames)] {
            let found = Fingerprint::new().f32s(data).hex();
            if &found != expected {
                return Err(EitError::Incompatible {
                    artifact: format!("dataset {what}"),
                    expected: expected.clone(),
                    found,
                });
            }
        }
        let splits: Splits = serde_json::from_str(&fs::read_to_string(dir.join("splits.json"))?)?;
        let phantoms: Vec<LungPhantomParams> = serde_json::from_str(&fs::read_to_string(dir.join("phantoms.json"))?)?;
        if phantoms.len() != manifest.config.n_base {
            return Err(EitError::Format(format!("{} phantoms for {} base images", phantoms.len(), manifest.config.n_base)));
        }
        Ok(Self {
            manifest,
            images,
            frames,
            splits,
            phantoms,
        })
    }
}
