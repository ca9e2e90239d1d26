//! Directory checkpoints: `manifest.json` plus one little-endian f32 blob per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::network::Network;
use crate::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub networks: Vec<Network>,
    pub init_seed: u64,
    pub step: u64,
    pub init_scheme: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form model metadata owned by the caller.
    pub extra: serde_json::Value,
}

pub const INIT_SCHEME: &str = "he-uniform before relu, glorot-uniform otherwise, zero bias";

fn blob_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.f32")
}

pub fn save<T: Scalar>(
    dir: &Path,
    networks: &[&Network],
    params: &ParameterSet<T>,
    init_seed: u64,
    extra: serde_json::Value,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(params.len());
    for (i, (name, p)) in params.iter().enumerate() {
        let file = blob_name(i, name);
        let mut bytes = Vec::with_capacity(p.value.len() * 4);
        for v in p.value.data() {
            let f = v.to_f32().ok_or_else(|| DiffError::Checkpoint(format!("`{name}` not representable")))?;
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            file,
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        networks: networks.iter().map(|n| (*n).clone()).collect(),
        init_seed,
        step: params.step,
        init_scheme: INIT_SCHEME.into(),
        tensors,
        extra,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a checkpoint; optimizer moments restart at zero.
pub fn load<T: Scalar>(dir: &Path) -> Result<(Manifest, ParameterSet<T>)> {
    let mut manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(DiffError::Checkpoint(format!(
            "unsupported format {} (expected {CHECKPOINT_FORMAT})",
            manifest.format
        )));
    }
    for net in &mut manifest.networks {
        net.resolve_shapes()?;
    }
    let mut params = ParameterSet::new();
    for e in &manifest.tensors {
        let bytes = fs::read(dir.join(&e.file))?;
        let needed: usize = e.shape.iter().product();
        if bytes.len() != needed * 4 {
            return Err(DiffError::Checkpoint(format!(
                "`{}`: blob has {} bytes, shape {:?} needs {}",
                e.name,
                bytes.len(),
                e.shape,
                needed * 4
            )));
        }
        let data: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        params.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)?, e.trainable);
    }
    for net in &manifest.networks {
        for name in net.param_names() {
            if !params.contains(&name) {
                return Err(DiffError::MissingParam(name));
            }
        }
    }
    params.step = manifest.step;
    Ok((manifest, params))
}
