//! Linearized forward map around a reference conductivity.
//!
//! Entry `(j,k), m` is `−(1/I) ∫_{Δm} ∇u^j·∇u^k`, the derivative of measurement
//! `V^{jk}` with respect to the conductivity of element `m`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{check_len, invalid, EitError, Result};
use crate::fem::ForwardSolver;
use crate::frame::{frame_len, measurement_pairs, MeasurementFrame, ORDERING_TAG};
use crate::hash::Fingerprint;

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Dense `E(E−3) × d` Jacobian, rows in frame order, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMatrix {
    electrodes: usize,
    amplitude: f64,
    cols: usize,
    data: Vec<f64>,
    reference_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    electrodes: usize,
    amplitude: f64,
    reference_hash: String,
    ordering: String,
}

pub fn conductivity_hash(gamma: &[f64]) -> String {
    Fingerprint::new().str("conductivity").f64s(gamma).hex()
}

/// Assembles the Jacobian at reference conductivity `gamma0`.
pub fn assemble(solver: &ForwardSolver, gamma0: &[f64], amplitude: f64) -> Result<SensitivityMatrix> {
    let potentials = solver.solve_all(gamma0, amplitude)?;
    let d = solver.element_count();
    let e = solver.electrodes();
    let grads: Vec<Vec<[f64; 2]>> = potentials
        .iter()
        .map(|p| (0..d).map(|m| solver.element_gradient(&p.nodal, m)).collect())
        .collect();
    let pairs = measurement_pairs(e);
    let mut data = vec![0.0; pairs.len() * d];
    data.par_chunks_mut(d).zip(&pairs).for_each(|(row, &(j, k))| {
        let (gj, gk) = (&grads[j], &grads[k]);
        for m in 0..d {
            let dot = gj[m][0] * gk[m][0] + gj[m][1] * gk[m][1];
            row[m] = -solver.area(m) * dot / amplitude;
        }
    });
    Ok(SensitivityMatrix {
        electrodes: e,
        amplitude,
        cols: d,
        data,
        reference_hash: conductivity_hash(gamma0),
    })
}

impl SensitivityMatrix {
    pub fn from_rows(electrodes: usize, amplitude: f64, cols: usize, data: Vec<f64>, reference_hash: String) -> Result<Self> {
        check_len("sensitivity entries", frame_len(electrodes) * cols, data.len())?;
        Ok(Self {
            electrodes,
            amplitude,
            cols,
            data,
            reference_hash,
        })
    }

    pub fn rows(&self) -> usize {
        frame_len(self.electrodes)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn electrodes(&self) -> usize {
        self.electrodes
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn reference_hash(&self) -> &str {
        &self.reference_hash
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.data[i * self.cols + m]).collect()
    }

    /// `𝕊 x` as a measurement frame.
    pub fn apply(&self, x: &[f64]) -> Result<MeasurementFrame> {
        check_len("element vector", self.cols, x.len())?;
        let values = (0..self.rows())
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        MeasurementFrame::new(self.electrodes, self.amplitude, values)
    }

    /// `𝕊ᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("frame", self.rows(), v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.cols, &self.data)
    }

    /// Sub-matrix of the given columns.
    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), cols.len(), |i, c| self.data[i * self.cols + cols[c]])
    }

    pub fn numerical_rank(&self, rel_tol: f64) -> Result<usize> {
        numerical_rank(&self.to_dmatrix(), rel_tol)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = Header {
            rows: self.rows(),
            cols: self.cols,
            electrodes: self.electrodes,
            amplitude: self.amplitude,
            reference_hash: self.reference_hash.clone(),
            ordering: ORDERING_TAG.into(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&header)?)?;
        blob::write_f64(&dir.join(format!("{stem}.f64")), &self.data)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let h: Header = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        if h.ordering != ORDERING_TAG {
            return Err(EitError::Format(format!("unknown row ordering `{}`", h.ordering)));
        }
        let data = blob::read_f64(&dir.join(format!("{stem}.f64")), Some(h.rows * h.cols))?;
        Self::from_rows(h.electrodes, h.amplitude, h.cols, data, h.reference_hash)
    }
}

/// Count of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid("rank tolerance", format!("must lie in (0, 1), got {rel_tol}")));
    }
    if matrix.is_empty() {
        return Ok(0);
    }
    let sv = if matrix.nrows() < matrix.ncols() {
        matrix.transpose().singular_values()
    } else {
        matrix.singular_values()
    };
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * max).count())
}
