//! Removal of the data component explained by boundary-adjacent conductivity changes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::frame::MeasurementFrame;
use crate::geometry::Mesh;
use crate::sensitivity::SensitivityMatrix;

/// Default regularization relative to the mean squared column norm of the boundary block.
pub const DEFAULT_LAMBDA_SCALE: f64 = 1e-3;
/// Relative eigenvalue cutoff of the projection used when λ = 0.
const PROJECTION_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub lambda: f64,
    pub lambda_scale: f64,
    pub boundary_elements: usize,
}

/// `M = S_b (S_bᵀ S_b + λ I)⁻¹ S_bᵀ`, applied as `V̇ ↦ V̇ − M V̇`.
#[derive(Clone, Debug)]
pub struct BoundaryFilter {
    boundary: Vec<usize>,
    lambda: f64,
    lambda_scale: f64,
    operator: DMatrix<f64>,
}

/// `trace(S_bᵀ S_b) / columns` for the given column subset.
pub fn mean_column_energy(s: &SensitivityMatrix, cols: &[usize]) -> f64 {
    let sb = s.columns(cols);
    sb.norm_squared() / cols.len() as f64
}

impl BoundaryFilter {
    /// Filter with `λ = lambda_scale × trace(S_bᵀS_b)/cols`.
    pub fn with_scale(s: &SensitivityMatrix, mesh: &Mesh, lambda_scale: f64) -> Result<Self> {
        if !(lambda_scale > 0.0) {
            return Err(invalid("filter lambda", format!("scale must be positive, got {lambda_scale}")));
        }
        let boundary = mesh.boundary_adjacent_elements();
        let lambda = lambda_scale * mean_column_energy(s, &boundary);
        let mut f = Self::build(s, boundary, lambda)?;
        f.lambda_scale = lambda_scale;
        Ok(f)
    }

    /// Filter with an absolute `λ > 0`.
    pub fn new(s: &SensitivityMatrix, mesh: &Mesh, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("filter lambda", format!("must be positive, got {lambda}")));
        }
        let boundary = mesh.boundary_adjacent_elements();
        let scale = lambda / mean_column_energy(s, &boundary);
        let mut f = Self::build(s, boundary, lambda)?;
        f.lambda_scale = scale;
        Ok(f)
    }

    /// λ = 0: orthogonal projection onto the range of the boundary block.
    pub fn projection(s: &SensitivityMatrix, mesh: &Mesh) -> Result<Self> {
        Self::build(s, mesh.boundary_adjacent_elements(), 0.0)
    }

    fn build(s: &SensitivityMatrix, boundary: Vec<usize>, lambda: f64) -> Result<Self> {
        if boundary.is_empty() {
            return Err(invalid("filter", "mesh has no boundary-adjacent elements"));
        }
        let sb = s.columns(&boundary);
        // S_b(S_bᵀS_b + λI)⁻¹S_bᵀ = U diag(ν/(ν+λ)) Uᵀ with S_bS_bᵀ = U diag(ν) Uᵀ
        let gram = &sb * sb.transpose();
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let weights = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&nu| {
                let nu = nu.max(0.0);
                if lambda > 0.0 {
                    nu / (nu + lambda)
                } else if nu > PROJECTION_CUTOFF * top {
                    1.0
                } else {
                    0.0
                }
            }),
        );
        let u = &eig.eigenvectors;
        let mut scaled = u.clone();
        for (c, w) in weights.iter().enumerate() {
            scaled.column_mut(c).scale_mut(*w);
        }
        let mut operator = &scaled * u.transpose();
        let sym = (&operator + operator.transpose()) * 0.5;
        operator = sym;
        Ok(Self {
            boundary,
            lambda,
            lambda_scale: 0.0,
            operator,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn boundary_elements(&self) -> &[usize] {
        &self.boundary
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn params(&self) -> FilterParams {
        FilterParams {
            lambda: self.lambda,
            lambda_scale: self.lambda_scale,
            boundary_elements: self.boundary.len(),
        }
    }

    /// The estimated boundary component `M V̇`.
    pub fn boundary_component(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_len("frame", self.operator.nrows(), values.len())?;
        let v = DVector::from_column_slice(values);
        Ok((&self.operator * v).iter().copied().collect())
    }

    /// `V̇ − M V̇`.
    pub fn apply(&self, frame: &MeasurementFrame) -> Result<MeasurementFrame> {
        let err = self.boundary_component(frame.values())?;
        let values = frame.values().iter().zip(&err).map(|(v, e)| v - e).collect();
        MeasurementFrame::new(frame.electrodes(), frame.amplitude(), values)
    }
}
