//! The fixed simulation setup shared by every stage: mesh, electrodes, pixel grid,
//! forward solver, sensitivity matrix at γ ≡ 1, boundary filter and linear model.

use serde::{Deserialize, Serialize};

use crate::baseline::{discrete_gradient, DiscreteGradient, LinearModel};
use crate::error::{check_len, invalid, EitError, Result};
use crate::fem::{ForwardSolver, DEFAULT_AMPLITUDE};
use crate::filter::{BoundaryFilter, DEFAULT_LAMBDA_SCALE};
use crate::frame::MeasurementFrame;
use crate::geometry::{mesh_hash, DomainShape, ElectrodeLayout, Mesh, MeshSpec, PixelGrid};
use crate::hash::Fingerprint;
use crate::sensitivity::{assemble, SensitivityMatrix};

pub const DEFAULT_ASPECT: f64 = 1.4;
pub const DEFAULT_ELEMENTS: usize = 2400;
pub const DEFAULT_ELECTRODES: usize = 16;
pub const DEFAULT_COVERAGE: f64 = 0.5;
pub const DEFAULT_GRID: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkbenchConfig {
    pub mesh: MeshSpec,
    pub grid: usize,
    pub filter_scale: f64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self {
            mesh: MeshSpec {
                shape: DomainShape::Thorax {
                    aspect: DEFAULT_ASPECT,
                    radius: 1.0,
                },
                target_elements: DEFAULT_ELEMENTS,
                electrodes: DEFAULT_ELECTRODES,
                coverage: DEFAULT_COVERAGE,
            },
            grid: DEFAULT_GRID,
            filter_scale: DEFAULT_LAMBDA_SCALE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Workbench {
    config: WorkbenchConfig,
    mesh: Mesh,
    layout: ElectrodeLayout,
    grid: PixelGrid,
    solver: ForwardSolver,
    sensitivity: SensitivityMatrix,
    filter: BoundaryFilter,
    linear: LinearModel,
    gradient: DiscreteGradient,
    reference: MeasurementFrame,
    mesh_hash: String,
}

impl Workbench {
    pub fn build(config: WorkbenchConfig) -> Result<Self> {
        let (mesh, layout) = config.mesh.build()?;
        let grid = PixelGrid::square(&mesh, config.grid)?;
        let solver = ForwardSolver::new(&mesh, &layout)?;
        let ones = vec![1.0; mesh.element_count()];
        let sensitivity = assemble(&solver, &ones, DEFAULT_AMPLITUDE)?;
        let filter = BoundaryFilter::with_scale(&sensitivity, &mesh, config.filter_scale)?;
        let linear = LinearModel::new(&sensitivity);
        let gradient = discrete_gradient(&mesh);
        let reference = solver.measure(&ones, DEFAULT_AMPLITUDE)?;
        let mesh_hash = mesh_hash(&mesh);
        Ok(Self {
            config,
            mesh,
            layout,
            grid,
            solver,
            sensitivity,
            filter,
            linear,
            gradient,
            reference,
            mesh_hash,
        })
    }

    pub fn config(&self) -> &WorkbenchConfig {
        &self.config
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn solver(&self) -> &ForwardSolver {
        &self.solver
    }

    pub fn sensitivity(&self) -> &SensitivityMatrix {
        &self.sensitivity
    }

    pub fn filter(&self) -> &BoundaryFilter {
        &self.filter
    }

    pub fn linear(&self) -> &LinearModel {
        &self.linear
    }

    pub fn gradient(&self) -> &DiscreteGradient {
        &self.gradient
    }

    pub fn electrodes(&self) -> usize {
        self.layout.count()
    }

    pub fn frame_len(&self) -> usize {
        self.reference.len()
    }

    pub fn domain(&self) -> DomainShape {
        self.config.mesh.shape
    }

    pub fn mesh_hash(&self) -> &str {
        &self.mesh_hash
    }

    /// Identifies everything a trained model depends on: mesh, grid, sensitivity and filter.
    pub fn fingerprint(&self) -> String {
        let p = self.filter.params();
        Fingerprint::new()
            .str(&self.mesh_hash)
            .u64(self.grid.width() as u64)
            .u64(self.grid.height() as u64)
            .str(self.sensitivity.reference_hash())
            .f64s(&[p.lambda, p.lambda_scale])
            .hex()
    }

    /// Unfiltered difference data `V(1 + γ̇) − V(1)` from the nonlinear forward model.
    pub fn simulate(&self, gamma_dot: &[f64]) -> Result<MeasurementFrame> {
        check_len("conductivity change", self.mesh.element_count(), gamma_dot.len())?;
        let gamma: Vec<f64> = gamma_dot.iter().map(|g| 1.0 + g).collect();
        if let Some(m) = gamma.iter().position(|g| !(*g > 0.0)) {
            return Err(invalid("conductivity", format!("element {m} has non-positive conductivity {}", gamma[m])));
        }
        self.solver.measure(&gamma, DEFAULT_AMPLITUDE)?.difference(&self.reference)
    }

    /// Boundary-filtered difference data.
    pub fn simulate_filtered(&self, gamma_dot: &[f64]) -> Result<MeasurementFrame> {
        self.filter.apply(&self.simulate(gamma_dot)?)
    }

    pub fn rasterize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.grid.rasterize(values)
    }

    /// Checks that a stored artifact was built against this setup.
    pub fn check_fingerprint(&self, artifact: &str, found: &str) -> Result<()> {
        let expected = self.fingerprint();
        if expected == found {
            Ok(())
        } else {
            Err(EitError::Incompatible {
                artifact: artifact.to_string(),
                expected,
                found: found.to_string(),
            })
        }
    }
}
