//! Shunt-electrode forward model with linear triangles and piecewise-constant conductivity.
//!
//! All nodes under one electrode share a single unknown, which enforces
//! equipotential electrodes and zero net current on passive electrodes. One
//! interior node is pinned during the solve and the result is shifted so the
//! electrode potentials sum to zero.

use rayon::prelude::*;

use crate::error::{check_len, invalid, EitError, Result};
use crate::frame::MeasurementFrame;
use crate::geometry::{ElectrodeLayout, Mesh};
use crate::skyline::{reverse_cuthill_mckee, SkylineCholesky, SkylineMatrix};

pub const DEFAULT_AMPLITUDE: f64 = 1.0;
/// Largest accepted relative residual of a direct solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Potential for one drive pattern.
#[derive(Clone, Debug)]
pub struct Potential {
    pub drive: usize,
    pub amplitude: f64,
    pub nodal: Vec<f64>,
    pub electrode: Vec<f64>,
    /// Relative residual `‖K u − f‖ / ‖f‖` of the reduced system.
    pub residual: f64,
}

/// Precomputed assembly data for one mesh and electrode layout.
#[derive(Clone, Debug)]
pub struct ForwardSolver {
    elements: Vec<[usize; 3]>,
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    dof_of_node: Vec<usize>,
    electrode_dof: Vec<usize>,
    electrode_nodes: Vec<Vec<usize>>,
    /// Reduced row of each DOF; `None` for the pinned one.
    row_of_dof: Vec<Option<usize>>,
    profile: Vec<usize>,
}

/// One factorization of the stiffness matrix, reused for every drive.
pub struct Factorization<'a> {
    solver: &'a ForwardSolver,
    matrix: SkylineMatrix,
    chol: SkylineCholesky,
}

fn basis_gradients(v: [[f64; 2]; 3], area: f64) -> [[f64; 2]; 3] {
    let s = 1.0 / (2.0 * area);
    [
        [(v[1][1] - v[2][1]) * s, (v[2][0] - v[1][0]) * s],
        [(v[2][1] - v[0][1]) * s, (v[0][0] - v[2][0]) * s],
        [(v[0][1] - v[1][1]) * s, (v[1][0] - v[0][0]) * s],
    ]
}

impl ForwardSolver {
    pub fn new(mesh: &Mesh, layout: &ElectrodeLayout) -> Result<Self> {
        let n = mesh.node_count();
        let e = layout.count();
        let mut dof_of_node = vec![usize::MAX; n];
        let mut electrode_nodes = Vec::with_capacity(e);
        for i in 0..e {
            let nodes = layout.nodes(mesh, i);
            for &v in &nodes {
                dof_of_node[v] = i;
            }
            electrode_nodes.push(nodes);
        }
        let mut next = e;
        for d in dof_of_node.iter_mut().filter(|d| **d == usize::MAX) {
            *d = next;
            next += 1;
        }
        let n_dof = next;
        let pinned = (0..n)
            .find(|&v| !mesh.is_boundary_node(v))
            .map(|v| dof_of_node[v])
            .ok_or_else(|| EitError::Mesh("no interior node to pin".into()))?;

        let mut adjacency = vec![Vec::new(); n_dof];
        for t in mesh.elements() {
            for a in 0..3 {
                for b in 0..3 {
                    let (da, db) = (dof_of_node[t[a]], dof_of_node[t[b]]);
                    if da != db && da != pinned && db != pinned {
                        adjacency[da].push(db);
                    }
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let order: Vec<usize> = reverse_cuthill_mckee(&adjacency)
            .into_iter()
            .filter(|&d| d != pinned)
            .collect();
        let mut row_of_dof = vec![None; n_dof];
        for (r, &d) in order.iter().enumerate() {
            row_of_dof[d] = Some(r);
        }
        let mut profile: Vec<usize> = (0..order.len()).collect();
        for (d, adj) in adjacency.iter().enumerate() {
            if let Some(r) = row_of_dof[d] {
                for &w in adj {
                    if let Some(c) = row_of_dof[w] {
                        if c < r {
                            profile[r] = profile[r].min(c);
                        }
                    }
                }
            }
        }

        let grads = (0..mesh.element_count())
            .map(|k| basis_gradients(mesh.vertices(k), mesh.area(k)))
            .collect();
        Ok(Self {
            elements: mesh.elements().to_vec(),
            areas: mesh.areas().to_vec(),
            grads,
            dof_of_node,
            electrode_dof: (0..e).collect(),
            electrode_nodes,
            row_of_dof,
            profile,
        })
    }

    pub fn electrodes(&self) -> usize {
        self.electrode_dof.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node_count(&self) -> usize {
        self.dof_of_node.len()
    }

    /// Reduced system size (DOFs minus the pinned one).
    pub fn system_size(&self) -> usize {
        self.profile.len()
    }

    fn check_conductivity(&self, gamma: &[f64]) -> Result<()> {
        check_len("conductivity", self.elements.len(), gamma.len())?;
        if let Some((m, g)) = gamma.iter().enumerate().find(|(_, g)| !(**g > 0.0 && g.is_finite())) {
            return Err(invalid("conductivity", format!("element {m} has non-positive value {g}")));
        }
        Ok(())
    }

    pub fn factorize(&self, gamma: &[f64]) -> Result<Factorization<'_>> {
        self.check_conductivity(gamma)?;
        let mut k = SkylineMatrix::with_profile(self.profile.clone());
        for (m, t) in self.elements.iter().enumerate() {
            let g = &self.grads[m];
            let w = gamma[m] * self.areas[m];
            for a in 0..3 {
                let Some(ra) = self.row_of_dof[self.dof_of_node[t[a]]] else { continue };
                for b in 0..=a {
                    let Some(rb) = self.row_of_dof[self.dof_of_node[t[b]]] else { continue };
                    let v = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    if a == b {
                        k.add(ra, ra, v);
                    } else if ra == rb {
                        k.add(ra, ra, 2.0 * v);
                    } else {
                        k.add(ra, rb, v);
                    }
                }
            }
        }
        let chol = k.clone().factor()?;
        Ok(Factorization {
            solver: self,
            matrix: k,
            chol,
        })
    }

    /// Gradient of a nodal field on element `m` (constant on linear triangles).
    pub fn element_gradient(&self, nodal: &[f64], m: usize) -> [f64; 2] {
        let (t, g) = (&self.elements[m], &self.grads[m]);
        let mut out = [0.0; 2];
        for a in 0..3 {
            out[0] += nodal[t[a]] * g[a][0];
            out[1] += nodal[t[a]] * g[a][1];
        }
        out
    }

    pub fn area(&self, m: usize) -> f64 {
        self.areas[m]
    }

    /// Net current leaving each electrode, and the largest nodal flux imbalance
    /// away from the electrodes, from the unmerged nodal stiffness.
    pub fn electrode_currents(&self, gamma: &[f64], nodal: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_conductivity(gamma)?;
        check_len("nodal potential", self.node_count(), nodal.len())?;
        let mut flux = vec![0.0; nodal.len()];
        for (m, t) in self.elements.iter().enumerate() {
            let g = &self.grads[m];
            let w = gamma[m] * self.areas[m];
            for a in 0..3 {
                for b in 0..3 {
                    flux[t[a]] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]) * nodal[t[b]];
                }
            }
        }
        let currents = self
            .electrode_nodes
            .iter()
            .map(|nodes| nodes.iter().map(|&v| flux[v]).sum())
            .collect();
        let off = (0..nodal.len())
            .filter(|&v| self.dof_of_node[v] >= self.electrodes())
            .map(|v| flux[v].abs())
            .fold(0.0, f64::max);
        Ok((currents, off))
    }

    /// Potentials for all adjacent drives, sharing one factorization.
    pub fn solve_all(&self, gamma: &[f64], amplitude: f64) -> Result<Vec<Potential>> {
        let f = self.factorize(gamma)?;
        (0..self.electrodes())
            .into_par_iter()
            .map(|j| f.solve_drive(j, amplitude))
            .collect()
    }

    /// Adjacent-drive measurement frame for conductivity `gamma`.
    pub fn measure(&self, gamma: &[f64], amplitude: f64) -> Result<MeasurementFrame> {
        let potentials = self.solve_all(gamma, amplitude)?;
        let electrode: Vec<Vec<f64>> = potentials.into_iter().map(|p| p.electrode).collect();
        MeasurementFrame::from_electrode_potentials(amplitude, &electrode)
    }
}

impl Factorization<'_> {
    /// Drive `+amplitude` into electrode `j` and out of electrode `j+1`.
    pub fn solve_drive(&self, j: usize, amplitude: f64) -> Result<Potential> {
        let s = self.solver;
        let e = s.electrodes();
        if j >= e {
            return Err(invalid("drive", format!("index {j} out of range for {e} electrodes")));
        }
        let n = self.chol.dim();
        let mut rhs = vec![0.0; n];
        for (dof, sign) in [(s.electrode_dof[j], 1.0), (s.electrode_dof[(j + 1) % e], -1.0)] {
            if let Some(r) = s.row_of_dof[dof] {
                rhs[r] += sign * amplitude;
            }
        }
        let mut x = rhs.clone();
        self.chol.solve(&mut x);
        let mut kx = vec![0.0; n];
        self.matrix.mul_vec(&x, &mut kx);
        let rn: f64 = kx.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = if bn > 0.0 { rn / bn } else { rn };
        if !(residual <= RESIDUAL_TOLERANCE) {
            return Err(EitError::Solver(format!("drive {j}: relative residual {residual:e}")));
        }
        let dof_value = |d: usize| s.row_of_dof[d].map_or(0.0, |r| x[r]);
        let raw: Vec<f64> = s.electrode_dof.iter().map(|&d| dof_value(d)).collect();
        let shift = raw.iter().sum::<f64>() / e as f64;
        Ok(Potential {
            drive: j,
            amplitude,
            nodal: s.dof_of_node.iter().map(|&d| dof_value(d) - shift).collect(),
            electrode: raw.iter().map(|u| u - shift).collect(),
            residual,
        })
    }
}
