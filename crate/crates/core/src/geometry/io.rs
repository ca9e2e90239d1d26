use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::GridSize;
use super::mesh::{ElectrodeLayout, Mesh, MeshSpec};
use crate::blob;
use crate::error::{EitError, Result};
use crate::hash::Fingerprint;

pub const MESH_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshManifest {
    pub format: u32,
    pub spec: MeshSpec,
    pub nodes: usize,
    pub elements: usize,
    pub boundary_edges: usize,
    pub electrodes: usize,
    pub coverage: f64,
    pub realized_coverage: f64,
    pub min_angle_degrees: f64,
    pub grid: GridSize,
    pub electrode_edges: Vec<Vec<usize>>,
    pub mesh_hash: String,
}

pub fn mesh_hash(mesh: &Mesh) -> String {
    let flat: Vec<f64> = mesh.nodes().iter().flatten().copied().collect();
    let mut fp = Fingerprint::new().f64s(&flat);
    for t in mesh.elements() {
        for &v in t {
            fp = fp.u64(v as u64);
        }
    }
    fp.hex()
}

pub fn save_mesh(dir: &Path, spec: &MeshSpec, mesh: &Mesh, layout: &ElectrodeLayout, grid: GridSize) -> Result<MeshManifest> {
    fs::create_dir_all(dir)?;
    let flat: Vec<f64> = mesh.nodes().iter().flatten().copied().collect();
    blob::write_f64(&dir.join("nodes.f64"), &flat)?;
    let elems: Vec<u32> = mesh.elements().iter().flatten().map(|&v| v as u32).collect();
    blob::write_u32(&dir.join("elements.u32"), &elems)?;
    let edges: Vec<u32> = mesh.boundary_edges().iter().flatten().map(|&v| v as u32).collect();
    blob::write_u32(&dir.join("boundary_edges.u32"), &edges)?;
    let manifest = MeshManifest {
        format: MESH_FORMAT,
        spec: *spec,
        nodes: mesh.node_count(),
        elements: mesh.element_count(),
        boundary_edges: mesh.boundary_edges().len(),
        electrodes: layout.count(),
        coverage: layout.coverage(),
        realized_coverage: layout.arc_fraction(mesh),
        min_angle_degrees: mesh.min_angle_degrees(),
        grid,
        electrode_edges: layout.all_edges().to_vec(),
        mesh_hash: mesh_hash(mesh),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_mesh(dir: &Path) -> Result<(MeshManifest, Mesh, ElectrodeLayout)> {
    let manifest: MeshManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != MESH_FORMAT {
        return Err(EitError::Format(format!("mesh format {} unsupported", manifest.format)));
    }
    let flat = blob::read_f64(&dir.join("nodes.f64"), Some(2 * manifest.nodes))?;
    let nodes = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let elems = blob::read_u32(&dir.join("elements.u32"), Some(3 * manifest.elements))?;
    let elements = elems
        .chunks_exact(3)
        .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
        .collect();
    let edges = blob::read_u32(&dir.join("boundary_edges.u32"), Some(2 * manifest.boundary_edges))?;
    let boundary = edges.chunks_exact(2).map(|c| [c[0] as usize, c[1] as usize]).collect();
    let mesh = Mesh::new(nodes, elements, boundary)?;
    let found = mesh_hash(&mesh);
    if found != manifest.mesh_hash {
        return Err(EitError::Incompatible {
            artifact: format!("mesh in {}", dir.display()),
            expected: manifest.mesh_hash.clone(),
            found,
        });
    }
    let layout = ElectrodeLayout::new(&mesh, manifest.electrode_edges.clone(), manifest.coverage)?;
    Ok((manifest, mesh, layout))
}
