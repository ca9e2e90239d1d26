//! Ring-structured disk and ellipse meshes, electrode layouts, and the pixel grid.

mod grid;
mod io;
mod mesh;

pub use grid::{GridSize, PixelGrid};
pub use io::{load_mesh, mesh_hash, save_mesh, MeshManifest, MESH_FORMAT};
pub use mesh::{
    build_disk_mesh, build_thorax_mesh, DomainShape, ElectrodeLayout, Mesh, MeshSpec, COVERAGE_TOLERANCE,
    ELEMENT_TOLERANCE, START_ANGLE,
};
