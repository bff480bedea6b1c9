//! Geometry kernel for turning a hand CT scan into printable casting moulds
//! for a passive prosthetic finger.
//!
//! The crate is organised along the pipeline:
//!
//! - [`volume`]: CT volume ingest (minimal DICOM subset, raw fixture format)
//! - [`isosurface`]: marching-cubes surface extraction
//! - [`mesh`]: triangle meshes, rigid transforms, booleans, offsets, cuts,
//!   measurement and printability validation
//! - [`registration`]: mirror-plane estimation and rigid ICP
//! - [`design`]: sleeve, keyed connector, positioning fins and split mould
//! - [`stl`]: binary STL reading and writing
//! - [`phantom`]: synthetic hand phantoms with analytic ground truth
//!
//! All lengths are millimetres, all CT intensities Hounsfield units.

pub mod design;
pub mod geom;
pub mod isosurface;
pub mod mesh;
pub mod phantom;
pub mod registration;
pub mod stl;
pub mod tolerance;
pub mod volume;

pub use geom::{Aabb, Plane, RigidTransform};
pub use mesh::TriMesh;
pub use volume::VoxelVolume;
