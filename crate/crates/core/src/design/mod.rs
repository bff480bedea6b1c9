//! Prosthesis and mould design.
//!
//! The posed finger and the stump become five printable parts: two mould
//! halves, the sleeve mould (the core that forms the sleeve's inner surface,
//! carrying the male connector and the positioning fins), the bone insert
//! with its keyed socket, and a preview of the cast finger.
//!
//! Most solids are built as signed distance fields over existing meshes and
//! resampled on a shared lattice, so surfaces that two parts have in common
//! come out at the same vertex positions.

mod assembly;
mod connector;
mod finger;
mod fins;
mod mould;
mod sleeve;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Plane;
use crate::mesh::sdf::MeshSdf;
use crate::mesh::{MeshError, TriMesh};
use crate::registration::RegistrationError;

pub use assembly::{design_assembly, design_with_sleeve, AssemblyReport, DesignOutput, Interference, PartReport};
pub use connector::{design_connector, key_interference, swept_interference, Connector};
pub use finger::{build_finger_model, FingerModel};
pub use fins::{design_fins, fin_normal_rank, Fin};
pub use mould::{default_split_plane, silicone_cavity_volume, split_mould, Conservation, MouldAssembly, MouldInserts};
pub use sleeve::{design_sleeve, sample_wall_thickness, Sleeve, WallStats, CORE_PRINT_MM};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("bone leaves the skin at {vertices} vertices (up to {max_mm:.3} mm outside)")]
    BoneOutsideSkin { vertices: usize, max_mm: f64 },
    #[error("sleeve wall of {min_mm:.3} mm is below the {limit_mm:.3} mm limit")]
    ThicknessViolation { min_mm: f64, limit_mm: f64 },
    #[error("connector axis misses the {0}")]
    AxisMiss(String),
    #[error("fin contact normals span rank {0}; 3 is required")]
    RankDeficient(usize),
    #[error("split plane does not cross the mould block")]
    SplitMiss,
    #[error("invalid design parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid design input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectorParams {
    pub diameter_mm: f64,
    /// How far the boss enters the bone.
    pub depth_mm: f64,
    pub key_width_mm: f64,
    /// Radial height of the key rib above the boss surface.
    pub key_depth_mm: f64,
    /// Axial gap left between the sleeve mould tip and the bone insert.
    pub gap_mm: f64,
}

impl Default for ConnectorParams {
    fn default() -> Self {
        ConnectorParams {
            diameter_mm: 4.0,
            depth_mm: 5.0,
            key_width_mm: 1.0,
            key_depth_mm: 2.5,
            gap_mm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScrewParams {
    pub hole_diameter_mm: f64,
    /// Hole centres sit this far in from the block edges, one per corner.
    pub inset_mm: f64,
    /// 0 or 4.
    pub count: usize,
}

impl Default for ScrewParams {
    fn default() -> Self {
        ScrewParams {
            hole_diameter_mm: 3.4,
            inset_mm: 4.0,
            count: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignParams {
    pub sleeve_thickness_mm: f64,
    pub fit_clearance_mm: f64,
    /// Proximal end of the sleeve; the sleeve lies on the side opposite the normal.
    pub extension_plane: Option<Plane>,
    pub fin_count: usize,
    /// Along the fin's width direction.
    pub fin_width_mm: f64,
    /// Along the fin's contact normal.
    pub fin_thickness_mm: f64,
    /// How far each fin reaches into the embedded part and into the mould wall.
    pub fin_embed_mm: f64,
    /// Tilt of each contact normal out of the plane normal to the finger axis.
    pub fin_tilt_deg: f64,
    pub connector: ConnectorParams,
    pub block_margin_mm: f64,
    /// `None` picks the plane through the cavity's principal axis with the
    /// largest cross-section.
    pub split_plane: Option<Plane>,
    pub screws: ScrewParams,
    /// Resampling voxel for the inserts and the preview.
    pub detail_voxel_mm: f64,
    /// Resampling voxel for the mould halves.
    pub mould_voxel_mm: f64,
    pub wall_samples: usize,
    pub seed: u64,
}

impl Default for DesignParams {
    fn default() -> Self {
        DesignParams {
            sleeve_thickness_mm: 1.5,
            fit_clearance_mm: 0.15,
            extension_plane: None,
            fin_count: 3,
            fin_width_mm: 2.0,
            fin_thickness_mm: 1.0,
            fin_embed_mm: 1.0,
            fin_tilt_deg: 30.0,
            connector: ConnectorParams::default(),
            block_margin_mm: 8.0,
            split_plane: None,
            screws: ScrewParams::default(),
            detail_voxel_mm: 0.2,
            mould_voxel_mm: 0.4,
            wall_samples: 2000,
            seed: 0,
        }
    }
}

impl DesignParams {
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: String| Err(DesignError::InvalidParameter(m));
        let c = &self.connector;
        let positive = [
            ("sleeve_thickness_mm", self.sleeve_thickness_mm),
            ("fin_width_mm", self.fin_width_mm),
            ("fin_thickness_mm", self.fin_thickness_mm),
            ("fin_embed_mm", self.fin_embed_mm),
            ("block_margin_mm", self.block_margin_mm),
            ("connector.diameter_mm", c.diameter_mm),
            ("connector.depth_mm", c.depth_mm),
            ("connector.key_width_mm", c.key_width_mm),
            ("connector.key_depth_mm", c.key_depth_mm),
            ("screws.hole_diameter_mm", self.screws.hole_diameter_mm),
            ("detail_voxel_mm", self.detail_voxel_mm),
            ("mould_voxel_mm", self.mould_voxel_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.fit_clearance_mm >= 0.0 && self.fit_clearance_mm.is_finite()) {
            return bad(format!("fit_clearance_mm must be ≥ 0, got {}", self.fit_clearance_mm));
        }
        if !(c.gap_mm >= 0.0 && c.gap_mm.is_finite()) {
            return bad(format!("connector.gap_mm must be ≥ 0, got {}", c.gap_mm));
        }
        if self.fin_count < 3 {
            return bad(format!("fin_count must be ≥ 3, got {}", self.fin_count));
        }
        if !(self.fin_tilt_deg.abs() < 90.0) {
            return bad("fin_tilt_deg must lie in (-90, 90)".into());
        }
        if !(self.screws.inset_mm >= 0.0) || !matches!(self.screws.count, 0 | 4) {
            return bad("screws need inset_mm ≥ 0 and a count of 0 or 4".into());
        }
        if self.wall_samples == 0 {
            return bad("wall_samples must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Vertex-covariance principal axes, largest first.
fn principal_axes(points: &[Point3<f64>]) -> (Point3<f64>, [Vector3<f64>; 3]) {
    let n = points.len().max(1) as f64;
    let c = Point3::from(points.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes = idx.map(|i| {
        let v: Vector3<f64> = eig.eigenvectors.column(i).into_owned();
        let m = (0..3).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).unwrap();
        if v[m] < 0.0 {
            -v
        } else {
            v
        }
    });
    (c, axes)
}

const LINE_JITTER: [(f64, f64); 4] = [(0.0, 0.0), (1.3e-6, 0.7e-6), (-0.9e-6, 1.9e-6), (2.3e-6, -1.1e-6)];

/// Sorted crossings of the line `o + t·d` with a closed mesh.
fn line_crossings(sdf: &MeshSdf, o: &Point3<f64>, d: &Vector3<f64>) -> Vec<f64> {
    let (u, v) = crate::geom::orthonormal_basis(d);
    for (a, b) in LINE_JITTER {
        if let Some(h) = sdf.crossings(&(o + u * a + v * b), d) {
            return h;
        }
    }
    Vec::new()
}

/// Connected component of `mesh` with the smallest `score`, ties to the
/// earlier component.
fn pick_component(mesh: &TriMesh, score: impl Fn(&TriMesh) -> f64) -> Option<TriMesh> {
    let comps = mesh.connected_components();
    let scores: Vec<f64> = comps.iter().map(&score).collect();
    let best = (0..comps.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))?;
    scores[best].is_finite().then(|| comps[best].clone())
}

fn check_closed(mesh: &TriMesh, what: &str) -> Result<(), DesignError> {
    if mesh.is_empty() {
        return Err(DesignError::InvalidInput(format!("{what} is empty")));
    }
    if !mesh.is_closed() {
        return Err(DesignError::InvalidInput(format!(
            "{what} is not closed ({} open edges)",
            mesh.open_edge_count()
        )));
    }
    Ok(())
}
