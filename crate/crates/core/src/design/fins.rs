//! Positioning fins that lock the embedded parts against the mould wall.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::geom::orthonormal_basis;
use crate::mesh::sdf::{MeshSdf, Sdf};
use crate::mesh::TriMesh;

use super::{check_closed, line_crossings, principal_axes, DesignError, DesignParams};

/// Relative singular-value cutoff for the rank of the fin normals.
const RANK_TOL: f64 = 1e-6;
/// Edge rounding of the fins, so the lattice reproduces them cleanly.
pub const FIN_ROUNDING_MM: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Fin {
    /// The fin with its edges rounded by [`FIN_ROUNDING_MM`].
    pub mesh: TriMesh,
    /// Unit normal of the broad contact faces.
    pub normal: Vector3<f64>,
    /// Box centre, axes (radial, width, normal) and half extents before rounding.
    pub center: Point3<f64>,
    pub axes: Matrix3<f64>,
    pub half: Vector3<f64>,
}

impl Fin {
    pub fn sdf(&self) -> Sdf {
        rounded_box(self.center, self.axes, self.half)
    }
}

fn rounded_box(center: Point3<f64>, axes: Matrix3<f64>, half: Vector3<f64>) -> Sdf {
    let r = FIN_ROUNDING_MM.min(half.min());
    Sdf::offset(
        Sdf::OrientedBox {
            center,
            axes,
            half: half - Vector3::repeat(r),
        },
        r,
    )
}

/// Numerical rank of a set of directions.
pub fn fin_normal_rank(normals: &[Vector3<f64>]) -> usize {
    if normals.is_empty() {
        return 0;
    }
    let mut m = Matrix3::zeros();
    for n in normals {
        m += n * n.transpose();
    }
    let sv = m.symmetric_eigenvalues();
    let top = sv.amax();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Radial fins around the cavity axis just inside the opening at the
/// extension plane. Each runs from inside the first embedded part out
/// through the cavity wall; its contact normal is tilted out of the
/// cross-section plane by `fin_tilt_deg` so the set constrains all six
/// degrees of freedom.
pub fn design_fins(cavity: &TriMesh, embedded: &[TriMesh], params: &DesignParams) -> Result<Vec<Fin>, DesignError> {
    params.validate()?;
    check_closed(cavity, "cavity")?;
    for (i, e) in embedded.iter().enumerate() {
        check_closed(e, &format!("embedded part {i}"))?;
    }
    let (cav_c, cav_axes) = principal_axes(cavity.vertices());
    let (d, opening) = match params.extension_plane {
        Some(p) => (-p.normal(), Some(p)),
        None => (cav_axes[0], None),
    };
    let centre = embedded.first().map_or(cav_c, |e| e.volume_centroid());
    // station: on the axis, one fin half-width plus 1 mm beyond the opening
    let station = match opening {
        Some(p) => centre + d * (p.signed_distance(&centre) + 0.5 * params.fin_width_mm + 1.0),
        None => centre,
    };
    let cav_sdf = MeshSdf::new(cavity.clone())?;
    let emb_sdf: Vec<MeshSdf> = embedded.iter().map(|e| MeshSdf::new(e.clone())).collect::<Result<_, _>>()?;
    let (e1, e2) = orthonormal_basis(&d);
    let tilt = params.fin_tilt_deg.to_radians();
    let mut fins = Vec::with_capacity(params.fin_count);
    for i in 0..params.fin_count {
        let th = std::f64::consts::TAU * i as f64 / params.fin_count as f64;
        let radial = e1 * th.cos() + e2 * th.sin();
        let exit = |s: &MeshSdf| line_crossings(s, &station, &radial).into_iter().filter(|&t| t > 0.0).last();
        let r_out = exit(&cav_sdf)
            .ok_or_else(|| DesignError::InvalidInput(format!("fin {i} does not reach the cavity wall")))?
            + params.fin_embed_mm;
        let r_in = match emb_sdf.iter().filter_map(exit).reduce(f64::max) {
            Some(r) => r - params.fin_embed_mm,
            None => 0.5 * (r_out - params.fin_embed_mm),
        };
        if !(r_in > 0.0 && r_out > r_in) {
            return Err(DesignError::InvalidInput(format!("no room for fin {i}")));
        }
        let tangent = d.cross(&radial);
        let normal = tangent * tilt.cos() + d * tilt.sin();
        let width = normal.cross(&radial);
        let axes = Matrix3::from_columns(&[radial, width, normal]);
        let half = Vector3::new(0.5 * (r_out - r_in), 0.5 * params.fin_width_mm, 0.5 * params.fin_thickness_mm);
        let center = station + radial * (0.5 * (r_in + r_out));
        fins.push(Fin {
            mesh: rounded_box(center, axes, half).to_mesh(params.detail_voxel_mm)?,
            normal,
            center,
            axes,
            half,
        });
    }
    let rank = fin_normal_rank(&fins.iter().map(|f| f.normal).collect::<Vec<_>>());
    if rank < 3 {
        return Err(DesignError::RankDeficient(rank));
    }
    Ok(fins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::intersection_volume;
    use crate::mesh::primitives::cylinder_mesh;
    use crate::geom::Plane;

    fn setup(tilt: f64) -> Result<Vec<Fin>, DesignError> {
        let cavity = cylinder_mesh(Point3::origin(), Vector3::y(), 40.0, 10.0, 64);
        let core = cylinder_mesh(Point3::origin(), Vector3::y(), 20.0, 7.0, 64);
        let p = DesignParams {
            fin_tilt_deg: tilt,
            extension_plane: Some(Plane::new(Point3::new(0.0, 0.0, 0.0), -Vector3::y()).unwrap()),
            ..Default::default()
        };
        design_fins(&cavity, &[core], &p)
    }

    #[test]
    fn rank_of_normal_sets() {
        assert_eq!(fin_normal_rank(&[Vector3::x(), Vector3::y(), Vector3::z()]), 3);
        assert_eq!(fin_normal_rank(&[Vector3::z(), Vector3::z(), -Vector3::z()]), 1);
        let planar = [Vector3::x(), Vector3::new(0.5, 0.5, 0.0).normalize(), Vector3::y()];
        assert_eq!(fin_normal_rank(&planar), 2);
    }

    #[test]
    fn default_fins_span_rank_three_and_stay_apart() {
        let fins = setup(30.0).unwrap();
        assert_eq!(fins.len(), 3);
        for f in &fins {
            assert!(f.mesh.is_closed());
            let r = (f.center - Point3::new(0.0, f.center.y, 0.0)).norm();
            assert!((r - 0.5 * (6.0 + 11.0)).abs() < 0.05, "{r}");
        }
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(intersection_volume(&fins[i].mesh, &fins[j].mesh, 0.05).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn untilted_fins_are_rank_deficient() {
        assert!(matches!(setup(0.0), Err(DesignError::RankDeficient(2))));
    }
}
