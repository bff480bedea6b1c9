//! Keyed boss-and-socket joint between the sleeve mould and the bone insert.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::geom::{orthonormal_basis, RigidTransform};
use crate::mesh::sdf::{MeshSdf, Sdf};
use crate::mesh::{intersection_volume, transform_mesh, TriMesh};

use super::{check_closed, line_crossings, principal_axes, DesignError, DesignParams};

/// Row spacing of the interference integrals.
const INTERFERENCE_SPACING_MM: f64 = 0.05;
/// How far the boss and key reach back into the sleeve mould.
const BOSS_EMBED_MM: f64 = 1.0;
/// Radial overlap of the key with the boss.
const KEY_ROOT_MM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Connector {
    pub bone_keyed: TriMesh,
    pub sleeve_keyed: TriMesh,
    /// The boss with its key alone.
    pub male: TriMesh,
    pub axis_point: Point3<f64>,
    /// Unit axis pointing from the sleeve mould into the bone.
    pub axis: Vector3<f64>,
    /// Unit radial direction of the key.
    pub key_dir: Vector3<f64>,
}

/// Adds a keyed boss to `sleeve_mould` and the matching socket, enlarged by
/// the fit clearance, to `bone`.
///
/// The axis is the bone's principal axis through its centroid, oriented
/// away from the sleeve mould; it must cross both parts, with the sleeve
/// mould ending before the bone begins.
pub fn design_connector(bone: &TriMesh, sleeve_mould: &TriMesh, params: &DesignParams) -> Result<Connector, DesignError> {
    params.validate()?;
    check_closed(bone, "bone")?;
    check_closed(sleeve_mould, "sleeve mould")?;
    let (o, axes) = principal_axes(bone.vertices());
    let mut d = axes[0];
    if d.dot(&(o - sleeve_mould.volume_centroid())) < 0.0 {
        d = -d;
    }
    let bone_sdf = MeshSdf::new(bone.clone())?;
    let core_sdf = MeshSdf::new(sleeve_mould.clone())?;
    let hb = line_crossings(&bone_sdf, &o, &d);
    let hc = line_crossings(&core_sdf, &o, &d);
    let (Some(&t_bone), Some(&t_core)) = (hb.first(), hc.last()) else {
        let what = if hb.is_empty() { "bone" } else { "sleeve mould" };
        return Err(DesignError::AxisMiss(what.into()));
    };
    if t_core >= t_bone {
        return Err(DesignError::InvalidInput(format!(
            "sleeve mould overlaps the bone by {:.3} mm along the connector axis",
            t_core - t_bone
        )));
    }
    let cp = &params.connector;
    let c = params.fit_clearance_mm;
    let r = 0.5 * cp.diameter_mm;
    let key_dir = orthonormal_basis(&d).0;
    let side = d.cross(&key_dir);
    let frame = Matrix3::from_columns(&[d, key_dir, side]);
    let tip = o + d * t_core;
    let start = o + d * t_bone;

    // male: from inside the sleeve mould to `depth` inside the bone
    let m0 = tip - d * BOSS_EMBED_MM;
    let m_len = (t_bone - t_core) + BOSS_EMBED_MM + cp.depth_mm;
    let boss = Sdf::Cylinder { base: m0, axis: d, length: m_len, radius: r };
    let key = key_box(&frame, m0, m_len, r - KEY_ROOT_MM, r + cp.key_depth_mm, cp.key_width_mm);
    let male_sdf = Sdf::Union(vec![boss, key]);

    // female: the male grown by the clearance, opening before the bone
    let f0 = start - d * (cp.gap_mm.min(t_bone - t_core) * 0.5 + BOSS_EMBED_MM);
    let f_len = (start - f0).norm() + cp.depth_mm + c;
    let socket = Sdf::Cylinder { base: f0, axis: d, length: f_len, radius: r + c };
    let slot = key_box(&frame, f0, f_len, r - KEY_ROOT_MM, r + cp.key_depth_mm + c, cp.key_width_mm + 2.0 * c);

    let h = params.detail_voxel_mm;
    let male = male_sdf.to_mesh(h)?;
    let sleeve_keyed = Sdf::Union(vec![Sdf::Mesh(core_sdf.into()), male_sdf]).to_mesh(h)?;
    let bone_keyed = Sdf::difference(Sdf::Mesh(bone_sdf.into()), Sdf::Union(vec![socket, slot])).to_mesh(h)?;
    Ok(Connector {
        bone_keyed,
        sleeve_keyed,
        male,
        axis_point: o,
        axis: d,
        key_dir,
    })
}

/// Box spanning `[r0, r1]` radially along `frame`'s second column and
/// `len` along its first, starting at `base`.
fn key_box(frame: &Matrix3<f64>, base: Point3<f64>, len: f64, r0: f64, r1: f64, width: f64) -> Sdf {
    let d: Vector3<f64> = frame.column(0).into_owned();
    let k: Vector3<f64> = frame.column(1).into_owned();
    Sdf::OrientedBox {
        center: base + d * (0.5 * len) + k * (0.5 * (r0 + r1)),
        axes: *frame,
        half: Vector3::new(0.5 * len, 0.5 * (r1 - r0), 0.5 * width),
    }
}

/// Overlap of the male feature with the keyed bone after turning the male
/// by each angle about the connector axis.
pub fn key_interference(conn: &Connector, angles_deg: &[f64]) -> Result<Vec<f64>, DesignError> {
    angles_deg
        .iter()
        .map(|a| {
            let t = RigidTransform::about_axis(&conn.axis_point, &conn.axis, a.to_radians());
            Ok(intersection_volume(&transform_mesh(&conn.male, &t), &conn.bone_keyed, INTERFERENCE_SPACING_MM)?)
        })
        .collect()
}

/// Overlap of the male feature with the keyed bone as it is withdrawn
/// along the axis, at `stations` evenly spaced positions over the boss depth.
pub fn swept_interference(conn: &Connector, depth_mm: f64, stations: usize) -> Result<Vec<f64>, DesignError> {
    (0..stations)
        .map(|i| {
            let s = if stations > 1 { depth_mm * i as f64 / (stations - 1) as f64 } else { 0.0 };
            let t = RigidTransform::translation(-conn.axis * s);
            Ok(intersection_volume(&transform_mesh(&conn.male, &t), &conn.bone_keyed, INTERFERENCE_SPACING_MM)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::cylinder_mesh;
    use crate::tolerance::MAX_INTERFERENCE_MM3;

    fn parts() -> (TriMesh, TriMesh) {
        let core = cylinder_mesh(Point3::new(0.0, 0.0, 0.0), Vector3::y(), 15.0, 8.0, 64);
        let bone = cylinder_mesh(Point3::new(0.0, 16.0, 0.0), Vector3::y(), 25.0, 5.5, 64);
        (bone, core)
    }

    #[test]
    fn key_mates_once() {
        let (bone, core) = parts();
        let c = design_connector(&bone, &core, &DesignParams::default()).unwrap();
        assert!((c.axis - Vector3::y()).norm() < 1e-9);
        let v = key_interference(&c, &[0.0, 90.0, 180.0, 270.0]).unwrap();
        assert!(v[0] <= MAX_INTERFERENCE_MM3, "{v:?}");
        assert!(v[2] > 10.0, "{v:?}");
        assert!(v[1] > MAX_INTERFERENCE_MM3 && v[3] > MAX_INTERFERENCE_MM3, "{v:?}");
        let sweep = swept_interference(&c, 5.0, 5).unwrap();
        assert!(sweep.iter().all(|&s| s <= MAX_INTERFERENCE_MM3), "{sweep:?}");
        assert!(c.bone_keyed.is_closed() && c.sleeve_keyed.is_closed());
    }

    #[test]
    fn zero_clearance_surfaces_coincide() {
        let (bone, core) = parts();
        let p = DesignParams { fit_clearance_mm: 0.0, ..Default::default() };
        let c = design_connector(&bone, &core, &p).unwrap();
        // boss wall (away from the key) against socket wall, 2 mm into the bone
        let radius = |m: &TriMesh| {
            m.vertices()
                .iter()
                .filter(|v| (v.y - 18.0).abs() < 0.15 && v.x < -0.5)
                .map(|v| (v.x * v.x + v.z * v.z).sqrt())
                .filter(|r| *r < 3.0)
                .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1))
        };
        let (sm, nm) = radius(&c.male);
        let (sf, nf) = radius(&c.bone_keyed);
        assert!(nm > 0 && nf > 0);
        assert!((sm / nm as f64 - sf / nf as f64).abs() < 0.1);
    }

    #[test]
    fn axis_must_hit_both_parts() {
        let (bone, _) = parts();
        let off = cylinder_mesh(Point3::new(30.0, 0.0, 0.0), Vector3::y(), 15.0, 8.0, 32);
        let r = design_connector(&bone, &off, &DesignParams::default());
        assert!(matches!(r, Err(DesignError::AxisMiss(_))), "{r:?}");
    }
}
