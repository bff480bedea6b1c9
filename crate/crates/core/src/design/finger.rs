//! Replacement finger from the mirrored contralateral hand.

use crate::geom::{Plane, RigidTransform};
use crate::mesh::sdf::MeshSdf;
use crate::mesh::{cut_with_plane, mirror_mesh, transform_mesh, TriMesh};
use crate::registration::{icp_meshes, IcpParams};

use super::{check_closed, pick_component, DesignError};

/// Bone vertices may sit this far outside the skin (shared crop caps).
const CONTAINMENT_TOL_MM: f64 = 0.05;
/// Vertices this close to the crop plane count as lying on its cap.
const ON_PLANE_MM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FingerModel {
    pub skin: TriMesh,
    pub bone: TriMesh,
    /// Maps the mirrored contralateral hand onto the stump hand.
    pub pose: RigidTransform,
    pub icp_rms_mm: f64,
    pub icp_history: Vec<f64>,
}

/// Mirrors the contralateral skin and bone, registers the mirrored skin to
/// the stump hand, and keeps the finger beyond `crop`.
///
/// `crop` is given in the stump frame; the kept side is the one opposite its
/// normal. Of the cut pieces, the skin piece whose cap passes nearest the
/// crop plane's point is the finger.
pub fn build_finger_model(
    contra_skin: &TriMesh,
    contra_bone: &TriMesh,
    mirror: &Plane,
    crop: &Plane,
    stump_skin: &TriMesh,
    icp: &IcpParams,
) -> Result<FingerModel, DesignError> {
    check_closed(contra_skin, "contralateral skin")?;
    check_closed(contra_bone, "contralateral bone")?;
    check_closed(stump_skin, "stump skin")?;
    let mirrored = mirror_mesh(contra_skin, mirror);
    let reg = icp_meshes(&mirrored, stump_skin, icp)?;
    let pose = reg.transform;
    let skin_posed = transform_mesh(&mirrored, &pose);
    let bone_posed = transform_mesh(&mirror_mesh(contra_bone, mirror), &pose);

    let cut = cut_with_plane(&skin_posed, crop, true)?;
    let skin = pick_component(&cut, |c| cap_distance(c, crop)).ok_or_else(|| {
        DesignError::InvalidInput("crop plane does not intersect the mirrored finger".into())
    })?;
    let skin_sdf = MeshSdf::new(skin.clone())?;

    let bone_cut = cut_with_plane(&bone_posed, crop, true)?;
    let parts: Vec<TriMesh> = bone_cut
        .connected_components()
        .into_iter()
        .filter(|c| skin_sdf.contains(&c.volume_centroid()))
        .collect();
    let bone = TriMesh::merged(&parts.iter().collect::<Vec<_>>());
    if bone.is_empty() {
        return Err(DesignError::InvalidInput("no bone inside the cropped finger".into()));
    }
    let mut outside = 0;
    let mut worst: f64 = 0.0;
    for v in bone.vertices() {
        let d = skin_sdf.distance(v);
        if d > CONTAINMENT_TOL_MM {
            outside += 1;
            worst = worst.max(d);
        }
    }
    if outside > 0 {
        return Err(DesignError::BoneOutsideSkin {
            vertices: outside,
            max_mm: worst,
        });
    }
    Ok(FingerModel {
        skin,
        bone,
        pose,
        icp_rms_mm: reg.rms_mm,
        icp_history: reg.history,
    })
}

/// Distance from the plane's point to the nearest cap vertex of a piece.
fn cap_distance(piece: &TriMesh, plane: &Plane) -> f64 {
    let p = plane.point();
    piece
        .vertices()
        .iter()
        .filter(|v| plane.signed_distance(v).abs() <= ON_PLANE_MM)
        .map(|v| (v - p).norm())
        .fold(f64::INFINITY, f64::min)
}
