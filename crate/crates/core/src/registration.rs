//! Mirror-plane estimation and rigid ICP.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{nearest_rotation, Plane, RigidTransform};
use crate::mesh::bvh::Bvh;
use crate::mesh::TriMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("mesh or point set is empty")]
    EmptyMesh,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no correspondences within {0} mm")]
    NoCorrespondences(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Static k-d tree over 3-D points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    /// Implicit balanced tree: `order[lo..hi]` with the median as the node.
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        let mut stack = vec![(0usize, points.len())];
        while let Some((lo, hi)) = stack.pop() {
            if hi - lo <= 1 {
                continue;
            }
            let (mut mn, mut mx) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
            for &i in &order[lo..hi] {
                mn = mn.inf(&points[i as usize].coords);
                mx = mx.sup(&points[i as usize].coords);
            }
            let e = mx - mn;
            let axis = if e.x >= e.y && e.x >= e.z {
                0
            } else if e.y >= e.z {
                1
            } else {
                2
            };
            let mid = (lo + hi) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                points[a as usize][axis]
                    .total_cmp(&points[b as usize][axis])
                    .then(a.cmp(&b))
            });
            axes[mid] = axis as u8;
            stack.push((lo, mid));
            stack.push((mid + 1, hi));
        }
        KdTree { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point3<f64> {
        &self.points[i]
    }

    /// Nearest point as `(index, squared distance)`; ties go to the lower index.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack: Vec<(usize, usize, f64)> = vec![(0, self.points.len(), 0.0)];
        while let Some((lo, hi, bound)) = stack.pop() {
            if lo >= hi || bound > best.1 {
                continue;
            }
            let mid = (lo + hi) / 2;
            let idx = self.order[mid] as usize;
            let p = &self.points[idx];
            let d2 = (p - q).norm_squared();
            if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                best = (idx, d2);
            }
            if hi - lo == 1 {
                continue;
            }
            let axis = self.axes[mid] as usize;
            let diff = q[axis] - p[axis];
            let plane_d2 = diff * diff;
            let (near, far) = if diff <= 0.0 {
                ((lo, mid), (mid + 1, hi))
            } else {
                ((mid + 1, hi), (lo, mid))
            };
            // `>=` keeps equal-distance candidates on the far side reachable
            stack.push((far.0, far.1, plane_d2));
            stack.push((near.0, near.1, 0.0));
        }
        Some(best)
    }
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    Point3::from(points.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / points.len() as f64)
}

/// Eigen-decomposition of the covariance, eigenvalues descending.
fn principal_axes(points: &[Point3<f64>], c: &Point3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Vector3::new(eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    let mut vecs = Matrix3::from_columns(&[
        eig.eigenvectors.column(idx[0]).into_owned(),
        eig.eigenvectors.column(idx[1]).into_owned(),
        eig.eigenvectors.column(idx[2]).into_owned(),
    ]);
    // deterministic signs: largest-magnitude component positive
    for k in 0..3 {
        let col = vecs.column(k).into_owned();
        let m = (0..3).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
        if col[m] < 0.0 {
            vecs.set_column(k, &(-col));
        }
    }
    if vecs.determinant() < 0.0 {
        let c2 = vecs.column(2).into_owned();
        vecs.set_column(2, &(-c2));
    }
    (vals, vecs)
}

fn check_spread(points: &[Point3<f64>], what: &str) -> Result<(), RegistrationError> {
    if points.is_empty() {
        return Err(RegistrationError::EmptyMesh);
    }
    let c = centroid(points);
    let (vals, _) = principal_axes(points, &c);
    if !(vals[1] > 1e-12 * vals[0].max(1e-300)) || vals[0] <= 0.0 {
        return Err(RegistrationError::DegenerateGeometry(format!(
            "{what} points are collinear or coincident"
        )));
    }
    Ok(())
}

/// Symmetry plane between two bilateral surfaces. The normal is snapped to
/// the world axis along which their volume centroids differ most, pointing
/// from `left` to `right`; the plane passes midway between the centroids.
pub fn estimate_mirror_plane(left: &TriMesh, right: &TriMesh) -> Result<Plane, RegistrationError> {
    if left.is_empty() || right.is_empty() {
        return Err(RegistrationError::EmptyMesh);
    }
    let (a, b) = (left.volume_centroid(), right.volume_centroid());
    let dir = b - a;
    let axis = (0..3)
        .max_by(|&i, &j| dir[i].abs().total_cmp(&dir[j].abs()).then(j.cmp(&i)))
        .unwrap();
    if dir[axis].abs() < 1e-9 {
        return Err(RegistrationError::DegenerateGeometry(
            "surfaces have coincident centroids".into(),
        ));
    }
    let mut n = Vector3::zeros();
    n[axis] = dir[axis].signum();
    let point = Point3::from((a.coords + b.coords) * 0.5);
    Plane::from_unit(point, n).map_err(|e| RegistrationError::DegenerateGeometry(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpParams {
    pub max_iterations: usize,
    pub max_correspondence_mm: f64,
    /// Stop once RMS improves by less than this, mm.
    pub tolerance_mm: f64,
    pub samples: usize,
    /// Seeds the subsampling of large point sets.
    pub seed: u64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 60,
            max_correspondence_mm: 5.0,
            tolerance_mm: 1e-9,
            samples: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Maps source into the target frame.
    pub transform: RigidTransform,
    pub rms_mm: f64,
    /// RMS after initialisation and after each accepted iteration.
    pub history: Vec<f64>,
    pub inliers: usize,
}

/// Truncated RMS and inlier pairs (source index, target point) under `t`.
fn correspond(
    src: &[Point3<f64>],
    tree: &KdTree,
    t: &RigidTransform,
    cutoff2: f64,
) -> (f64, Vec<(usize, Point3<f64>)>) {
    let mut sum = 0.0;
    let mut pairs = Vec::with_capacity(src.len());
    for (i, p) in src.iter().enumerate() {
        let q = t.apply_point(p);
        if let Some((j, d2)) = tree.nearest(&q) {
            if d2 <= cutoff2 {
                sum += d2;
                pairs.push((i, *tree.point(j)));
            }
        }
    }
    let rms = if pairs.is_empty() {
        f64::INFINITY
    } else {
        (sum / pairs.len() as f64).sqrt()
    };
    (rms, pairs)
}

/// Least-squares rigid transform taking `p` onto `q` (Kabsch).
pub fn kabsch(p: &[Point3<f64>], q: &[Point3<f64>]) -> Result<RigidTransform, RegistrationError> {
    if p.len() != q.len() || p.len() < 3 {
        return Err(RegistrationError::DegenerateGeometry("need ≥ 3 paired points".into()));
    }
    let (cp, cq) = (centroid(p), centroid(q));
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - cp) * (b - cq).transpose();
    }
    let r = nearest_rotation(&h.transpose());
    Ok(RigidTransform {
        rotation: r,
        translation: cq.coords - r * cp.coords,
    })
}

/// Candidate starting poses: identity plus principal-axis alignments.
fn initial_candidates(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Vec<RigidTransform> {
    let (cs, cd) = (centroid(src), centroid(dst));
    let (_, vs) = principal_axes(src, &cs);
    let (_, vd) = principal_axes(dst, &cd);
    let mut out = vec![RigidTransform::identity()];
    for signs in [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]] {
        let s = Matrix3::from_diagonal(&Vector3::from(signs));
        let r = vd * s * vs.transpose();
        out.push(RigidTransform {
            rotation: r,
            translation: cd.coords - r * cs.coords,
        });
    }
    out
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        check_params(self)
    }
}

fn check_params(params: &IcpParams) -> Result<(), RegistrationError> {
    if params.max_iterations == 0
        || !(params.max_correspondence_mm > 0.0)
        || !(params.tolerance_mm > 0.0)
        || params.samples == 0
    {
        return Err(RegistrationError::InvalidParameter(
            "iterations, thresholds and sample count must be positive".into(),
        ));
    }
    Ok(())
}

fn subsample(points: &[Point3<f64>], params: &IcpParams) -> Vec<Point3<f64>> {
    if points.len() <= params.samples {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut idx = rand::seq::index::sample(&mut rng, points.len(), params.samples).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Coarse pose: the best of identity and the four proper principal-axis
/// alignments (centroid onto centroid), scored by truncated squared distance.
pub fn initial_alignment(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    params: &IcpParams,
) -> Result<RigidTransform, RegistrationError> {
    check_params(params)?;
    check_spread(source, "source")?;
    check_spread(target, "target")?;
    let src = subsample(source, params);
    let tree = KdTree::new(target.to_vec());
    let cutoff2 = params.max_correspondence_mm.powi(2);
    let score = |t: &RigidTransform| -> f64 {
        src.iter()
            .map(|p| tree.nearest(&t.apply_point(p)).map_or(cutoff2, |(_, d2)| d2.min(cutoff2)))
            .sum::<f64>()
    };
    let cands = initial_candidates(&src, target);
    let scores: Vec<f64> = cands.iter().map(score).collect();
    let best = (0..cands.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
        .unwrap();
    Ok(cands[best])
}

/// Rigid point-to-point ICP refining `init`, which maps `source` toward `target`.
///
/// An iteration is kept only if it does not raise the inlier RMS, so the
/// reported history is non-increasing.
pub fn icp_rigid(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    check_params(params)?;
    check_spread(source, "source")?;
    check_spread(target, "target")?;
    if !init.is_valid() {
        return Err(RegistrationError::InvalidParameter("initial transform is not rigid".into()));
    }
    let src = subsample(source, params);
    let tree = KdTree::new(target.to_vec());
    let cutoff2 = params.max_correspondence_mm.powi(2);
    let mut t = *init;
    let (mut rms, mut pairs) = correspond(&src, &tree, &t, cutoff2);
    if pairs.len() < 3 {
        return Err(RegistrationError::NoCorrespondences(params.max_correspondence_mm));
    }
    let mut history = vec![rms];
    for _ in 0..params.max_iterations {
        let p: Vec<Point3<f64>> = pairs.iter().map(|&(i, _)| src[i]).collect();
        let q: Vec<Point3<f64>> = pairs.iter().map(|&(_, q)| q).collect();
        let next = match kabsch(&p, &q) {
            Ok(n) => n.reorthonormalized(),
            Err(_) => break,
        };
        let (next_rms, next_pairs) = correspond(&src, &tree, &next, cutoff2);
        if next_pairs.len() < 3 || next_rms > rms {
            break;
        }
        let gain = rms - next_rms;
        t = next;
        rms = next_rms;
        pairs = next_pairs;
        history.push(rms);
        if gain < params.tolerance_mm {
            break;
        }
    }
    Ok(IcpResult {
        transform: t,
        rms_mm: rms,
        history,
        inliers: pairs.len(),
    })
}

/// Initial alignment plus ICP between two surfaces: `source` contributes
/// its vertices (subsampled), `target` its vertices plus as many surface
/// samples. Identical meshes therefore register with zero residual.
pub fn icp_meshes(source: &TriMesh, target: &TriMesh, params: &IcpParams) -> Result<IcpResult, RegistrationError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let src = source.vertices();
    let mut dst: Vec<Point3<f64>> = target.vertices().to_vec();
    dst.extend(target.sample_surface(target.vertices().len(), &mut rng).into_iter().map(|(p, _)| p));
    let init = initial_alignment(src, &dst, params)?;
    icp_rigid(src, &dst, &init, params)
}

/// Symmetric RMS surface distance from `samples` points on each mesh to the other.
pub fn surface_rms(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> Result<f64, RegistrationError> {
    if a.is_empty() || b.is_empty() {
        return Err(RegistrationError::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ba, bb) = (Bvh::new(a), Bvh::new(b));
    let mut sum = 0.0;
    let mut n = 0usize;
    for (from, to) in [(a, &bb), (b, &ba)] {
        for (p, _) in from.sample_surface(samples, &mut rng) {
            sum += to.nearest(&p, f64::INFINITY).map_or(0.0, |h| h.distance_squared);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}
