//! Binary STL.
//!
//! Layout: 80-byte header, `u32` triangle count, then per triangle a normal,
//! three vertices (all `f32` little endian) and a zero `u16` attribute.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::mesh::{MeshError, TriMesh};

const HEADER: &[u8] = b"digitforge binary stl";

#[derive(Debug, Error)]
pub enum StlError {
    #[error("file is {actual} bytes, expected at least {expected}")]
    Truncated { expected: u64, actual: u64 },
    #[error("ASCII STL is not supported")]
    AsciiUnsupported,
    #[error("{0} triangles do not fit in a binary STL")]
    TooManyTriangles(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact byte length of a binary STL with `triangles` facets.
pub fn stl_len(triangles: usize) -> u64 {
    84 + 50 * triangles as u64
}

fn f32_point(p: &Point3<f64>) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

/// Serialises `mesh`; normals are recomputed from the stored `f32` vertices.
pub fn encode_stl(mesh: &TriMesh) -> Result<Vec<u8>, StlError> {
    let count = u32::try_from(mesh.len()).map_err(|_| StlError::TooManyTriangles(mesh.len()))?;
    let mut out = Vec::with_capacity(stl_len(mesh.len()) as usize);
    out.extend_from_slice(HEADER);
    out.resize(80, 0);
    out.extend_from_slice(&count.to_le_bytes());
    for i in 0..mesh.len() {
        let t = mesh.triangle(i).map(|p| f32_point(&p));
        let v = t.map(|q| Vector3::new(q[0] as f64, q[1] as f64, q[2] as f64));
        let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
        let len = n.norm();
        let n = if len > 0.0 { n / len } else { Vector3::zeros() };
        for c in [n.x as f32, n.y as f32, n.z as f32] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for q in t {
            for c in q {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    Ok(out)
}

/// Parses a binary STL, welding vertices with identical coordinate bytes.
pub fn decode_stl(bytes: &[u8]) -> Result<TriMesh, StlError> {
    if bytes.len() < 84 {
        if bytes.starts_with(b"solid") {
            return Err(StlError::AsciiUnsupported);
        }
        return Err(StlError::Truncated {
            expected: 84,
            actual: bytes.len() as u64,
        });
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let expected = stl_len(count);
    if bytes.starts_with(b"solid") && bytes.len() as u64 != expected {
        return Err(StlError::AsciiUnsupported);
    }
    if (bytes.len() as u64) < expected {
        return Err(StlError::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut index: HashMap<[u8; 12], u32> = HashMap::with_capacity(count);
    let mut vertices = Vec::with_capacity(count / 2 + 3);
    let mut triangles = Vec::with_capacity(count);
    for f in 0..count {
        let rec = &bytes[84 + 50 * f..84 + 50 * (f + 1)];
        let mut tri = [0u32; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let raw: [u8; 12] = rec[12 + 12 * k..24 + 12 * k].try_into().unwrap();
            *slot = *index.entry(raw).or_insert_with(|| {
                let c = |o: usize| f32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as f64;
                vertices.push(Point3::new(c(0), c(4), c(8)));
                (vertices.len() - 1) as u32
            });
        }
        triangles.push(tri);
    }
    Ok(TriMesh::new(vertices, triangles)?)
}

pub fn write_stl(mesh: &TriMesh, path: &Path) -> Result<(), StlError> {
    fs::write(path, encode_stl(mesh)?)?;
    Ok(())
}

pub fn read_stl(path: &Path) -> Result<TriMesh, StlError> {
    decode_stl(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;

    #[test]
    fn length_formula_and_round_trip() {
        let m = icosphere(Point3::new(0.1, 0.2, 0.3), 3.3, 2);
        let a = encode_stl(&m).unwrap();
        assert_eq!(a.len() as u64, stl_len(m.len()));
        let back = decode_stl(&a).unwrap();
        assert_eq!(back.len(), m.len());
        assert_eq!(back.vertices().len(), m.vertices().len());
        assert_eq!(encode_stl(&back).unwrap(), a);
        assert!(a[84 + 48..84 + 50].iter().all(|&b| b == 0));
    }

    #[test]
    fn empty_mesh_is_84_bytes() {
        let b = encode_stl(&TriMesh::empty()).unwrap();
        assert_eq!(b.len(), 84);
        assert!(decode_stl(&b).unwrap().is_empty());
    }

    #[test]
    fn truncated_and_ascii() {
        let m = icosphere(Point3::origin(), 1.0, 0);
        let b = encode_stl(&m).unwrap();
        assert!(matches!(decode_stl(&b[..b.len() - 1]), Err(StlError::Truncated { .. })));
        assert!(matches!(decode_stl(&b[..40]), Err(StlError::Truncated { .. })));
        let ascii = b"solid x\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\nendloop\nendfacet\nendsolid x\n";
        assert!(matches!(decode_stl(ascii), Err(StlError::AsciiUnsupported)));
    }
}
