//! CT volumes: the in-memory grid plus the two on-disk formats it is read from.

pub mod dicom;
pub mod raw;

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

use crate::tolerance::ORIENTATION_TOL;

pub use dicom::{load_dicom_series, SliceRecord};
pub use raw::{load_raw_volume, save_raw_volume};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid volume: {0}")]
    Invalid(String),
    #[error("directory holds {0} slice(s); at least 2 are required")]
    InsufficientSlices(usize),
    #[error("slices belong to more than one series ({0:?})")]
    MixedSeries(Vec<String>),
    #[error("inter-slice spacing is not uniform (min {min:.4} mm, max {max:.4} mm)")]
    NonUniformSpacing { min: f64, max: f64 },
    #[error("unsupported encoding in {file}: {reason}")]
    UnsupportedEncoding { file: String, reason: String },
    #[error("malformed DICOM file {file}: {reason}")]
    MalformedDicom { file: String, reason: String },
    #[error("malformed raw header: {0}")]
    MalformedHeader(String),
    #[error("payload has {actual} bytes, header implies {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular scalar grid in Hounsfield units, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    orientation: Matrix3<f64>,
    samples: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        orientation: Matrix3<f64>,
        samples: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::Invalid(format!("dims {dims:?} must all be ≥ 1")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::Invalid(format!("spacing {spacing:?} must be > 0")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::Invalid("origin must be finite".into()));
        }
        let gram = orientation.transpose() * orientation - Matrix3::identity();
        if gram.amax() > ORIENTATION_TOL {
            return Err(VolumeError::Invalid(
                "orientation columns are not orthonormal".into(),
            ));
        }
        let n = dims[0] * dims[1] * dims[2];
        if samples.len() != n {
            return Err(VolumeError::Invalid(format!(
                "{} samples for dims {dims:?} (expected {n})",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::Invalid(format!("sample {i} is not finite")));
        }
        Ok(VoxelVolume {
            dims,
            spacing,
            origin,
            orientation,
            samples,
        })
    }

    /// Axis-aligned volume with identity orientation.
    pub fn axis_aligned(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        samples: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, origin, Matrix3::identity(), samples)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.origin)
    }

    /// Columns are the world directions of the i, j, k axes.
    pub fn orientation(&self) -> &Matrix3<f64> {
        &self.orientation
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.samples[self.index(i, j, k)]
    }

    /// World position of voxel centre `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin()
            + self.orientation
                * Vector3::new(
                    i as f64 * self.spacing[0],
                    j as f64 * self.spacing[1],
                    k as f64 * self.spacing[2],
                )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_enforced() {
        let id = Matrix3::identity();
        assert!(VoxelVolume::new([0, 1, 1], [1.0; 3], [0.0; 3], id, vec![]).is_err());
        assert!(VoxelVolume::new([1, 1, 1], [0.0, 1.0, 1.0], [0.0; 3], id, vec![0.0]).is_err());
        assert!(VoxelVolume::new([1, 1, 2], [1.0; 3], [0.0; 3], id, vec![0.0]).is_err());
        assert!(VoxelVolume::new([1, 1, 1], [1.0; 3], [0.0; 3], id * 2.0, vec![0.0]).is_err());
        assert!(VoxelVolume::new([1, 1, 1], [1.0; 3], [0.0; 3], id, vec![f32::NAN]).is_err());
        let v = VoxelVolume::new([2, 1, 1], [1.0; 3], [0.0; 3], id, vec![1.0, 2.0]).unwrap();
        assert_eq!(v.get(1, 0, 0), 2.0);
    }
}
