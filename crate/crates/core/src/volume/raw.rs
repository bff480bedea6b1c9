//! Raw fixture format: a text header plus a little-endian sample payload.
//!
//! ```text
//! dims 128 128 128
//! spacing_mm 1 1 1
//! origin_mm 0 0 0
//! dtype f32
//! data_file phantom.raw
//! ```
//!
//! `dtype` is one of `f32`, `i16`, `u16`; volumes are always saved as `f32`.
//! An optional `orientation` line lists the world directions of the i, j
//! and k axes (nine numbers); it is written only when not the identity.
//! `data_file` is resolved relative to the header's directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;

use super::{VolumeError, VoxelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    I16,
    U16,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I16 | Dtype::U16 => 2,
        }
    }
}

fn parse_numbers<T: std::str::FromStr>(key: &str, rest: &[&str], n: usize) -> Result<Vec<T>, VolumeError> {
    if rest.len() != n {
        return Err(VolumeError::MalformedHeader(format!(
            "`{key}` expects {n} values, got {}",
            rest.len()
        )));
    }
    rest.iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| VolumeError::MalformedHeader(format!("`{key}`: cannot parse `{s}`")))
        })
        .collect()
}

pub fn load_raw_volume(header: &Path) -> Result<VoxelVolume, VolumeError> {
    let text = fs::read_to_string(header)?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut dtype = None;
    let mut data_file = None;
    let mut orientation = Matrix3::identity();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (key, rest) = (parts[0], &parts[1..]);
        match key {
            "dims" => {
                let v: Vec<usize> = parse_numbers(key, rest, 3)?;
                dims = Some([v[0], v[1], v[2]]);
            }
            "spacing_mm" => {
                let v: Vec<f64> = parse_numbers(key, rest, 3)?;
                spacing = Some([v[0], v[1], v[2]]);
            }
            "origin_mm" => {
                let v: Vec<f64> = parse_numbers(key, rest, 3)?;
                origin = Some([v[0], v[1], v[2]]);
            }
            "orientation" => {
                let v: Vec<f64> = parse_numbers(key, rest, 9)?;
                orientation = Matrix3::from_column_slice(&v);
            }
            "dtype" => {
                dtype = Some(match rest {
                    ["f32"] => Dtype::F32,
                    ["i16"] => Dtype::I16,
                    ["u16"] => Dtype::U16,
                    _ => {
                        return Err(VolumeError::MalformedHeader(format!(
                            "unsupported dtype `{}`",
                            rest.join(" ")
                        )))
                    }
                })
            }
            "data_file" => {
                if rest.len() != 1 {
                    return Err(VolumeError::MalformedHeader("`data_file` expects one name".into()));
                }
                data_file = Some(rest[0].to_string());
            }
            other => {
                return Err(VolumeError::MalformedHeader(format!("unknown key `{other}`")));
            }
        }
    }
    let missing = |k: &str| VolumeError::MalformedHeader(format!("missing `{k}`"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let spacing = spacing.ok_or_else(|| missing("spacing_mm"))?;
    let origin = origin.ok_or_else(|| missing("origin_mm"))?;
    let dtype = dtype.ok_or_else(|| missing("dtype"))?;
    let data_file = data_file.ok_or_else(|| missing("data_file"))?;

    let dir = header.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&data_file))?;
    let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    let expected = n
        .and_then(|n| n.checked_mul(dtype.size() as u64))
        .ok_or_else(|| VolumeError::MalformedHeader("dims overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let samples: Vec<f32> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        Dtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
    };
    VoxelVolume::new(dims, spacing, origin, orientation, samples)
}

/// Writes `<header>` and a sibling `<stem>.raw` payload as `f32`.
pub fn save_raw_volume(volume: &VoxelVolume, header: &Path) -> Result<(), VolumeError> {
    let stem = header
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| VolumeError::MalformedHeader("header path has no file name".into()))?;
    let data_name = format!("{stem}.raw");
    let dir = header.parent().unwrap_or_else(|| Path::new("."));

    let [nx, ny, nz] = volume.dims();
    let [sx, sy, sz] = volume.spacing();
    let o = volume.origin();
    let mut text = format!(
        "dims {nx} {ny} {nz}\nspacing_mm {sx} {sy} {sz}\norigin_mm {} {} {}\ndtype f32\ndata_file {data_name}\n",
        o.x, o.y, o.z
    );
    if *volume.orientation() != Matrix3::identity() {
        let v: Vec<String> = volume.orientation().iter().map(|x| x.to_string()).collect();
        text.push_str(&format!("orientation {}\n", v.join(" ")));
    }
    let mut payload = Vec::with_capacity(volume.samples().len() * 4);
    for s in volume.samples() {
        payload.extend_from_slice(&s.to_le_bytes());
    }
    let mut f = fs::File::create(dir.join(&data_name))?;
    f.write_all(&payload)?;
    fs::write(header, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_volume(n: usize, seed: u64) -> VoxelVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n * n * n).map(|_| rng.gen_range(-1000.0f32..1500.0)).collect();
        VoxelVolume::axis_aligned([n; 3], [0.7, 0.8, 2.0], [-3.25, 1.0 / 3.0, 10.0], s).unwrap()
    }

    #[test]
    fn zeros_2x2x2() {
        let dir = tempfile::tempdir().unwrap();
        let v = VoxelVolume::axis_aligned([2; 3], [1.0; 3], [0.0; 3], vec![0.0; 8]).unwrap();
        let h = dir.path().join("z.hdr");
        save_raw_volume(&v, &h).unwrap();
        let back = load_raw_volume(&h).unwrap();
        assert_eq!(back.samples(), &[0.0; 8]);
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("bad.hdr");
        fs::write(
            &h,
            "dims 4 4 4\nspacing_mm 1 1 1\norigin_mm 0 0 0\ndtype f32\ndata_file bad.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("bad.raw"), vec![0u8; 63 * 4]).unwrap();
        assert!(matches!(
            load_raw_volume(&h),
            Err(VolumeError::SizeMismatch { expected: 256, actual: 252 })
        ));
    }

    #[test]
    fn malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("m.hdr");
        for text in [
            "dims 4 4\n",
            "dims 4 4 4\nspacing_mm 1 1 1\norigin_mm 0 0 0\ndtype f64\ndata_file m.raw\n",
            "dims 4 4 4\nspacing_mm 1 1 1\norigin_mm 0 0 0\ndata_file m.raw\n",
            "dims 4 4 x\n",
            "colour red\n",
        ] {
            fs::write(&h, text).unwrap();
            assert!(matches!(load_raw_volume(&h), Err(VolumeError::MalformedHeader(_))), "{text}");
        }
    }

    #[test]
    fn i16_payload_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("s.hdr");
        fs::write(&h, "dims 2 1 1\nspacing_mm 1 1 2\norigin_mm 0 0 0\ndtype i16\ndata_file s.raw\n").unwrap();
        let mut p = Vec::new();
        p.extend_from_slice(&(-1024i16).to_le_bytes());
        p.extend_from_slice(&700i16.to_le_bytes());
        fs::write(dir.path().join("s.raw"), p).unwrap();
        assert_eq!(load_raw_volume(&h).unwrap().samples(), &[-1024.0, 700.0]);
    }

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let v = random_volume(16, 3);
        let h = dir.path().join("r.hdr");
        save_raw_volume(&v, &h).unwrap();
        let first = (fs::read(&h).unwrap(), fs::read(dir.path().join("r.raw")).unwrap());
        let back = load_raw_volume(&h).unwrap();
        assert_eq!(back, v);
        save_raw_volume(&back, &h).unwrap();
        let second = (fs::read(&h).unwrap(), fs::read(dir.path().join("r.raw")).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn single_voxel_payload_is_four_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let v = VoxelVolume::axis_aligned([1; 3], [1.0; 3], [0.0; 3], vec![42.5]).unwrap();
        save_raw_volume(&v, &dir.path().join("one.hdr")).unwrap();
        assert_eq!(fs::read(dir.path().join("one.raw")).unwrap().len(), 4);
    }

    #[test]
    fn rotated_orientation_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.1, -0.4, 0.9).into_inner();
        let v = VoxelVolume::new([2, 2, 1], [0.5; 3], [1.0, 2.0, 3.0], r, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = dir.path().join("o.hdr");
        save_raw_volume(&v, &h).unwrap();
        assert_eq!(load_raw_volume(&h).unwrap(), v);
    }
}
