//! Minimal DICOM reader for uncompressed, explicit-VR little-endian CT series.
//!
//! Only the handful of attributes needed to place a slice in space and map
//! its pixels to Hounsfield units are interpreted; everything else is skipped.
//! [`write_slice`] produces files in the same subset for fixtures.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{VolumeError, VoxelVolume};
use crate::tolerance::SLICE_SPACING_REL_TOL;

pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_BIG_ENDIAN: &str = "1.2.840.10008.1.2.2";

const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";

type Tag = (u16, u16);
const TRANSFER_SYNTAX: Tag = (0x0002, 0x0010);
const SERIES_UID: Tag = (0x0020, 0x000E);
const IMAGE_POSITION: Tag = (0x0020, 0x0032);
const IMAGE_ORIENTATION: Tag = (0x0020, 0x0037);
const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
const NUMBER_OF_FRAMES: Tag = (0x0028, 0x0008);
const ROWS: Tag = (0x0028, 0x0010);
const COLUMNS: Tag = (0x0028, 0x0011);
const PIXEL_SPACING: Tag = (0x0028, 0x0030);
const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const RESCALE_INTERCEPT: Tag = (0x0028, 0x1052);
const RESCALE_SLOPE: Tag = (0x0028, 0x1053);
const PIXEL_DATA: Tag = (0x7FE0, 0x0010);

/// One parsed CT slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub series_uid: String,
    /// Image position (patient), mm.
    pub position: [f64; 3],
    /// Row direction cosines followed by column direction cosines.
    pub orientation: [f64; 6],
    /// Spacing between rows, then between columns, mm.
    pub pixel_spacing: [f64; 2],
    pub rows: usize,
    pub columns: usize,
    pub slope: f64,
    pub intercept: f64,
    pub pixels: Vec<i32>,
}

impl SliceRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.rows * self.columns != self.pixels.len() {
            return Err(format!(
                "{}×{} pixels declared, {} present",
                self.rows,
                self.columns,
                self.pixels.len()
            ));
        }
        if self.pixel_spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(format!("pixel spacing {:?} must be > 0", self.pixel_spacing));
        }
        Ok(())
    }
}

fn long_length_vr(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"UC" | b"UR" | b"UT" | b"UN" | b"SV" | b"UV"
    )
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> VolumeError {
        VolumeError::MalformedDicom {
            file: self.file.to_string(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], VolumeError> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, VolumeError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, VolumeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    /// Reads one element header: tag, VR, length (u32::MAX for undefined).
    fn header(&mut self) -> Result<(Tag, [u8; 2], u32), VolumeError> {
        let tag = (self.u16()?, self.u16()?);
        if tag.0 == 0xFFFE {
            // item / delimiters carry no VR
            let len = self.u32()?;
            return Ok((tag, *b"  ", len));
        }
        let vr_bytes = self.take(2)?;
        let vr = [vr_bytes[0], vr_bytes[1]];
        if !vr.iter().all(|c| c.is_ascii_uppercase()) {
            return Err(VolumeError::UnsupportedEncoding {
                file: self.file.to_string(),
                reason: format!("element {:04X},{:04X} has no explicit VR", tag.0, tag.1),
            });
        }
        let len = if long_length_vr(&vr) {
            self.take(2)?;
            self.u32()?
        } else {
            self.u16()? as u32
        };
        Ok((tag, vr, len))
    }

    /// Skips an undefined-length sequence up to its delimiter.
    fn skip_sequence(&mut self) -> Result<(), VolumeError> {
        loop {
            let tag = (self.u16()?, self.u16()?);
            let len = self.u32()?;
            match tag {
                (0xFFFE, 0xE0DD) => return Ok(()),
                (0xFFFE, 0xE000) => {
                    if len == u32::MAX {
                        self.skip_item_elements()?;
                    } else {
                        self.take(len as usize)?;
                    }
                }
                _ => return Err(self.err("unexpected tag inside sequence")),
            }
        }
    }

    fn skip_item_elements(&mut self) -> Result<(), VolumeError> {
        loop {
            let (tag, vr, len) = self.header()?;
            if tag == (0xFFFE, 0xE00D) {
                return Ok(());
            }
            if len == u32::MAX {
                if &vr == b"SQ" || &vr == b"UN" {
                    self.skip_sequence()?;
                } else {
                    return Err(self.err("undefined length on non-sequence element"));
                }
            } else {
                self.take(len as usize)?;
            }
        }
    }
}

fn text(v: &[u8]) -> String {
    String::from_utf8_lossy(v)
        .trim_matches(|c: char| c == '\0' || c.is_whitespace())
        .to_string()
}

fn decimals(v: &[u8], n: usize, what: &str, file: &str) -> Result<Vec<f64>, VolumeError> {
    let s = text(v);
    let out: Result<Vec<f64>, _> = s.split('\\').map(|p| p.trim().parse::<f64>()).collect();
    match out {
        Ok(o) if o.len() == n => Ok(o),
        _ => Err(VolumeError::MalformedDicom {
            file: file.to_string(),
            reason: format!("{what}: expected {n} decimal value(s), got `{s}`"),
        }),
    }
}

/// Parses one slice file.
pub fn read_slice(path: &Path) -> Result<SliceRecord, VolumeError> {
    let buf = fs::read(path)?;
    let file = path.display().to_string();
    let start = if buf.len() >= 132 && &buf[128..132] == b"DICM" {
        132
    } else {
        0
    };
    let mut r = Reader {
        buf: &buf,
        pos: start,
        file: &file,
    };
    let mut series = None;
    let mut position = None;
    let mut orientation = None;
    let mut spacing = None;
    let mut rows = None;
    let mut columns = None;
    let mut bits = 16u16;
    let mut signed = false;
    let mut slope = 1.0;
    let mut intercept = 0.0;
    let mut pixels = None;
    let unsupported = |reason: String| VolumeError::UnsupportedEncoding {
        file: file.clone(),
        reason,
    };
    while !r.at_end() {
        let (tag, vr, len) = r.header()?;
        if len == u32::MAX {
            if tag == PIXEL_DATA {
                return Err(unsupported("encapsulated (compressed) pixel data".into()));
            }
            if &vr == b"SQ" || &vr == b"UN" {
                r.skip_sequence()?;
                continue;
            }
            return Err(r.err("undefined length on non-sequence element"));
        }
        let value = r.take(len as usize)?;
        let us = |v: &[u8]| -> Result<u16, VolumeError> {
            if v.len() < 2 {
                return Err(VolumeError::MalformedDicom {
                    file: file.clone(),
                    reason: "short US value".into(),
                });
            }
            Ok(u16::from_le_bytes([v[0], v[1]]))
        };
        match tag {
            TRANSFER_SYNTAX => {
                let ts = text(value);
                if ts == EXPLICIT_VR_BIG_ENDIAN {
                    return Err(unsupported("big-endian transfer syntax".into()));
                } else if ts == IMPLICIT_VR_LITTLE_ENDIAN {
                    return Err(unsupported("implicit VR transfer syntax".into()));
                } else if ts != EXPLICIT_VR_LITTLE_ENDIAN {
                    return Err(unsupported(format!("compressed transfer syntax {ts}")));
                }
            }
            SERIES_UID => series = Some(text(value)),
            IMAGE_POSITION => position = Some(decimals(value, 3, "image position", &file)?),
            IMAGE_ORIENTATION => orientation = Some(decimals(value, 6, "image orientation", &file)?),
            PIXEL_SPACING => spacing = Some(decimals(value, 2, "pixel spacing", &file)?),
            ROWS => rows = Some(us(value)? as usize),
            COLUMNS => columns = Some(us(value)? as usize),
            BITS_ALLOCATED => bits = us(value)?,
            PIXEL_REPRESENTATION => signed = us(value)? == 1,
            SAMPLES_PER_PIXEL => {
                if us(value)? != 1 {
                    return Err(unsupported("more than one sample per pixel".into()));
                }
            }
            NUMBER_OF_FRAMES => {
                if text(value).parse::<u32>().unwrap_or(1) > 1 {
                    return Err(unsupported("multi-frame image".into()));
                }
            }
            RESCALE_SLOPE => slope = decimals(value, 1, "rescale slope", &file)?[0],
            RESCALE_INTERCEPT => intercept = decimals(value, 1, "rescale intercept", &file)?[0],
            PIXEL_DATA => pixels = Some(value),
            _ => {}
        }
    }
    let missing = |what: &str| VolumeError::MalformedDicom {
        file: file.clone(),
        reason: format!("missing {what}"),
    };
    let rows = rows.ok_or_else(|| missing("rows"))?;
    let columns = columns.ok_or_else(|| missing("columns"))?;
    let data = pixels.ok_or_else(|| missing("pixel data"))?;
    let n = rows * columns;
    let decoded: Vec<i32> = match bits {
        16 => {
            if data.len() < n * 2 {
                return Err(missing("pixel bytes"));
            }
            data[..n * 2]
                .chunks_exact(2)
                .map(|c| {
                    let u = u16::from_le_bytes([c[0], c[1]]);
                    if signed {
                        u as i16 as i32
                    } else {
                        u as i32
                    }
                })
                .collect()
        }
        8 => {
            if data.len() < n {
                return Err(missing("pixel bytes"));
            }
            data[..n]
                .iter()
                .map(|&b| if signed { b as i8 as i32 } else { b as i32 })
                .collect()
        }
        other => return Err(unsupported(format!("{other} bits allocated"))),
    };
    let pos = position.ok_or_else(|| missing("image position"))?;
    let ori = orientation.ok_or_else(|| missing("image orientation"))?;
    let sp = spacing.ok_or_else(|| missing("pixel spacing"))?;
    let rec = SliceRecord {
        series_uid: series.ok_or_else(|| missing("series instance UID"))?,
        position: [pos[0], pos[1], pos[2]],
        orientation: [ori[0], ori[1], ori[2], ori[3], ori[4], ori[5]],
        pixel_spacing: [sp[0], sp[1]],
        rows,
        columns,
        slope,
        intercept,
        pixels: decoded,
    };
    rec.validate().map_err(|reason| VolumeError::MalformedDicom {
        file: file.clone(),
        reason,
    })?;
    Ok(rec)
}

/// Loads every file in `dir` as one CT series.
pub fn load_dicom_series(dir: &Path) -> Result<VoxelVolume, VolumeError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    files.sort();
    let slices = files
        .iter()
        .map(|f| read_slice(f))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_series(slices)
}

/// Orders slices along the slice normal and stacks them into a volume.
pub fn assemble_series(mut slices: Vec<SliceRecord>) -> Result<VoxelVolume, VolumeError> {
    if slices.len() < 2 {
        return Err(VolumeError::InsufficientSlices(slices.len()));
    }
    let series: BTreeSet<&str> = slices.iter().map(|s| s.series_uid.as_str()).collect();
    if series.len() > 1 {
        return Err(VolumeError::MixedSeries(
            series.into_iter().map(String::from).collect(),
        ));
    }
    let (rows, cols, pixel_spacing, o) = {
        let f = &slices[0];
        (f.rows, f.columns, f.pixel_spacing, f.orientation)
    };
    for s in &slices[1..] {
        if s.rows != rows || s.columns != cols || s.pixel_spacing != pixel_spacing || s.orientation != o {
            return Err(VolumeError::Invalid(
                "slices differ in geometry (rows, columns, spacing or orientation)".into(),
            ));
        }
    }
    let row_dir = Vector3::new(o[0], o[1], o[2]).normalize();
    let col_raw = Vector3::new(o[3], o[4], o[5]);
    let col_dir = (col_raw - row_dir * row_dir.dot(&col_raw)).normalize();
    let normal = row_dir.cross(&col_dir);
    if !(normal.norm() > 0.5) {
        return Err(VolumeError::Invalid("degenerate image orientation".into()));
    }
    let proj = |s: &SliceRecord| normal.dot(&Vector3::from(s.position));
    slices.sort_by(|a, b| proj(a).total_cmp(&proj(b)));
    let mut gaps: Vec<f64> = slices.windows(2).map(|w| proj(&w[1]) - proj(&w[0])).collect();
    let (gmin, gmax) = gaps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    gaps.sort_by(f64::total_cmp);
    let median = if gaps.len() % 2 == 1 {
        gaps[gaps.len() / 2]
    } else {
        0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
    };
    if !(median > 0.0)
        || (gmax - median).abs() > SLICE_SPACING_REL_TOL * median
        || (median - gmin).abs() > SLICE_SPACING_REL_TOL * median
    {
        return Err(VolumeError::NonUniformSpacing { min: gmin, max: gmax });
    }
    let mut samples = Vec::with_capacity(rows * cols * slices.len());
    for s in &slices {
        samples.extend(
            s.pixels
                .iter()
                .map(|&raw| (s.slope * raw as f64 + s.intercept) as f32),
        );
    }
    let orientation = Matrix3::from_columns(&[row_dir, col_dir, normal]);
    // pixel spacing is (between rows, between columns): x steps along a row
    let spacing = [pixel_spacing[1], pixel_spacing[0], median];
    VoxelVolume::new(
        [cols, rows, slices.len()],
        spacing,
        slices[0].position,
        orientation,
        samples,
    )
}

fn push_element(out: &mut Vec<u8>, tag: Tag, vr: &[u8; 2], value: &[u8]) {
    let mut v = value.to_vec();
    if v.len() % 2 == 1 {
        v.push(if vr == b"UI" || vr == b"OB" || vr == b"OW" { 0 } else { b' ' });
    }
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(vr);
    if long_length_vr(vr) {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(v.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(&v);
}

fn ds(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("\\")
        .into_bytes()
}

/// Writes `slice` as a Part-10 file declaring `transfer_syntax`. The body is
/// always explicit-VR little endian; other syntaxes exist to build fixtures
/// the reader must reject.
pub fn write_slice(path: &Path, slice: &SliceRecord, transfer_syntax: &str) -> Result<(), VolumeError> {
    slice
        .validate()
        .map_err(|reason| VolumeError::Invalid(reason))?;
    let mut meta = Vec::new();
    push_element(&mut meta, (0x0002, 0x0001), b"OB", &[0, 1]);
    push_element(&mut meta, (0x0002, 0x0002), b"UI", CT_IMAGE_STORAGE.as_bytes());
    push_element(&mut meta, TRANSFER_SYNTAX, b"UI", transfer_syntax.as_bytes());
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    push_element(&mut out, (0x0002, 0x0000), b"UL", &(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);

    let signed = slice.pixels.iter().any(|&p| p < 0);
    push_element(&mut out, (0x0008, 0x0060), b"CS", b"CT");
    push_element(&mut out, SERIES_UID, b"UI", slice.series_uid.as_bytes());
    push_element(&mut out, IMAGE_POSITION, b"DS", &ds(&slice.position));
    push_element(&mut out, IMAGE_ORIENTATION, b"DS", &ds(&slice.orientation));
    push_element(&mut out, SAMPLES_PER_PIXEL, b"US", &1u16.to_le_bytes());
    push_element(&mut out, ROWS, b"US", &(slice.rows as u16).to_le_bytes());
    push_element(&mut out, COLUMNS, b"US", &(slice.columns as u16).to_le_bytes());
    push_element(&mut out, PIXEL_SPACING, b"DS", &ds(&slice.pixel_spacing));
    push_element(&mut out, BITS_ALLOCATED, b"US", &16u16.to_le_bytes());
    push_element(&mut out, PIXEL_REPRESENTATION, b"US", &(signed as u16).to_le_bytes());
    push_element(&mut out, RESCALE_INTERCEPT, b"DS", &ds(&[slice.intercept]));
    push_element(&mut out, RESCALE_SLOPE, b"DS", &ds(&[slice.slope]));
    let mut px = Vec::with_capacity(slice.pixels.len() * 2);
    for &p in &slice.pixels {
        let v = if signed { (p as i16) as u16 } else { p as u16 };
        px.extend_from_slice(&v.to_le_bytes());
    }
    push_element(&mut out, PIXEL_DATA, b"OW", &px);
    fs::write(path, out)?;
    Ok(())
}
