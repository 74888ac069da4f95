//! Minimal NIfTI-1 single-file (`.nii`) reader/writer for float32 little-endian volumes.
//!
//! Scalar volumes are written as 3D images. Vector volumes are 4D with the three
//! components along the fourth axis (`dim[0] = 4`, `dim[4] = 3`), component-major.
//! Voxel size comes from `pixdim[1..4]`, the origin from the qform offsets.

use std::path::Path;

use nalgebra::Vector3;

use super::geometry::GridGeometry;
use super::volume::{ScalarVolume, VectorVolume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;
const INTENT_VECTOR: i16 = 1007;
const UNITS_MM: u8 = 2;
const WORLD_NOTE: &[u8] = b"axis-aligned right-handed world frame, mm";

/// A volume read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Vector(VectorVolume),
}

impl Volume {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            Volume::Scalar(v) => v.geometry(),
            Volume::Vector(v) => v.geometry(),
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn i16(&mut self, off: usize, v: i16) {
        self.buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, off: usize, v: i32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, off: usize, v: f32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}
fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}
fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn header(g: &GridGeometry, components: usize) -> Result<Writer> {
    let mut w = Writer {
        buf: vec![0u8; DATA_OFFSET],
    };
    for a in 0..3 {
        if g.dims[a] > i16::MAX as usize {
            return Err(Error::Capacity {
                dims: g.dims.map(|d| d as u64),
                components: components as u64,
            });
        }
    }
    w.i32(0, HEADER_SIZE as i32);
    w.buf[38] = b'r';
    let ndim = if components == 1 { 3 } else { 4 };
    let dims = [
        ndim as i16,
        g.dims[0] as i16,
        g.dims[1] as i16,
        g.dims[2] as i16,
        components as i16,
        1,
        1,
        1,
    ];
    for (n, d) in dims.iter().enumerate() {
        w.i16(40 + 2 * n, *d);
    }
    if components == 3 {
        w.i16(68, INTENT_VECTOR);
    }
    w.i16(70, DT_FLOAT32);
    w.i16(72, 32);
    let pixdim = [
        1.0,
        g.spacing[0] as f32,
        g.spacing[1] as f32,
        g.spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (n, p) in pixdim.iter().enumerate() {
        w.f32(76 + 4 * n, *p);
    }
    w.f32(108, DATA_OFFSET as f32);
    w.f32(112, 1.0);
    w.buf[123] = UNITS_MM;
    w.buf[148..148 + WORLD_NOTE.len()].copy_from_slice(WORLD_NOTE);
    // qform: identity rotation, offset = origin; sform mirrors it
    w.i16(252, 1);
    w.i16(254, 1);
    for a in 0..3 {
        w.f32(268 + 4 * a, g.origin[a] as f32);
        let row = 280 + 16 * a;
        w.f32(row + 4 * a, g.spacing[a] as f32);
        w.f32(row + 12, g.origin[a] as f32);
    }
    w.buf[344..348].copy_from_slice(b"n+1\0");
    Ok(w)
}

fn encode(g: &GridGeometry, components: usize, data: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    let mut w = header(g, components)?;
    w.buf.reserve(4 * g.len() * components);
    for v in data {
        w.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(w.buf)
}

/// Serializes a scalar volume to NIfTI-1 bytes.
pub fn encode_scalar(vol: &ScalarVolume) -> Result<Vec<u8>> {
    encode(vol.geometry(), 1, vol.values().iter().copied())
}

/// Serializes a vector volume to NIfTI-1 bytes (components along the 4th axis).
pub fn encode_vector(vol: &VectorVolume) -> Result<Vec<u8>> {
    let v = vol.vectors();
    encode(
        vol.geometry(),
        3,
        (0..3).flat_map(move |c| v.iter().map(move |x| x[c])),
    )
}

fn format_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

/// Parses NIfTI-1 bytes into a scalar or vector volume.
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(format_err(
            "sizeof_hdr",
            format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
        ));
    }
    let sizeof_hdr = rd_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(format_err(
            "sizeof_hdr",
            format!("expected {HEADER_SIZE} (little-endian), found {sizeof_hdr}"),
        ));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(format_err("magic", "expected single-file \"n+1\" magic"));
    }
    let datatype = rd_i16(bytes, 70);
    if datatype != DT_FLOAT32 {
        return Err(format_err(
            "datatype",
            format!("only float32 (16) is supported, found {datatype}"),
        ));
    }
    let bitpix = rd_i16(bytes, 72);
    if bitpix != 32 {
        return Err(format_err("bitpix", format!("expected 32, found {bitpix}")));
    }
    let dim: Vec<i16> = (0..8).map(|n| rd_i16(bytes, 40 + 2 * n)).collect();
    let components = match dim[0] {
        3 => 1usize,
        4 if dim[4] == 3 => 3,
        4 if dim[4] == 1 => 1,
        4 => {
            return Err(format_err(
                "dim",
                format!("4D volumes must have 3 components, found {}", dim[4]),
            ))
        }
        n => return Err(format_err("dim", format!("unsupported dimensionality {n}"))),
    };
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let d = dim[a + 1];
        if d < 2 {
            return Err(format_err(
                "dim",
                format!("axis {a} has {d} voxels, need at least 2"),
            ));
        }
        dims[a] = d as usize;
    }
    let mut spacing = [0f64; 3];
    for a in 0..3 {
        let p = rd_f32(bytes, 76 + 4 * (a + 1));
        if !(p > 0.0 && p.is_finite()) {
            return Err(format_err(
                "pixdim",
                format!("pixdim[{}] = {p}, voxel size must be positive", a + 1),
            ));
        }
        spacing[a] = p as f64;
    }
    let qform = rd_i16(bytes, 252);
    let sform = rd_i16(bytes, 254);
    let origin: [f64; 3] = std::array::from_fn(|a| {
        if qform > 0 {
            rd_f32(bytes, 268 + 4 * a) as f64
        } else if sform > 0 {
            rd_f32(bytes, 280 + 16 * a + 12) as f64
        } else {
            0.0
        }
    });
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(format_err("qoffset", "origin is not finite"));
    }
    let vox_offset = rd_f32(bytes, 108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(format_err(
            "vox_offset",
            format!("invalid data offset {vox_offset}"),
        ));
    }
    let offset = vox_offset as usize;
    let count = (dims[0] as u64)
        .checked_mul(dims[1] as u64)
        .and_then(|n| n.checked_mul(dims[2] as u64))
        .and_then(|n| n.checked_mul(components as u64))
        .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= usize::MAX as u64))
        .ok_or(Error::Capacity {
            dims: dims.map(|d| d as u64),
            components: components as u64,
        })? as usize;
    let needed = offset + 4 * count;
    if bytes.len() < needed {
        return Err(format_err(
            "vox_offset",
            format!("payload needs {needed} bytes, file has {}", bytes.len()),
        ));
    }
    let slope = rd_f32(bytes, 112);
    let inter = rd_f32(bytes, 116);
    let scaled = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let data: Vec<f64> = bytes[offset..needed]
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            if scaled {
                v * slope as f64 + inter as f64
            } else {
                v
            }
        })
        .collect();
    let geometry = GridGeometry::new(dims, spacing, origin)?;
    if components == 1 {
        Ok(Volume::Scalar(ScalarVolume::new(geometry, data)?))
    } else {
        let n = geometry.len();
        let vectors = (0..n)
            .map(|i| Vector3::new(data[i], data[n + i], data[2 * n + i]))
            .collect();
        Ok(Volume::Vector(VectorVolume::new(geometry, vectors)?))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    match read_volume(path.as_ref())? {
        Volume::Scalar(v) => Ok(v),
        Volume::Vector(_) => Err(Error::Shape(format!(
            "{} holds a vector volume, expected scalar",
            path.as_ref().display()
        ))),
    }
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorVolume> {
    match read_volume(path.as_ref())? {
        Volume::Vector(v) => Ok(v),
        Volume::Scalar(_) => Err(Error::Shape(format!(
            "{} holds a scalar volume, expected vector",
            path.as_ref().display()
        ))),
    }
}

pub fn write_scalar(vol: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_scalar(vol)?).map_err(io_err(path))
}

pub fn write_vector(vol: &VectorVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_vector(vol)?).map_err(io_err(path))
}

pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    match vol {
        Volume::Scalar(v) => write_scalar(v, path),
        Volume::Vector(v) => write_vector(v, path),
    }
}
