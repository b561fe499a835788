//! Little-endian binary grid formats.
//!
//! * flow: `"FLW1"`, u32 width, u32 height, then per pixel `f32 du, f32 dv, u8 valid`
//! * visibility: `"VIS1"`, u32 width, u32 height, then per pixel `f32`
//! * depth: `"DEP1"`, u32 width, u32 height, then per pixel `f32` millimeters

use std::io::{self, Read, Write};

use nalgebra::Vector2;
use thiserror::Error;

use super::{FlowField, VisibilityMap};

pub const FLOW_MAGIC: &[u8; 4] = b"FLW1";
pub const VISIBILITY_MAGIC: &[u8; 4] = b"VIS1";
pub const DEPTH_MAGIC: &[u8; 4] = b"DEP1";

/// Grids larger than this are rejected on read.
const MAX_PIXELS: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("grid of {0}x{1} pixels is too large")]
    TooLarge(u32, u32),
    #[error("invalid grid contents: {0}")]
    Invalid(String),
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<(u32, u32), GridIoError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(GridIoError::BadMagic {
            expected: *magic,
            found: m,
        });
    }
    let w = read_u32(r)?;
    let h = read_u32(r)?;
    if w as u64 * h as u64 > MAX_PIXELS {
        return Err(GridIoError::TooLarge(w, h));
    }
    Ok((w, h))
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], width: u32, height: u32) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn write_flow(w: &mut impl Write, flow: &FlowField) -> io::Result<()> {
    write_header(w, FLOW_MAGIC, flow.width(), flow.height())?;
    let mut buf = Vec::with_capacity(flow.vectors().len() * 9);
    for (v, ok) in flow.vectors().iter().zip(flow.valid_mask()) {
        buf.extend_from_slice(&(v.x as f32).to_le_bytes());
        buf.extend_from_slice(&(v.y as f32).to_le_bytes());
        buf.push(*ok as u8);
    }
    w.write_all(&buf)
}

pub fn read_flow(r: &mut impl Read) -> Result<FlowField, GridIoError> {
    let (w, h) = read_header(r, FLOW_MAGIC)?;
    let n = w as usize * h as usize;
    let mut vectors = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut flag = [0u8; 1];
    for _ in 0..n {
        let du = read_f32(r)?;
        let dv = read_f32(r)?;
        r.read_exact(&mut flag)?;
        match flag[0] {
            0 => valid.push(false),
            1 => valid.push(true),
            other => return Err(GridIoError::Invalid(format!("valid flag {other}"))),
        }
        vectors.push(Vector2::new(du as f64, dv as f64));
    }
    FlowField::new(w, h, vectors, valid).map_err(|e| GridIoError::Invalid(e.to_string()))
}

fn write_scalar_grid(w: &mut impl Write, magic: &[u8; 4], width: u32, height: u32, values: &[f64]) -> io::Result<()> {
    write_header(w, magic, width, height)?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_scalar_grid(r: &mut impl Read, magic: &[u8; 4]) -> Result<(u32, u32, Vec<f64>), GridIoError> {
    let (w, h) = read_header(r, magic)?;
    let n = w as usize * h as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(read_f32(r)? as f64);
    }
    Ok((w, h, values))
}

pub fn write_visibility(w: &mut impl Write, vis: &VisibilityMap) -> io::Result<()> {
    write_scalar_grid(w, VISIBILITY_MAGIC, vis.width(), vis.height(), vis.values())
}

pub fn read_visibility(r: &mut impl Read) -> Result<VisibilityMap, GridIoError> {
    let (w, h, values) = read_scalar_grid(r, VISIBILITY_MAGIC)?;
    VisibilityMap::new(w, h, values).map_err(|e| GridIoError::Invalid(e.to_string()))
}

pub fn write_depth(w: &mut impl Write, width: u32, height: u32, depth: &[f64]) -> io::Result<()> {
    write_scalar_grid(w, DEPTH_MAGIC, width, height, depth)
}

pub fn read_depth(r: &mut impl Read) -> Result<(u32, u32, Vec<f64>), GridIoError> {
    let (w, h, values) = read_scalar_grid(r, DEPTH_MAGIC)?;
    if values.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(GridIoError::Invalid("depth must be finite and non-negative".into()));
    }
    Ok((w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_layout_is_bit_exact() {
        let mut f = FlowField::invalid(2, 1);
        f.set(0, 0, Some(Vector2::new(1.5, -2.0)));
        let mut bytes = Vec::new();
        write_flow(&mut bytes, &f).unwrap();
        let mut expected = b"FLW1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        expected.push(1);
        expected.extend_from_slice(&0f32.to_le_bytes());
        expected.extend_from_slice(&0f32.to_le_bytes());
        expected.push(0);
        assert_eq!(bytes, expected);
        assert_eq!(read_flow(&mut bytes.as_slice()).unwrap(), f);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(read_flow(&mut &b"VIS1\0\0\0\0\0\0\0\0"[..]), Err(GridIoError::BadMagic { .. })));
        assert!(matches!(read_visibility(&mut &b"VIS1\x01\0\0\0\x01\0\0\0"[..]), Err(GridIoError::Io(_))));
        let mut bad = b"VIS1".to_vec();
        bad.extend_from_slice(&1u32.to_le_bytes());
        bad.extend_from_slice(&1u32.to_le_bytes());
        bad.extend_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(read_visibility(&mut bad.as_slice()), Err(GridIoError::Invalid(_))));
    }
}
