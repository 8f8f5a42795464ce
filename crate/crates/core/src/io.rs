//! Binary and image encodings of [`ScalarField`].
//!
//! FBS1 layout, little-endian: magic `FBS1`, `u32 n`, `f64 origin_x`,
//! `f64 origin_y`, `f64 spacing`, then `n·n` `f64` values row-major.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::raster::{GridSpec, ScalarField};

pub const FBS1_MAGIC: &[u8; 4] = b"FBS1";

/// Encoded size of an `n`×`n` field.
pub fn fbs1_len(n: usize) -> usize {
    4 + 4 + 3 * 8 + 8 * n * n
}

pub fn write_fbs1<W: Write>(mut w: W, field: &ScalarField) -> io::Result<()> {
    let g = &field.grid;
    let mut buf = Vec::with_capacity(fbs1_len(g.n));
    buf.extend_from_slice(FBS1_MAGIC);
    buf.extend_from_slice(&(g.n as u32).to_le_bytes());
    for v in [g.origin.x, g.origin.y, g.spacing] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_fbs1<R: Read>(mut r: R) -> Result<ScalarField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FBS1_MAGIC {
        return Err(Error::Format { what: "FBS1 field", reason: format!("bad magic {magic:?}") });
    }
    let mut nb = [0u8; 4];
    r.read_exact(&mut nb)?;
    let n = u32::from_le_bytes(nb) as usize;
    let origin = Point2::new(read_f64(&mut r)?, read_f64(&mut r)?);
    let spacing = read_f64(&mut r)?;
    let grid = GridSpec::new(n, origin, spacing)
        .map_err(|e| Error::Format { what: "FBS1 field", reason: e.to_string() })?;
    let mut raw = vec![0u8; 8 * n * n];
    r.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ScalarField::from_values(grid, values).map_err(|e| Error::Format { what: "FBS1 field", reason: e.to_string() })
}

/// Binary PGM (P5), min-max scaled to 0..=255, top image row = largest `y`.
pub fn write_pgm<W: Write>(w: W, field: &ScalarField) -> io::Result<()> {
    let (lo, hi) = field.min_max();
    write_pgm_scaled(w, field, lo, hi)
}

/// Binary PGM with an explicit value range, so several images share a scale.
pub fn write_pgm_scaled<W: Write>(mut w: W, field: &ScalarField, lo: f64, hi: f64) -> io::Result<()> {
    let n = field.n();
    let span = hi - lo;
    let mut buf = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in (0..n).rev() {
        for col in 0..n {
            let t = if span > 0.0 { (field.get(col, row) - lo) / span } else { 0.0 };
            buf.push((t.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&buf)
}
