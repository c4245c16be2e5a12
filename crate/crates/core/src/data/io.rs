//! Point cloud files: the `PCDC` binary format and ASCII xyz.
//!
//! Binary layout (little-endian): magic `PCDC`, `u16` version 1,
//! `u32` point count, then `count * 3` `f32` coordinates.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{self, FormatError};
use crate::geom::PointCloud;

pub const CLOUD_MAGIC: &[u8; 4] = b"PCDC";
pub const CLOUD_VERSION: u16 = 1;

pub fn write_binary<W: Write>(w: &mut W, pc: &PointCloud) -> Result<(), FormatError> {
    let count = u32::try_from(pc.len()).map_err(|_| FormatError::Corrupt("too many points".into()))?;
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&CLOUD_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    binio::write_f32s(w, &pc.flat())?;
    Ok(())
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<PointCloud, FormatError> {
    binio::expect_magic(r, CLOUD_MAGIC)?;
    let version = binio::read_u16(r)?;
    if version != CLOUD_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = binio::read_u32(r)? as usize;
    let data = binio::read_f32s(r, count * 3)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FormatError::Corrupt("trailing bytes after the last point".into()));
    }
    PointCloud::from_flat(&data).map_err(|e| FormatError::Corrupt(e.to_string()))
}

/// One `x y z` line per point. `f32` values are written in shortest
/// round-trip form, so reading back is exact.
pub fn write_xyz<W: Write>(w: &mut W, pc: &PointCloud) -> Result<(), FormatError> {
    for p in pc.points() {
        writeln!(w, "{:?} {:?} {:?}", p[0], p[1], p[2])?;
    }
    Ok(())
}

/// Parses `x y z` lines; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_xyz<R: BufRead>(r: R) -> Result<PointCloud, FormatError> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(FormatError::ParseError {
                line: line_no,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0f32; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f.parse::<f32>().map_err(|e| FormatError::ParseError {
                line: line_no,
                msg: format!("{f:?}: {e}"),
            })?;
            if !p[k].is_finite() {
                return Err(FormatError::ParseError {
                    line: line_no,
                    msg: format!("non-finite coordinate {f:?}"),
                });
            }
        }
        points.push(p);
    }
    PointCloud::new(points).map_err(|e| FormatError::Corrupt(e.to_string()))
}

fn is_xyz(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("txt"))
}

/// Reads a cloud; `.xyz` and `.txt` files are parsed as ASCII, anything
/// else as `PCDC` binary.
pub fn read_cloud(path: &Path) -> Result<PointCloud, FormatError> {
    let file = File::open(path)?;
    if is_xyz(path) {
        read_xyz(BufReader::new(file))
    } else {
        read_binary(&mut BufReader::new(file))
    }
}

/// Writes a cloud, choosing the format from the extension like [`read_cloud`].
pub fn write_cloud(path: &Path, pc: &PointCloud) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_xyz(path) {
        write_xyz(&mut w, pc)?;
    } else {
        write_binary(&mut w, pc)?;
    }
    w.flush()?;
    Ok(())
}
