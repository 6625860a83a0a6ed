//! Cloud file formats.
//!
//! * xyz text: one point per line, three whitespace-separated decimals.
//!   Blank lines and lines starting with `#` are skipped.
//! * packed binary: `"PCN1"`, a little-endian `u32` point count, then
//!   `count` triples of little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

pub const PACKED_MAGIC: &[u8; 4] = b"PCN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    XyzText,
    PackedBinary,
}

impl CloudFormat {
    /// `.xyz` and `.txt` are text, `.pcn` and `.bin` packed binary.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz" | "txt") => Ok(CloudFormat::XyzText),
            Some("pcn" | "bin") => Ok(CloudFormat::PackedBinary),
            _ => Err(Error::parse(path, "unknown cloud file extension")),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::XyzText => "xyz",
            CloudFormat::PackedBinary => "pcn",
        }
    }
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::parse(path, format!("line {}: {msg}", i + 1));
        let mut p = [0.0f64; 3];
        let mut fields = line.split_whitespace();
        for v in &mut p {
            let field = fields.next().ok_or_else(|| bad("expected three coordinates"))?;
            *v = field.parse().map_err(|_| bad(&format!("{field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad("non-finite coordinate"));
            }
        }
        if fields.next().is_some() {
            return Err(bad("more than three fields"));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn encode_xyz(points: &[Point]) -> String {
    let mut out = String::with_capacity(points.len() * 32);
    for p in points {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn parse_packed(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    if bytes.len() < 8 {
        return Err(Error::parse(
            path,
            format!("header needs 8 bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != PACKED_MAGIC {
        return Err(Error::parse(path, "offset 0: missing PCN1 magic"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let need = 8 + count * 12;
    if bytes.len() < need {
        return Err(Error::parse(
            path,
            format!(
                "offset {}: {count} points need {need} bytes, file has {}",
                bytes.len(),
                bytes.len()
            ),
        ));
    }
    if bytes.len() > need {
        return Err(Error::parse(path, format!("offset {need}: trailing bytes")));
    }
    let mut points = Vec::with_capacity(count);
    for (i, chunk) in bytes[8..need].chunks_exact(12).enumerate() {
        let mut p = [0.0f64; 3];
        for (j, v) in p.iter_mut().enumerate() {
            let raw = f32::from_le_bytes(chunk[4 * j..4 * j + 4].try_into().unwrap());
            if !raw.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("offset {}: non-finite coordinate", 8 + 12 * i + 4 * j),
                ));
            }
            *v = raw as f64;
        }
        points.push(p);
    }
    Ok(points)
}

pub fn encode_packed(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + points.len() * 12);
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for &v in p {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a cloud without normalizing it.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let points = match format {
        CloudFormat::XyzText => {
            let text = fs::read_to_string(path)?;
            parse_xyz(&text, path)?
        }
        CloudFormat::PackedBinary => parse_packed(&fs::read(path)?, path)?,
    };
    if points.is_empty() {
        return Err(Error::parse(path, "no points"));
    }
    PointCloud::new(points, None)
}

pub fn save_cloud(path: &Path, format: CloudFormat, points: &[Point]) -> Result<()> {
    match format {
        CloudFormat::XyzText => fs::write(path, encode_xyz(points))?,
        CloudFormat::PackedBinary => fs::write(path, encode_packed(points))?,
    }
    Ok(())
}
