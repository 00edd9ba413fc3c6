//! Report artifacts: versioned CSV text and 8-bit binary PGM images with a
//! sidecar describing the gray-level mapping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Schema line written at the top of every CSV this crate produces.
pub fn csv_schema(kind: &str, version: u32) -> String {
    format!("# latentwave {kind} v{version}")
}

/// Shortest round-trip float text, so reruns compare byte for byte.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Affine map from `[lo, hi]` to gray levels `0..=255`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrayMap {
    pub lo: f64,
    pub hi: f64,
}

impl GrayMap {
    pub fn level(&self, v: f64) -> u8 {
        if !(self.hi > self.lo) || !v.is_finite() {
            return 0;
        }
        (255.0 * (v - self.lo) / (self.hi - self.lo)).round().clamp(0.0, 255.0) as u8
    }

    /// Inverse of [`level`](Self::level) up to quantisation.
    pub fn value(&self, level: u8) -> f64 {
        self.lo + level as f64 / 255.0 * (self.hi - self.lo)
    }
}

pub fn pgm_bytes(values: &[f64], height: usize, width: usize, map: GrayMap) -> Result<Vec<u8>> {
    if values.len() != height * width || height == 0 || width == 0 {
        return Err(Error::Contract(format!(
            "image of {} values cannot be {height}×{width}",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| map.level(v)));
    Ok(out)
}

/// Writes `path` (PGM) and `path` + `.txt` holding the mapping; returns the sidecar path.
pub fn write_pgm(path: &Path, values: &[f64], height: usize, width: usize, map: GrayMap, label: &str) -> Result<PathBuf> {
    let bytes = pgm_bytes(values, height, width, map)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut side = String::new();
    let _ = writeln!(side, "image={label}");
    let _ = writeln!(side, "extent={height}x{width}");
    let _ = writeln!(side, "lo={}", num(map.lo));
    let _ = writeln!(side, "hi={}", num(map.hi));
    let _ = writeln!(side, "gray=round(255*(v-lo)/(hi-lo)) clamped to [0,255]");
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    let sidecar = PathBuf::from(sidecar);
    write_text(&sidecar, &side)?;
    Ok(sidecar)
}

/// Parses a binary PGM written by [`pgm_bytes`]: `(height, width, levels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad("pixel count does not match header"));
    }
    Ok((h, w, data.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_levels() {
        let m = GrayMap { lo: -1.0, hi: 1.0 };
        assert_eq!(m.level(-1.0), 0);
        assert_eq!(m.level(1.0), 255);
        assert_eq!(m.level(5.0), 255);
        assert_eq!(m.level(f64::NAN), 0);
        assert!((m.value(m.level(0.3)) - 0.3).abs() <= 1.0 / 255.0);
    }

    #[test]
    fn pgm_round_trip() {
        let v: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let b = pgm_bytes(&v, 3, 4, GrayMap { lo: 0.0, hi: 1.0 }).unwrap();
        let (h, w, px) = read_pgm(&b).unwrap();
        assert_eq!((h, w), (3, 4));
        assert_eq!(px[0], 0);
        assert_eq!(px[11], 255);
        assert!(pgm_bytes(&v, 5, 5, GrayMap { lo: 0.0, hi: 1.0 }).is_err());
    }
}
