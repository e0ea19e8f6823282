//! On-disk formats: raw little-endian `f32` matrices with `key=value` text
//! sidecars, and whitespace-separated numeric tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Sidecar path of a binary matrix file (`x.f32` -> `x.meta`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Writes a matrix as row-major little-endian `f32`.
pub fn write_f32_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_matrix(path: &Path, rows: usize, cols: usize) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(format_err(
            path,
            format!("{} bytes, expected {} for {rows}x{cols}", bytes.len(), rows * cols * 4),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| format_err(path, e.to_string()))
}

/// Writes `key=value` lines in the given order.
pub fn write_kv(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (k, v) in entries {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Data(format!("unrepresentable metadata entry {k:?}")));
        }
        writeln!(out, "{k}={v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("line {} has no '='", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Typed access to a parsed sidecar.
pub struct Meta<'a> {
    pub path: &'a Path,
    pub map: BTreeMap<String, String>,
}

impl<'a> Meta<'a> {
    pub fn load(path: &'a Path) -> Result<Self> {
        Ok(Self {
            path,
            map: read_kv(path)?,
        })
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format_err(self.path, format!("missing key {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.str(key)?;
        raw.parse()
            .map_err(|_| format_err(self.path, format!("bad value {raw:?} for {key}")))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn prefixed(&self, prefix: &str) -> BTreeMap<String, String> {
        let p = format!("{prefix}.");
        self.map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }
}

/// Formats a real with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Reads a whitespace-separated numeric table, skipping `#` comments.
pub fn read_table(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(path, format!("line {} is not numeric", n + 1)))?;
        if row.len() != columns {
            return Err(format_err(
                path,
                format!("line {} has {} columns, expected {columns}", n + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.meta");
        let entries = vec![("a".to_string(), "1".to_string()), ("b.c".into(), "x y".into())];
        write_kv(&p, &entries).unwrap();
        let meta = Meta::load(&p).unwrap();
        assert_eq!(meta.parse::<u32>("a").unwrap(), 1);
        assert_eq!(meta.prefixed("b")["c"], "x y");
        assert!(meta.str("zzz").is_err());
    }

    #[test]
    fn f32_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        write_f32_matrix(&p, &Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(read_f32_matrix(&p, 3, 3), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn fmt9_is_a_fixed_point(v in -1e6f64..1e6) {
            let once = fmt9(v);
            let back: f64 = once.parse().unwrap();
            prop_assert_eq!(fmt9(back), once);
        }
    }
}
