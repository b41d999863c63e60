//! Dataset CSV ingestion and serialisation, run-record JSON Lines, config
//! files and report emission.
//!
//! Floats are written in their shortest round-trip representation, so every
//! file re-parses to bit-identical values. Non-finite values are written as
//! `NaN` in CSV and `null` in JSON.

mod dataset;
mod reports;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use dataset::{read_dataset, write_dataset, ColumnDecl, CsvTableSpec, KindName, ReadOutcome};
pub use reports::{
    emit_reports, write_aggregate_csv, write_convergence_csv, write_curves_csv,
    write_quality_csv, AGGREGATE_COLUMNS, LIMITATIONS,
};

use crate::error::{Error, Result};

/// Serde adapter writing non-finite floats as `null` and reading `null` back
/// as `NaN`. JSON has no NaN literal; finite values round-trip bit-exactly.
pub mod float_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Shortest round-trip text for `x`; `NaN` for every non-finite value.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        // `Debug` is the shortest representation that parses back to `x`,
        // switching to exponent notation for very large or small magnitudes.
        format!("{x:?}")
    } else {
        "NaN".to_string()
    }
}

/// Appends one JSON line and flushes, so a crash loses at most that line.
pub fn append_json_line<T: Serialize, W: Write>(writer: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *writer, value)?;
    writer
        .write_all(b"\n")
        .and_then(|()| writer.flush())
        .map_err(|e| Error::io("<json lines>", e))
}

/// Reads a JSON Lines file.
///
/// A final line that does not parse is treated as a write interrupted by a
/// crash: it is skipped and reported through the returned flag. A malformed
/// line anywhere else is a parse error.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, bool)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if Some(i) == last => return Ok((out, true)),
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((out, false))
}

/// Writes all values as JSON Lines, replacing `path` atomically.
pub fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = std::io::BufWriter::new(file);
        for v in values {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and parses a TOML file.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].matches('\n').count() as u64 + 1)
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 5e300, -0.0, 49.999_999_999_999_99] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
        assert_eq!(format_float(f64::INFINITY), "NaN");
    }

    #[test]
    fn truncated_last_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "[1,2]\n[3]\n[4,").unwrap();
        let (v, truncated): (Vec<Vec<u32>>, bool) = read_json_lines(&path).unwrap();
        assert_eq!(v, vec![vec![1, 2], vec![3]]);
        assert!(truncated);
        std::fs::write(&path, "[1,\n[3]\n").unwrap();
        assert!(matches!(
            read_json_lines::<Vec<u32>>(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn toml_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "a = 1\nb = = 2\n").unwrap();
        let err = read_toml::<toml::Table>(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
