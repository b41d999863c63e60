use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::format_float;
use crate::error::{Error, Result};
use crate::tabular::{Column, ColumnData, ColumnKind, Dataset, TableSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Continuous,
    Binary,
    Ordinal,
    Nominal,
}

impl std::str::FromStr for KindName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(KindName::Continuous),
            "binary" => Ok(KindName::Binary),
            "ordinal" => Ok(KindName::Ordinal),
            "nominal" => Ok(KindName::Nominal),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl<'de> Deserialize<'de> for KindName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Declared column of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: KindName,
    /// Level order for ordinal/nominal columns. Without it, levels are the
    /// observed values in first-appearance order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

impl ColumnDecl {
    pub fn new(name: impl Into<String>, kind: KindName) -> Self {
        ColumnDecl {
            name: name.into(),
            kind,
            levels: None,
        }
    }

    pub fn with_levels<S: Into<String>>(mut self, levels: impl IntoIterator<Item = S>) -> Self {
        self.levels = Some(levels.into_iter().map(Into::into).collect());
        self
    }

    /// Declaration reproducing an existing schema column exactly.
    pub fn from_column(column: &Column) -> Self {
        match &column.kind {
            ColumnKind::Continuous => ColumnDecl::new(&column.name, KindName::Continuous),
            ColumnKind::Binary => ColumnDecl::new(&column.name, KindName::Binary),
            ColumnKind::Ordinal(l) => {
                ColumnDecl::new(&column.name, KindName::Ordinal).with_levels(l.clone())
            }
            ColumnKind::Nominal(l) => {
                ColumnDecl::new(&column.name, KindName::Nominal).with_levels(l.clone())
            }
        }
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".into(), "?".into()]
}

/// How to read a delimited text file into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTableSpec {
    pub path: PathBuf,
    /// Columns to read. With a header they are matched by name (other file
    /// columns are ignored); without one they are the file's columns in order.
    pub columns: Vec<ColumnDecl>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub header: bool,
    /// Cell values (after trimming) that mark a missing value.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

impl CsvTableSpec {
    pub fn new(path: impl Into<PathBuf>, columns: Vec<ColumnDecl>) -> Self {
        CsvTableSpec {
            path: path.into(),
            columns,
            delimiter: default_delimiter(),
            header: true,
            missing: default_missing(),
        }
    }

    /// Every problem with the declaration itself (not the file).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.columns.is_empty() {
            out.push("population: at least one column must be declared".into());
        }
        if !self.delimiter.is_ascii() {
            out.push(format!("population: delimiter `{}` is not ASCII", self.delimiter));
        }
        for c in &self.columns {
            match (c.kind, &c.levels) {
                (KindName::Continuous | KindName::Binary, Some(_)) => out.push(format!(
                    "population column `{}`: levels are only allowed for ordinal/nominal",
                    c.name
                )),
                (_, Some(levels)) if levels.is_empty() => {
                    out.push(format!("population column `{}`: empty level list", c.name))
                }
                _ => {}
            }
        }
        out
    }
}

/// A parsed dataset plus the number of incomplete rows that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub data: Dataset,
    pub dropped_rows: usize,
}

fn parse_binary(s: &str) -> Option<u32> {
    match s.to_ascii_lowercase().as_str() {
        "false" | "0" => Some(0),
        "true" | "1" => Some(1),
        _ => None,
    }
}

pub fn read_dataset(spec: &CsvTableSpec) -> Result<ReadOutcome> {
    let path = &spec.path;
    let parse_error = |line: u64, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let violations = spec.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .has_headers(spec.header)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let positions: Vec<usize> = if spec.header {
        let headers = reader.headers()?.clone();
        let index: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        spec.columns
            .iter()
            .map(|c| {
                index
                    .get(c.name.as_str())
                    .copied()
                    .ok_or_else(|| parse_error(1, format!("header has no column `{}`", c.name)))
            })
            .collect::<Result<_>>()?
    } else {
        (0..spec.columns.len()).collect()
    };

    let p = spec.columns.len();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); p];
    let mut dropped = 0;
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if !spec.header && record.len() != p {
            return Err(parse_error(
                line,
                format!("expected {p} fields, found {}", record.len()),
            ));
        }
        let cells: Vec<&str> = positions.iter().map(|&i| record[i].trim()).collect();
        if cells.iter().any(|c| spec.missing.iter().any(|m| m == c)) {
            dropped += 1;
            continue;
        }
        for (col, cell) in raw.iter_mut().zip(cells) {
            col.push(cell.to_string());
        }
        lines.push(line);
    }

    let mut columns = Vec::with_capacity(p);
    let mut schema_columns = Vec::with_capacity(p);
    for (decl, values) in spec.columns.iter().zip(raw) {
        let (kind, data) = match decl.kind {
            KindName::Continuous => {
                let parsed = values
                    .iter()
                    .zip(&lines)
                    .map(|(v, &line)| match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(x),
                        _ => Err(parse_error(
                            line,
                            format!("column `{}`: `{v}` is not a finite number", decl.name),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (ColumnKind::Continuous, ColumnData::Continuous(parsed))
            }
            KindName::Binary => {
                let parsed = values
                    .iter()
                    .zip(&lines)
                    .map(|(v, &line)| {
                        parse_binary(v).ok_or_else(|| {
                            parse_error(
                                line,
                                format!("column `{}`: `{v}` is not a binary value", decl.name),
                            )
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (ColumnKind::Binary, ColumnData::Categorical(parsed))
            }
            KindName::Ordinal | KindName::Nominal => {
                let declared = decl.levels.is_some();
                let mut levels: Vec<String> = decl.levels.clone().unwrap_or_default();
                let mut index: HashMap<String, u32> = levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.clone(), i as u32))
                    .collect();
                let mut codes = Vec::with_capacity(values.len());
                for (v, &line) in values.iter().zip(&lines) {
                    let code = match index.get(v) {
                        Some(&c) => c,
                        None if !declared => {
                            let c = levels.len() as u32;
                            levels.push(v.clone());
                            index.insert(v.clone(), c);
                            c
                        }
                        None => {
                            return Err(parse_error(
                                line,
                                format!("column `{}`: undeclared level `{v}`", decl.name),
                            ))
                        }
                    };
                    codes.push(code);
                }
                if levels.is_empty() {
                    levels.push("(none)".into());
                }
                let kind = if decl.kind == KindName::Ordinal {
                    ColumnKind::ordinal(levels)?
                } else {
                    ColumnKind::nominal(levels)?
                };
                (kind, ColumnData::Categorical(codes))
            }
        };
        schema_columns.push(Column::new(&decl.name, kind));
        columns.push(data);
    }
    let schema = TableSchema::new(schema_columns)?;
    Ok(ReadOutcome {
        data: Dataset::new(Arc::new(schema), columns)?,
        dropped_rows: dropped,
    })
}

/// Writes a header plus one line per row; categorical cells as level labels.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidDataset(format!("{other:?}")),
    })?;
    w.write_record(data.schema().names())?;
    let schema = data.schema();
    let mut row = Vec::with_capacity(data.n_cols());
    for i in 0..data.n_rows() {
        row.clear();
        for (j, col) in data.columns().iter().enumerate() {
            row.push(match col {
                ColumnData::Continuous(v) => format_float(v[i]),
                ColumnData::Categorical(v) => schema
                    .column(j)
                    .kind
                    .level_label(v[i])
                    .expect("validated level")
                    .to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpParams};

    fn dgp_decls() -> Vec<ColumnDecl> {
        dgp::schema().columns().iter().map(ColumnDecl::from_column).collect()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = dgp::generate(&DgpParams::default(), 300, 9).unwrap();
        write_dataset(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("age,stage,biomarker,therapy,death\n"));
        assert!(text.lines().nth(1).unwrap().split(',').nth(1).unwrap().starts_with('I'));
        let back = read_dataset(&CsvTableSpec::new(&path, dgp_decls())).unwrap();
        assert_eq!(back.dropped_rows, 0);
        assert_eq!(back.data, data);
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let data = dgp::generate(&DgpParams::default(), 3, 9).unwrap().select_rows(&[]);
        write_dataset(&data, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "age,stage,biomarker,therapy,death\n"
        );
    }

    #[test]
    fn incomplete_rows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "x,g,extra\n1.5,a,z\n,b,z\n2.5,b,z\n").unwrap();
        let spec = CsvTableSpec::new(
            &path,
            vec![
                ColumnDecl::new("x", KindName::Continuous),
                ColumnDecl::new("g", KindName::Nominal),
            ],
        );
        let out = read_dataset(&spec).unwrap();
        assert_eq!(out.data.n_rows(), 2);
        assert_eq!(out.dropped_rows, 1);
        assert_eq!(out.data.schema().column(1).kind.level_label(1), Some("b"));
    }

    #[test]
    fn three_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "1,true\n2,false\n3,1\n").unwrap();
        let spec = CsvTableSpec {
            header: false,
            ..CsvTableSpec::new(
                &path,
                vec![
                    ColumnDecl::new("x", KindName::Continuous),
                    ColumnDecl::new("b", KindName::Binary),
                ],
            )
        };
        let out = read_dataset(&spec).unwrap();
        assert_eq!(out.data.n_rows(), 3);
        assert_eq!(out.data.categorical("b").unwrap(), &[1, 0, 1]);
    }

    #[test]
    fn parse_errors_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x\n1\n2\nabc\n").unwrap();
        let spec = CsvTableSpec::new(&path, vec![ColumnDecl::new("x", KindName::Continuous)]);
        match read_dataset(&spec) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let stage = ColumnDecl::new("x", KindName::Ordinal).with_levels(["1", "2"]);
        assert!(matches!(
            read_dataset(&CsvTableSpec::new(&path, vec![stage])),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn unknown_kind_is_rejected_in_config() {
        let err = toml::from_str::<ColumnDecl>("name = \"x\"\nkind = \"text\"").unwrap_err();
        assert!(err.to_string().contains("unknown column kind `text`"), "{err}");
    }
}
