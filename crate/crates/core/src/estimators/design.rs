use crate::error::{Error, Result};
use crate::tabular::{ColumnData, Dataset};

/// Dense row-major design matrix with term labels.
///
/// Continuous covariates enter as-is; categorical covariates are dummy-coded
/// against their first declared level. Dummy columns that are identically
/// zero (level absent from the data) are dropped and listed in `dropped`.
#[derive(Debug, Clone)]
pub struct Design {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub terms: Vec<String>,
    pub dropped: Vec<String>,
}

impl Design {
    pub fn build(data: &Dataset, covariates: &[&str], intercept: bool) -> Result<Design> {
        let schema = data.schema();
        let rows = data.n_rows();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut terms = Vec::new();
        let mut dropped = Vec::new();
        if intercept {
            columns.push(vec![1.0; rows]);
            terms.push("(intercept)".to_string());
        }
        for &name in covariates {
            let idx = schema.index_of(name)?;
            let kind = &schema.column(idx).kind;
            match data.column(idx) {
                ColumnData::Continuous(v) => {
                    columns.push(v.clone());
                    terms.push(name.to_string());
                }
                ColumnData::Categorical(v) => {
                    let levels = kind.n_levels().unwrap_or(0) as u32;
                    for level in 1..levels {
                        let label = format!("{name}={}", kind.level_label(level).unwrap_or("?"));
                        let col: Vec<f64> =
                            v.iter().map(|&x| f64::from(u8::from(x == level))).collect();
                        if col.iter().any(|&x| x != 0.0) {
                            columns.push(col);
                            terms.push(label);
                        } else {
                            dropped.push(label);
                        }
                    }
                }
            }
        }
        let cols = columns.len();
        let mut values = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                values[i * cols + j] = x;
            }
        }
        Ok(Design {
            values,
            rows,
            cols,
            terms,
            dropped,
        })
    }

    /// Design built from explicit columns (used by tests and small fits).
    pub fn from_columns(columns: &[Vec<f64>], terms: Vec<String>) -> Result<Design> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) || terms.len() != columns.len() {
            return Err(Error::InvalidDataset("ragged design columns".into()));
        }
        let cols = columns.len();
        let mut values = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                values[i * cols + j] = x;
            }
        }
        Ok(Design {
            values,
            rows,
            cols,
            terms,
            dropped: Vec::new(),
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }
}
