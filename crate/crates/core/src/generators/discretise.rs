use rand::Rng;

use crate::tabular::{ColumnData, Dataset};

#[derive(Debug, Clone, PartialEq)]
enum ColumnBins {
    /// Categorical column: codes are level indices.
    Levels(usize),
    /// Continuous column: bin `b` covers `[edges[b], edges[b + 1]]`.
    Edges(Vec<f64>),
}

/// Maps every column to small integer codes: categorical columns by level,
/// continuous columns by equal-frequency bins whose outer edges are the
/// observed minimum and maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretiser {
    columns: Vec<ColumnBins>,
}

impl Discretiser {
    pub fn fit(data: &Dataset, bins: usize) -> Discretiser {
        let columns = data
            .columns()
            .iter()
            .zip(data.schema().columns())
            .map(|(col, meta)| match col {
                ColumnData::Categorical(_) => ColumnBins::Levels(meta.kind.n_levels().unwrap_or(0)),
                ColumnData::Continuous(v) => ColumnBins::Edges(quantile_edges(v, bins)),
            })
            .collect();
        Discretiser { columns }
    }

    /// Number of codes column `col` can take.
    pub fn cardinality(&self, col: usize) -> usize {
        match &self.columns[col] {
            ColumnBins::Levels(k) => *k,
            ColumnBins::Edges(e) => e.len().saturating_sub(1).max(1),
        }
    }

    /// Bin edges of a continuous column (`None` for categorical columns).
    pub fn edges(&self, col: usize) -> Option<&[f64]> {
        match &self.columns[col] {
            ColumnBins::Edges(e) => Some(e),
            ColumnBins::Levels(_) => None,
        }
    }

    fn code_of(&self, col: usize, x: f64) -> u32 {
        match &self.columns[col] {
            ColumnBins::Levels(_) => x as u32,
            ColumnBins::Edges(e) if e.len() <= 2 => 0,
            ColumnBins::Edges(e) => {
                let inner = &e[1..e.len() - 1];
                inner.partition_point(|&edge| edge <= x) as u32
            }
        }
    }

    /// Per-column code vectors for `data` (which must share the fitted schema).
    pub fn encode(&self, data: &Dataset) -> Vec<Vec<u32>> {
        data.columns()
            .iter()
            .enumerate()
            .map(|(j, col)| match col {
                ColumnData::Categorical(v) => v.clone(),
                ColumnData::Continuous(v) => v.iter().map(|&x| self.code_of(j, x)).collect(),
            })
            .collect()
    }

    /// A continuous value drawn uniformly within bin `code` of column `col`.
    pub fn rehydrate<R: Rng + ?Sized>(&self, col: usize, code: u32, rng: &mut R) -> f64 {
        let ColumnBins::Edges(e) = &self.columns[col] else {
            return f64::from(code);
        };
        let b = code as usize;
        let (lo, hi) = (e[b], e[(b + 1).min(e.len() - 1)]);
        let u: f64 = rng.random();
        lo + u * (hi - lo)
    }
}

/// `[min, q_1, ..., q_{bins-1}, max]` with duplicate inner edges removed.
///
/// Inner edge `j` is the order statistic at position `floor(j n / bins)`;
/// values equal to an edge fall in the bin above it, which makes every bin
/// hold `n / bins` rows up to rounding when values are distinct.
fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0, 0.0];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let mut edges = vec![min];
    for j in 1..bins {
        let e = sorted[(j * n / bins).min(n - 1)];
        if e > *edges.last().expect("edges start non-empty") {
            edges.push(e);
        }
    }
    edges.push(max);
    edges
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tabular::{Column, ColumnKind, TableSchema};

    fn continuous(values: Vec<f64>) -> Dataset {
        let schema = TableSchema::new(vec![Column::new("x", ColumnKind::Continuous)]).unwrap();
        Dataset::new(Arc::new(schema), vec![ColumnData::Continuous(values)]).unwrap()
    }

    #[test]
    fn equal_frequency_bins() {
        let d = continuous((0..100).map(f64::from).collect());
        let disc = Discretiser::fit(&d, 10);
        assert_eq!(disc.cardinality(0), 10);
        let codes = &disc.encode(&d)[0];
        for b in 0..10 {
            assert_eq!(codes.iter().filter(|&&c| c == b).count(), 10);
        }
    }

    #[test]
    fn ties_collapse_bins() {
        let d = continuous(vec![1.0; 20]);
        let disc = Discretiser::fit(&d, 4);
        assert_eq!(disc.cardinality(0), 1);
        assert!(disc.encode(&d)[0].iter().all(|&c| c == 0));
    }

    #[test]
    fn rehydration_stays_in_bin() {
        let d = continuous((0..50).map(|i| f64::from(i) * 0.3).collect());
        let disc = Discretiser::fit(&d, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let edges = disc.edges(0).unwrap().to_vec();
        for code in 0..5u32 {
            for _ in 0..20 {
                let x = disc.rehydrate(0, code, &mut rng);
                assert!(x >= edges[code as usize] && x <= edges[code as usize + 1]);
            }
        }
    }
}
