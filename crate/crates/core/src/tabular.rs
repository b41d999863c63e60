//! Typed rectangular datasets and column dependency graphs.
//!
//! Storage is columnar: continuous columns hold `f64`, categorical columns hold
//! `u32` indices into the level list declared by the schema. A [`Dataset`] is
//! validated once at construction and is immutable afterwards.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BINARY_LEVELS: [&str; 2] = ["false", "true"];

/// Statistical type of a column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "levels", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    /// Two levels, `false` (index 0) and `true` (index 1).
    Binary,
    Ordinal(Vec<String>),
    Nominal(Vec<String>),
}

impl ColumnKind {
    pub fn ordinal<S: Into<String>>(levels: impl IntoIterator<Item = S>) -> Result<Self> {
        let kind = ColumnKind::Ordinal(levels.into_iter().map(Into::into).collect());
        kind.validate()?;
        Ok(kind)
    }

    pub fn nominal<S: Into<String>>(levels: impl IntoIterator<Item = S>) -> Result<Self> {
        let kind = ColumnKind::Nominal(levels.into_iter().map(Into::into).collect());
        kind.validate()?;
        Ok(kind)
    }

    fn validate(&self) -> Result<()> {
        if let ColumnKind::Ordinal(levels) | ColumnKind::Nominal(levels) = self {
            if levels.is_empty() {
                return Err(Error::InvalidSchema("level list is empty".into()));
            }
            let mut seen = HashSet::new();
            for level in levels {
                if !seen.insert(level.as_str()) {
                    return Err(Error::InvalidSchema(format!("duplicate level `{level}`")));
                }
            }
        }
        Ok(())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, ColumnKind::Continuous)
    }

    pub fn is_categorical(&self) -> bool {
        !self.is_continuous()
    }

    /// Number of declared levels, `None` for continuous columns.
    pub fn n_levels(&self) -> Option<usize> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Binary => Some(2),
            ColumnKind::Ordinal(l) | ColumnKind::Nominal(l) => Some(l.len()),
        }
    }

    pub fn level_label(&self, index: u32) -> Option<&str> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Binary => BINARY_LEVELS.get(index as usize).copied(),
            ColumnKind::Ordinal(l) | ColumnKind::Nominal(l) => {
                l.get(index as usize).map(String::as_str)
            }
        }
    }

    pub fn level_index(&self, label: &str) -> Option<u32> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Binary => BINARY_LEVELS
                .iter()
                .position(|l| *l == label)
                .map(|i| i as u32),
            ColumnKind::Ordinal(l) | ColumnKind::Nominal(l) => {
                l.iter().position(|x| x == label).map(|i| i as u32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered list of named, typed columns.
///
/// Column order is significant: it is the tie-breaker for topological orders
/// and the fallback synthesis order when no dependency graph is supplied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct TableSchema {
    columns: Vec<Column>,
}

impl TableSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate column name `{}`",
                    c.name
                )));
            }
            c.kind.validate()?;
        }
        Ok(TableSchema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl TryFrom<Vec<Column>> for TableSchema {
    type Error = Error;
    fn try_from(columns: Vec<Column>) -> Result<Self> {
        TableSchema::new(columns)
    }
}

impl From<TableSchema> for Vec<Column> {
    fn from(schema: TableSchema) -> Self {
        schema.columns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, row: usize) -> Cell {
        match self {
            ColumnData::Continuous(v) => Cell::Real(v[row]),
            ColumnData::Categorical(v) => Cell::Level(v[row]),
        }
    }

    pub(crate) fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// A single cell value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Real(f64),
    Level(u32),
}

/// Validated, immutable rectangular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<TableSchema>,
    columns: Vec<ColumnData>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(schema: Arc<TableSchema>, columns: Vec<ColumnData>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::InvalidDataset(format!(
                "schema has {} columns, data has {}",
                schema.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (col, data) in schema.columns().iter().zip(&columns) {
            if data.len() != n_rows {
                return Err(Error::InvalidDataset(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    col.name,
                    data.len()
                )));
            }
            match (&col.kind, data) {
                (ColumnKind::Continuous, ColumnData::Continuous(v)) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::InvalidDataset(format!(
                            "column `{}` row {row}: non-finite value",
                            col.name
                        )));
                    }
                }
                (kind, ColumnData::Categorical(v)) if kind.is_categorical() => {
                    let levels = kind.n_levels().unwrap_or(0) as u32;
                    if let Some(row) = v.iter().position(|&x| x >= levels) {
                        return Err(Error::InvalidDataset(format!(
                            "column `{}` row {row}: level index {} out of range",
                            col.name, v[row]
                        )));
                    }
                }
                _ => {
                    return Err(Error::InvalidDataset(format!(
                        "column `{}` storage does not match its kind",
                        col.name
                    )))
                }
            }
        }
        Ok(Dataset {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn from_rows(schema: Arc<TableSchema>, rows: &[Vec<Cell>]) -> Result<Self> {
        let mut columns: Vec<ColumnData> = schema
            .columns()
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => ColumnData::Continuous(Vec::with_capacity(rows.len())),
                _ => ColumnData::Categorical(Vec::with_capacity(rows.len())),
            })
            .collect();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::InvalidDataset(format!(
                    "row {r} has {} cells, expected {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (data, cell) in columns.iter_mut().zip(row) {
                match (data, *cell) {
                    (ColumnData::Continuous(v), Cell::Real(x)) => v.push(x),
                    (ColumnData::Categorical(v), Cell::Level(l)) => v.push(l),
                    _ => {
                        return Err(Error::InvalidDataset(format!(
                            "row {r}: cell type does not match column kind"
                        )))
                    }
                }
            }
        }
        Dataset::new(schema, columns)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<TableSchema> {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, index: usize) -> &ColumnData {
        &self.columns[index]
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column_by_name(&self, name: &str) -> Result<&ColumnData> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    /// Values of a continuous column.
    pub fn continuous(&self, name: &str) -> Result<&[f64]> {
        match self.column_by_name(name)? {
            ColumnData::Continuous(v) => Ok(v),
            ColumnData::Categorical(_) => Err(Error::SchemaMismatch(format!(
                "column `{name}` is not continuous"
            ))),
        }
    }

    /// Level indices of a categorical column.
    pub fn categorical(&self, name: &str) -> Result<&[u32]> {
        match self.column_by_name(name)? {
            ColumnData::Categorical(v) => Ok(v),
            ColumnData::Continuous(_) => Err(Error::SchemaMismatch(format!(
                "column `{name}` is not categorical"
            ))),
        }
    }

    pub fn row(&self, index: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c.cell(index)).collect()
    }

    /// New dataset holding the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// New dataset restricted to the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Dataset> {
        let indices = names
            .iter()
            .map(|n| self.schema.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        let schema = TableSchema::new(
            indices
                .iter()
                .map(|&i| self.schema.column(i).clone())
                .collect(),
        )?;
        Ok(Dataset {
            schema: Arc::new(schema),
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            n_rows: self.n_rows,
        })
    }

    fn row_key(&self, index: usize) -> Vec<u64> {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnData::Continuous(v) => v[index].to_bits(),
                ColumnData::Categorical(v) => u64::from(v[index]),
            })
            .collect()
    }
}

/// Number of synthetic rows that are bit-exact copies of some original row.
///
/// Duplicates inside `synthetic` are each counted, so the result lies in
/// `0..=synthetic.n_rows()`.
pub fn exact_copy_count(original: &Dataset, synthetic: &Dataset) -> Result<usize> {
    if original.schema() != synthetic.schema() {
        return Err(Error::SchemaMismatch(
            "original and synthetic schemas differ".into(),
        ));
    }
    let seen: HashSet<Vec<u64>> = (0..original.n_rows()).map(|i| original.row_key(i)).collect();
    Ok((0..synthetic.n_rows())
        .filter(|&i| seen.contains(&synthetic.row_key(i)))
        .count())
}

/// Directed dependency graph over the columns of a schema.
///
/// Acyclicity is checked by [`Dag::topological_order`]; construction only
/// checks that every edge names known columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<String>,
    parents: Vec<Vec<usize>>,
}

impl Dag {
    /// Graph with no edges.
    pub fn empty(schema: &TableSchema) -> Self {
        Dag {
            nodes: schema.names().map(str::to_string).collect(),
            parents: vec![Vec::new(); schema.len()],
        }
    }

    pub fn new<S: AsRef<str>>(schema: &TableSchema, edges: &[(S, S)]) -> Result<Self> {
        let mut dag = Dag::empty(schema);
        for (parent, child) in edges {
            let p = schema.index_of(parent.as_ref())?;
            let c = schema.index_of(child.as_ref())?;
            dag.add_edge(p, c)?;
        }
        Ok(dag)
    }

    /// Every column depends on all columns before it in schema order.
    pub fn complete_in_schema_order(schema: &TableSchema) -> Self {
        Dag {
            nodes: schema.names().map(str::to_string).collect(),
            parents: (0..schema.len()).map(|i| (0..i).collect()).collect(),
        }
    }

    pub(crate) fn add_edge(&mut self, parent: usize, child: usize) -> Result<()> {
        if parent == child {
            return Err(Error::Cycle(self.nodes[parent].clone()));
        }
        if !self.parents[child].contains(&parent) {
            self.parents[child].push(parent);
            self.parents[child].sort_unstable();
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// `(parent, child)` index pairs, ordered by child then parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect()
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(p, c)| (self.nodes[p].clone(), self.nodes[c].clone()))
            .collect()
    }

    /// Node indices in dependency order.
    ///
    /// Nodes are emitted in layers: each layer holds every node whose parents
    /// were all emitted in earlier layers, sorted by schema position.
    pub fn topological_indices(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let layer: Vec<usize> = (0..n)
                .filter(|&v| !placed[v] && self.parents[v].iter().all(|&p| placed[p]))
                .collect();
            if layer.is_empty() {
                let stuck = (0..n).find(|&v| !placed[v]).unwrap_or(0);
                return Err(Error::Cycle(self.nodes[stuck].clone()));
            }
            for &v in &layer {
                placed[v] = true;
            }
            order.extend(layer);
        }
        Ok(order)
    }

    pub fn topological_order(&self) -> Result<Vec<String>> {
        Ok(self
            .topological_indices()?
            .into_iter()
            .map(|i| self.nodes[i].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure2_schema() -> TableSchema {
        TableSchema::new(vec![
            Column::new("age", ColumnKind::Continuous),
            Column::new("stage", ColumnKind::ordinal(["I", "II", "III", "IV"]).unwrap()),
            Column::new("biomarker", ColumnKind::Continuous),
            Column::new("therapy", ColumnKind::Binary),
            Column::new("death", ColumnKind::Binary),
        ])
        .unwrap()
    }

    fn abc() -> TableSchema {
        TableSchema::new(vec![
            Column::new("a", ColumnKind::Continuous),
            Column::new("b", ColumnKind::Continuous),
            Column::new("c", ColumnKind::Binary),
        ])
        .unwrap()
    }

    #[test]
    fn figure2_order() {
        let schema = figure2_schema();
        let dag = Dag::new(
            &schema,
            &[
                ("age", "stage"),
                ("age", "death"),
                ("stage", "death"),
                ("stage", "biomarker"),
                ("therapy", "death"),
            ],
        )
        .unwrap();
        assert_eq!(
            dag.topological_order().unwrap(),
            ["age", "therapy", "stage", "biomarker", "death"]
        );
    }

    #[test]
    fn empty_dag_keeps_schema_order() {
        let dag = Dag::empty(&abc());
        assert_eq!(dag.topological_order().unwrap(), ["a", "b", "c"]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let dag = Dag::new(&abc(), &[("a", "b"), ("b", "a")]).unwrap();
        assert!(matches!(dag.topological_order(), Err(Error::Cycle(_))));
    }

    #[test]
    fn self_loop_is_rejected() {
        assert!(matches!(
            Dag::new(&abc(), &[("a", "a")]),
            Err(Error::Cycle(_))
        ));
    }

    #[test]
    fn unknown_edge_column() {
        assert!(matches!(
            Dag::new(&abc(), &[("a", "zz")]),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn schema_rejects_duplicates() {
        assert!(TableSchema::new(vec![
            Column::new("a", ColumnKind::Continuous),
            Column::new("a", ColumnKind::Binary),
        ])
        .is_err());
        assert!(ColumnKind::ordinal(["x", "x"]).is_err());
        assert!(ColumnKind::nominal(Vec::<String>::new()).is_err());
    }

    #[test]
    fn dataset_validation() {
        let schema = Arc::new(abc());
        let bad_level = Dataset::new(
            schema.clone(),
            vec![
                ColumnData::Continuous(vec![1.0]),
                ColumnData::Continuous(vec![2.0]),
                ColumnData::Categorical(vec![2]),
            ],
        );
        assert!(bad_level.is_err());
        let ragged = Dataset::new(
            schema.clone(),
            vec![
                ColumnData::Continuous(vec![1.0, 2.0]),
                ColumnData::Continuous(vec![2.0]),
                ColumnData::Categorical(vec![0]),
            ],
        );
        assert!(ragged.is_err());
        let nan = Dataset::new(
            schema,
            vec![
                ColumnData::Continuous(vec![f64::NAN]),
                ColumnData::Continuous(vec![2.0]),
                ColumnData::Categorical(vec![0]),
            ],
        );
        assert!(nan.is_err());
    }

    fn rows_dataset(values: &[f64]) -> Dataset {
        let schema = Arc::new(abc());
        let rows: Vec<Vec<Cell>> = values
            .iter()
            .map(|&v| vec![Cell::Real(v), Cell::Real(-v), Cell::Level(0)])
            .collect();
        Dataset::from_rows(schema, &rows).unwrap()
    }

    #[test]
    fn copy_count_self_and_disjoint() {
        let d = rows_dataset(&[1.0, 2.0, 3.0]);
        assert_eq!(exact_copy_count(&d, &d).unwrap(), 3);
        let other = rows_dataset(&[1.5, 2.5]);
        assert_eq!(exact_copy_count(&d, &other).unwrap(), 0);
    }

    #[test]
    fn one_planted_copy_in_fifty() {
        let original = rows_dataset(&(0..50).map(f64::from).collect::<Vec<_>>());
        let mut synth: Vec<f64> = (0..50).map(|i| f64::from(i) + 0.5).collect();
        synth[17] = 3.0;
        let synthetic = rows_dataset(&synth);
        let copies = exact_copy_count(&original, &synthetic).unwrap();
        assert_eq!(copies, 1);
        assert_eq!(100.0 * copies as f64 / 50.0, 2.0);
    }

    #[test]
    fn copy_count_schema_mismatch() {
        let d = rows_dataset(&[1.0]);
        let other_schema = Arc::new(figure2_schema());
        let e = Dataset::from_rows(other_schema, &[]).unwrap();
        assert!(matches!(
            exact_copy_count(&d, &e),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
