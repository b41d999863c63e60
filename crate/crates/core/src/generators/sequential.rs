//! Sequential parametric synthesis.
//!
//! Columns are synthesised one at a time in topological order of the DAG.
//! Root columns are bootstrapped from the training data; every other column
//! is drawn from a conditional model given its (already synthesised)
//! parents, chosen by column kind:
//!
//! | kind       | model                                   |
//! |------------|-----------------------------------------|
//! | continuous | OLS fit + resampled residual            |
//! | binary     | logistic regression                     |
//! | ordinal    | proportional-odds cumulative logit      |
//! | nominal    | multinomial logit                       |
//!
//! Parameters are point estimates (simple synthesis). A conditional model
//! that cannot be fitted is replaced by the column's marginal and a warning
//! is recorded.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::draw_index;
use crate::error::{Error, Result};
use crate::estimators::design::Design;
use crate::estimators::likelihood::{
    maximise, probabilities_for_row, sigmoid, CumulativeLogit, Logistic, Multinomial,
};
use crate::estimators::MAX_COEFFICIENT;
use crate::tabular::{ColumnData, ColumnKind, Dag, Dataset, TableSchema};

/// Residual draws allowed before an out-of-range continuous value is clamped.
const MAX_REDRAWS: usize = 100;

/// One covariate of a conditional model.
#[derive(Debug, Clone, Copy)]
enum Part {
    Continuous(usize),
    Dummy(usize, u32),
}

/// Parent encoding: optional intercept, continuous parents as-is, categorical
/// parents dummy-coded against the first level (levels absent from the
/// training data are dropped, as in the estimators).
#[derive(Debug, Clone)]
struct Encoder {
    intercept: bool,
    parts: Vec<Part>,
}

impl Encoder {
    fn build(data: &Dataset, parents: &[usize], intercept: bool) -> Encoder {
        let mut parts = Vec::new();
        for &p in parents {
            match data.column(p) {
                ColumnData::Continuous(_) => parts.push(Part::Continuous(p)),
                ColumnData::Categorical(v) => {
                    let levels = data.schema().column(p).kind.n_levels().unwrap_or(0) as u32;
                    for level in 1..levels {
                        if v.contains(&level) {
                            parts.push(Part::Dummy(p, level));
                        }
                    }
                }
            }
        }
        Encoder { intercept, parts }
    }

    fn width(&self) -> usize {
        self.parts.len() + usize::from(self.intercept)
    }

    fn value(part: Part, columns: &[Option<ColumnData>], row: usize) -> f64 {
        match part {
            Part::Continuous(c) => match &columns[c] {
                Some(ColumnData::Continuous(v)) => v[row],
                _ => unreachable!("parents are synthesised before children"),
            },
            Part::Dummy(c, level) => match &columns[c] {
                Some(ColumnData::Categorical(v)) => f64::from(u8::from(v[row] == level)),
                _ => unreachable!("parents are synthesised before children"),
            },
        }
    }

    fn row(&self, columns: &[Option<ColumnData>], row: usize, out: &mut Vec<f64>) {
        out.clear();
        if self.intercept {
            out.push(1.0);
        }
        out.extend(self.parts.iter().map(|&p| Self::value(p, columns, row)));
    }

    fn design(&self, data: &Dataset) -> Result<Design> {
        let columns: Vec<Option<ColumnData>> = data.columns().iter().cloned().map(Some).collect();
        let rows = data.n_rows();
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(self.width());
        if self.intercept {
            cols.push(vec![1.0; rows]);
        }
        for &part in &self.parts {
            cols.push((0..rows).map(|i| Self::value(part, &columns, i)).collect());
        }
        let terms = (0..cols.len()).map(|j| format!("x{j}")).collect();
        if cols.is_empty() {
            return Design::from_columns(&[], Vec::new());
        }
        Design::from_columns(&cols, terms)
    }
}

#[derive(Debug, Clone)]
enum NodeModel {
    /// Bootstrap of the training column (roots and marginal fallbacks).
    Resample(ColumnData),
    Linear {
        encoder: Encoder,
        beta: Vec<f64>,
        residuals: Vec<f64>,
        lo: f64,
        hi: f64,
    },
    Logistic {
        encoder: Encoder,
        beta: Vec<f64>,
    },
    CumulativeLogit {
        encoder: Encoder,
        alphas: Vec<f64>,
        beta: Vec<f64>,
        /// Declared level index of each modelled (observed) category.
        levels: Vec<u32>,
    },
    Multinomial {
        encoder: Encoder,
        theta: Vec<f64>,
        levels: Vec<u32>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct SequentialModel {
    order: Vec<usize>,
    nodes: Vec<NodeModel>,
}

fn check_coefficients(theta: &[f64]) -> Result<()> {
    if theta.iter().all(|t| t.is_finite() && t.abs() <= MAX_COEFFICIENT) {
        Ok(())
    } else {
        Err(Error::DegenerateFit(format!(
            "coefficient magnitude above {MAX_COEFFICIENT} (separation)"
        )))
    }
}

/// Observed levels (ascending) and each row's index among them.
fn observed_levels(values: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let mut levels: Vec<u32> = values.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let y = values
        .iter()
        .map(|v| levels.binary_search(v).expect("level is observed"))
        .collect();
    (levels, y)
}

fn fit_linear(data: &Dataset, node: usize, parents: &[usize]) -> Result<NodeModel> {
    let ColumnData::Continuous(y) = data.column(node) else {
        unreachable!("linear models are fitted to continuous columns")
    };
    let encoder = Encoder::build(data, parents, true);
    let design = encoder.design(data)?;
    let (rows, cols) = (design.rows, design.cols);
    if rows <= cols {
        return Err(Error::DegenerateFit(format!(
            "{rows} rows for {cols} regression coefficients"
        )));
    }
    let x = DMatrix::from_row_slice(rows, cols, &design.values);
    let xt = x.transpose();
    let beta = (&xt * &x)
        .cholesky()
        .ok_or_else(|| Error::DegenerateFit("collinear parents".into()))?
        .solve(&(&xt * DVector::from_column_slice(y)));
    let fitted = &x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(NodeModel::Linear {
        encoder,
        beta: beta.iter().copied().collect(),
        residuals,
        lo,
        hi,
    })
}

fn fit_categorical(data: &Dataset, node: usize, parents: &[usize]) -> Result<NodeModel> {
    let ColumnData::Categorical(values) = data.column(node) else {
        unreachable!("categorical models are fitted to categorical columns")
    };
    let (levels, y) = observed_levels(values);
    if levels.len() < 2 {
        return Err(Error::DegenerateFit("fewer than two observed levels".into()));
    }
    let rows = data.n_rows();
    match &data.schema().column(node).kind {
        ColumnKind::Binary => {
            let encoder = Encoder::build(data, parents, true);
            let design = encoder.design(data)?;
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let positives: f64 = yf.iter().sum();
            let mut init = vec![0.0; design.cols];
            init[0] = (positives / (rows as f64 - positives)).ln();
            let fit = maximise(&Logistic { design: &design, y: &yf }, init)?;
            check_coefficients(&fit.theta)?;
            Ok(NodeModel::Logistic {
                encoder,
                beta: fit.theta,
            })
        }
        ColumnKind::Ordinal(_) => {
            let encoder = Encoder::build(data, parents, false);
            let design = encoder.design(data)?;
            let categories = levels.len();
            let mut counts = vec![0usize; categories];
            for &v in &y {
                counts[v] += 1;
            }
            let mut init = Vec::with_capacity(categories - 1 + design.cols);
            let mut cumulative = 0;
            for &c in &counts[..categories - 1] {
                cumulative += c;
                let q = cumulative as f64 / rows as f64;
                init.push((q / (1.0 - q)).ln());
            }
            init.extend(std::iter::repeat_n(0.0, design.cols));
            let model = CumulativeLogit {
                design: &design,
                y: &y,
                categories,
            };
            let fit = maximise(&model, init)?;
            check_coefficients(&fit.theta[categories - 1..])?;
            Ok(NodeModel::CumulativeLogit {
                encoder,
                alphas: fit.theta[..categories - 1].to_vec(),
                beta: fit.theta[categories - 1..].to_vec(),
                levels,
            })
        }
        ColumnKind::Nominal(_) => {
            let encoder = Encoder::build(data, parents, true);
            let design = encoder.design(data)?;
            let categories = levels.len();
            let model = Multinomial {
                design: &design,
                y: &y,
                categories,
            };
            let fit = maximise(&model, vec![0.0; (categories - 1) * design.cols])?;
            check_coefficients(&fit.theta)?;
            Ok(NodeModel::Multinomial {
                encoder,
                theta: fit.theta,
                levels,
            })
        }
        ColumnKind::Continuous => unreachable!("continuous handled by fit_linear"),
    }
}

impl SequentialModel {
    pub(crate) fn fit(data: &Dataset, dag: &Dag, warnings: &mut Vec<String>) -> Result<Self> {
        let order = dag.topological_indices()?;
        let mut nodes = Vec::with_capacity(data.n_cols());
        for node in 0..data.n_cols() {
            let parents = dag.parents(node);
            let marginal = NodeModel::Resample(data.column(node).clone());
            if parents.is_empty() {
                nodes.push(marginal);
                continue;
            }
            let fitted = if data.schema().column(node).kind.is_continuous() {
                fit_linear(data, node, parents)
            } else {
                fit_categorical(data, node, parents)
            };
            match fitted {
                Ok(model) => nodes.push(model),
                Err(e) => {
                    warnings.push(format!(
                        "column `{}`: conditional model failed ({e}); using its marginal",
                        data.schema().column(node).name
                    ));
                    nodes.push(marginal);
                }
            }
        }
        Ok(SequentialModel { order, nodes })
    }

    pub(crate) fn sample(
        &self,
        schema: &Arc<TableSchema>,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Dataset> {
        let mut columns: Vec<Option<ColumnData>> = vec![None; self.nodes.len()];
        let mut x = Vec::new();
        for &node in &self.order {
            let column = match &self.nodes[node] {
                NodeModel::Resample(source) => {
                    let rows: Vec<usize> =
                        (0..m).map(|_| rng.random_range(0..source.len())).collect();
                    source.select(&rows)
                }
                NodeModel::Linear {
                    encoder,
                    beta,
                    residuals,
                    lo,
                    hi,
                } => ColumnData::Continuous(
                    (0..m)
                        .map(|i| {
                            encoder.row(&columns, i, &mut x);
                            let mean: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                            let mut value = f64::NAN;
                            for _ in 0..MAX_REDRAWS {
                                value = mean + residuals[rng.random_range(0..residuals.len())];
                                if value >= *lo && value <= *hi {
                                    return value;
                                }
                            }
                            value.clamp(*lo, *hi)
                        })
                        .collect(),
                ),
                NodeModel::Logistic { encoder, beta } => ColumnData::Categorical(
                    (0..m)
                        .map(|i| {
                            encoder.row(&columns, i, &mut x);
                            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                            u32::from(rng.random::<f64>() < sigmoid(eta))
                        })
                        .collect(),
                ),
                NodeModel::CumulativeLogit {
                    encoder,
                    alphas,
                    beta,
                    levels,
                } => {
                    let mut probs = vec![0.0; levels.len()];
                    ColumnData::Categorical(
                        (0..m)
                            .map(|i| {
                                encoder.row(&columns, i, &mut x);
                                let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                                let mut below = 0.0;
                                for (k, alpha) in alphas.iter().enumerate() {
                                    let cdf = sigmoid(alpha + eta);
                                    probs[k] = (cdf - below).max(0.0);
                                    below = cdf;
                                }
                                probs[levels.len() - 1] = 1.0 - below;
                                levels[draw_index(&probs, rng.random())]
                            })
                            .collect(),
                    )
                }
                NodeModel::Multinomial {
                    encoder,
                    theta,
                    levels,
                } => ColumnData::Categorical(
                    (0..m)
                        .map(|i| {
                            encoder.row(&columns, i, &mut x);
                            let probs = probabilities_for_row(&x, theta, levels.len());
                            levels[draw_index(&probs, rng.random())]
                        })
                        .collect(),
                ),
            };
            columns[node] = Some(column);
        }
        Dataset::new(
            Arc::clone(schema),
            columns
                .into_iter()
                .map(|c| c.expect("every node is synthesised"))
                .collect(),
        )
    }
}
