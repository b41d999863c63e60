//! Point estimators with naive (model-based) standard errors.
//!
//! Every estimator returns [`EstimateRecord`]s. A record is *estimable* when
//! the fit succeeded and its standard error lies strictly inside
//! `(1e-10, 1e2)`; anything else is kept but flagged, so aggregates can count
//! it without using it.

mod battery;
pub mod design;
pub mod likelihood;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use battery::{estimate_battery, EstimatorDef, EstimatorId, EstimatorSpec};
use design::Design;
use likelihood::{maximise, CumulativeLogit, GammaInverse, Logistic};

use crate::error::{Error, Result};
use crate::tabular::{ColumnData, Dataset};

pub const MIN_STANDARD_ERROR: f64 = 1e-10;
pub const MAX_STANDARD_ERROR: f64 = 1e2;
/// Regression coefficients beyond this magnitude indicate separation.
pub const MAX_COEFFICIENT: f64 = 50.0;

/// Which reference distribution an estimate's tests and intervals use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorFamily {
    Mean,
    Proportion,
    Regression,
}

impl fmt::Display for EstimatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorFamily::Mean => "mean",
            EstimatorFamily::Proportion => "proportion",
            EstimatorFamily::Regression => "regression",
        })
    }
}

/// One estimator applied to one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: String,
    pub family: EstimatorFamily,
    #[serde(with = "crate::io::float_or_null")]
    pub estimate: f64,
    #[serde(with = "crate::io::float_or_null")]
    pub naive_se: f64,
    /// Naive SE scaled for generator uncertainty; `NaN` for original data.
    #[serde(with = "crate::io::float_or_null")]
    pub corrected_se: f64,
    /// Size of the original (training) dataset.
    pub n: usize,
    /// Size of the dataset the estimate was computed on.
    pub m: usize,
    pub estimable: bool,
}

impl EstimateRecord {
    fn new(estimator: impl Into<String>, family: EstimatorFamily, m: usize) -> Self {
        EstimateRecord {
            estimator: estimator.into(),
            family,
            estimate: f64::NAN,
            naive_se: f64::NAN,
            corrected_se: f64::NAN,
            n: m,
            m,
            estimable: false,
        }
    }

    fn with_fit(mut self, estimate: f64, se: f64) -> Self {
        self.estimate = estimate;
        self.naive_se = se;
        self.estimable = estimate.is_finite()
            && se.is_finite()
            && se > MIN_STANDARD_ERROR
            && se < MAX_STANDARD_ERROR;
        self
    }

    pub fn renamed(mut self, estimator: impl Into<String>) -> Self {
        self.estimator = estimator.into();
        self
    }
}

fn categorical_levels<'a>(data: &'a Dataset, column: &str) -> Result<(usize, &'a [u32])> {
    let idx = data.schema().index_of(column)?;
    match data.column(idx) {
        ColumnData::Categorical(v) => Ok((
            data.schema().column(idx).kind.n_levels().unwrap_or(0),
            v.as_slice(),
        )),
        ColumnData::Continuous(_) => Err(Error::SchemaMismatch(format!(
            "column `{column}` is not categorical"
        ))),
    }
}

/// Sample mean with SE `s / sqrt(m)` (`m - 1` denominator for `s`).
pub fn estimate_mean(data: &Dataset, column: &str) -> Result<EstimateRecord> {
    let values = data.continuous(column)?;
    let m = values.len();
    let rec = EstimateRecord::new(format!("mean({column})"), EstimatorFamily::Mean, m);
    if m < 2 {
        return Ok(rec);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    let sd = (ss / (m - 1) as f64).sqrt();
    Ok(rec.with_fit(mean, sd / (m as f64).sqrt()))
}

/// Fraction of rows at `level`, SE `sqrt(p(1-p)/m)`.
pub fn estimate_proportion(data: &Dataset, column: &str, level: &str) -> Result<EstimateRecord> {
    let idx = data.schema().index_of(column)?;
    let kind = &data.schema().column(idx).kind;
    let target = kind.level_index(level).ok_or_else(|| {
        Error::SchemaMismatch(format!("column `{column}` has no level `{level}`"))
    })?;
    let (_, values) = categorical_levels(data, column)?;
    let m = values.len();
    let rec = EstimateRecord::new(
        format!("prop({column}={level})"),
        EstimatorFamily::Proportion,
        m,
    );
    if m == 0 {
        return Ok(rec);
    }
    let hits = values.iter().filter(|&&v| v == target).count();
    let p = hits as f64 / m as f64;
    Ok(rec.with_fit(p, (p * (1.0 - p) / m as f64).sqrt()))
}

fn non_estimable_terms(design: &Design, skip_intercept: bool, m: usize) -> Vec<EstimateRecord> {
    design
        .terms
        .iter()
        .skip(usize::from(skip_intercept))
        .chain(&design.dropped)
        .map(|t| EstimateRecord::new(t.clone(), EstimatorFamily::Regression, m))
        .collect()
}

/// Main-effects logistic regression of a two-level outcome.
///
/// `success` is the outcome level coded as 1; `None` means the second
/// declared level (`true` for binary columns). Returns one record per
/// non-intercept term, labelled `column` or `column=level`.
pub fn fit_logistic_with(
    data: &Dataset,
    outcome: &str,
    success: Option<&str>,
    covariates: &[&str],
) -> Result<Vec<EstimateRecord>> {
    let idx = data.schema().index_of(outcome)?;
    let kind = &data.schema().column(idx).kind;
    let success_level = match success {
        Some(label) => kind.level_index(label).ok_or_else(|| {
            Error::SchemaMismatch(format!("column `{outcome}` has no level `{label}`"))
        })?,
        None if kind.n_levels() == Some(2) => 1,
        None => {
            return Err(Error::SchemaMismatch(format!(
                "logistic outcome `{outcome}` needs two levels or an explicit success level"
            )))
        }
    };
    let (_, values) = categorical_levels(data, outcome)?;
    let y: Vec<f64> = values
        .iter()
        .map(|&v| f64::from(u8::from(v == success_level)))
        .collect();
    let design = Design::build(data, covariates, true)?;
    let m = data.n_rows();
    let positives = y.iter().sum::<f64>();
    if m <= design.cols || positives == 0.0 || positives == m as f64 {
        return Ok(non_estimable_terms(&design, true, m));
    }
    let mut init = vec![0.0; design.cols];
    init[0] = (positives / (m as f64 - positives)).ln();
    let fit = match maximise(&Logistic { design: &design, y: &y }, init) {
        Ok(fit) => fit,
        Err(_) => return Ok(non_estimable_terms(&design, true, m)),
    };
    let mut records: Vec<EstimateRecord> = design
        .terms
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, term)| {
            let beta = fit.theta[j];
            let rec = EstimateRecord::new(term.clone(), EstimatorFamily::Regression, m)
                .with_fit(beta, fit.covariance[(j, j)].sqrt());
            if beta.abs() > MAX_COEFFICIENT {
                EstimateRecord {
                    estimable: false,
                    ..rec
                }
            } else {
                rec
            }
        })
        .collect();
    records.extend(
        design
            .dropped
            .iter()
            .map(|t| EstimateRecord::new(t.clone(), EstimatorFamily::Regression, m)),
    );
    Ok(records)
}

/// [`fit_logistic_with`] using the second declared outcome level as success.
pub fn fit_logistic(
    data: &Dataset,
    outcome: &str,
    covariates: &[&str],
) -> Result<Vec<EstimateRecord>> {
    fit_logistic_with(data, outcome, None, covariates)
}

/// Gamma GLM with inverse link; SEs scaled by the Pearson dispersion.
pub fn fit_gamma_glm(
    data: &Dataset,
    outcome: &str,
    covariates: &[&str],
) -> Result<Vec<EstimateRecord>> {
    let y = data.continuous(outcome)?;
    let design = Design::build(data, covariates, true)?;
    let m = data.n_rows();
    if m <= design.cols || y.iter().any(|&v| v <= 0.0) {
        return Ok(non_estimable_terms(&design, true, m));
    }
    let mut init = vec![0.0; design.cols];
    init[0] = m as f64 / y.iter().sum::<f64>();
    let model = GammaInverse { design: &design, y };
    let fit = match maximise(&model, init) {
        Ok(fit) => fit,
        Err(_) => return Ok(non_estimable_terms(&design, true, m)),
    };
    let dispersion = model.pearson_dispersion(&fit.theta);
    let mut records: Vec<EstimateRecord> = design
        .terms
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, term)| {
            EstimateRecord::new(term.clone(), EstimatorFamily::Regression, m)
                .with_fit(fit.theta[j], (dispersion * fit.covariance[(j, j)]).sqrt())
        })
        .collect();
    records.extend(
        design
            .dropped
            .iter()
            .map(|t| EstimateRecord::new(t.clone(), EstimatorFamily::Regression, m)),
    );
    Ok(records)
}

/// Proportional-odds model `logit P(y <= k) = alpha_k + x'beta`.
///
/// Only observed outcome levels are modelled (empty levels are collapsed);
/// fewer than two observed levels make every coefficient non-estimable.
pub fn fit_cumulative_logit(
    data: &Dataset,
    outcome: &str,
    covariates: &[&str],
) -> Result<Vec<EstimateRecord>> {
    let (levels, values) = categorical_levels(data, outcome)?;
    let design = Design::build(data, covariates, false)?;
    let m = data.n_rows();
    let mut remap = vec![usize::MAX; levels];
    let mut counts = vec![0usize; levels];
    for &v in values {
        counts[v as usize] += 1;
    }
    let mut categories = 0;
    for (level, &c) in counts.iter().enumerate() {
        if c > 0 {
            remap[level] = categories;
            categories += 1;
        }
    }
    if categories < 2 || m < design.cols + categories {
        return Ok(non_estimable_terms(&design, false, m));
    }
    let y: Vec<usize> = values.iter().map(|&v| remap[v as usize]).collect();
    let observed: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let mut init = Vec::with_capacity(categories - 1 + design.cols);
    let mut cumulative = 0usize;
    for &c in &observed[..categories - 1] {
        cumulative += c;
        let q = cumulative as f64 / m as f64;
        init.push((q / (1.0 - q)).ln());
    }
    init.extend(std::iter::repeat_n(0.0, design.cols));
    let model = CumulativeLogit {
        design: &design,
        y: &y,
        categories,
    };
    let fit = match maximise(&model, init) {
        Ok(fit) => fit,
        Err(_) => return Ok(non_estimable_terms(&design, false, m)),
    };
    let offset = categories - 1;
    let mut records: Vec<EstimateRecord> = design
        .terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let k = offset + j;
            EstimateRecord::new(term.clone(), EstimatorFamily::Regression, m)
                .with_fit(fit.theta[k], fit.covariance[(k, k)].sqrt())
        })
        .collect();
    records.extend(
        design
            .dropped
            .iter()
            .map(|t| EstimateRecord::new(t.clone(), EstimatorFamily::Regression, m)),
    );
    Ok(records)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::tabular::{Column, ColumnKind, TableSchema};

    fn dataset(cols: Vec<(&str, ColumnKind, ColumnData)>) -> Dataset {
        let schema = TableSchema::new(
            cols.iter()
                .map(|(n, k, _)| Column::new(*n, k.clone()))
                .collect(),
        )
        .unwrap();
        Dataset::new(Arc::new(schema), cols.into_iter().map(|(_, _, d)| d).collect()).unwrap()
    }

    #[test]
    fn mean_of_one_two_three() {
        let d = dataset(vec![(
            "x",
            ColumnKind::Continuous,
            ColumnData::Continuous(vec![1.0, 2.0, 3.0]),
        )]);
        let r = estimate_mean(&d, "x").unwrap();
        assert!(r.estimable);
        assert_eq!(r.estimate, 2.0);
        assert!((r.naive_se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((r.naive_se - 0.5774).abs() < 1e-4);
    }

    #[test]
    fn constant_mean_is_not_estimable() {
        let d = dataset(vec![(
            "x",
            ColumnKind::Continuous,
            ColumnData::Continuous(vec![4.0; 10]),
        )]);
        assert!(!estimate_mean(&d, "x").unwrap().estimable);
    }

    #[test]
    fn proportion_three_of_ten() {
        let mut v = vec![0u32; 10];
        v[..3].fill(1);
        let d = dataset(vec![("t", ColumnKind::Binary, ColumnData::Categorical(v))]);
        let r = estimate_proportion(&d, "t", "true").unwrap();
        assert!(r.estimable);
        assert!((r.estimate - 0.3).abs() < 1e-15);
        assert!((r.naive_se - 0.1449).abs() < 1e-4);
    }

    #[test]
    fn proportion_at_boundary_is_not_estimable() {
        let d = dataset(vec![(
            "t",
            ColumnKind::Binary,
            ColumnData::Categorical(vec![1; 8]),
        )]);
        assert!(!estimate_proportion(&d, "t", "true").unwrap().estimable);
        assert!(!estimate_proportion(&d, "t", "false").unwrap().estimable);
        assert!(estimate_proportion(&d, "t", "maybe").is_err());
    }

    #[test]
    fn logistic_all_false_outcome() {
        let d = dataset(vec![
            ("x", ColumnKind::Continuous, ColumnData::Continuous(vec![0.1, 0.5, 0.9, 1.3])),
            ("y", ColumnKind::Binary, ColumnData::Categorical(vec![0; 4])),
        ]);
        let recs = fit_logistic(&d, "y", &["x"]).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].estimable);
    }

    #[test]
    fn logistic_separation_is_flagged() {
        let d = dataset(vec![
            (
                "x",
                ColumnKind::Continuous,
                ColumnData::Continuous(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            ),
            (
                "y",
                ColumnKind::Binary,
                ColumnData::Categorical(vec![0, 0, 0, 1, 1, 1]),
            ),
        ]);
        let recs = fit_logistic(&d, "y", &["x"]).unwrap();
        assert!(!recs[0].estimable);
    }

    #[test]
    fn absent_dummy_level_is_reported_not_estimable() {
        let stage = ColumnKind::ordinal(["I", "II", "III"]).unwrap();
        let d = dataset(vec![
            (
                "s",
                stage,
                ColumnData::Categorical(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]),
            ),
            (
                "y",
                ColumnKind::Continuous,
                ColumnData::Continuous(vec![1.0, 2.0, 1.2, 2.5, 0.9, 1.8, 1.1, 2.2, 0.8, 2.1]),
            ),
        ]);
        let recs = fit_gamma_glm(&d, "y", &["s"]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].estimator, "s=II");
        assert!(recs[0].estimable);
        assert_eq!(recs[1].estimator, "s=III");
        assert!(!recs[1].estimable);
    }

    #[test]
    fn gamma_group_means_are_closed_form() {
        // With a single categorical covariate the MLE reproduces group means.
        let g = ColumnKind::nominal(["a", "b"]).unwrap();
        let y = vec![1.0, 2.0, 3.0, 4.0, 6.0, 8.0];
        let d = dataset(vec![
            ("g", g, ColumnData::Categorical(vec![0, 0, 0, 1, 1, 1])),
            ("y", ColumnKind::Continuous, ColumnData::Continuous(y)),
        ]);
        let recs = fit_gamma_glm(&d, "y", &["g"]).unwrap();
        let expected = 1.0 / 6.0 - 1.0 / 2.0;
        assert!((recs[0].estimate - expected).abs() < 1e-9);
    }

    #[test]
    fn gamma_single_level_covariate() {
        let g = ColumnKind::nominal(["a", "b"]).unwrap();
        let d = dataset(vec![
            ("g", g, ColumnData::Categorical(vec![0; 5])),
            (
                "y",
                ColumnKind::Continuous,
                ColumnData::Continuous(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ),
        ]);
        let recs = fit_gamma_glm(&d, "y", &["g"]).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].estimable);
    }

    #[test]
    fn cumulative_logit_constant_covariate() {
        let stage = ColumnKind::ordinal(["I", "II", "III"]).unwrap();
        let d = dataset(vec![
            ("x", ColumnKind::Continuous, ColumnData::Continuous(vec![2.0; 6])),
            ("s", stage, ColumnData::Categorical(vec![0, 1, 2, 0, 1, 2])),
        ]);
        let recs = fit_cumulative_logit(&d, "s", &["x"]).unwrap();
        assert!(!recs[0].estimable);
    }

    #[test]
    fn cumulative_logit_single_observed_level() {
        let stage = ColumnKind::ordinal(["I", "II", "III"]).unwrap();
        let d = dataset(vec![
            (
                "x",
                ColumnKind::Continuous,
                ColumnData::Continuous(vec![1.0, 2.0, 3.0, 4.0]),
            ),
            ("s", stage, ColumnData::Categorical(vec![1; 4])),
        ]);
        let recs = fit_cumulative_logit(&d, "s", &["x"]).unwrap();
        assert!(!recs[0].estimable);
    }

    #[test]
    fn fits_are_row_permutation_invariant() {
        let x: Vec<f64> = (0..40).map(|i| f64::from(i) * 0.37 % 5.0).collect();
        let y: Vec<u32> = (0..40).map(|i| u32::from((i * 7 + 3) % 5 < 2)).collect();
        let d = dataset(vec![
            ("x", ColumnKind::Continuous, ColumnData::Continuous(x)),
            ("y", ColumnKind::Binary, ColumnData::Categorical(y)),
        ]);
        let perm: Vec<usize> = (0..40).rev().collect();
        let a = fit_logistic(&d, "y", &["x"]).unwrap();
        let b = fit_logistic(&d.select_rows(&perm), "y", &["x"]).unwrap();
        assert!((a[0].estimate - b[0].estimate).abs() < 1e-9);
        assert!((a[0].naive_se - b[0].naive_se).abs() < 1e-9);
    }
}
