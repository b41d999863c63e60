//! Corrected standard errors, confidence intervals and one-sample tests.
//!
//! An estimate computed on `m` synthetic rows drawn from a generator fitted
//! to `n` original rows has variance `sigma^2 (1/m + 1/n)` rather than
//! `sigma^2 / m`; the corrected SE scales the naive one by `sqrt(1 + m/n)`.
//! Intervals and tests use the same reference distribution for both SEs —
//! only the SE is swapped.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::estimators::{EstimateRecord, EstimatorFamily};

/// `naive_se * sqrt(1 + m / n)`.
pub fn corrected_se(naive_se: f64, n: usize, m: usize) -> f64 {
    naive_se * (1.0 + m as f64 / n as f64).sqrt()
}

/// Reference distribution of the standardised estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reference {
    StudentT { df: f64 },
    Normal,
}

impl Reference {
    /// Student t with `m - 1` degrees of freedom for means; normal (Wald)
    /// for proportions and regression coefficients.
    pub fn for_record(rec: &EstimateRecord) -> Reference {
        match rec.family {
            EstimatorFamily::Mean => Reference::StudentT {
                df: rec.m.saturating_sub(1).max(1) as f64,
            },
            EstimatorFamily::Proportion | EstimatorFamily::Regression => Reference::Normal,
        }
    }

    /// Upper `1 - tail` quantile.
    pub fn upper_quantile(self, tail: f64) -> f64 {
        match self {
            Reference::StudentT { df } => StudentsT::new(0.0, 1.0, df)
                .expect("df is positive")
                .inverse_cdf(1.0 - tail),
            Reference::Normal => Normal::standard().inverse_cdf(1.0 - tail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub level: f64,
    /// Overrides the family default of [`Reference::for_record`].
    pub reference: Option<Reference>,
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec {
            level: 0.95,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub null_value: f64,
    pub alpha: f64,
}

impl TestSpec {
    pub fn new(null_value: f64) -> Self {
        TestSpec {
            null_value,
            alpha: 0.05,
        }
    }
}

/// A symmetric interval `center ± half_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    /// Closed-interval membership, evaluated as `|x - center| <= half_width`
    /// so that it is the exact complement of [`one_sample_test`] rejection.
    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
}

fn chosen_se(rec: &EstimateRecord, use_corrected: bool) -> Result<f64> {
    if !rec.estimable {
        return Err(Error::NonEstimable);
    }
    let se = if use_corrected {
        rec.corrected_se
    } else {
        rec.naive_se
    };
    if se.is_finite() {
        Ok(se)
    } else {
        Err(Error::NonEstimable)
    }
}

/// Interval of half-width `q * SE` given a precomputed quantile `q`.
pub fn interval_with_quantile(
    rec: &EstimateRecord,
    quantile: f64,
    use_corrected: bool,
) -> Result<Interval> {
    Ok(Interval {
        center: rec.estimate,
        half_width: quantile * chosen_se(rec, use_corrected)?,
    })
}

pub fn confidence_interval(
    rec: &EstimateRecord,
    spec: &CiSpec,
    use_corrected: bool,
) -> Result<Interval> {
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::InvalidParams(format!(
            "confidence level must be in (0, 1), got {}",
            spec.level
        )));
    }
    let reference = spec.reference.unwrap_or_else(|| Reference::for_record(rec));
    let q = reference.upper_quantile((1.0 - spec.level) / 2.0);
    interval_with_quantile(rec, q, use_corrected)
}

/// Two-sided test of `theta = null_value`, given a precomputed critical value.
pub fn test_with_quantile(
    rec: &EstimateRecord,
    null_value: f64,
    critical_value: f64,
    use_corrected: bool,
) -> Result<TestOutcome> {
    let interval = interval_with_quantile(rec, critical_value, use_corrected)?;
    let se = chosen_se(rec, use_corrected)?;
    Ok(TestOutcome {
        statistic: (rec.estimate - null_value) / se,
        critical_value,
        reject: !interval.contains(null_value),
    })
}

pub fn one_sample_test(
    rec: &EstimateRecord,
    spec: &TestSpec,
    use_corrected: bool,
) -> Result<TestOutcome> {
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::InvalidParams(format!(
            "alpha must be in (0, 1), got {}",
            spec.alpha
        )));
    }
    let q = Reference::for_record(rec).upper_quantile(spec.alpha / 2.0);
    test_with_quantile(rec, spec.null_value, q, use_corrected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean_record(estimate: f64, se: f64, n: usize, m: usize) -> EstimateRecord {
        EstimateRecord {
            estimator: "mean_age".into(),
            family: EstimatorFamily::Mean,
            estimate,
            naive_se: se,
            corrected_se: corrected_se(se, n, m),
            n,
            m,
            estimable: true,
        }
    }

    #[test]
    fn corrected_se_examples() {
        assert_eq!(corrected_se(1.0, 100, 100), 2f64.sqrt());
        assert_relative_eq!(corrected_se(0.1, 100, 400), 0.1 * 5f64.sqrt(), max_relative = 1e-15);
        assert!((corrected_se(0.1, 100, 400) - 0.2236).abs() < 1e-4);
        let limit = corrected_se(0.3, 1_000_000_000, 1_000);
        assert!((limit / 0.3 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn t_interval_for_three_points() {
        let rec = mean_record(2.0, 1.0 / 3f64.sqrt(), 3, 3);
        let ci = confidence_interval(&rec, &CiSpec::default(), false).unwrap();
        assert!((ci.lower() + 0.4841).abs() < 1e-3, "{}", ci.lower());
        assert!((ci.upper() - 4.4841).abs() < 1e-3);
        let corrected = confidence_interval(&rec, &CiSpec::default(), true).unwrap();
        assert_relative_eq!(
            corrected.half_width,
            ci.half_width * 2f64.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn test_at_estimate_does_not_reject() {
        let rec = mean_record(2.0, 0.5, 30, 30);
        let out = one_sample_test(&rec, &TestSpec::new(2.0), false).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.reject);
    }

    #[test]
    fn non_estimable_is_an_error() {
        let mut rec = mean_record(2.0, 0.5, 30, 30);
        rec.estimable = false;
        assert!(matches!(
            confidence_interval(&rec, &CiSpec::default(), false),
            Err(Error::NonEstimable)
        ));
        assert!(one_sample_test(&rec, &TestSpec::new(0.0), true).is_err());
    }

    #[test]
    fn original_data_has_no_corrected_interval() {
        let mut rec = mean_record(2.0, 0.5, 30, 30);
        rec.corrected_se = f64::NAN;
        assert!(confidence_interval(&rec, &CiSpec::default(), false).is_ok());
        assert!(confidence_interval(&rec, &CiSpec::default(), true).is_err());
    }

    #[test]
    fn normal_reference_for_regression() {
        let mut rec = mean_record(0.0, 1.0, 100, 100);
        rec.family = EstimatorFamily::Regression;
        let ci = confidence_interval(&rec, &CiSpec::default(), false).unwrap();
        assert!((ci.half_width - 1.959964).abs() < 1e-6);
    }
}
