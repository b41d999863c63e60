//! Monte Carlo summaries: relative errors, empirical SEs, rejection and
//! coverage rates, power-law convergence exponents and marginal fidelity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimators::EstimateRecord;
use crate::inference::{interval_with_quantile, Reference};
use crate::tabular::{exact_copy_count, ColumnData, Dataset};

/// Summary of one `(generator, n, estimator)` cell over Monte Carlo runs.
///
/// Rates are fractions in `[0, 1]`; relative errors are percentages.
/// Metrics that cannot be computed (no estimable runs, zero truth, or no
/// corrected SE for original data) are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub generator: String,
    pub n: usize,
    pub estimator: String,
    pub runs_used: usize,
    pub non_estimable: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub empirical_bias: f64,
    pub re_theta: f64,
    pub empirical_se: f64,
    pub mean_naive_se: f64,
    pub re_sigma: f64,
    pub type1_naive: f64,
    pub type1_corrected: f64,
    pub power_naive: f64,
    pub power_corrected: f64,
    pub coverage_naive: f64,
    pub coverage_corrected: f64,
}

/// Settings shared by every aggregated cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateSettings {
    /// Test size; intervals have level `1 - alpha`.
    pub alpha: f64,
    /// Power is the rejection rate of `theta_0 = fraction * truth`.
    pub power_null_fraction: f64,
}

impl Default for AggregateSettings {
    fn default() -> Self {
        AggregateSettings {
            alpha: 0.05,
            power_null_fraction: 0.98,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Rate of `hit` over records, `NaN` if any record lacks the needed SE.
fn rate(
    records: &[&EstimateRecord],
    quantiles: &[f64],
    use_corrected: bool,
    hit: impl Fn(&crate::inference::Interval) -> bool,
) -> f64 {
    let mut hits = 0usize;
    for (rec, &q) in records.iter().zip(quantiles) {
        match interval_with_quantile(rec, q, use_corrected) {
            Ok(interval) => hits += usize::from(hit(&interval)),
            Err(_) => return f64::NAN,
        }
    }
    if records.is_empty() {
        f64::NAN
    } else {
        hits as f64 / records.len() as f64
    }
}

/// Two-sided critical values, cached per reference distribution.
#[derive(Default)]
struct QuantileCache {
    cache: HashMap<u64, f64>,
}

impl QuantileCache {
    fn get(&mut self, reference: Reference, tail: f64) -> f64 {
        let key = match reference {
            Reference::Normal => u64::MAX,
            Reference::StudentT { df } => df.to_bits(),
        };
        *self
            .cache
            .entry(key)
            .or_insert_with(|| reference.upper_quantile(tail))
    }
}

/// Aggregates one cell's records against the true value `truth`.
pub fn aggregate(
    generator: &str,
    n: usize,
    estimator: &str,
    records: &[EstimateRecord],
    truth: f64,
    settings: &AggregateSettings,
) -> Result<AggregateCell> {
    if records.is_empty() {
        return Err(Error::EmptyCell);
    }
    let used: Vec<&EstimateRecord> = records.iter().filter(|r| r.estimable).collect();
    let runs_used = used.len();
    let mut cache = QuantileCache::default();
    let quantiles: Vec<f64> = used
        .iter()
        .map(|r| cache.get(Reference::for_record(r), settings.alpha / 2.0))
        .collect();

    let mean_estimate = mean(used.iter().map(|r| r.estimate));
    let empirical_bias = mean_estimate - truth;
    let empirical_se = if runs_used >= 2 {
        let ss: f64 = used.iter().map(|r| (r.estimate - mean_estimate).powi(2)).sum();
        (ss / (runs_used - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let mean_naive_se = mean(used.iter().map(|r| r.naive_se));
    let relative = |num: f64, den: f64| {
        if den == 0.0 {
            f64::NAN
        } else {
            100.0 * num / den
        }
    };
    let power_null = settings.power_null_fraction * truth;
    let rejects = |theta0: f64| move |i: &crate::inference::Interval| !i.contains(theta0);
    Ok(AggregateCell {
        generator: generator.to_string(),
        n,
        estimator: estimator.to_string(),
        runs_used,
        non_estimable: records.len() - runs_used,
        truth,
        mean_estimate,
        empirical_bias,
        re_theta: relative(empirical_bias, truth),
        empirical_se,
        mean_naive_se,
        re_sigma: relative(mean_naive_se - empirical_se, empirical_se),
        type1_naive: rate(&used, &quantiles, false, rejects(truth)),
        type1_corrected: rate(&used, &quantiles, true, rejects(truth)),
        power_naive: rate(&used, &quantiles, false, rejects(power_null)),
        power_corrected: rate(&used, &quantiles, true, rejects(power_null)),
        coverage_naive: rate(&used, &quantiles, false, |i| i.contains(truth)),
        coverage_corrected: rate(&used, &quantiles, true, |i| i.contains(truth)),
    })
}

/// Quantity whose decay in `n` a [`ConvergenceFit`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceTarget {
    /// `|empirical bias|`.
    Bias,
    /// Empirical standard error.
    Se,
}

impl ConvergenceTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvergenceTarget::Bias => "bias",
            ConvergenceTarget::Se => "se",
        }
    }
}

/// Power law `value = c n^(-a)` fitted by OLS on the log-log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub exponent: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `ln c`.
    pub log_intercept: f64,
    pub points: usize,
}

/// Fits `ln value = ln c - a ln n`; `a` has a 95% CI from the slope's OLS
/// standard error and a t quantile with `points - 2` degrees of freedom.
///
/// Points with non-positive or non-finite values are dropped (with a log
/// warning); at least three distinct `n` must remain.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ConvergenceFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(n, v)| n > 0.0 && v > 0.0 && v.is_finite())
        .collect();
    if kept.len() < points.len() {
        log::warn!(
            "power-law fit: dropped {} non-positive point(s)",
            points.len() - kept.len()
        );
    }
    let mut distinct: Vec<f64> = kept.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientPoints(distinct.len()));
    }
    let k = kept.len() as f64;
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / k;
    let y_bar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = k - 2.0;
    let slope_se = (ssr / df / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, df)
        .expect("df >= 1")
        .inverse_cdf(0.975);
    let exponent = -slope;
    Ok(ConvergenceFit {
        exponent,
        ci_low: exponent - q * slope_se,
        ci_high: exponent + q * slope_se,
        log_intercept: intercept,
        points: kept.len(),
    })
}

/// A convergence fit for one `(generator, estimator, target)` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub generator: String,
    pub estimator: String,
    pub target: ConvergenceTarget,
    pub fit: ConvergenceFit,
}

/// Fits SE and |bias| power laws for every `(generator, estimator)` series
/// in `cells`, in first-appearance order. Series with fewer than three
/// usable points are skipped.
pub fn convergence_fits(cells: &[AggregateCell]) -> Vec<ConvergenceRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for c in cells {
        let key = (c.generator.as_str(), c.estimator.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (generator, estimator) in keys {
        let series: Vec<&AggregateCell> = cells
            .iter()
            .filter(|c| c.generator == generator && c.estimator == estimator)
            .collect();
        for target in [ConvergenceTarget::Bias, ConvergenceTarget::Se] {
            let points: Vec<(f64, f64)> = series
                .iter()
                .map(|c| {
                    let v = match target {
                        ConvergenceTarget::Bias => c.empirical_bias.abs(),
                        ConvergenceTarget::Se => c.empirical_se,
                    };
                    (c.n as f64, v)
                })
                .collect();
            match fit_power_law(&points) {
                Ok(fit) => out.push(ConvergenceRow {
                    generator: generator.to_string(),
                    estimator: estimator.to_string(),
                    target,
                    fit,
                }),
                Err(e) => log::debug!("{generator}/{estimator}/{}: {e}", target.as_str()),
            }
        }
    }
    out
}

/// Marginal fidelity and memorisation of one synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mean_ikld: f64,
    pub exact_copies: usize,
}

/// Per `(generator, n)` fidelity and reliability summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub generator: String,
    pub n: usize,
    /// Runs whose generator trained and sampled successfully.
    pub runs: usize,
    pub fit_failures: usize,
    /// Runs in which at least one conditional model fell back to a marginal.
    pub runs_with_warnings: usize,
    pub mean_ikld: f64,
    pub mean_exact_copies: f64,
    /// Mean exact copies as a percentage of `m`.
    pub exact_copy_pct: f64,
}

/// Smoothed, normalised histogram.
fn smoothed(counts: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + epsilon * counts.len() as f64;
    counts.iter().map(|c| (c + epsilon) / total).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1.0;
    }
    counts
}

/// Mean over columns of `1 / (1 + KL(original || synthetic))`.
///
/// Categorical marginals are level frequencies over the declared levels;
/// continuous marginals are `bins`-cell histograms over the pooled range of
/// both datasets. Every distribution is smoothed by adding `epsilon` to each
/// cell before normalising.
pub fn ikld(original: &Dataset, synthetic: &Dataset, bins: usize, epsilon: f64) -> Result<f64> {
    if original.schema() != synthetic.schema() {
        return Err(Error::SchemaMismatch(
            "IKLD needs datasets with identical schemas".into(),
        ));
    }
    if !(epsilon > 0.0) || bins == 0 {
        return Err(Error::InvalidParams(
            "IKLD needs epsilon > 0 and at least one bin".into(),
        ));
    }
    let mut total = 0.0;
    for (j, column) in original.schema().columns().iter().enumerate() {
        let (p, q) = match (original.column(j), synthetic.column(j)) {
            (ColumnData::Continuous(a), ColumnData::Continuous(b)) => {
                let (lo, hi) = a.iter().chain(b).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(l, h), &v| (l.min(v), h.max(v)),
                );
                (histogram(a, lo, hi, bins), histogram(b, lo, hi, bins))
            }
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                let k = column.kind.n_levels().unwrap_or(0);
                let count = |v: &[u32]| {
                    let mut c = vec![0.0; k];
                    for &x in v {
                        c[x as usize] += 1.0;
                    }
                    c
                };
                (count(a), count(b))
            }
            _ => unreachable!("identical schemas imply identical column types"),
        };
        total += 1.0 / (1.0 + kl(&smoothed(&p, epsilon), &smoothed(&q, epsilon)));
    }
    Ok(total / original.n_cols().max(1) as f64)
}

pub fn quality_report(
    original: &Dataset,
    synthetic: &Dataset,
    bins: usize,
    epsilon: f64,
) -> Result<QualityReport> {
    Ok(QualityReport {
        mean_ikld: ikld(original, synthetic, bins, epsilon)?,
        exact_copies: exact_copy_count(original, synthetic)?,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_relative_eq;

    use super::*;
    use crate::estimators::EstimatorFamily;
    use crate::inference::corrected_se;
    use crate::tabular::{Column, ColumnKind, TableSchema};

    fn rec(estimate: f64, se: f64) -> EstimateRecord {
        EstimateRecord {
            estimator: "mean_age".into(),
            family: EstimatorFamily::Mean,
            estimate,
            naive_se: se,
            corrected_se: corrected_se(se, 100, 100),
            n: 100,
            m: 100,
            estimable: true,
        }
    }

    #[test]
    fn exact_estimates() {
        let records = vec![rec(50.0, 1.0); 10];
        let c = aggregate("g", 100, "mean_age", &records, 50.0, &Default::default()).unwrap();
        assert_eq!(c.empirical_bias, 0.0);
        assert_eq!(c.type1_naive, 0.0);
        assert_eq!(c.coverage_naive, 1.0);
        assert_eq!(c.coverage_corrected, 1.0);
        assert_eq!(c.empirical_se, 0.0);
        assert_eq!(c.runs_used + c.non_estimable, 10);
    }

    #[test]
    fn non_estimable_records_are_counted_not_used() {
        let mut records = vec![rec(49.0, 1.0), rec(51.0, 1.0)];
        records.push(EstimateRecord {
            estimable: false,
            ..rec(1e9, 1e9)
        });
        let c = aggregate("g", 100, "mean_age", &records, 50.0, &Default::default()).unwrap();
        assert_eq!((c.runs_used, c.non_estimable), (2, 1));
        assert_eq!(c.mean_estimate, 50.0);
        assert_relative_eq!(c.empirical_se, 2f64.sqrt());
        assert_relative_eq!(c.re_sigma, 100.0 * (1.0 - 2f64.sqrt()) / 2f64.sqrt());
        assert!(aggregate("g", 1, "x", &[], 1.0, &Default::default()).is_err());
    }

    #[test]
    fn original_arm_has_no_corrected_rates() {
        let mut r = rec(50.0, 1.0);
        r.corrected_se = f64::NAN;
        let c = aggregate("original", 100, "mean_age", &[r.clone(), r], 50.0, &Default::default())
            .unwrap();
        assert!(c.coverage_corrected.is_nan());
        assert_eq!(c.coverage_naive, 1.0);
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [50.0, 160.0, 500.0, 1600.0, 5000.0]
            .iter()
            .map(|&n: &f64| (n, n.powf(-0.5)))
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert_relative_eq!(fit.exponent, 0.5, epsilon = 1e-12);
        assert!((fit.ci_high - fit.ci_low).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, 3.0)).collect();
        assert!(fit_power_law(&flat).unwrap().exponent.abs() < 1e-12);
        assert!(matches!(
            fit_power_law(&pts[..2]),
            Err(Error::InsufficientPoints(2))
        ));
        let mut with_zero = pts.clone();
        with_zero[0].1 = 0.0;
        assert_eq!(fit_power_law(&with_zero).unwrap().points, 4);
    }

    fn categorical(values: Vec<u32>) -> Dataset {
        let schema =
            TableSchema::new(vec![Column::new("c", ColumnKind::nominal(["a", "b"]).unwrap())])
                .unwrap();
        Dataset::new(Arc::new(schema), vec![ColumnData::Categorical(values)]).unwrap()
    }

    #[test]
    fn ikld_identity_and_disjoint() {
        let a = categorical(vec![0; 20]);
        assert!((ikld(&a, &a, 10, 1e-6).unwrap() - 1.0).abs() < 1e-6);
        let b = categorical(vec![1; 20]);
        let eps: f64 = 1e-3;
        let v = ikld(&a, &b, 10, eps).unwrap();
        // closed form for smoothed disjoint two-level distributions
        let (hi, lo) = ((20.0 + eps) / (20.0 + 2.0 * eps), eps / (20.0 + 2.0 * eps));
        let kl = hi * (hi / lo).ln() + lo * (lo / hi).ln();
        assert_relative_eq!(v, 1.0 / (1.0 + kl), max_relative = 1e-12);
        assert!(v < 0.5);
        assert!(ikld(&a, &b, 10, 0.0).is_err());
    }
}
