use std::path::Path;

use super::format_float;
use crate::error::{Error, Result};
use crate::evaluation::{AggregateCell, ConvergenceRow, QualityRow};

/// Header of `aggregate.csv`.
pub const AGGREGATE_COLUMNS: [&str; 15] = [
    "generator",
    "n",
    "estimator",
    "runs_used",
    "non_estimable",
    "re_theta_pct",
    "re_sigma_pct",
    "empirical_se",
    "mean_naive_se",
    "type1_naive",
    "type1_corrected",
    "power_naive",
    "power_corrected",
    "coverage_naive",
    "coverage_corrected",
];

/// Written next to every report set.
pub const LIMITATIONS: &str = "\
Scope note
==========
Only statistical generators are implemented: sequential parametric
synthesis, Bayesian networks (fixed DAG and Chow-Liu tree) and the
bootstrap. Deep-learning generators (CTGAN, TVAE) and differentially
private generators (DP-GAN, PATE-GAN, PrivBayes) are not available, so
none of their results can be reproduced with this tool. Configs naming
them are rejected.

The corrected standard error assumes a root-n consistent estimator on the
synthetic data; when a generator induces bias that does not vanish at rate
n^-1/2 (see convergence.csv, target = bias), corrected intervals still
under-cover.
";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidDataset(format!("{other:?}")),
    })
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregate_csv(path: &Path, cells: &[AggregateCell]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(AGGREGATE_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.generator.clone(),
            c.n.to_string(),
            c.estimator.clone(),
            c.runs_used.to_string(),
            c.non_estimable.to_string(),
            format_float(c.re_theta),
            format_float(c.re_sigma),
            format_float(c.empirical_se),
            format_float(c.mean_naive_se),
            format_float(c.type1_naive),
            format_float(c.type1_corrected),
            format_float(c.power_naive),
            format_float(c.power_corrected),
            format_float(c.coverage_naive),
            format_float(c.coverage_corrected),
        ])?;
    }
    finish(w, path)
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "generator",
        "estimator",
        "target",
        "exponent",
        "ci_low",
        "ci_high",
        "log_intercept",
        "points",
    ])?;
    for r in rows {
        w.write_record([
            r.generator.clone(),
            r.estimator.clone(),
            r.target.as_str().to_string(),
            format_float(r.fit.exponent),
            format_float(r.fit.ci_low),
            format_float(r.fit.ci_high),
            format_float(r.fit.log_intercept),
            r.fit.points.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_quality_csv(path: &Path, rows: &[QualityRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "generator",
        "n",
        "runs",
        "fit_failures",
        "runs_with_warnings",
        "mean_ikld",
        "mean_exact_copies",
        "exact_copy_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.generator.clone(),
            r.n.to_string(),
            r.runs.to_string(),
            r.fit_failures.to_string(),
            r.runs_with_warnings.to_string(),
            format_float(r.mean_ikld),
            format_float(r.mean_exact_copies),
            format_float(r.exact_copy_pct),
        ])?;
    }
    finish(w, path)
}

/// Long-format rejection and coverage curves for plotting.
pub fn write_curves_csv(path: &Path, cells: &[AggregateCell]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["generator", "estimator", "n", "metric", "se_mode", "value"])?;
    for c in cells {
        for (metric, se_mode, value) in [
            ("type1", "naive", c.type1_naive),
            ("type1", "corrected", c.type1_corrected),
            ("power", "naive", c.power_naive),
            ("power", "corrected", c.power_corrected),
            ("coverage", "naive", c.coverage_naive),
            ("coverage", "corrected", c.coverage_corrected),
        ] {
            w.write_record([
                c.generator.as_str(),
                c.estimator.as_str(),
                &c.n.to_string(),
                metric,
                se_mode,
                &format_float(value),
            ])?;
        }
    }
    finish(w, path)
}

/// Writes `aggregate.csv`, `convergence.csv`, `quality.csv`,
/// `curves_type1_power.csv` and `LIMITATIONS.txt` into `dir`.
pub fn emit_reports(
    dir: &Path,
    cells: &[AggregateCell],
    convergence: &[ConvergenceRow],
    quality: &[QualityRow],
) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::EmptyCell);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_aggregate_csv(&dir.join("aggregate.csv"), cells)?;
    write_convergence_csv(&dir.join("convergence.csv"), convergence)?;
    write_quality_csv(&dir.join("quality.csv"), quality)?;
    write_curves_csv(&dir.join("curves_type1_power.csv"), cells)?;
    let notes = dir.join("LIMITATIONS.txt");
    std::fs::write(&notes, LIMITATIONS).map_err(|e| Error::io(&notes, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(generator: &str, n: usize) -> AggregateCell {
        AggregateCell {
            generator: generator.into(),
            n,
            estimator: "mean_age".into(),
            runs_used: 2,
            non_estimable: 0,
            truth: 50.0,
            mean_estimate: 50.1,
            empirical_bias: 0.1,
            re_theta: 0.2,
            empirical_se: 1.0,
            mean_naive_se: 0.9,
            re_sigma: -10.0,
            type1_naive: 0.05,
            type1_corrected: f64::NAN,
            power_naive: 0.5,
            power_corrected: f64::NAN,
            coverage_naive: 0.95,
            coverage_corrected: f64::NAN,
        }
    }

    #[test]
    fn aggregate_csv_is_deterministic_and_reparses() {
        let dir = tempfile::tempdir().unwrap();
        let cells = vec![cell("original", 50), cell("original", 160)];
        emit_reports(dir.path(), &cells, &[], &[]).unwrap();
        let first = std::fs::read(dir.path().join("aggregate.csv")).unwrap();
        emit_reports(dir.path(), &cells, &[], &[]).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("aggregate.csv")).unwrap());

        let mut r = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), AGGREGATE_COLUMNS);
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[0][10], "NaN");
        assert!(rows[0][10].parse::<f64>().unwrap().is_nan());

        let curves = std::fs::read_to_string(dir.path().join("curves_type1_power.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1 + 2 * 6);
        assert!(dir.path().join("LIMITATIONS.txt").exists());
        assert!(emit_reports(dir.path(), &[], &[], &[]).is_err());
    }
}
