use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::simulation::{common_violations, default_ikld_epsilon, default_quality_bins};
use super::{
    derive_seed, drive, generator_record, original_record, summarise, QualitySettings,
    RunOptions, RunRecord, Summary, ORIGINAL_ARM,
};
use crate::dgp::{Estimand, EstimandCatalog, Provenance};
use crate::error::{Error, Result};
use crate::estimators::{estimate_battery, EstimatorDef};
use crate::evaluation::{AggregateCell, AggregateSettings};
use crate::generators::GeneratorSpec;
use crate::io::{emit_reports, format_float, read_dataset, read_toml, CsvTableSpec};
use crate::tabular::Dataset;

fn default_k() -> usize {
    200
}
fn default_alpha() -> f64 {
    0.05
}

/// Coverage study over a finite population file: the population values are
/// the targets, and each run draws `n` rows without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub population: CsvTableSpec,
    pub n: usize,
    /// Synthetic rows per run; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_k", alias = "K")]
    pub k: usize,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    pub estimators: Vec<EstimatorDef>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_quality_bins")]
    pub quality_bins: usize,
    #[serde(default = "default_ikld_epsilon")]
    pub ikld_epsilon: f64,
}

impl CaseStudyConfig {
    pub fn m(&self) -> usize {
        self.m.unwrap_or(self.n)
    }

    /// Every constraint that can be checked without reading the population.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        common_violations(
            &mut out,
            self.k,
            self.alpha,
            &self.generators,
            None,
            self.quality_bins,
            self.ikld_epsilon,
        );
        out.extend(self.population.violations().into_iter().map(|v| format!("population: {v}")));
        if self.n < 2 {
            out.push(format!("n must be >= 2 (got {})", self.n));
        }
        if self.m() < 2 {
            out.push(format!("m must be >= 2 (got {})", self.m()));
        }
        if self.estimators.is_empty() {
            out.push("estimators must not be empty".into());
        }
        let declared: HashSet<&str> =
            self.population.columns.iter().map(|c| c.name.as_str()).collect();
        let mut names = HashSet::new();
        for e in &self.estimators {
            if !names.insert(e.name.as_str()) {
                out.push(format!("estimator name `{}` is used twice", e.name));
            }
            for col in e.spec.columns() {
                if !declared.contains(col) {
                    out.push(format!(
                        "estimator `{}`: column `{col}` is not declared in population.columns",
                        e.name
                    ));
                }
            }
        }
        out
    }

    /// Constraints that need the parsed population.
    pub fn population_violations(&self, population: &Dataset) -> Vec<String> {
        let mut out = Vec::new();
        if self.n > population.n_rows() {
            out.push(format!(
                "n = {} exceeds the population size {}",
                self.n,
                population.n_rows()
            ));
        }
        for g in &self.generators {
            out.extend(g.violations(Some(population.schema())));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn arms(&self) -> Vec<String> {
        std::iter::once(ORIGINAL_ARM.to_string())
            .chain(self.generators.iter().map(|g| g.name().to_string()))
            .collect()
    }
}

/// Reads and validates a case-study config; a relative population path is
/// resolved against the config file's directory.
pub fn load_case_study_config(path: &Path) -> Result<CaseStudyConfig> {
    let mut cfg: CaseStudyConfig = read_toml(path)?;
    if cfg.population.path.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.population.path = dir.join(&cfg.population.path);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One line of the coverage table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub generator: String,
    pub estimator: String,
    pub population_value: f64,
    pub runs_used: usize,
    pub coverage_naive_pct: f64,
    pub coverage_corrected_pct: f64,
    pub re_theta_pct: f64,
    pub re_sigma_pct: f64,
}

impl CoverageRow {
    fn from_cell(cell: &AggregateCell) -> Self {
        CoverageRow {
            generator: cell.generator.clone(),
            estimator: cell.estimator.clone(),
            population_value: cell.truth,
            runs_used: cell.runs_used,
            coverage_naive_pct: 100.0 * cell.coverage_naive,
            coverage_corrected_pct: 100.0 * cell.coverage_corrected,
            re_theta_pct: cell.re_theta,
            re_sigma_pct: cell.re_sigma,
        }
    }
}

pub fn write_coverage_csv(path: &Path, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidDataset(format!("{other:?}")),
    })?;
    w.write_record([
        "generator",
        "estimator",
        "population_value",
        "runs_used",
        "coverage_naive_pct",
        "coverage_corrected_pct",
        "re_theta_pct",
        "re_sigma_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.generator.clone(),
            r.estimator.clone(),
            format_float(r.population_value),
            r.runs_used.to_string(),
            format_float(r.coverage_naive_pct),
            format_float(r.coverage_corrected_pct),
            format_float(r.re_theta_pct),
            format_float(r.re_sigma_pct),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything a case study produces.
#[derive(Debug, Clone)]
pub struct CaseStudyOutput {
    pub records: Vec<RunRecord>,
    /// Estimates on the full population, the coverage targets.
    pub truth: EstimandCatalog,
    pub population_size: usize,
    /// Population rows dropped for missing values.
    pub dropped_rows: usize,
    pub summary: Summary,
    pub coverage: Vec<CoverageRow>,
}

/// Runs the case study; with an output directory, also writes `runs.jsonl`,
/// the standard reports and `coverage.csv`.
pub fn run_case_study(cfg: &CaseStudyConfig, options: &RunOptions) -> Result<CaseStudyOutput> {
    cfg.validate()?;
    let read = read_dataset(&cfg.population)?;
    let population = read.data;
    log::info!(
        "population: {} rows ({} dropped for missing values)",
        population.n_rows(),
        read.dropped_rows
    );
    let v = cfg.population_violations(&population);
    if !v.is_empty() {
        return Err(Error::Config(v));
    }

    let mut truth = EstimandCatalog::default();
    for r in estimate_battery(&population, &cfg.estimators)? {
        if !r.estimable {
            return Err(Error::Config(vec![format!(
                "estimator `{}` is not estimable on the full population",
                r.estimator
            )]));
        }
        truth.insert(
            r.estimator.clone(),
            Estimand {
                value: r.estimate,
                provenance: Provenance::Population,
                standard_error: 0.0,
            },
        );
    }

    let arms = cfg.arms();
    let quality = QualitySettings {
        bins: cfg.quality_bins,
        epsilon: cfg.ikld_epsilon,
    };
    let units: Vec<(usize, usize)> = (0..cfg.k).map(|k| (k, cfg.n)).collect();
    let big_n = population.n_rows();
    let work = |k: usize, n: usize, missing: &[usize]| -> Result<Vec<RunRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, k, n, ORIGINAL_ARM, "draw"));
        let mut rows = rand::seq::index::sample(&mut rng, big_n, n).into_vec();
        rows.sort_unstable();
        let data = population.select_rows(&rows);
        let mut out = Vec::with_capacity(missing.len());
        for &a in missing {
            if a == 0 {
                out.push(original_record(k, &data, &cfg.estimators)?);
            } else {
                let spec = &cfg.generators[a - 1];
                let seed = derive_seed(cfg.master_seed, k, n, spec.name(), "sample");
                out.push(generator_record(
                    k,
                    &data,
                    spec,
                    cfg.m(),
                    seed,
                    &cfg.estimators,
                    quality,
                )?);
            }
        }
        Ok(out)
    };
    let m = cfg.m();
    let m_for = |arm: &str, n: usize| if arm == ORIGINAL_ARM { n } else { m };
    let records = drive(&units, &arms, m_for, options, work)?;

    let names: Vec<String> = cfg.estimators.iter().map(|e| e.name.clone()).collect();
    let settings = AggregateSettings {
        alpha: cfg.alpha,
        ..AggregateSettings::default()
    };
    let summary = summarise(&records, &arms, &names, &truth, &settings)?;
    let coverage: Vec<CoverageRow> = summary.cells.iter().map(CoverageRow::from_cell).collect();
    if let Some(dir) = &options.out_dir {
        emit_reports(dir, &summary.cells, &summary.convergence, &summary.quality)?;
        write_coverage_csv(&dir.join("coverage.csv"), &coverage)?;
        log::info!("reports written to {}", dir.display());
    }
    Ok(CaseStudyOutput {
        records,
        truth,
        population_size: big_n,
        dropped_rows: read.dropped_rows,
        summary,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use crate::estimators::EstimatorId;
    use crate::generators::GeneratorKind;
    use crate::io::{write_dataset, ColumnDecl};

    fn config(dir: &Path, population_rows: usize, n: usize) -> CaseStudyConfig {
        let pop = dgp::generate(&dgp::DgpParams::default(), population_rows, 11).unwrap();
        let path = dir.join("population.csv");
        write_dataset(&pop, &path).unwrap();
        let columns = pop.schema().columns().iter().map(ColumnDecl::from_column).collect();
        CaseStudyConfig {
            population: CsvTableSpec::new(path, columns),
            n,
            m: None,
            k: 3,
            generators: vec![GeneratorSpec::new(GeneratorKind::SequentialParametric)],
            estimators: vec![
                EstimatorId::MeanAge.definition(),
                EstimatorId::LogitTherapyOnDeath.definition(),
            ],
            master_seed: 3,
            alpha: 0.05,
            quality_bins: 20,
            ikld_epsilon: 1e-6,
        }
    }

    #[test]
    fn runs_and_writes_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), 600, 200);
        let out = run_case_study(
            &cfg,
            &RunOptions {
                out_dir: Some(dir.path().join("out")),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.population_size, 600);
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.coverage.len(), 4);
        let text = std::fs::read_to_string(dir.path().join("out/coverage.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(out.truth.get("mean_age").unwrap().provenance, Provenance::Population);
    }

    #[test]
    fn full_population_sample_is_the_population() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), 300, 300);
        let out = run_case_study(&cfg, &RunOptions::default()).unwrap();
        for r in out.records.iter().filter(|r| r.generator == ORIGINAL_ARM) {
            let e = &r.estimates[0];
            assert!((e.estimate - out.truth.value("mean_age").unwrap()).abs() < 1e-9);
            assert!(e.naive_se.is_finite() && e.naive_se > 0.0);
        }
    }

    #[test]
    fn oversized_n_and_unknown_columns_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), 100, 200);
        assert!(matches!(
            run_case_study(&cfg, &RunOptions::default()),
            Err(Error::Config(_))
        ));
        let mut bad = config(dir.path(), 100, 50);
        bad.population.columns.retain(|c| c.name != "age");
        assert!(bad.violations().iter().any(|v| v.contains("`age`")));
    }
}
