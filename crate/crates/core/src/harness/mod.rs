//! Monte Carlo orchestration.
//!
//! A *unit* of work is one original dataset: run `k` at sample size `n`. For
//! each unit the harness computes the estimates on the original data (the
//! `original` arm) and, for every configured generator, fits it, samples `m`
//! synthetic rows and computes the estimates again with corrected SEs. Each
//! `(k, arm, n)` result is a [`RunRecord`], appended to `runs.jsonl` as soon
//! as it exists; aggregation reads only the records, so a report can be
//! regenerated from the file alone.
//!
//! Every random stream is seeded by [`derive_seed`] from the master seed and
//! the unit/arm/stage it serves, so results do not depend on the number of
//! workers or on which other arms are configured.

mod case_study;
mod simulation;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use case_study::{
    load_case_study_config, run_case_study, write_coverage_csv, CaseStudyConfig,
    CaseStudyOutput, CoverageRow,
};
pub use simulation::{
    load_sim_config, replay_simulation, run_simulation, MRule, SimConfig, SimulationOutput,
};

use crate::dgp::EstimandCatalog;
use crate::error::{Error, Result};
use crate::estimators::{estimate_battery, EstimateRecord, EstimatorDef};
use crate::evaluation::{
    aggregate, convergence_fits, quality_report, AggregateCell, AggregateSettings,
    ConvergenceRow, QualityReport, QualityRow,
};
use crate::generators::{fit, GeneratorSpec};
use crate::inference::corrected_se;
use crate::io::{append_json_line, read_json_lines, write_json_lines};
use crate::tabular::Dataset;

/// Arm name of estimates computed directly on the original data.
pub const ORIGINAL_ARM: &str = "original";
/// File holding one [`RunRecord`] per line.
pub const RUNS_FILE: &str = "runs.jsonl";

/// Stable 64-bit seed for one random stream.
///
/// FNV-1a over the little-endian bytes of `master`, `k` and `n`, then the
/// UTF-8 bytes of `arm` and `stage` (each followed by a `0xff` separator,
/// which cannot occur in UTF-8), finished with the SplitMix64 mixer.
pub fn derive_seed(master: u64, k: usize, n: usize, arm: &str, stage: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&master.to_le_bytes());
    feed(&(k as u64).to_le_bytes());
    feed(&(n as u64).to_le_bytes());
    feed(arm.as_bytes());
    feed(&[0xff]);
    feed(stage.as_bytes());
    feed(&[0xff]);
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Result of one arm on one original dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    pub generator: String,
    pub n: usize,
    pub m: usize,
    pub estimates: Vec<EstimateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Why the generator could not be trained or sampled in this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (usize, String, usize) {
        (self.k, self.generator.clone(), self.n)
    }
}

/// Options shared by the simulation and case-study drivers.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for `runs.jsonl` and reports; nothing is written if `None`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Keep completed records from an existing `runs.jsonl`.
    pub resume: bool,
}

/// Settings for the per-run fidelity report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QualitySettings {
    pub bins: usize,
    pub epsilon: f64,
}

/// The original arm's record for one unit.
pub(crate) fn original_record(
    k: usize,
    data: &Dataset,
    defs: &[EstimatorDef],
) -> Result<RunRecord> {
    let estimates = estimate_battery(data, defs)?;
    Ok(RunRecord {
        k,
        generator: ORIGINAL_ARM.to_string(),
        n: data.n_rows(),
        m: data.n_rows(),
        estimates,
        quality: None,
        warnings: Vec::new(),
        failure: None,
    })
}

/// Fits `spec` to `data`, samples `m` rows and evaluates `defs` on them.
/// Training or sampling failures become a record with `failure` set.
pub(crate) fn generator_record(
    k: usize,
    data: &Dataset,
    spec: &GeneratorSpec,
    m: usize,
    sample_seed: u64,
    defs: &[EstimatorDef],
    quality: QualitySettings,
) -> Result<RunRecord> {
    let n = data.n_rows();
    let mut record = RunRecord {
        k,
        generator: spec.name().to_string(),
        n,
        m,
        estimates: Vec::new(),
        quality: None,
        warnings: Vec::new(),
        failure: None,
    };
    let synthetic = match fit(spec, data).and_then(|g| {
        record.warnings = g.warnings().to_vec();
        g.sample(m, sample_seed)
    }) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("run {k}, n = {n}, {}: generator failed: {e}", spec.name());
            record.failure = Some(e.to_string());
            return Ok(record);
        }
    };
    record.estimates = estimate_battery(&synthetic, defs)?
        .into_iter()
        .map(|mut r| {
            r.n = n;
            r.corrected_se = corrected_se(r.naive_se, n, m);
            r
        })
        .collect();
    record.quality = Some(quality_report(data, &synthetic, quality.bins, quality.epsilon)?);
    Ok(record)
}

/// Canonical record order: by `n`, then `k`, then arm position in `arms`.
pub(crate) fn sort_records(records: &mut [RunRecord], arms: &[String]) {
    let position = |g: &str| arms.iter().position(|a| a == g).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        (a.n, a.k, position(&a.generator), &a.generator).cmp(&(
            b.n,
            b.k,
            position(&b.generator),
            &b.generator,
        ))
    });
}

/// Runs `work(k, n, missing_arm_indices)` for every `(k, n)` unit in
/// parallel, appending each record to `runs.jsonl` as it completes.
///
/// With `resume`, records already in the file are kept and their keys are not
/// recomputed; a record whose key or `m` does not belong to this campaign is
/// a config error. The file is finally rewritten in canonical order, which is
/// also the order of the returned records.
pub(crate) fn drive<W>(
    units: &[(usize, usize)],
    arms: &[String],
    m_for: impl Fn(&str, usize) -> usize,
    options: &RunOptions,
    work: W,
) -> Result<Vec<RunRecord>>
where
    W: Fn(usize, usize, &[usize]) -> Result<Vec<RunRecord>> + Sync,
{
    use rayon::prelude::*;
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let runs_path = options.out_dir.as_ref().map(|d| d.join(RUNS_FILE));
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut existing: Vec<RunRecord> = Vec::new();
    if let (true, Some(path)) = (options.resume, &runs_path) {
        if path.exists() {
            let (records, truncated) = read_json_lines::<RunRecord>(path)?;
            if truncated {
                log::warn!("{}: ignoring an incomplete final line", path.display());
            }
            let valid_units: HashSet<(usize, usize)> = units.iter().copied().collect();
            let mut seen = HashSet::new();
            let mut foreign = Vec::new();
            for r in records {
                let known = valid_units.contains(&(r.k, r.n))
                    && arms.contains(&r.generator)
                    && m_for(&r.generator, r.n) == r.m;
                if !known {
                    foreign.push(format!(
                        "{}: record (k = {}, generator = {}, n = {}, m = {}) does not belong to this config",
                        path.display(),
                        r.k,
                        r.generator,
                        r.n,
                        r.m
                    ));
                } else if seen.insert(r.key()) {
                    existing.push(r);
                }
            }
            if !foreign.is_empty() {
                return Err(Error::Config(foreign));
            }
            sort_records(&mut existing, arms);
            // Drops any torn line so that appends start on a fresh line.
            write_json_lines(path, &existing)?;
            log::info!("resuming: {} completed records kept", existing.len());
        }
    }
    let done: HashSet<(usize, String, usize)> = existing.iter().map(RunRecord::key).collect();

    let todo: Vec<(usize, usize, Vec<usize>)> = units
        .iter()
        .filter_map(|&(k, n)| {
            let missing: Vec<usize> = (0..arms.len())
                .filter(|&a| !done.contains(&(k, arms[a].clone(), n)))
                .collect();
            (!missing.is_empty()).then_some((k, n, missing))
        })
        .collect();

    let writer = match &runs_path {
        Some(path) => {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(options.resume)
                .write(true)
                .truncate(!options.resume)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            Some(Mutex::new(std::io::BufWriter::new(file)))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    let total = todo.len();
    let finished = AtomicUsize::new(0);
    log::info!(
        "{total} units to run on {} workers",
        pool.current_num_threads()
    );

    let fresh: Vec<Vec<RunRecord>> = pool.install(|| {
        todo.par_iter()
            .map(|(k, n, missing)| {
                let records = work(*k, *n, missing)?;
                if let Some(w) = &writer {
                    let mut w = w.lock().unwrap_or_else(|p| p.into_inner());
                    for r in &records {
                        append_json_line(&mut *w, r)?;
                    }
                }
                let count = finished.fetch_add(1, Ordering::Relaxed) + 1;
                if count * 20 / total.max(1) != (count - 1) * 20 / total.max(1) || count == total {
                    log::info!("{count}/{total} units done (n = {n}, k = {k})");
                }
                Ok(records)
            })
            .collect::<Result<_>>()
    })?;
    drop(writer);

    let mut all = existing;
    all.extend(fresh.into_iter().flatten());
    sort_records(&mut all, arms);
    if let Some(path) = &runs_path {
        write_json_lines(path, &all)?;
    }
    Ok(all)
}

/// Aggregates, convergence fits and quality rows computed from records alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<AggregateCell>,
    pub convergence: Vec<ConvergenceRow>,
    pub quality: Vec<QualityRow>,
}

/// Summarises records cell by cell, in `arms` × ascending `n` × `estimators`
/// order. Estimators without a true value are skipped with a warning.
pub fn summarise(
    records: &[RunRecord],
    arms: &[String],
    estimators: &[String],
    truth: &EstimandCatalog,
    settings: &AggregateSettings,
) -> Result<Summary> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut grouped: HashMap<(&str, usize), Vec<&RunRecord>> = HashMap::new();
    for r in records {
        grouped.entry((r.generator.as_str(), r.n)).or_default().push(r);
    }
    for name in estimators {
        if truth.get(name).is_none() {
            log::warn!("no true value for estimator `{name}`; it is not aggregated");
        }
    }

    let mut cells = Vec::new();
    let mut quality = Vec::new();
    for arm in arms {
        for &n in &ns {
            let Some(runs) = grouped.get(&(arm.as_str(), n)) else {
                continue;
            };
            let ok: Vec<&&RunRecord> = runs.iter().filter(|r| r.failure.is_none()).collect();
            for name in estimators {
                let Some(theta) = truth.value(name) else {
                    continue;
                };
                let recs: Vec<EstimateRecord> = ok
                    .iter()
                    .filter_map(|r| r.estimates.iter().find(|e| &e.estimator == name).cloned())
                    .collect();
                if recs.is_empty() {
                    continue;
                }
                cells.push(aggregate(arm, n, name, &recs, theta, settings)?);
            }
            if arm != ORIGINAL_ARM {
                let reports: Vec<&QualityReport> =
                    ok.iter().filter_map(|r| r.quality.as_ref()).collect();
                let mean_of = |f: &dyn Fn(&QualityReport) -> f64| {
                    if reports.is_empty() {
                        f64::NAN
                    } else {
                        reports.iter().map(|q| f(q)).sum::<f64>() / reports.len() as f64
                    }
                };
                let mean_copies = mean_of(&|q| q.exact_copies as f64);
                let m = ok.first().map_or(0, |r| r.m);
                quality.push(QualityRow {
                    generator: arm.clone(),
                    n,
                    runs: ok.len(),
                    fit_failures: runs.len() - ok.len(),
                    runs_with_warnings: ok.iter().filter(|r| !r.warnings.is_empty()).count(),
                    mean_ikld: mean_of(&|q| q.mean_ikld),
                    mean_exact_copies: mean_copies,
                    exact_copy_pct: 100.0 * mean_copies / m as f64,
                });
            }
        }
    }
    let convergence = convergence_fits(&cells);
    Ok(Summary {
        cells,
        convergence,
        quality,
    })
}
