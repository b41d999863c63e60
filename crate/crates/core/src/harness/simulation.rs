use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    derive_seed, drive, generator_record, original_record, sort_records, summarise,
    QualitySettings, RunOptions, RunRecord, Summary, ORIGINAL_ARM,
};
use crate::dgp::{self, DgpParams, EstimandCatalog};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorDef, EstimatorId};
use crate::evaluation::AggregateSettings;
use crate::generators::GeneratorSpec;
use crate::io::{emit_reports, read_json_lines, read_toml};

/// How many synthetic rows to draw per original dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MRule {
    /// `m = n` (written `"n"` in config files).
    #[default]
    EqualN,
    /// The same `m` at every `n`.
    Fixed(usize),
}

impl MRule {
    pub fn m(self, n: usize) -> usize {
        match self {
            MRule::EqualN => n,
            MRule::Fixed(m) => m,
        }
    }
}

impl Serialize for MRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MRule::EqualN => s.serialize_str("n"),
            MRule::Fixed(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for MRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(m) => Ok(MRule::Fixed(m as usize)),
            Raw::Text(t) if t == "n" => Ok(MRule::EqualN),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "m_rule must be \"n\" or a positive integer, got \"{t}\""
            ))),
        }
    }
}

fn default_k() -> usize {
    200
}
fn default_n_grid() -> Vec<usize> {
    vec![50, 160, 500, 1600, 5000]
}
fn default_estimators() -> Vec<EstimatorId> {
    EstimatorId::ALL.to_vec()
}
fn default_alpha() -> f64 {
    0.05
}
fn default_power_null_fraction() -> f64 {
    0.98
}
fn default_oracle_size() -> usize {
    1_000_000
}
pub(crate) fn default_quality_bins() -> usize {
    20
}
pub(crate) fn default_ikld_epsilon() -> f64 {
    1e-6
}

/// Smallest oracle accepted; below it Monte Carlo error in the true values
/// becomes visible in relative errors at `n = 5000`.
pub const MIN_ORACLE_SIZE: usize = 1_000_000;

/// A simulation campaign over the built-in data generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Monte Carlo repetitions per sample size.
    #[serde(default = "default_k", alias = "K")]
    pub k: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub m_rule: MRule,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorId>,
    #[serde(default)]
    pub dgp: DgpParams,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power_null_fraction")]
    pub power_null_fraction: f64,
    #[serde(default = "default_oracle_size")]
    pub oracle_size: usize,
    /// Histogram bins per continuous column in the IKLD fidelity score.
    #[serde(default = "default_quality_bins")]
    pub quality_bins: usize,
    /// Smoothing added to every histogram cell in the IKLD fidelity score.
    #[serde(default = "default_ikld_epsilon")]
    pub ikld_epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: default_k(),
            n_grid: default_n_grid(),
            m_rule: MRule::default(),
            generators: Vec::new(),
            estimators: default_estimators(),
            dgp: DgpParams::default(),
            master_seed: 0,
            alpha: default_alpha(),
            power_null_fraction: default_power_null_fraction(),
            oracle_size: default_oracle_size(),
            quality_bins: default_quality_bins(),
            ikld_epsilon: default_ikld_epsilon(),
        }
    }
}

/// Checks shared by both config types.
pub(crate) fn common_violations(
    out: &mut Vec<String>,
    k: usize,
    alpha: f64,
    generators: &[GeneratorSpec],
    schema: Option<&crate::tabular::TableSchema>,
    quality_bins: usize,
    ikld_epsilon: f64,
) {
    if k < 2 {
        out.push(format!("k must be >= 2 (got {k})"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        out.push(format!("alpha must lie in (0, 1) (got {alpha})"));
    }
    let mut names = HashSet::new();
    for g in generators {
        if g.name() == ORIGINAL_ARM {
            out.push(format!("generator name `{ORIGINAL_ARM}` is reserved"));
        }
        if !names.insert(g.name()) {
            out.push(format!(
                "generator name `{}` is used twice; set `name` to tell them apart",
                g.name()
            ));
        }
        out.extend(g.violations(schema));
    }
    if quality_bins < 2 {
        out.push(format!("quality_bins must be >= 2 (got {quality_bins})"));
    }
    if !(ikld_epsilon > 0.0 && ikld_epsilon.is_finite()) {
        out.push(format!("ikld_epsilon must be > 0 (got {ikld_epsilon})"));
    }
}

impl SimConfig {
    /// Every violated constraint, as human-readable lines.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let schema = dgp::schema();
        common_violations(
            &mut out,
            self.k,
            self.alpha,
            &self.generators,
            Some(&schema),
            self.quality_bins,
            self.ikld_epsilon,
        );
        if self.n_grid.is_empty() {
            out.push("n_grid must not be empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            out.push(format!("n_grid must be strictly increasing (got {:?})", self.n_grid));
        }
        if self.n_grid.first().is_some_and(|&n| n < 2) {
            out.push("every n in n_grid must be >= 2".into());
        }
        if let MRule::Fixed(m) = self.m_rule {
            if m < 2 {
                out.push(format!("m_rule must give m >= 2 (got {m})"));
            }
        }
        if self.estimators.is_empty() {
            out.push("estimators must not be empty".into());
        }
        let mut seen = HashSet::new();
        for e in &self.estimators {
            if !seen.insert(e) {
                out.push(format!("estimator `{e}` is listed twice"));
            }
        }
        if !(self.power_null_fraction.is_finite() && self.power_null_fraction != 1.0) {
            out.push(format!(
                "power_null_fraction must be finite and != 1 (got {})",
                self.power_null_fraction
            ));
        }
        if self.oracle_size < MIN_ORACLE_SIZE {
            out.push(format!(
                "oracle_size must be >= {MIN_ORACLE_SIZE} (got {})",
                self.oracle_size
            ));
        }
        out.extend(self.dgp.violations());
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

    /// Arm names in report order: `original` first, then the generators.
    pub fn arms(&self) -> Vec<String> {
        std::iter::once(ORIGINAL_ARM.to_string())
            .chain(self.generators.iter().map(|g| g.name().to_string()))
            .collect()
    }

    pub fn estimator_names(&self) -> Vec<String> {
        self.estimators.iter().map(|e| e.as_str().to_string()).collect()
    }

    pub fn aggregate_settings(&self) -> AggregateSettings {
        AggregateSettings {
            alpha: self.alpha,
            power_null_fraction: self.power_null_fraction,
        }
    }

    fn m_for(&self, arm: &str, n: usize) -> usize {
        if arm == ORIGINAL_ARM {
            n
        } else {
            self.m_rule.m(n)
        }
    }
}

/// Reads and validates a simulation config.
pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let cfg: SimConfig = read_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a simulation produces.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// In canonical order: by `n`, then `k`, then arm.
    pub records: Vec<RunRecord>,
    pub truth: EstimandCatalog,
    pub summary: Summary,
}

/// Runs a simulation campaign; with an output directory, persists every
/// record to `runs.jsonl` and writes the reports there.
pub fn run_simulation(cfg: &SimConfig, options: &RunOptions) -> Result<SimulationOutput> {
    cfg.validate()?;
    log::info!("computing true values (oracle size {})", cfg.oracle_size);
    let truth = dgp::true_estimands(&cfg.dgp, cfg.oracle_size)?;
    let defs: Vec<EstimatorDef> = cfg.estimators.iter().map(|e| e.definition()).collect();
    let arms = cfg.arms();
    let quality = QualitySettings {
        bins: cfg.quality_bins,
        epsilon: cfg.ikld_epsilon,
    };
    let units: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.k).map(move |k| (k, n)))
        .collect();

    let work = |k: usize, n: usize, missing: &[usize]| -> Result<Vec<RunRecord>> {
        let seed = derive_seed(cfg.master_seed, k, n, ORIGINAL_ARM, "data");
        let data = dgp::generate(&cfg.dgp, n, seed)?;
        let mut out = Vec::with_capacity(missing.len());
        for &a in missing {
            if a == 0 {
                out.push(original_record(k, &data, &defs)?);
            } else {
                let spec = &cfg.generators[a - 1];
                let sample_seed = derive_seed(cfg.master_seed, k, n, spec.name(), "sample");
                out.push(generator_record(
                    k,
                    &data,
                    spec,
                    cfg.m_rule.m(n),
                    sample_seed,
                    &defs,
                    quality,
                )?);
            }
        }
        Ok(out)
    };
    let records = drive(&units, &arms, |a, n| cfg.m_for(a, n), options, work)?;
    finish(cfg, records, truth, options.out_dir.as_deref())
}

/// Recomputes the reports of a finished campaign from its `runs.jsonl`.
///
/// Produces byte-identical reports to the run that wrote the file.
pub fn replay_simulation(
    cfg: &SimConfig,
    runs_path: &Path,
    out_dir: Option<&Path>,
) -> Result<SimulationOutput> {
    cfg.validate()?;
    let (mut records, truncated) = read_json_lines::<RunRecord>(runs_path)?;
    if truncated {
        log::warn!("{}: ignoring an incomplete final line", runs_path.display());
    }
    let arms = cfg.arms();
    let unknown: Vec<String> = records
        .iter()
        .filter(|r| !arms.contains(&r.generator))
        .map(|r| r.generator.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|g| format!("{}: generator `{g}` is not in the config", runs_path.display()))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(unknown));
    }
    sort_records(&mut records, &arms);
    let truth = dgp::true_estimands(&cfg.dgp, cfg.oracle_size)?;
    finish(cfg, records, truth, out_dir)
}

fn finish(
    cfg: &SimConfig,
    records: Vec<RunRecord>,
    truth: EstimandCatalog,
    out_dir: Option<&Path>,
) -> Result<SimulationOutput> {
    let summary = summarise(
        &records,
        &cfg.arms(),
        &cfg.estimator_names(),
        &truth,
        &cfg.aggregate_settings(),
    )?;
    if let Some(dir) = out_dir {
        emit_reports(dir, &summary.cells, &summary.convergence, &summary.quality)?;
        log::info!("reports written to {}", dir.display());
    }
    Ok(SimulationOutput {
        records,
        truth,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::GeneratorKind;

    fn tiny() -> SimConfig {
        SimConfig {
            k: 2,
            n_grid: vec![50],
            generators: vec![GeneratorSpec::new(GeneratorKind::Bootstrap)],
            master_seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        assert!(SimConfig::default().violations().is_empty());
        let parsed: SimConfig = toml::from_str("").unwrap();
        assert_eq!(parsed, SimConfig::default());
    }

    #[test]
    fn all_violations_are_listed() {
        let cfg = SimConfig {
            k: 1,
            n_grid: vec![100, 50],
            alpha: 1.5,
            oracle_size: 10,
            generators: vec![
                GeneratorSpec::new(GeneratorKind::BayesNetDag),
                GeneratorSpec::new(GeneratorKind::Bootstrap),
                GeneratorSpec::new(GeneratorKind::Bootstrap),
            ],
            ..SimConfig::default()
        };
        let v = cfg.violations();
        assert!(v.len() >= 5, "{v:#?}");
    }

    #[test]
    fn m_rule_parses_both_forms() {
        let a: SimConfig = toml::from_str("m_rule = \"n\"").unwrap();
        assert_eq!(a.m_rule, MRule::EqualN);
        let b: SimConfig = toml::from_str("m_rule = 300").unwrap();
        assert_eq!(b.m_rule, MRule::Fixed(300));
        assert!(toml::from_str::<SimConfig>("m_rule = \"2n\"").is_err());
        assert!(toml::from_str::<SimConfig>("K = 3").unwrap().k == 3);
    }

    #[test]
    fn bootstrap_runs_copy_every_row() {
        let out = run_simulation(&tiny(), &RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 4);
        for r in out.records.iter().filter(|r| r.generator == "bootstrap") {
            assert_eq!(r.quality.as_ref().unwrap().exact_copies, 50);
            assert!(r.estimates.iter().all(|e| e.corrected_se.is_finite()));
        }
        for r in out.records.iter().filter(|r| r.generator == ORIGINAL_ARM) {
            assert!(r.estimates.iter().all(|e| e.corrected_se.is_nan()));
        }
    }

    fn json(records: &[RunRecord]) -> String {
        serde_json::to_string(records).unwrap()
    }

    #[test]
    fn worker_count_and_resume_do_not_change_results() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let opts = |workers, resume| RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            workers: Some(workers),
            resume,
        };
        let one = run_simulation(&cfg, &opts(1, false)).unwrap();
        let bytes = std::fs::read(dir.path().join("runs.jsonl")).unwrap();
        let four = run_simulation(&cfg, &opts(4, false)).unwrap();
        assert_eq!(json(&one.records), json(&four.records));
        assert_eq!(bytes, std::fs::read(dir.path().join("runs.jsonl")).unwrap());

        // Drop the last record and tear the line before it: resume recomputes
        // only the missing key.
        let text = String::from_utf8(bytes.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut cut = lines[..lines.len() - 2].join("\n");
        cut.push('\n');
        cut.push_str(&lines[lines.len() - 2][..10]);
        std::fs::write(dir.path().join("runs.jsonl"), cut).unwrap();
        let resumed = run_simulation(&cfg, &opts(2, true)).unwrap();
        assert_eq!(json(&resumed.records), json(&one.records));
        assert_eq!(bytes, std::fs::read(dir.path().join("runs.jsonl")).unwrap());

        let replay =
            replay_simulation(&cfg, &dir.path().join("runs.jsonl"), None).unwrap();
        assert_eq!(format!("{:?}", replay.summary), format!("{:?}", one.summary));
    }

    #[test]
    fn resume_rejects_records_from_another_config() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            workers: Some(1),
            resume: true,
        };
        run_simulation(&tiny(), &opts).unwrap();
        let other = SimConfig {
            n_grid: vec![60],
            ..tiny()
        };
        assert!(matches!(run_simulation(&other, &opts), Err(Error::Config(_))));
    }
}
