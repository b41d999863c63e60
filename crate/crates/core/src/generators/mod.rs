//! Synthetic-data generators: fit a representation of the training data,
//! then draw any number of synthetic rows from it.
//!
//! * [`GeneratorKind::SequentialParametric`] — column-by-column parametric
//!   conditional models in DAG order, roots bootstrapped (Synthpop-style
//!   simple synthesis).
//! * [`GeneratorKind::BayesNetDag`] — discrete Bayesian network on a
//!   user-supplied DAG, continuous columns binned at equal frequency.
//! * [`GeneratorKind::BayesNetChowLiu`] — as above on a learned Chow–Liu tree.
//! * [`GeneratorKind::Bootstrap`] — resample training rows with replacement.
//!
//! Fitting is deterministic; all randomness enters through the `seed` of
//! [`FittedGenerator::sample`].

mod bayesnet;
mod discretise;
mod sequential;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bayesnet::{
    chow_liu_tree, mutual_information, pairwise_mutual_information, spanning_tree_weight,
};
pub use discretise::Discretiser;

use crate::error::{Error, Result};
use crate::tabular::{Dag, Dataset, TableSchema};

pub const DEFAULT_BINS: usize = 10;

/// Generator families that exist in the literature but are not implemented
/// here; configs naming them are rejected with an explanation.
const UNSUPPORTED_KINDS: [&str; 9] = [
    "ctgan", "tvae", "dpgan", "dp-gan", "dp_gan", "pategan", "pate-gan", "pate_gan", "privbayes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    SequentialParametric,
    BayesNetDag,
    BayesNetChowLiu,
    Bootstrap,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 4] = [
        GeneratorKind::SequentialParametric,
        GeneratorKind::BayesNetDag,
        GeneratorKind::BayesNetChowLiu,
        GeneratorKind::Bootstrap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::SequentialParametric => "sequential_parametric",
            GeneratorKind::BayesNetDag => "bayes_net_dag",
            GeneratorKind::BayesNetChowLiu => "bayes_net_chow_liu",
            GeneratorKind::Bootstrap => "bootstrap",
        }
    }

    /// Default arm name in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            GeneratorKind::SequentialParametric => "seqparam",
            GeneratorKind::BayesNetDag => "bn_dag",
            GeneratorKind::BayesNetChowLiu => "bn_chowliu",
            GeneratorKind::Bootstrap => "bootstrap",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lowered = s.to_ascii_lowercase();
        if let Some(kind) = GeneratorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lowered || k.short_name() == lowered)
        {
            return Ok(kind);
        }
        if UNSUPPORTED_KINDS.contains(&lowered.as_str()) {
            return Err(format!(
                "generator kind `{s}` is not supported: neural and differentially private \
                 generators (CTGAN, TVAE, DP-GAN, PATE-GAN, PrivBayes) are out of scope; \
                 use one of sequential_parametric, bayes_net_dag, bayes_net_chow_liu, bootstrap"
            ));
        }
        Err(format!(
            "unknown generator kind `{s}`; expected one of sequential_parametric, \
             bayes_net_dag, bayes_net_chow_liu, bootstrap"
        ))
    }
}

impl Serialize for GeneratorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for GeneratorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

/// What to fit, as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Arm name in reports; defaults to the kind's short name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `(parent, child)` edges. Required for `bayes_net_dag`; optional for
    /// `sequential_parametric`, which otherwise conditions every column on
    /// all columns before it in schema order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<Vec<(String, String)>>,
    /// Equal-frequency bins per continuous column (Bayesian networks).
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Additive smoothing pseudo-count for CPDs (Bayesian networks).
    #[serde(default)]
    pub epsilon: f64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        GeneratorSpec {
            kind,
            name: None,
            dag: None,
            bins: DEFAULT_BINS,
            epsilon: 0.0,
        }
    }

    pub fn with_dag(mut self, dag: &Dag) -> Self {
        self.dag = Some(dag.edge_names());
        self
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.short_name())
    }

    /// Every violated invariant; checks DAG edges against `schema` if given.
    pub fn violations(&self, schema: Option<&TableSchema>) -> Vec<String> {
        let mut out = Vec::new();
        let who = format!("generator `{}`", self.name());
        match (self.kind, &self.dag) {
            (GeneratorKind::BayesNetDag, None) => {
                out.push(format!("{who}: kind bayes_net_dag requires a dag"))
            }
            (GeneratorKind::BayesNetChowLiu | GeneratorKind::Bootstrap, Some(_)) => out.push(
                format!("{who}: kind {} does not take a dag", self.kind.as_str()),
            ),
            _ => {}
        }
        if self.bins < 2 {
            out.push(format!("{who}: bins must be >= 2 (got {})", self.bins));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            out.push(format!("{who}: epsilon must be >= 0 (got {})", self.epsilon));
        }
        if let (Some(schema), Some(_)) = (schema, &self.dag) {
            match self.resolve_dag(schema) {
                Ok(dag) => {
                    if let Err(e) = dag.topological_indices() {
                        out.push(format!("{who}: {e}"));
                    }
                }
                Err(e) => out.push(format!("{who}: {e}")),
            }
        }
        out
    }

    fn resolve_dag(&self, schema: &TableSchema) -> Result<Dag> {
        match &self.dag {
            Some(edges) => Dag::new(schema, edges),
            None => Ok(Dag::complete_in_schema_order(schema)),
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    Bootstrap(Dataset),
    Sequential(sequential::SequentialModel),
    BayesNet(bayesnet::BayesNetModel),
}

/// A trained generator `D_g(R)`; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct FittedGenerator {
    spec: GeneratorSpec,
    n: usize,
    schema: Arc<TableSchema>,
    model: Model,
    warnings: Vec<String>,
    dag: Option<Dag>,
}

impl FittedGenerator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Size of the training data.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Non-fatal fit problems, e.g. conditional models replaced by marginals.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The dependency structure used, if any (learned for Chow–Liu).
    pub fn dag(&self) -> Option<&Dag> {
        self.dag.as_ref()
    }

    /// `m` i.i.d. rows; deterministic in `(self, m, seed)`.
    pub fn sample(&self, m: usize, seed: u64) -> Result<Dataset> {
        if m == 0 {
            return Err(Error::InvalidParams("m must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.model {
            Model::Bootstrap(data) => {
                let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..data.n_rows())).collect();
                Ok(data.select_rows(&rows))
            }
            Model::Sequential(model) => model.sample(&self.schema, m, &mut rng),
            Model::BayesNet(model) => model.sample(&self.schema, m, &mut rng),
        }
    }
}

/// Trains a generator. The training data is only read.
pub fn fit(spec: &GeneratorSpec, data: &Dataset) -> Result<FittedGenerator> {
    let violations = spec.violations(Some(data.schema()));
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    if data.n_rows() == 0 {
        return Err(Error::InvalidDataset("cannot fit a generator to zero rows".into()));
    }
    let mut warnings = Vec::new();
    let (model, dag) = match spec.kind {
        GeneratorKind::Bootstrap => (Model::Bootstrap(data.clone()), None),
        GeneratorKind::SequentialParametric => {
            let dag = spec.resolve_dag(data.schema())?;
            let model = sequential::SequentialModel::fit(data, &dag, &mut warnings)?;
            (Model::Sequential(model), Some(dag))
        }
        GeneratorKind::BayesNetDag => {
            let dag = spec.resolve_dag(data.schema())?;
            let model = bayesnet::BayesNetModel::fit(data, &dag, spec.bins, spec.epsilon)?;
            (Model::BayesNet(model), Some(dag))
        }
        GeneratorKind::BayesNetChowLiu => {
            if data.n_cols() < 2 {
                return Err(Error::InvalidDataset(
                    "Chow-Liu structure learning needs at least two columns".into(),
                ));
            }
            let dag = chow_liu_tree(data, spec.bins)?;
            let model = bayesnet::BayesNetModel::fit(data, &dag, spec.bins, spec.epsilon)?;
            (Model::BayesNet(model), Some(dag))
        }
    };
    for w in &warnings {
        log::debug!("{}: {w}", spec.name());
    }
    Ok(FittedGenerator {
        spec: spec.clone(),
        n: data.n_rows(),
        schema: Arc::clone(data.schema_arc()),
        model,
        warnings,
        dag,
    })
}

/// Index drawn from the categorical distribution `probs` with uniform `u`.
pub(crate) fn draw_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
            acc += p;
            if target < acc {
                return k;
            }
        }
    }
    last_positive
}
