use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    estimate_mean, estimate_proportion, fit_cumulative_logit, fit_gamma_glm, fit_logistic_with,
    EstimateRecord, EstimatorFamily,
};
use crate::dgp::columns::{AGE, BIOMARKER, DEATH, STAGE, THERAPY};
use crate::error::{Error, Result};
use crate::tabular::Dataset;

/// The 17 estimators of the hypothetical-disease battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorId {
    MeanAge,
    MeanBiomarker,
    PropTherapy,
    PropDeath,
    PropStageI,
    PropStageII,
    PropStageIII,
    PropStageIV,
    CumLogitAgeOnStage,
    GammaGlmStageIIOnBiomarker,
    GammaGlmStageIIIOnBiomarker,
    GammaGlmStageIVOnBiomarker,
    LogitAgeOnDeath,
    LogitStageIIOnDeath,
    LogitStageIIIOnDeath,
    LogitStageIVOnDeath,
    LogitTherapyOnDeath,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 17] = [
        EstimatorId::MeanAge,
        EstimatorId::MeanBiomarker,
        EstimatorId::PropTherapy,
        EstimatorId::PropDeath,
        EstimatorId::PropStageI,
        EstimatorId::PropStageII,
        EstimatorId::PropStageIII,
        EstimatorId::PropStageIV,
        EstimatorId::CumLogitAgeOnStage,
        EstimatorId::GammaGlmStageIIOnBiomarker,
        EstimatorId::GammaGlmStageIIIOnBiomarker,
        EstimatorId::GammaGlmStageIVOnBiomarker,
        EstimatorId::LogitAgeOnDeath,
        EstimatorId::LogitStageIIOnDeath,
        EstimatorId::LogitStageIIIOnDeath,
        EstimatorId::LogitStageIVOnDeath,
        EstimatorId::LogitTherapyOnDeath,
    ];

    /// Stable row key used in every report.
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::MeanAge => "mean_age",
            EstimatorId::MeanBiomarker => "mean_biomarker",
            EstimatorId::PropTherapy => "prop_therapy",
            EstimatorId::PropDeath => "prop_death",
            EstimatorId::PropStageI => "prop_stage_i",
            EstimatorId::PropStageII => "prop_stage_ii",
            EstimatorId::PropStageIII => "prop_stage_iii",
            EstimatorId::PropStageIV => "prop_stage_iv",
            EstimatorId::CumLogitAgeOnStage => "cumlogit_age_on_stage",
            EstimatorId::GammaGlmStageIIOnBiomarker => "gammaglm_stage_ii_on_biomarker",
            EstimatorId::GammaGlmStageIIIOnBiomarker => "gammaglm_stage_iii_on_biomarker",
            EstimatorId::GammaGlmStageIVOnBiomarker => "gammaglm_stage_iv_on_biomarker",
            EstimatorId::LogitAgeOnDeath => "logit_age_on_death",
            EstimatorId::LogitStageIIOnDeath => "logit_stage_ii_on_death",
            EstimatorId::LogitStageIIIOnDeath => "logit_stage_iii_on_death",
            EstimatorId::LogitStageIVOnDeath => "logit_stage_iv_on_death",
            EstimatorId::LogitTherapyOnDeath => "logit_therapy_on_death",
        }
    }

    pub fn family(self) -> EstimatorFamily {
        self.definition().family()
    }

    /// The column-level recipe this estimator evaluates.
    pub fn definition(self) -> EstimatorDef {
        use EstimatorId::*;
        const DEATH_COVARIATES: [&str; 3] = [AGE, STAGE, THERAPY];
        let logit = |term: &str| EstimatorSpec::Logistic {
            outcome: DEATH.into(),
            success: None,
            covariates: DEATH_COVARIATES.iter().map(|c| c.to_string()).collect(),
            term: term.into(),
        };
        let gamma = |term: &str| EstimatorSpec::Gamma {
            outcome: BIOMARKER.into(),
            covariates: vec![STAGE.into()],
            term: term.into(),
        };
        let stage = |level: &str| EstimatorSpec::Proportion {
            column: STAGE.into(),
            level: level.into(),
        };
        let spec = match self {
            MeanAge => EstimatorSpec::Mean { column: AGE.into() },
            MeanBiomarker => EstimatorSpec::Mean {
                column: BIOMARKER.into(),
            },
            PropTherapy => EstimatorSpec::Proportion {
                column: THERAPY.into(),
                level: "true".into(),
            },
            PropDeath => EstimatorSpec::Proportion {
                column: DEATH.into(),
                level: "true".into(),
            },
            PropStageI => stage("I"),
            PropStageII => stage("II"),
            PropStageIII => stage("III"),
            PropStageIV => stage("IV"),
            CumLogitAgeOnStage => EstimatorSpec::CumulativeLogit {
                outcome: STAGE.into(),
                covariates: vec![AGE.into()],
                term: AGE.into(),
            },
            GammaGlmStageIIOnBiomarker => gamma("stage=II"),
            GammaGlmStageIIIOnBiomarker => gamma("stage=III"),
            GammaGlmStageIVOnBiomarker => gamma("stage=IV"),
            LogitAgeOnDeath => logit(AGE),
            LogitStageIIOnDeath => logit("stage=II"),
            LogitStageIIIOnDeath => logit("stage=III"),
            LogitStageIVOnDeath => logit("stage=IV"),
            LogitTherapyOnDeath => logit("therapy=true"),
        };
        EstimatorDef {
            name: self.as_str().into(),
            spec,
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown estimator `{s}`")))
    }
}

impl Serialize for EstimatorId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EstimatorId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A column-mapped estimator recipe.
///
/// Regression recipes report the single coefficient labelled `term`:
/// a continuous covariate's name, or `column=Level` for a dummy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Mean {
        column: String,
    },
    Proportion {
        column: String,
        level: String,
    },
    Logistic {
        outcome: String,
        /// Outcome level coded as 1; defaults to the second declared level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        success: Option<String>,
        covariates: Vec<String>,
        term: String,
    },
    Gamma {
        outcome: String,
        covariates: Vec<String>,
        term: String,
    },
    CumulativeLogit {
        outcome: String,
        covariates: Vec<String>,
        term: String,
    },
}

impl EstimatorSpec {
    pub fn family(&self) -> EstimatorFamily {
        match self {
            EstimatorSpec::Mean { .. } => EstimatorFamily::Mean,
            EstimatorSpec::Proportion { .. } => EstimatorFamily::Proportion,
            _ => EstimatorFamily::Regression,
        }
    }

    /// Key identifying the underlying model fit, so estimators that read
    /// different coefficients of one model share a single fit.
    fn fit_key(&self) -> Option<String> {
        match self {
            EstimatorSpec::Logistic {
                outcome,
                success,
                covariates,
                ..
            } => Some(format!(
                "logistic|{outcome}|{}|{}",
                success.as_deref().unwrap_or(""),
                covariates.join(",")
            )),
            EstimatorSpec::Gamma {
                outcome,
                covariates,
                ..
            } => Some(format!("gamma|{outcome}|{}", covariates.join(","))),
            EstimatorSpec::CumulativeLogit {
                outcome,
                covariates,
                ..
            } => Some(format!("cumlogit|{outcome}|{}", covariates.join(","))),
            _ => None,
        }
    }

    /// Columns the recipe reads; used to validate configs against a schema.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            EstimatorSpec::Mean { column } | EstimatorSpec::Proportion { column, .. } => {
                vec![column]
            }
            EstimatorSpec::Logistic {
                outcome,
                covariates,
                ..
            }
            | EstimatorSpec::Gamma {
                outcome,
                covariates,
                ..
            }
            | EstimatorSpec::CumulativeLogit {
                outcome,
                covariates,
                ..
            } => std::iter::once(outcome.as_str())
                .chain(covariates.iter().map(String::as_str))
                .collect(),
        }
    }
}

/// A named estimator recipe; the name is the report row key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDef {
    pub name: String,
    #[serde(flatten)]
    pub spec: EstimatorSpec,
}

impl EstimatorDef {
    pub fn family(&self) -> EstimatorFamily {
        self.spec.family()
    }
}

fn borrow(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn fit_model(data: &Dataset, spec: &EstimatorSpec) -> Result<Vec<EstimateRecord>> {
    match spec {
        EstimatorSpec::Logistic {
            outcome,
            success,
            covariates,
            ..
        } => fit_logistic_with(data, outcome, success.as_deref(), &borrow(covariates)),
        EstimatorSpec::Gamma {
            outcome,
            covariates,
            ..
        } => fit_gamma_glm(data, outcome, &borrow(covariates)),
        EstimatorSpec::CumulativeLogit {
            outcome,
            covariates,
            ..
        } => fit_cumulative_logit(data, outcome, &borrow(covariates)),
        EstimatorSpec::Mean { .. } | EstimatorSpec::Proportion { .. } => {
            unreachable!("only regression specs are fitted as models")
        }
    }
}

/// Evaluates every definition on `data`, in order, sharing regression fits.
///
/// Records carry `n = m = data.n_rows()` and no corrected SE; the harness
/// fills those in for synthetic arms.
pub fn estimate_battery(data: &Dataset, defs: &[EstimatorDef]) -> Result<Vec<EstimateRecord>> {
    let mut fits: HashMap<String, Vec<EstimateRecord>> = HashMap::new();
    let mut out = Vec::with_capacity(defs.len());
    for def in defs {
        let rec = match &def.spec {
            EstimatorSpec::Mean { column } => estimate_mean(data, column)?,
            EstimatorSpec::Proportion { column, level } => {
                estimate_proportion(data, column, level)?
            }
            EstimatorSpec::Logistic { term, .. }
            | EstimatorSpec::Gamma { term, .. }
            | EstimatorSpec::CumulativeLogit { term, .. } => {
                let key = def.spec.fit_key().expect("regression spec has a fit key");
                if !fits.contains_key(&key) {
                    fits.insert(key.clone(), fit_model(data, &def.spec)?);
                }
                fits[&key]
                    .iter()
                    .find(|r| &r.estimator == term)
                    .cloned()
                    .ok_or_else(|| {
                        Error::SchemaMismatch(format!(
                            "estimator `{}`: model has no term `{term}`",
                            def.name
                        ))
                    })?
            }
        };
        out.push(rec.renamed(def.name.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpParams};

    #[test]
    fn names_round_trip() {
        for id in EstimatorId::ALL {
            assert_eq!(id.as_str().parse::<EstimatorId>().unwrap(), id);
        }
        assert!("ctgan_mean".parse::<EstimatorId>().is_err());
    }

    #[test]
    fn battery_produces_all_seventeen_in_order() {
        let data = generate(&DgpParams::default(), 2000, 7).unwrap();
        let defs: Vec<_> = EstimatorId::ALL.iter().map(|id| id.definition()).collect();
        let recs = estimate_battery(&data, &defs).unwrap();
        assert_eq!(recs.len(), 17);
        for (rec, id) in recs.iter().zip(EstimatorId::ALL) {
            assert_eq!(rec.estimator, id.as_str());
            assert_eq!(rec.family, id.family());
            assert!(rec.estimable, "{id} not estimable");
            assert_eq!(rec.m, 2000);
        }
    }

    #[test]
    fn unknown_term_is_an_error() {
        let data = generate(&DgpParams::default(), 200, 1).unwrap();
        let def = EstimatorDef {
            name: "x".into(),
            spec: EstimatorSpec::Logistic {
                outcome: DEATH.into(),
                success: None,
                covariates: vec![AGE.into()],
                term: "stage=II".into(),
            },
        };
        assert!(estimate_battery(&data, &[def]).is_err());
    }

    #[test]
    fn spec_deserialises_from_toml() {
        let def: EstimatorDef = toml::from_str(
            r#"
            name = "effect_age_income"
            type = "logistic"
            outcome = "income"
            success = ">50K"
            covariates = ["age", "sex"]
            term = "age"
            "#,
        )
        .unwrap();
        assert_eq!(def.family(), EstimatorFamily::Regression);
        assert_eq!(def.spec.columns(), vec!["income", "age", "sex"]);
    }
}
