//! JSON documents accepted by the command-line front end.

use std::path::Path;

use mvlogit::decision::{DecisionRule, Sidedness};
use mvlogit::design::BeliefSet;
use mvlogit::effects::PopulationSpec;
use mvlogit::gibbs::{ChainConfig, DEFAULT_PRIOR_PRECISION};
use mvlogit::model::{Coefficients, DesignLayout, Term};
use mvlogit::sim::Scenario;
use mvlogit::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Normal prior on every category's coefficients. Means come from an
/// explicit matrix, from elicited beliefs, or default to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_precision")]
    pub precision: f64,
    #[serde(default)]
    pub means: Option<Coefficients>,
    #[serde(default)]
    pub beliefs: Option<BeliefSet>,
}

fn default_precision() -> f64 {
    DEFAULT_PRIOR_PRECISION
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            precision: DEFAULT_PRIOR_PRECISION,
            means: None,
            beliefs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPopulation {
    pub label: String,
    #[serde(flatten)]
    pub spec: PopulationSpec,
}

/// Everything `fit` and `decide` need besides the data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Binary outcome columns, in outcome order.
    pub outcomes: Vec<String>,
    pub treatment: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Covariates that also enter as treatment interactions; all of them
    /// when omitted.
    #[serde(default)]
    pub interactions: Option<Vec<String>>,
    /// Covariates centred and scaled to unit standard deviation before
    /// fitting. Population values are then read on that scale.
    #[serde(default)]
    pub standardize: Vec<String>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub rules: Vec<DecisionRule>,
    #[serde(default)]
    pub sidedness: Sidedness,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Overrides the rule-specific default threshold.
    #[serde(default)]
    pub p_cut: Option<f64>,
    #[serde(default)]
    pub populations: Vec<NamedPopulation>,
    #[serde(default = "default_level")]
    pub interval_level: f64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_level() -> f64 {
    0.95
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::Config("at least one outcome column is required".into()));
        }
        let mut seen: Vec<&String> = Vec::new();
        for c in self.outcomes.iter().chain(&self.covariates).chain([&self.treatment]) {
            if seen.contains(&c) {
                return Err(Error::Config(format!("column '{c}' is used twice")));
            }
            seen.push(c);
        }
        for c in self.interactions.iter().flatten().chain(&self.standardize) {
            if !self.covariates.contains(c) {
                return Err(Error::Config(format!("'{c}' is not a declared covariate")));
            }
        }
        if !(self.prior.precision > 0.0 && self.prior.precision.is_finite()) {
            return Err(Error::Config("prior precision must be positive".into()));
        }
        if self.prior.means.is_some() && self.prior.beliefs.is_some() {
            return Err(Error::Config("give prior means or beliefs, not both".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(p) = self.p_cut {
            if !(0.5..1.0).contains(&p) {
                return Err(Error::Config(format!("p_cut must lie in [0.5, 1), got {p}")));
            }
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::Config("interval_level must lie in (0, 1)".into()));
        }
        for r in &self.rules {
            r.check(self.outcomes.len())?;
        }
        self.chain.validate()
    }

    /// `T`, one main effect per covariate, then the requested interactions.
    pub fn layout(&self) -> Result<DesignLayout> {
        let mut terms = vec![Term::Treatment];
        terms.extend((0..self.covariates.len()).map(Term::Covariate));
        let inter: Vec<usize> = match &self.interactions {
            None => (0..self.covariates.len()).collect(),
            Some(names) => names
                .iter()
                .map(|n| self.covariates.iter().position(|c| c == n).expect("validated"))
                .collect(),
        };
        terms.extend(inter.into_iter().map(Term::Interaction));
        DesignLayout::new(self.covariates.clone(), terms)
    }

    /// Populations to report; the whole trial when none are configured.
    pub fn populations(&self) -> Vec<NamedPopulation> {
        if self.populations.is_empty() {
            vec![NamedPopulation {
                label: "trial".into(),
                spec: PopulationSpec::Empirical { filter: Default::default() },
            }]
        } else {
            self.populations.clone()
        }
    }
}

/// A batch of simulation scenarios sharing one replication count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

fn default_replications() -> usize {
    200
}
