//! Data generation from known truth and replication campaigns that
//! estimate rejection rates and bias of the analysis methods.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{decide, default_p_cut, rejection_probability, DecisionRule, Direction, Region, Sidedness, Verdict};
use crate::design::{elicit_prior_means, BeliefSet};
use crate::effects::{
    dirichlet_reference, effects_at_fixed_x, effects_empirical_marginal, phi_to_theta, Filter,
};
use crate::error::{validation, Error, Result};
use crate::gibbs::{run_chains, ChainConfig, NormalPrior, DEFAULT_PRIOR_PRECISION};
use crate::model::{inverse_mlogit, linear_predictors, Coefficients, DesignLayout, JointProbs, OutcomeMatrix, TrialDataset};
use crate::rng::SeedStream;

/// Re-runs allowed for a replication whose chains fail the convergence check.
pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    Binary { p: f64 },
    StandardNormal,
}

impl CovariateLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateLaw::Binary { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            CovariateLaw::StandardNormal => rng.sample(StandardNormal),
        }
    }

    /// Support points and probabilities; the normal law is discretized on
    /// a fine midpoint grid.
    fn quadrature(&self) -> Vec<(f64, f64)> {
        match *self {
            CovariateLaw::Binary { p } => vec![(0.0, 1.0 - p), (1.0, p)],
            CovariateLaw::StandardNormal => {
                let n = 20_000;
                let h = 20.0 / n as f64;
                (0..n)
                    .map(|i| {
                        let z = -10.0 + (i as f64 + 0.5) * h;
                        (z, h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .collect()
            }
        }
    }
}

/// Generating truth: regression coefficients over a design, or joint
/// probabilities per arm without covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Regression {
        beta: Coefficients,
        layout: DesignLayout,
        law: CovariateLaw,
    },
    Joint { control: Vec<f64>, treatment: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub label: String,
    pub k: usize,
    pub truth: Truth,
    pub n_per_arm: usize,
}

impl DgmSpec {
    pub fn validate(&self) -> Result<()> {
        let h = OutcomeMatrix::new(self.k)?;
        if self.n_per_arm < 2 {
            return Err(Error::Config("at least two subjects per arm are required".into()));
        }
        match &self.truth {
            Truth::Regression { beta, layout, law } => {
                if beta.categories() != h.free_categories() || beta.width() != layout.width() + 1 {
                    return Err(Error::Config(format!(
                        "true coefficients are {}x{}, design needs {}x{}",
                        beta.categories(),
                        beta.width(),
                        h.free_categories(),
                        layout.width() + 1
                    )));
                }
                if !beta.is_finite() {
                    return Err(Error::Config("true coefficients must be finite".into()));
                }
                if let CovariateLaw::Binary { p } = law {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::Config(format!("binary covariate probability {p}")));
                    }
                }
            }
            Truth::Joint { control, treatment } => {
                for phi in [control, treatment] {
                    if phi.len() != h.q() {
                        return Err(Error::Config(format!("joint probabilities need {} entries", h.q())));
                    }
                    JointProbs(phi.clone())
                        .validate()
                        .map_err(|e| Error::Config(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> DesignLayout {
        match &self.truth {
            Truth::Regression { layout, .. } => layout.clone(),
            Truth::Joint { .. } => DesignLayout::treatment_only(),
        }
    }

    /// Joint probabilities of a subject with covariates `z` in arm `t`.
    fn phi(&self, t: u8, z: &[f64]) -> Result<Vec<f64>> {
        match &self.truth {
            Truth::Regression { beta, layout, .. } => {
                Ok(inverse_mlogit(&linear_predictors(beta, &layout.row(t, z)?)?).0)
            }
            Truth::Joint { control, treatment } => Ok(if t == 1 { treatment.clone() } else { control.clone() }),
        }
    }

    /// Population-level joint probabilities per arm at fixed covariates.
    pub fn phi_at(&self, z: &[f64]) -> Result<[Vec<f64>; 2]> {
        Ok([self.phi(0, z)?, self.phi(1, z)?])
    }

    /// Joint probabilities per arm averaged over the covariate law within
    /// the filter. Supports at most one covariate.
    pub fn phi_population(&self, filter: &Filter) -> Result<[Vec<f64>; 2]> {
        match &self.truth {
            Truth::Joint { .. } => {
                if !filter.0.is_empty() {
                    return Err(validation("a covariate-free truth cannot be filtered"));
                }
                self.phi_at(&[])
            }
            Truth::Regression { layout, law, .. } => {
                let names = layout.covariates();
                match names.len() {
                    0 => self.phi_at(&[]),
                    1 => {
                        let q = 1 << self.k;
                        let mut acc = [vec![0.0; q], vec![0.0; q]];
                        let mut mass = 0.0;
                        for (z, w) in law.quadrature() {
                            if w == 0.0 || !filter.matches(names, &[z])? {
                                continue;
                            }
                            mass += w;
                            for t in 0..2u8 {
                                for (a, p) in acc[t as usize].iter_mut().zip(self.phi(t, &[z])?) {
                                    *a += w * p;
                                }
                            }
                        }
                        if mass == 0.0 {
                            return Err(validation("the filter has zero probability under the covariate law"));
                        }
                        for a in acc.iter_mut() {
                            a.iter_mut().for_each(|v| *v /= mass);
                        }
                        Ok(acc)
                    }
                    _ => Err(Error::Unsupported(
                        "population truth for more than one covariate".into(),
                    )),
                }
            }
        }
    }
}

/// Truth whose coefficients are elicited from beliefs at two anchors, on
/// the model `(1, T, z, zT)`.
pub fn calibrate_dgm(beliefs: &BeliefSet, law: CovariateLaw, n_per_arm: usize, label: &str) -> Result<DgmSpec> {
    let beta = elicit_prior_means(beliefs)?;
    let dgm = DgmSpec {
        label: label.into(),
        k: 2,
        truth: Truth::Regression {
            beta,
            layout: DesignLayout::with_interactions(vec!["z".into()]),
            law,
        },
        n_per_arm,
    };
    dgm.validate()?;
    Ok(dgm)
}

/// Balanced trial: `n_per_arm` controls followed by as many treated
/// subjects, each response drawn from its own joint distribution.
pub fn generate_dataset(dgm: &DgmSpec, seed: u64) -> Result<TrialDataset> {
    dgm.validate()?;
    let h = OutcomeMatrix::new(dgm.k)?;
    let layout = dgm.layout();
    let p = layout.covariates().len();
    let law = match &dgm.truth {
        Truth::Regression { law, .. } => Some(*law),
        Truth::Joint { .. } => None,
    };
    let mut rng = SeedStream::new(seed).rng();
    let n = 2 * dgm.n_per_arm;
    let mut categories = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n);
    for t in 0..2u8 {
        for _ in 0..dgm.n_per_arm {
            let z: Vec<f64> = match law {
                Some(law) => (0..p).map(|_| law.draw(&mut rng)).collect(),
                None => Vec::new(),
            };
            let phi = dgm.phi(t, &z)?;
            categories.push(draw_category(&phi, &mut rng));
            treatment.push(t);
            covariates.push(z);
        }
    }
    TrialDataset::from_categories(h, categories, treatment, covariates, layout)
}

fn draw_category<R: Rng + ?Sized>(phi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (q, p) in phi.iter().enumerate() {
        acc += p;
        if u < acc {
            return q;
        }
    }
    phi.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisMethod {
    /// Regression effects at fixed covariate values.
    Fixed { covariates: Vec<f64> },
    /// Regression effects by empirical marginalization within the filter.
    Empirical {
        #[serde(default)]
        filter: Filter,
    },
    /// Covariate-free Dirichlet posterior on the filtered stratum.
    Reference {
        #[serde(default)]
        filter: Filter,
        #[serde(default)]
        alpha0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    #[serde(flatten)]
    pub method: AnalysisMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dgm: DgmSpec,
    /// Fitted design; the generating design when omitted.
    #[serde(default)]
    pub analysis_layout: Option<DesignLayout>,
    #[serde(default = "default_precision")]
    pub prior_precision: f64,
    pub chain: ChainConfig,
    pub rules: Vec<DecisionRule>,
    pub methods: Vec<MethodSpec>,
    pub alpha: f64,
    #[serde(default)]
    pub sidedness: Sidedness,
    /// Overrides the rule-specific default threshold.
    #[serde(default)]
    pub p_cut: Option<f64>,
}

fn default_precision() -> f64 {
    DEFAULT_PRIOR_PRECISION
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.dgm.validate()?;
        self.chain.validate()?;
        if self.rules.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("a scenario needs at least one rule and one method".into()));
        }
        for r in &self.rules {
            r.check(self.dgm.k).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(c) = self.p_cut {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::Config(format!("p_cut {c} outside [0, 1)")));
            }
        }
        default_p_cut(&self.rules[0].kind, self.dgm.k, self.alpha, self.sidedness)?;
        Ok(())
    }

    fn fit_layout(&self) -> DesignLayout {
        self.analysis_layout.clone().unwrap_or_else(|| self.dgm.layout())
    }

    fn p_cut(&self, rule: &DecisionRule) -> Result<f64> {
        match self.p_cut {
            Some(c) => Ok(c),
            None => default_p_cut(&rule.kind, self.dgm.k, self.alpha, self.sidedness),
        }
    }

    /// True joint probabilities per arm for the population a method targets.
    pub fn true_phi(&self, method: &AnalysisMethod) -> Result<[Vec<f64>; 2]> {
        match method {
            AnalysisMethod::Fixed { covariates } => self.dgm.phi_at(covariates),
            AnalysisMethod::Empirical { filter } | AnalysisMethod::Reference { filter, .. } => {
                self.dgm.phi_population(filter)
            }
        }
    }
}

/// One method's result in one replication.
#[derive(Debug, Clone)]
struct MethodOutcome {
    verdicts: Vec<std::result::Result<Verdict, String>>,
    delta_mean: Vec<f64>,
    theta_mean: [Vec<f64>; 2],
}

#[derive(Debug, Clone)]
struct RepOutcome {
    attempts: usize,
    methods: Vec<MethodOutcome>,
    beta_mean: Option<Coefficients>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub attempts: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub rule: String,
    pub method: String,
    pub p_cut: f64,
    pub completed: usize,
    pub superior: usize,
    pub inferior: usize,
    /// Replications where the decision itself failed (both regions above
    /// threshold).
    pub conflicting: usize,
    /// Proportion of completed replications with a superior or inferior verdict.
    pub proportion: f64,
    pub se: f64,
    pub true_delta: Option<Vec<f64>>,
    pub mean_delta: Vec<f64>,
    pub delta_bias: Option<Vec<f64>>,
    pub theta_bias: Option<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub label: String,
    pub replications: usize,
    pub completed: usize,
    pub seed: u64,
    pub retries: usize,
    pub failures: Vec<ReplicationFailure>,
    pub rows: Vec<CampaignRow>,
    /// Mean posterior-mean coefficient minus truth, when the fitted design
    /// equals the generating one.
    pub beta_bias: Option<Coefficients>,
}

impl CampaignResult {
    pub fn row(&self, rule: &str, method: &str) -> Option<&CampaignRow> {
        self.rows.iter().find(|r| r.rule == rule && r.method == method)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "scenario,rule,method,p_cut,replications,completed,superior,inferior,conflicting,proportion,se,mean_delta,delta_bias"
        )?;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}",
                self.label,
                r.rule,
                r.method,
                r.p_cut,
                self.replications,
                r.completed,
                r.superior,
                r.inferior,
                r.conflicting,
                r.proportion,
                r.se,
                join(&r.mean_delta),
                r.delta_bias.as_deref().map(join).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Label of a rule in campaign output, e.g. `any` or `compensatory/failure`.
pub fn rule_label(rule: &DecisionRule) -> String {
    match rule.direction {
        Direction::SuccessIsGood => rule.kind.name().to_string(),
        Direction::FailureIsGood => format!("{}/failure", rule.kind.name()),
    }
}

fn run_one(
    scenario: &Scenario,
    layout: &DesignLayout,
    stream: SeedStream,
) -> std::result::Result<RepOutcome, (usize, Error)> {
    let mut attempts = 0;
    attempt_replication(scenario, layout, stream, &mut attempts).map_err(|e| (attempts, e))
}

fn attempt_replication(
    scenario: &Scenario,
    layout: &DesignLayout,
    stream: SeedStream,
    attempts: &mut usize,
) -> Result<RepOutcome> {
    let needs_fit = scenario
        .methods
        .iter()
        .any(|m| !matches!(m.method, AnalysisMethod::Reference { .. }));
    let h = OutcomeMatrix::new(scenario.dgm.k)?;
    let draws = scenario.chain.iterations * scenario.chain.chains;
    loop {
        *attempts += 1;
        let attempt = stream.child(*attempts as u64);
        let generated = generate_dataset(&scenario.dgm, attempt.child(0).seed())?;
        let data = TrialDataset::from_categories(
            h.clone(),
            generated.categories().to_vec(),
            generated.treatment().to_vec(),
            generated.covariates().to_vec(),
            layout.clone(),
        )?;
        let post = if needs_fit {
            let prior = NormalPrior::diffuse(h.free_categories(), layout.width() + 1, scenario.prior_precision)?;
            let config = ChainConfig {
                seed: attempt.child(1).seed(),
                ..scenario.chain
            };
            let post = run_chains(&data, &prior, &config)?;
            if post.meta().non_convergence {
                if *attempts <= MAX_RETRIES {
                    continue;
                }
                return Err(Error::Chain {
                    chain: 0,
                    iteration: config.burnin + config.iterations,
                    message: format!(
                        "Gelman-Rubin {:.3} after {attempts} attempts",
                        post.meta().gelman_rubin.unwrap_or(f64::NAN)
                    ),
                });
            }
            Some(post)
        } else {
            None
        };
        let mut dir_rng = attempt.child(2).rng();
        let mut methods = Vec::with_capacity(scenario.methods.len());
        for spec in &scenario.methods {
            let effects = match (&spec.method, &post) {
                (AnalysisMethod::Fixed { covariates }, Some(post)) => effects_at_fixed_x(post, covariates)?,
                (AnalysisMethod::Empirical { filter }, Some(post)) => effects_empirical_marginal(post, &data, filter)?,
                (AnalysisMethod::Reference { filter, alpha0 }, _) => {
                    let stratum = data.subset(&filter.select(&data)?)?;
                    dirichlet_reference(&stratum, &vec![*alpha0; h.q()], draws, &mut dir_rng)?
                }
                _ => unreachable!("regression methods always have a fit"),
            };
            let verdicts = scenario
                .rules
                .iter()
                .map(|rule| -> Result<std::result::Result<Verdict, String>> {
                    let cut = scenario.p_cut(rule)?;
                    let sup = rejection_probability(&effects, rule, Region::Superiority)?;
                    let inf = rejection_probability(&effects, rule, Region::Inferiority)?;
                    Ok(match decide(sup, inf, cut, cut, scenario.sidedness) {
                        Ok(o) => Ok(o.verdict),
                        Err(e @ Error::Decision(_)) => Err(e.to_string()),
                        Err(e) => return Err(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            methods.push(MethodOutcome {
                verdicts,
                delta_mean: effects.mean_delta(),
                theta_mean: [effects.mean_theta(0), effects.mean_theta(1)],
            });
        }
        return Ok(RepOutcome {
            attempts: *attempts,
            methods,
            beta_mean: post.map(|p| p.mean()),
        });
    }
}

/// Runs `replications` independent generate-fit-transform-decide cycles in
/// parallel. Replication `r` uses sub-stream `r` of `seed`, so results do
/// not depend on scheduling.
pub fn run_replications(scenario: &Scenario, replications: usize, seed: u64) -> Result<CampaignResult> {
    scenario.validate()?;
    if replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    let layout = scenario.fit_layout();
    let root = SeedStream::new(seed);
    let outcomes: Vec<_> = (0..replications)
        .into_par_iter()
        .map(|r| run_one(scenario, &layout, root.child(r as u64)))
        .collect();

    let h = OutcomeMatrix::new(scenario.dgm.k)?;
    let truths: Vec<Option<[Vec<f64>; 2]>> = scenario
        .methods
        .iter()
        .map(|m| scenario.true_phi(&m.method).ok())
        .collect();

    let mut failures = Vec::new();
    let mut done = Vec::new();
    let mut retries = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                retries += o.attempts - 1;
                done.push(o);
            }
            Err((attempts, e)) => failures.push(ReplicationFailure {
                replication: r,
                attempts,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let completed = done.len();
    let k = scenario.dgm.k;
    let mut rows = Vec::new();
    for (ri, rule) in scenario.rules.iter().enumerate() {
        for (mi, spec) in scenario.methods.iter().enumerate() {
            let (mut sup, mut inf, mut conflict) = (0, 0, 0);
            let mut mean_delta = vec![0.0; k];
            let mut mean_theta = [vec![0.0; k], vec![0.0; k]];
            for o in &done {
                let m = &o.methods[mi];
                match &m.verdicts[ri] {
                    Ok(Verdict::Superior) => sup += 1,
                    Ok(Verdict::Inferior) => inf += 1,
                    Ok(Verdict::Inconclusive) => {}
                    Err(_) => conflict += 1,
                }
                for j in 0..k {
                    mean_delta[j] += m.delta_mean[j] / completed as f64;
                    mean_theta[0][j] += m.theta_mean[0][j] / completed as f64;
                    mean_theta[1][j] += m.theta_mean[1][j] / completed as f64;
                }
            }
            let p = if completed == 0 { 0.0 } else { (sup + inf) as f64 / completed as f64 };
            let se = if completed == 0 { 0.0 } else { (p * (1.0 - p) / completed as f64).sqrt() };
            let true_theta = truths[mi]
                .as_ref()
                .map(|phi| [phi_to_theta(&phi[0], &h), phi_to_theta(&phi[1], &h)]);
            let true_delta = true_theta
                .as_ref()
                .map(|t| t[1].iter().zip(&t[0]).map(|(a, b)| a - b).collect::<Vec<_>>());
            let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
            rows.push(CampaignRow {
                rule: rule_label(rule),
                method: spec.label.clone(),
                p_cut: scenario.p_cut(rule)?,
                completed,
                superior: sup,
                inferior: inf,
                conflicting: conflict,
                proportion: p,
                se,
                delta_bias: (completed > 0)
                    .then(|| true_delta.as_ref().map(|t| sub(&mean_delta, t)))
                    .flatten(),
                theta_bias: (completed > 0)
                    .then(|| {
                        true_theta
                            .as_ref()
                            .map(|t| [sub(&mean_theta[0], &t[0]), sub(&mean_theta[1], &t[1])])
                    })
                    .flatten(),
                true_delta,
                mean_delta,
            });
        }
    }

    let beta_bias = match &scenario.dgm.truth {
        Truth::Regression { beta, layout: truth_layout, .. } if *truth_layout == layout => {
            let fits: Vec<&Coefficients> = done.iter().filter_map(|o| o.beta_mean.as_ref()).collect();
            (!fits.is_empty()).then(|| {
                let mut acc = beta.matrix() * 0.0;
                for f in &fits {
                    acc += f.matrix();
                }
                Coefficients::from_matrix(acc / fits.len() as f64 - beta.matrix())
            })
        }
        _ => None,
    };

    Ok(CampaignResult {
        label: scenario.dgm.label.clone(),
        replications,
        completed,
        seed,
        retries,
        failures,
        rows,
        beta_bias,
    })
}
