//! Command orchestration and report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mvlogit::decision::{decide, default_p_cut, rejection_probability, DecisionRule, Region, Sidedness, Verdict};
use mvlogit::design::{elicit_prior_means, required_n, BeliefSet, DesignTargets, SamplePlan};
use mvlogit::effects::{effects_for_population, EffectSummary, PopulationSpec};
use mvlogit::gibbs::{run_chains, ChainConfig, NormalPrior, PosteriorSample};
use mvlogit::model::{Coefficients, Term, TrialDataset};
use mvlogit::rng::SeedStream;
use mvlogit::sim::{rule_label, run_replications, CampaignResult};
use mvlogit::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, AnalysisConfig, CampaignConfig};
use crate::ingest::{load_dataset_csv, LoadedData, Standardization};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Fit,
    /// Decide from persisted draws when given, otherwise fit first.
    Decide { draws: Option<PathBuf> },
    Plan,
    Elicit,
    Simulate { full_scale: bool },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Decide { .. } => "decide",
            Command::Plan => "plan",
            Command::Elicit => "elicit",
            Command::Simulate { .. } => "simulate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config: &'a Path,
    data: Option<&'a Path>,
    created_unix: u64,
    files: Vec<String>,
}

/// Runs one command and returns the files written, metadata last.
pub fn run_pipeline(command: &Command, inputs: &Inputs) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&inputs.out).map_err(|e| io_err(&inputs.out, e))?;
    let mut files = match command {
        Command::Fit => fit_command(inputs)?,
        Command::Decide { draws } => decide_command(inputs, draws.as_deref())?,
        Command::Plan => {
            let targets: DesignTargets = read_json(&inputs.config)?;
            vec![write_json(&inputs.out, "plan.json", &plan(&targets)?)?]
        }
        Command::Elicit => elicit_command(inputs)?,
        Command::Simulate { full_scale } => simulate_command(inputs, *full_scale)?,
    };
    let meta = Metadata {
        tool: "mvlogit",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        seed: inputs.seed,
        config: &inputs.config,
        data: inputs.data.as_deref(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        files: files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    files.push(write_json(&inputs.out, "meta.json", &meta)?);
    Ok(files)
}

pub fn plan(targets: &DesignTargets) -> Result<SamplePlan> {
    required_n(targets)
}

fn term_names(data: &TrialDataset) -> Vec<String> {
    let cov = data.layout().covariates();
    let mut names = vec!["intercept".to_string()];
    names.extend(data.layout().terms().iter().map(|t| match t {
        Term::Treatment => "T".to_string(),
        Term::Covariate(j) => cov[*j].clone(),
        Term::Interaction(j) => format!("{}:T", cov[*j]),
    }));
    names
}

fn category_labels(data: &TrialDataset) -> Vec<String> {
    let h = data.outcomes();
    (0..h.free_categories())
        .map(|q| h.row(q).iter().map(|b| b.to_string()).collect())
        .collect()
}

struct Session {
    config: AnalysisConfig,
    loaded: LoadedData,
}

impl Session {
    fn open(inputs: &Inputs) -> Result<Self> {
        let mut config: AnalysisConfig = read_json(&inputs.config)?;
        if let Some(seed) = inputs.seed {
            config.chain.seed = seed;
        }
        config.validate()?;
        let data = inputs
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --data".into()))?;
        let loaded = load_dataset_csv(data, &config)?;
        Ok(Self { config, loaded })
    }

    fn data(&self) -> &TrialDataset {
        &self.loaded.data
    }

    fn prior(&self) -> Result<NormalPrior> {
        let h = self.data().outcomes();
        let width = self.data().layout().width() + 1;
        let p = &self.config.prior;
        let means = match (&p.means, &p.beliefs) {
            (Some(m), _) => m.clone(),
            (None, Some(b)) => elicit_prior_means(b)?,
            (None, None) => return NormalPrior::diffuse(h.free_categories(), width, p.precision),
        };
        if means.categories() != h.free_categories() || means.width() != width {
            return Err(Error::Config(format!(
                "prior means are {}x{} but the model needs {}x{}",
                means.categories(),
                means.width(),
                h.free_categories(),
                width
            )));
        }
        NormalPrior::with_means(means, p.precision)
    }

    fn fit(&self) -> Result<PosteriorSample> {
        run_chains(self.data(), &self.prior()?, &self.config.chain)
    }
}

#[derive(Debug, Serialize)]
struct DataSummary {
    rows: usize,
    arm_counts: [usize; 2],
    outcomes: Vec<String>,
    covariates: Vec<String>,
    standardization: Vec<Standardization>,
}

impl DataSummary {
    fn new(s: &Session) -> Self {
        Self {
            rows: s.data().len(),
            arm_counts: s.data().arm_counts(),
            outcomes: s.config.outcomes.clone(),
            covariates: s.config.covariates.clone(),
            standardization: s.loaded.standardization.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    chain: ChainConfig,
    draws: usize,
    gelman_rubin: Option<f64>,
    non_convergence: bool,
}

impl Diagnostics {
    fn new(post: &PosteriorSample) -> Self {
        let meta = post.meta();
        Self {
            chain: meta.config,
            draws: post.n_draws(),
            gelman_rubin: meta.gelman_rubin,
            non_convergence: meta.non_convergence,
        }
    }
}

#[derive(Debug, Serialize)]
struct FitReport {
    data: DataSummary,
    prior_precision: f64,
    terms: Vec<String>,
    /// Response pattern of each non-reference category, in row order.
    categories: Vec<String>,
    diagnostics: Diagnostics,
    posterior_mean: Coefficients,
    posterior_sd: Coefficients,
}

fn fit_command(inputs: &Inputs) -> Result<Vec<PathBuf>> {
    let session = Session::open(inputs)?;
    let post = session.fit()?;
    let report = FitReport {
        data: DataSummary::new(&session),
        prior_precision: session.config.prior.precision,
        terms: term_names(session.data()),
        categories: category_labels(session.data()),
        diagnostics: Diagnostics::new(&post),
        posterior_mean: post.mean(),
        posterior_sd: post.sd(),
    };
    let mut csv = Vec::new();
    post.write_csv(&mut csv).map_err(|e| Error::Io(e.to_string()))?;
    Ok(vec![
        write_json(&inputs.out, "fit.json", &report)?,
        write_file(&inputs.out, "draws.csv", &csv)?,
    ])
}

/// Reads draws written by `fit` back into a posterior sample for the
/// model that `data` was loaded with.
pub fn read_draws(path: &Path, data: &TrialDataset, config: ChainConfig) -> Result<PosteriorSample> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let cats = data.outcomes().free_categories();
    let width = data.layout().width() + 1;
    let mut chains: Vec<Vec<Coefficients>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let field = |j: usize, name: &str| -> Result<&str> {
            rec.get(j).ok_or_else(|| Error::Ingestion {
                row,
                column: name.into(),
                message: "missing value".into(),
            })
        };
        let int = |j: usize, name: &str| -> Result<usize> {
            field(j, name)?.parse().map_err(|_| Error::Ingestion {
                row,
                column: name.into(),
                message: "expected a nonnegative integer".into(),
            })
        };
        let (c, it, q, p) = (int(0, "chain")?, int(1, "iteration")?, int(2, "q")?, int(3, "p")?);
        let value: f64 = field(4, "value")?.parse().map_err(|_| Error::Ingestion {
            row,
            column: "value".into(),
            message: "expected a number".into(),
        })?;
        if c == 0 || it == 0 || q == 0 || q > cats || p >= width {
            return Err(Error::Ingestion {
                row,
                column: "q".into(),
                message: format!("entry ({c}, {it}, {q}, {p}) does not fit a {cats}x{width} model"),
            });
        }
        if chains.len() < c {
            chains.resize_with(c, Vec::new);
        }
        let chain = &mut chains[c - 1];
        if chain.len() < it {
            chain.resize_with(it, || Coefficients::zeros(cats, width));
        }
        chain[it - 1].set(q - 1, p, value);
    }
    let n = chains.first().map_or(0, Vec::len);
    if n == 0 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Validation(format!("{}: chains are empty or of unequal length", path.display())));
    }
    let config = ChainConfig {
        iterations: n,
        chains: chains.len(),
        ..config
    };
    PosteriorSample::from_chains(chains, data.outcomes().clone(), data.layout().clone(), config)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RuleDecision {
    pub rule: String,
    pub definition: DecisionRule,
    pub p_superior: f64,
    pub p_inferior: f64,
    pub p_cut: f64,
    /// `superior`, `inferior`, `inconclusive`, or `conflicting` when both
    /// regions pass their threshold.
    pub verdict: String,
    pub weighted_delta_mean: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PopulationReport {
    label: String,
    spec: PopulationSpec,
    summary: EffectSummary,
    decisions: Vec<RuleDecision>,
}

#[derive(Debug, Serialize)]
struct DecisionReport {
    data: DataSummary,
    diagnostics: Diagnostics,
    sidedness: Sidedness,
    alpha: f64,
    populations: Vec<PopulationReport>,
}

fn decide_rules(
    effects: &mvlogit::effects::EffectSample,
    config: &AnalysisConfig,
) -> Result<Vec<RuleDecision>> {
    let k = effects.k();
    config
        .rules
        .iter()
        .map(|rule| {
            let p_cut = match config.p_cut {
                Some(p) => p,
                None => default_p_cut(&rule.kind, k, config.alpha, config.sidedness)?,
            };
            let sup = rejection_probability(effects, rule, Region::Superiority)?;
            let inf = rejection_probability(effects, rule, Region::Inferiority)?;
            let verdict = match decide(sup, inf, p_cut, p_cut, config.sidedness) {
                Ok(d) => match d.verdict {
                    Verdict::Superior => "superior",
                    Verdict::Inferior => "inferior",
                    Verdict::Inconclusive => "inconclusive",
                },
                Err(Error::Decision(_)) => "conflicting",
                Err(e) => return Err(e),
            };
            let weighted_delta_mean = match &rule.kind {
                mvlogit::decision::RuleKind::Compensatory(w) => {
                    let v = effects.weighted(w)?;
                    Some(v.iter().sum::<f64>() / v.len() as f64)
                }
                _ => None,
            };
            Ok(RuleDecision {
                rule: rule_label(rule),
                definition: rule.clone(),
                p_superior: sup,
                p_inferior: inf,
                p_cut,
                verdict: verdict.into(),
                weighted_delta_mean,
            })
        })
        .collect()
}

fn decide_command(inputs: &Inputs, draws: Option<&Path>) -> Result<Vec<PathBuf>> {
    let session = Session::open(inputs)?;
    if session.config.rules.is_empty() {
        return Err(Error::Config("decide needs at least one rule".into()));
    }
    let post = match draws {
        Some(path) => read_draws(path, session.data(), session.config.chain)?,
        None => session.fit()?,
    };
    let mut populations = Vec::new();
    let mut effects_csv = String::from("population,treatment,quantity,index,mean,lower,upper\n");
    let mut decisions_csv = String::from("population,rule,p_superior,p_inferior,p_cut,verdict\n");
    for pop in session.config.populations() {
        let effects = effects_for_population(&post, session.data(), &pop.spec)?;
        let summary = effects.summary(session.config.interval_level);
        for t in 0..2 {
            for (j, (m, ci)) in summary.theta_mean[t].iter().zip(&summary.theta_interval[t]).enumerate() {
                effects_csv.push_str(&format!("{},{t},theta,{},{m},{},{}\n", pop.label, j + 1, ci[0], ci[1]));
            }
        }
        for (j, (m, ci)) in summary.delta_mean.iter().zip(&summary.delta_interval).enumerate() {
            effects_csv.push_str(&format!("{},,delta,{},{m},{},{}\n", pop.label, j + 1, ci[0], ci[1]));
        }
        let decisions = decide_rules(&effects, &session.config)?;
        for d in &decisions {
            decisions_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                pop.label, d.rule, d.p_superior, d.p_inferior, d.p_cut, d.verdict
            ));
        }
        populations.push(PopulationReport {
            label: pop.label,
            spec: pop.spec,
            summary,
            decisions,
        });
    }
    let report = DecisionReport {
        data: DataSummary::new(&session),
        diagnostics: Diagnostics::new(&post),
        sidedness: session.config.sidedness,
        alpha: session.config.alpha,
        populations,
    };
    Ok(vec![
        write_json(&inputs.out, "decision.json", &report)?,
        write_file(&inputs.out, "effects.csv", effects_csv.as_bytes())?,
        write_file(&inputs.out, "decisions.csv", decisions_csv.as_bytes())?,
    ])
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PriorMeansReport {
    pub terms: Vec<String>,
    pub categories: Vec<String>,
    pub means: Coefficients,
}

pub fn elicit(beliefs: &BeliefSet) -> Result<PriorMeansReport> {
    let means = elicit_prior_means(beliefs)?;
    Ok(PriorMeansReport {
        terms: ["intercept", "T", "z", "z:T"].map(String::from).to_vec(),
        categories: ["11", "10", "01"].map(String::from).to_vec(),
        means,
    })
}

fn elicit_command(inputs: &Inputs) -> Result<Vec<PathBuf>> {
    let beliefs: BeliefSet = read_json(&inputs.config)?;
    let report = elicit(&beliefs)?;
    let mut csv = format!("category,{}\n", report.terms.join(","));
    for (q, label) in report.categories.iter().enumerate() {
        let row: Vec<String> = report.means.row(q).iter().map(|v| format!("{:.6}", v + 0.0)).collect();
        csv.push_str(&format!("{label},{}\n", row.join(",")));
    }
    Ok(vec![
        write_json(&inputs.out, "prior_means.json", &report)?,
        write_file(&inputs.out, "prior_means.csv", csv.as_bytes())?,
    ])
}

fn simulate_command(inputs: &Inputs, full_scale: bool) -> Result<Vec<PathBuf>> {
    let mut campaign: CampaignConfig = read_json(&inputs.config)?;
    if let Some(seed) = inputs.seed {
        campaign.seed = seed;
    }
    if full_scale {
        campaign.replications = 1000;
        for s in &mut campaign.scenarios {
            s.chain.iterations = 10_000;
            s.chain.burnin = 1000;
        }
    }
    if campaign.scenarios.is_empty() {
        return Err(Error::Config("the campaign has no scenarios".into()));
    }
    let root = SeedStream::new(campaign.seed);
    let results = campaign
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| run_replications(s, campaign.replications, root.child(i as u64).seed()))
        .collect::<Result<Vec<CampaignResult>>>()?;
    let mut csv = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).map_err(|e| Error::Io(e.to_string()))?;
        let skip = if i == 0 { 0 } else { buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |p| p + 1) };
        csv.write_all(&buf[skip..]).map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(vec![
        write_json(&inputs.out, "simulation.json", &results)?,
        write_file(&inputs.out, "simulation.csv", &csv)?,
    ])
}
