//! Pólya-Gamma augmented Gibbs sampler for the multinomial logistic model.
//!
//! Each sweep visits the non-reference categories in ascending order. For
//! category q the other categories enter through the offset
//! `c_i = ln(sum_{m != q} exp(psi^m_i))` (reference included, psi = 0), so the
//! conditional likelihood of `beta^q` is binary logistic in `psi^q_i - c_i`.
//! One sweep for category q:
//!
//! 1. `omega_i ~ PG(1, psi^q_i - c_i)` for every subject,
//! 2. `beta^q ~ N(V (X' (kappa + Omega c) + B b), V)` with
//!    `V = (X' Omega X + B)^-1` and `kappa_i = I(y_i = q) - 1/2`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::model::{Coefficients, DesignLayout, OutcomeMatrix, TrialDataset};
use crate::pg::Pg1;
use crate::rng::SeedStream;

/// Gelman-Rubin values at or above this flag non-convergence.
pub const CONVERGENCE_THRESHOLD: f64 = 1.10;

pub const DEFAULT_PRIOR_PRECISION: f64 = 1e-2;

/// Independent normal priors per category: means `b^q` and precisions `B^q`.
#[derive(Debug, Clone)]
pub struct NormalPrior {
    means: Coefficients,
    precisions: Vec<DMatrix<f64>>,
}

impl NormalPrior {
    pub fn new(means: Coefficients, precisions: Vec<DMatrix<f64>>) -> Result<Self> {
        if precisions.len() != means.categories() {
            return Err(validation(format!(
                "{} precision matrices for {} categories",
                precisions.len(),
                means.categories()
            )));
        }
        let w = means.width();
        for (q, b) in precisions.iter().enumerate() {
            if b.nrows() != w || b.ncols() != w {
                return Err(validation(format!(
                    "precision matrix {q} is {}x{}, expected {w}x{w}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            let asym = (b - b.transpose()).abs().max();
            if asym > 1e-10 * b.abs().max().max(1.0) {
                return Err(validation(format!("precision matrix {q} is not symmetric")));
            }
            if Cholesky::new(b.clone()).is_none() {
                return Err(validation(format!(
                    "precision matrix {q} is not positive definite"
                )));
            }
        }
        Ok(Self { means, precisions })
    }

    /// Zero means and `precision * I` for every category.
    pub fn diffuse(categories: usize, width: usize, precision: f64) -> Result<Self> {
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(validation(format!("prior precision {precision} must be positive")));
        }
        Self::new(
            Coefficients::zeros(categories, width),
            vec![DMatrix::identity(width, width) * precision; categories],
        )
    }

    pub fn with_means(means: Coefficients, precision: f64) -> Result<Self> {
        let (c, w) = (means.categories(), means.width());
        Self::new(means, vec![DMatrix::identity(w, w) * precision; c])
    }

    pub fn means(&self) -> &Coefficients {
        &self.means
    }

    pub fn precision(&self, category: usize) -> &DMatrix<f64> {
        &self.precisions[category]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Stored iterations per chain (L).
    pub iterations: usize,
    pub burnin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burnin: 1_000,
            chains: 2,
            seed: 0,
        }
    }
}

impl ChainConfig {
    /// Reduced settings for replication campaigns.
    pub fn desk(seed: u64) -> Self {
        Self {
            iterations: 2_000,
            burnin: 500,
            chains: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("chain needs at least one stored iteration".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub config: ChainConfig,
    pub gelman_rubin: Option<f64>,
    /// Set when the Gelman-Rubin statistic reached [`CONVERGENCE_THRESHOLD`].
    pub non_convergence: bool,
}

/// Stored posterior draws, one sequence per chain, with the outcome encoding
/// and design layout they were fitted under.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    chains: Vec<Vec<Coefficients>>,
    outcomes: OutcomeMatrix,
    layout: DesignLayout,
    meta: SampleMeta,
}

impl PosteriorSample {
    /// Wraps externally produced or persisted draws and recomputes the
    /// convergence diagnostic.
    pub fn from_chains(
        chains: Vec<Vec<Coefficients>>,
        outcomes: OutcomeMatrix,
        layout: DesignLayout,
        config: ChainConfig,
    ) -> Result<Self> {
        if chains.is_empty() || chains.iter().any(|c| c.is_empty()) {
            return Err(validation("posterior sample needs nonempty chains"));
        }
        let (q, w) = (outcomes.free_categories(), layout.width() + 1);
        for d in chains.iter().flatten() {
            if d.categories() != q || d.width() != w {
                return Err(validation("posterior draws differ in shape"));
            }
            if !d.is_finite() {
                return Err(validation("posterior draws must be finite"));
            }
        }
        let mut sample = Self {
            chains,
            outcomes,
            layout,
            meta: SampleMeta {
                config,
                gelman_rubin: None,
                non_convergence: false,
            },
        };
        if sample.chains.len() >= 2 && sample.chains.iter().all(|c| c.len() >= 10) {
            // a degenerate (e.g. constant) chain leaves the statistic undefined
            if let Ok(r) = gelman_rubin(&sample) {
                sample.meta.gelman_rubin = Some(r);
                sample.meta.non_convergence = r >= CONVERGENCE_THRESHOLD;
            }
        }
        Ok(sample)
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn chains(&self) -> &[Vec<Coefficients>] {
        &self.chains
    }

    pub fn outcomes(&self) -> &OutcomeMatrix {
        &self.outcomes
    }

    pub fn layout(&self) -> &DesignLayout {
        &self.layout
    }

    pub fn categories(&self) -> usize {
        self.outcomes.free_categories()
    }

    pub fn width(&self) -> usize {
        self.layout.width() + 1
    }

    /// All draws, chains concatenated in order.
    pub fn draws(&self) -> impl Iterator<Item = &Coefficients> {
        self.chains.iter().flatten()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn mean(&self) -> Coefficients {
        let mut acc = DMatrix::zeros(self.categories(), self.width());
        for d in self.draws() {
            acc += d.matrix();
        }
        Coefficients::from_matrix(acc / self.n_draws() as f64)
    }

    pub fn sd(&self) -> Coefficients {
        let mean = self.mean();
        let mut acc = DMatrix::zeros(self.categories(), self.width());
        for d in self.draws() {
            let diff = d.matrix() - mean.matrix();
            acc += diff.component_mul(&diff);
        }
        let denom = (self.n_draws().max(2) - 1) as f64;
        Coefficients::from_matrix((acc / denom).map(f64::sqrt))
    }

    /// Columnar export: `chain,iteration,q,p,value`, 1-based q and 0-based p.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "chain,iteration,q,p,value")?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (it, d) in chain.iter().enumerate() {
                for q in 0..d.categories() {
                    for p in 0..d.width() {
                        writeln!(out, "{},{},{},{},{:e}", c + 1, it + 1, q + 1, p, d.get(q, p))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    beta: Coefficients,
    /// Linear predictors per distinct design row: `psi[g * (Q-1) + q]`.
    psi: Vec<f64>,
    omega: Vec<f64>,
    iteration: usize,
}

impl ChainState {
    pub fn beta(&self) -> &Coefficients {
        &self.beta
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Latest PG draws, per subject, of the most recently updated category.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
}

/// Subjects sharing one design row. Their predictors, offsets and PG tilts
/// coincide, so the sufficient statistics are accumulated per group.
#[derive(Debug, Clone)]
struct RowGroup {
    /// Design row with leading intercept.
    x: Vec<f64>,
    members: Vec<usize>,
    /// `sum_i kappa^q_i` over members, per category.
    kappa: Vec<f64>,
}

/// Data and prior prepared for repeated sweeps.
pub struct GibbsSampler<'a> {
    prior: &'a NormalPrior,
    groups: Vec<RowGroup>,
    n: usize,
    prior_shift: Vec<DVector<f64>>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &TrialDataset, prior: &'a NormalPrior) -> Result<Self> {
        if data.is_empty() {
            return Err(validation("cannot fit an empty dataset"));
        }
        let width = data.layout().width() + 1;
        let cats = data.outcomes().free_categories();
        if prior.means.categories() != cats || prior.means.width() != width {
            return Err(validation(format!(
                "prior is {}x{}, model needs {cats}x{width}",
                prior.means.categories(),
                prior.means.width()
            )));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<RowGroup> = Vec::new();
        for (i, (row, &y)) in data.design().iter().zip(data.categories()).enumerate() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                let mut x = Vec::with_capacity(width);
                x.push(1.0);
                x.extend_from_slice(row);
                groups.push(RowGroup {
                    x,
                    members: Vec::new(),
                    kappa: vec![0.0; cats],
                });
                groups.len() - 1
            });
            let group = &mut groups[g];
            group.members.push(i);
            for (q, k) in group.kappa.iter_mut().enumerate() {
                *k += if y == q { 0.5 } else { -0.5 };
            }
        }
        let prior_shift = (0..cats)
            .map(|q| &prior.precisions[q] * DVector::from_vec(prior.means.row(q)))
            .collect();
        Ok(Self {
            prior,
            groups,
            n: data.len(),
            prior_shift,
        })
    }

    /// Chain initialised at the prior means.
    pub fn initial_state(&self) -> ChainState {
        self.state_at(self.prior.means.clone())
    }

    pub fn state_at(&self, beta: Coefficients) -> ChainState {
        let cats = beta.categories();
        let mut psi = vec![0.0; self.groups.len() * cats];
        for (g, group) in self.groups.iter().enumerate() {
            for q in 0..cats {
                psi[g * cats + q] = dot(&beta.row(q), &group.x);
            }
        }
        ChainState {
            beta,
            psi,
            omega: vec![0.0; self.n],
            iteration: 0,
        }
    }

    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let cats = state.beta.categories();
        let width = state.beta.width();
        for q in 0..cats {
            let mut prec = self.prior.precisions[q].clone();
            let mut rhs = self.prior_shift[q].clone();
            for (g, group) in self.groups.iter().enumerate() {
                // PG step for every member
                let row = &state.psi[g * cats..(g + 1) * cats];
                let c = log_sum_exp_excluding(row, q);
                let pg = Pg1::new(row[q] - c);
                let mut w = 0.0;
                for &i in &group.members {
                    let omega = pg.draw(rng);
                    state.omega[i] = omega;
                    w += omega;
                }
                // sufficient statistics for the normal step
                let xi = &group.x;
                let r = group.kappa[q] + w * c;
                for a in 0..width {
                    let wa = w * xi[a];
                    rhs[a] += xi[a] * r;
                    for b in a..width {
                        prec[(a, b)] += wa * xi[b];
                    }
                }
            }
            for a in 0..width {
                for b in 0..a {
                    prec[(a, b)] = prec[(b, a)];
                }
            }
            let chol = Cholesky::new(prec).ok_or_else(|| Error::Chain {
                chain: 0,
                iteration: state.iteration,
                message: format!(
                    "posterior precision for category {} is not positive definite",
                    q + 1
                ),
            })?;
            let mean = chol.solve(&rhs);
            let eps = DVector::from_fn(width, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&eps)
                .expect("Cholesky factor has a positive diagonal");
            let draw = mean + noise;
            if draw.iter().any(|v| !v.is_finite()) {
                return Err(Error::Chain {
                    chain: 0,
                    iteration: state.iteration,
                    message: format!("non-finite coefficient draw for category {}", q + 1),
                });
            }
            for p in 0..width {
                state.beta.set(q, p, draw[p]);
            }
            let bq = draw.as_slice();
            for (g, group) in self.groups.iter().enumerate() {
                state.psi[g * cats + q] = dot(bq, &group.x);
            }
        }
        state.iteration += 1;
        Ok(())
    }

    fn run_chain(&self, config: &ChainConfig, stream: SeedStream, chain: usize) -> Result<Vec<Coefficients>> {
        let mut rng = stream.rng();
        let mut state = self.initial_state();
        let mut draws = Vec::with_capacity(config.iterations);
        for it in 0..config.burnin + config.iterations {
            self.sweep(&mut state, &mut rng).map_err(|e| match e {
                Error::Chain {
                    iteration, message, ..
                } => Error::Chain {
                    chain,
                    iteration,
                    message,
                },
                other => other,
            })?;
            if it >= config.burnin {
                draws.push(state.beta.clone());
            }
        }
        Ok(draws)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(sum_{m != skip} exp(row[m]) + 1)`
#[inline]
fn log_sum_exp_excluding(row: &[f64], skip: usize) -> f64 {
    let mut m = 0.0_f64;
    for (j, &v) in row.iter().enumerate() {
        if j != skip && v > m {
            m = v;
        }
    }
    let mut s = (-m).exp();
    for (j, &v) in row.iter().enumerate() {
        if j != skip {
            s += (v - m).exp();
        }
    }
    m + s.ln()
}

/// One full sweep over all non-reference categories.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &TrialDataset,
    prior: &NormalPrior,
    rng: &mut R,
) -> Result<()> {
    GibbsSampler::new(data, prior)?.sweep(state, rng)
}

/// Runs `config.chains` independent chains (in parallel) and records the
/// multivariate Gelman-Rubin statistic when at least two chains are present.
pub fn run_chains(
    data: &TrialDataset,
    prior: &NormalPrior,
    config: &ChainConfig,
) -> Result<PosteriorSample> {
    config.validate()?;
    let sampler = GibbsSampler::new(data, prior)?;
    let root = SeedStream::new(config.seed);
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| sampler.run_chain(config, root.child(c as u64), c))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSample::from_chains(chains, data.outcomes().clone(), data.layout().clone(), *config)
}

/// Multivariate potential scale reduction factor over the stacked
/// coefficient vector:
/// `sqrt((n-1)/n + (m+1)/m * lambda_max(W^-1 B/n))`.
pub fn gelman_rubin(sample: &PosteriorSample) -> Result<f64> {
    let chains: Vec<Vec<Vec<f64>>> = sample
        .chains()
        .iter()
        .map(|c| c.iter().map(Coefficients::stacked).collect())
        .collect();
    gelman_rubin_vectors(&chains)
}

/// Same statistic on raw vectors, `chains[c][t][j]`.
pub fn gelman_rubin_vectors(chains: &[Vec<Vec<f64>>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(validation("Gelman-Rubin needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(validation(
            "Gelman-Rubin needs chains of equal length with at least 10 draws",
        ));
    }
    let d = chains[0][0].len();
    let means: Vec<DVector<f64>> = chains
        .iter()
        .map(|c| {
            let mut acc = DVector::zeros(d);
            for v in c {
                acc += DVector::from_column_slice(v);
            }
            acc / n as f64
        })
        .collect();
    let grand = means.iter().fold(DVector::zeros(d), |a, b| a + b) / m as f64;

    let mut w = DMatrix::zeros(d, d);
    for (c, mean) in chains.iter().zip(&means) {
        for v in c {
            let e = DVector::from_column_slice(v) - mean;
            w += &e * e.transpose();
        }
    }
    w /= (m * (n - 1)) as f64;
    let mut b_over_n = DMatrix::zeros(d, d);
    for mean in &means {
        let e = mean - &grand;
        b_over_n += &e * e.transpose();
    }
    b_over_n /= (m - 1) as f64;

    let chol = Cholesky::new(w)
        .ok_or_else(|| validation("within-chain covariance is singular"))?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(&b_over_n)
        .ok_or_else(|| validation("within-chain covariance is singular"))?;
    let sym = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| validation("within-chain covariance is singular"))?;
    let sym = (&sym + sym.transpose()) * 0.5;
    let lambda = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let nf = n as f64;
    let mf = m as f64;
    Ok(((nf - 1.0) / nf + (mf + 1.0) / mf * lambda).sqrt())
}
