//! From posterior coefficients to joint response probabilities (phi),
//! marginal success probabilities (theta) and treatment differences (delta),
//! for fixed covariate values or by averaging over observed subjects.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::gibbs::PosteriorSample;
use crate::model::{inverse_mlogit_into, linear_predictor, OutcomeMatrix, TrialDataset};

/// theta^k = sum of phi^q over categories with a success on outcome k.
pub fn phi_to_theta(phi: &[f64], outcomes: &OutcomeMatrix) -> Vec<f64> {
    let mut theta = vec![0.0; outcomes.k()];
    phi_to_theta_into(phi, outcomes, &mut theta);
    theta
}

fn phi_to_theta_into(phi: &[f64], outcomes: &OutcomeMatrix, theta: &mut [f64]) {
    theta.fill(0.0);
    for (q, &p) in phi.iter().enumerate() {
        for (k, t) in theta.iter_mut().enumerate() {
            if outcomes.entry(q, k) == 1 {
                *t += p;
            }
        }
    }
}

pub fn theta_to_delta(theta1: &[f64], theta0: &[f64]) -> Result<Vec<f64>> {
    if theta1.len() != theta0.len() {
        return Err(validation(format!(
            "theta vectors differ in length ({} vs {})",
            theta1.len(),
            theta0.len()
        )));
    }
    if theta1.iter().chain(theta0).any(|t| !(0.0..=1.0).contains(t)) {
        return Err(validation("success probabilities must lie in [0, 1]"));
    }
    Ok(theta1.iter().zip(theta0).map(|(a, b)| a - b).collect())
}

/// Nonnegative outcome weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(validation("weights must not be empty"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(validation("weights must be finite and nonnegative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(validation(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn equal(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// delta(w) = sum_k w^k delta^k
pub fn weighted_delta(delta: &[f64], w: &Weights) -> Result<f64> {
    if delta.len() != w.len() {
        return Err(validation(format!(
            "{} weights for {} outcomes",
            w.len(),
            delta.len()
        )));
    }
    Ok(delta.iter().zip(w.as_slice()).map(|(d, w)| d * w).sum())
}

/// Per-draw phi and theta for both arms plus delta, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSample {
    outcomes: OutcomeMatrix,
    draws: usize,
    phi: [Vec<f64>; 2],
    theta: [Vec<f64>; 2],
    delta: Vec<f64>,
}

impl EffectSample {
    /// Builds the sample from per-draw joint probabilities, `phi[T][l * Q + q]`.
    pub fn from_phi(outcomes: OutcomeMatrix, phi: [Vec<f64>; 2]) -> Result<Self> {
        let q = outcomes.q();
        let k = outcomes.k();
        if phi[0].len() != phi[1].len() || !phi[0].len().is_multiple_of(q) {
            return Err(validation("joint probability draws have inconsistent sizes"));
        }
        let draws = phi[0].len() / q;
        let mut theta = [vec![0.0; draws * k], vec![0.0; draws * k]];
        for t in 0..2 {
            for l in 0..draws {
                phi_to_theta_into(
                    &phi[t][l * q..(l + 1) * q],
                    &outcomes,
                    &mut theta[t][l * k..(l + 1) * k],
                );
            }
        }
        let delta = theta[1].iter().zip(&theta[0]).map(|(a, b)| a - b).collect();
        Ok(Self {
            outcomes,
            draws,
            phi,
            theta,
            delta,
        })
    }

    pub fn outcomes(&self) -> &OutcomeMatrix {
        &self.outcomes
    }

    pub fn n_draws(&self) -> usize {
        self.draws
    }

    pub fn k(&self) -> usize {
        self.outcomes.k()
    }

    pub fn phi(&self, treatment: u8, draw: usize) -> &[f64] {
        let q = self.outcomes.q();
        &self.phi[treatment as usize][draw * q..(draw + 1) * q]
    }

    pub fn theta(&self, treatment: u8, draw: usize) -> &[f64] {
        let k = self.k();
        &self.theta[treatment as usize][draw * k..(draw + 1) * k]
    }

    pub fn delta(&self, draw: usize) -> &[f64] {
        let k = self.k();
        &self.delta[draw * k..(draw + 1) * k]
    }

    pub fn deltas(&self) -> impl Iterator<Item = &[f64]> {
        self.delta.chunks(self.k())
    }

    pub fn weighted(&self, w: &Weights) -> Result<Vec<f64>> {
        self.deltas().map(|d| weighted_delta(d, w)).collect()
    }

    /// Same sample with every delta sign-flipped and the arms' theta
    /// replaced by failure probabilities.
    pub fn to_failures(&self) -> Self {
        let flip = |v: &Vec<f64>| v.iter().map(|t| 1.0 - t).collect::<Vec<_>>();
        Self {
            outcomes: self.outcomes.clone(),
            draws: self.draws,
            phi: self.phi.clone(),
            theta: [flip(&self.theta[0]), flip(&self.theta[1])],
            delta: self.delta.iter().map(|d| -d).collect(),
        }
    }

    pub fn mean_theta(&self, treatment: u8) -> Vec<f64> {
        column_means(&self.theta[treatment as usize], self.k())
    }

    pub fn mean_delta(&self) -> Vec<f64> {
        column_means(&self.delta, self.k())
    }

    pub fn mean_phi(&self, treatment: u8) -> Vec<f64> {
        column_means(&self.phi[treatment as usize], self.outcomes.q())
    }

    /// Posterior means and central intervals of theta and delta.
    pub fn summary(&self, level: f64) -> EffectSummary {
        let k = self.k();
        let lo = 0.5 * (1.0 - level);
        let column = |v: &[f64], j: usize| -> Vec<f64> { v.iter().skip(j).step_by(k).copied().collect() };
        let interval = |v: &[f64]| -> Vec<[f64; 2]> {
            (0..k)
                .map(|j| {
                    let mut c = column(v, j);
                    c.sort_by(f64::total_cmp);
                    [quantile_sorted(&c, lo), quantile_sorted(&c, 1.0 - lo)]
                })
                .collect()
        };
        EffectSummary {
            draws: self.draws,
            level,
            theta_mean: [self.mean_theta(0), self.mean_theta(1)],
            theta_interval: [interval(&self.theta[0]), interval(&self.theta[1])],
            delta_mean: self.mean_delta(),
            delta_interval: interval(&self.delta),
        }
    }

    /// Columnar export: `draw,treatment,quantity,index,value` where quantity
    /// is `phi`, `theta` or `delta` (treatment empty for delta); indices 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "draw,treatment,quantity,index,value")?;
        for l in 0..self.draws {
            for t in 0..2u8 {
                for (q, v) in self.phi(t, l).iter().enumerate() {
                    writeln!(out, "{},{t},phi,{},{v:e}", l + 1, q + 1)?;
                }
                for (k, v) in self.theta(t, l).iter().enumerate() {
                    writeln!(out, "{},{t},theta,{},{v:e}", l + 1, k + 1)?;
                }
            }
            for (k, v) in self.delta(l).iter().enumerate() {
                writeln!(out, "{},,delta,{},{v:e}", l + 1, k + 1)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub draws: usize,
    pub level: f64,
    pub theta_mean: [Vec<f64>; 2],
    pub theta_interval: [Vec<[f64; 2]>; 2],
    pub delta_mean: Vec<f64>,
    pub delta_interval: Vec<[f64; 2]>,
}

fn column_means(v: &[f64], width: usize) -> Vec<f64> {
    let rows = v.len() / width;
    let mut m = vec![0.0; width];
    for row in v.chunks(width) {
        for (a, b) in m.iter_mut().zip(row) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows as f64);
    m
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A condition on one named covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Half-open interval `[lo, hi)`; either bound may be omitted.
    Interval {
        covariate: String,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    Equals { covariate: String, value: f64 },
}

impl Predicate {
    fn covariate(&self) -> &str {
        match self {
            Predicate::Interval { covariate, .. } | Predicate::Equals { covariate, .. } => covariate,
        }
    }

    fn holds(&self, v: f64) -> bool {
        match *self {
            Predicate::Interval { lo, hi, .. } => {
                lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v < hi)
            }
            Predicate::Equals { value, .. } => v == value,
        }
    }
}

/// Conjunction of predicates; the empty filter keeps everyone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Filter(pub Vec<Predicate>);

impl Filter {
    pub fn all() -> Self {
        Self(Vec::new())
    }

    fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        self.0
            .iter()
            .map(|p| {
                names
                    .iter()
                    .position(|n| n == p.covariate())
                    .ok_or_else(|| validation(format!("unknown covariate '{}' in filter", p.covariate())))
            })
            .collect()
    }

    /// Indices of the subjects whose covariates satisfy every predicate.
    pub fn select(&self, data: &TrialDataset) -> Result<Vec<usize>> {
        let cols = self.resolve(data.layout().covariates())?;
        Ok(data
            .covariates()
            .iter()
            .enumerate()
            .filter(|(_, z)| self.0.iter().zip(&cols).all(|(p, &c)| p.holds(z[c])))
            .map(|(i, _)| i)
            .collect())
    }

    /// Whether a single covariate vector (in layout order) passes.
    pub fn matches(&self, names: &[String], z: &[f64]) -> Result<bool> {
        let cols = self.resolve(names)?;
        Ok(self.0.iter().zip(&cols).all(|(p, &c)| p.holds(z[c])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// Covariate values in layout order; the treatment is substituted.
    Fixed { covariates: Vec<f64> },
    /// Average over the observed subjects passing the filter, each arm
    /// over its own subjects.
    Empirical {
        #[serde(default)]
        filter: Filter,
    },
}

pub fn effects_for_population(
    post: &PosteriorSample,
    data: &TrialDataset,
    population: &PopulationSpec,
) -> Result<EffectSample> {
    match population {
        PopulationSpec::Fixed { covariates } => effects_at_fixed_x(post, covariates),
        PopulationSpec::Empirical { filter } => effects_empirical_marginal(post, data, filter),
    }
}

/// Fixed-value transformation: one phi per draw and arm at `z` with T set
/// to 0 and 1 through the fitted design layout.
pub fn effects_at_fixed_x(post: &PosteriorSample, z: &[f64]) -> Result<EffectSample> {
    let layout = post.layout();
    if !layout.has_treatment() {
        return Err(validation("the fitted design has no treatment term"));
    }
    let rows = [layout.row(0, z)?, layout.row(1, z)?];
    let q = post.outcomes().q();
    let cats = q - 1;
    let draws: Vec<_> = post.draws().collect();
    let mut phi = [vec![0.0; draws.len() * q], vec![0.0; draws.len() * q]];
    let mut psi = vec![0.0; cats];
    for t in 0..2 {
        for (l, beta) in draws.iter().enumerate() {
            for (c, p) in psi.iter_mut().enumerate() {
                *p = linear_predictor(beta, c, &rows[t]);
            }
            inverse_mlogit_into(&psi, &mut phi[t][l * q..(l + 1) * q]);
        }
    }
    EffectSample::from_phi(post.outcomes().clone(), phi)
}

/// Empirical marginalization: per draw and arm, the mean of phi_i(x_i)
/// over retained subjects of that arm, each with their own design row.
pub fn effects_empirical_marginal(
    post: &PosteriorSample,
    data: &TrialDataset,
    filter: &Filter,
) -> Result<EffectSample> {
    if data.layout() != post.layout() || data.outcomes() != post.outcomes() {
        return Err(validation("dataset layout differs from the fitted model"));
    }
    if !post.layout().has_treatment() {
        return Err(validation("the fitted design has no treatment term"));
    }
    let kept = filter.select(data)?;
    let mut arms: [Vec<&[f64]>; 2] = [Vec::new(), Vec::new()];
    for &i in &kept {
        arms[data.treatment()[i] as usize].push(&data.design()[i]);
    }
    for (t, arm) in arms.iter().enumerate() {
        if arm.is_empty() {
            return Err(Error::EmptySubpopulation { treatment: t as u8 });
        }
    }
    let q = post.outcomes().q();
    let cats = q - 1;
    let draws: Vec<_> = post.draws().collect();
    let per_draw: Vec<[Vec<f64>; 2]> = draws
        .par_iter()
        .map(|beta| {
            let mut psi = vec![0.0; cats];
            let mut phi_i = vec![0.0; q];
            let mut out = [vec![0.0; q], vec![0.0; q]];
            for (t, arm) in arms.iter().enumerate() {
                for x in arm {
                    for (c, p) in psi.iter_mut().enumerate() {
                        *p = linear_predictor(beta, c, x);
                    }
                    inverse_mlogit_into(&psi, &mut phi_i);
                    for (a, b) in out[t].iter_mut().zip(&phi_i) {
                        *a += b;
                    }
                }
                let m = arm.len() as f64;
                out[t].iter_mut().for_each(|a| *a /= m);
            }
            out
        })
        .collect();
    let mut phi = [Vec::with_capacity(draws.len() * q), Vec::with_capacity(draws.len() * q)];
    for [p0, p1] in per_draw {
        phi[0].extend(p0);
        phi[1].extend(p1);
    }
    EffectSample::from_phi(post.outcomes().clone(), phi)
}

/// Conjugate multinomial-Dirichlet posterior per arm, ignoring covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    pub alpha0: Vec<f64>,
    pub alpha_n: [Vec<f64>; 2],
}

impl DirichletPosterior {
    pub fn new(data: &TrialDataset, alpha0: &[f64]) -> Result<Self> {
        let q = data.outcomes().q();
        if alpha0.len() != q {
            return Err(validation(format!("alpha0 has {} entries, expected {q}", alpha0.len())));
        }
        if alpha0.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(validation("alpha0 must be finite and nonnegative"));
        }
        let counts = data.category_counts();
        let post = |t: usize| -> Vec<f64> {
            alpha0
                .iter()
                .zip(&counts[t])
                .map(|(a, &c)| a + c as f64)
                .collect()
        };
        Ok(Self {
            alpha0: alpha0.to_vec(),
            alpha_n: [post(0), post(1)],
        })
    }

    pub fn mean(&self, treatment: u8) -> Vec<f64> {
        let a = &self.alpha_n[treatment as usize];
        let s: f64 = a.iter().sum();
        a.iter().map(|v| v / s).collect()
    }

    fn check_proper(&self) -> Result<()> {
        for (t, a) in self.alpha_n.iter().enumerate() {
            if let Some(q) = a.iter().position(|&v| v <= 0.0) {
                return Err(Error::ImproperPosterior {
                    treatment: t as u8,
                    category: q + 1,
                    value: a[q],
                });
            }
        }
        Ok(())
    }

    /// `l` joint-probability draws per arm, as normalized Gamma variates.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        outcomes: &OutcomeMatrix,
        l: usize,
        rng: &mut R,
    ) -> Result<EffectSample> {
        self.check_proper()?;
        if l == 0 {
            return Err(validation("at least one Dirichlet draw is required"));
        }
        let q = outcomes.q();
        let mut phi = [Vec::with_capacity(l * q), Vec::with_capacity(l * q)];
        for (alpha, out) in self.alpha_n.iter().zip(phi.iter_mut()) {
            let gammas = alpha
                .iter()
                .map(|&a| Gamma::new(a, 1.0).map_err(|e| validation(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            for _ in 0..l {
                let start = out.len();
                let mut total = 0.0;
                for g in &gammas {
                    let v = g.sample(rng);
                    total += v;
                    out.push(v);
                }
                if total <= 0.0 {
                    // every Gamma variate underflowed; only possible for tiny alpha
                    return Err(validation("Dirichlet draw underflowed; use a larger alpha0"));
                }
                out[start..].iter_mut().for_each(|v| *v /= total);
            }
        }
        EffectSample::from_phi(outcomes.clone(), phi)
    }
}

/// Stratified reference analysis on `data`, which should already be
/// restricted to the stratum of interest.
pub fn dirichlet_reference<R: Rng + ?Sized>(
    data: &TrialDataset,
    alpha0: &[f64],
    l: usize,
    rng: &mut R,
) -> Result<EffectSample> {
    DirichletPosterior::new(data, alpha0)?.sample(data.outcomes(), l, rng)
}

/// Pairwise outcome correlation implied by a K = 2 joint distribution.
pub fn implied_correlation(phi: &[f64]) -> Result<f64> {
    if phi.len() != 4 {
        return Err(validation("correlation needs a two-outcome joint distribution"));
    }
    let t1 = phi[0] + phi[1];
    let t2 = phi[0] + phi[2];
    let sd = (t1 * (1.0 - t1) * t2 * (1.0 - t2)).sqrt();
    if sd == 0.0 {
        return Err(validation("correlation undefined for a degenerate margin"));
    }
    Ok((phi[0] - t1 * t2) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::ChainConfig;
    use crate::model::{inverse_mlogit, linear_predictors, Coefficients, DesignLayout};
    use crate::rng::SeedStream;
    use proptest::prelude::*;

    fn single_draw(beta: Coefficients, k: usize, layout: DesignLayout) -> PosteriorSample {
        PosteriorSample::from_chains(
            vec![vec![beta]],
            OutcomeMatrix::new(k).unwrap(),
            layout,
            ChainConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn theta_from_uniform_phi() {
        let h = OutcomeMatrix::new(2).unwrap();
        assert_eq!(phi_to_theta(&[0.25; 4], &h), vec![0.5, 0.5]);
        let phi = [0.1, 0.2, 0.3, 0.4];
        let th = phi_to_theta(&phi, &h);
        assert!((th[0] - 0.3).abs() < 1e-15 && (th[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn weighted_examples() {
        let w = Weights::new(vec![0.5, 0.5]).unwrap();
        assert!((weighted_delta(&[0.150, 0.050], &w).unwrap() - 0.100).abs() < 1e-15);
        let w = Weights::new(vec![0.25, 0.75]).unwrap();
        assert!((weighted_delta(&[0.4, -0.2], &w).unwrap() + 0.05).abs() < 1e-15);
        assert!(Weights::new(vec![0.5, 0.6]).is_err());
        assert!(Weights::new(vec![-0.5, 1.5]).is_err());
        assert!(weighted_delta(&[0.1], &w).is_err());
        assert_eq!(theta_to_delta(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), vec![0.0, 0.0]);
        assert!(theta_to_delta(&[0.3], &[0.3, 0.2]).is_err());
    }

    #[test]
    fn weights_deserialize_with_validation() {
        let w: Weights = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<Weights>("[0.3, 0.3]").is_err());
    }

    #[test]
    fn zero_coefficients_give_uniform_effects() {
        let layout = DesignLayout::with_interactions(vec!["z".into()]);
        let post = single_draw(Coefficients::zeros(3, 4), 2, layout);
        let fx = effects_at_fixed_x(&post, &[1.3]).unwrap();
        assert_eq!(fx.phi(0, 0), &[0.25; 4]);
        assert_eq!(fx.delta(0), &[0.0, 0.0]);
    }

    #[test]
    fn fixed_x_is_the_composition() {
        let layout = DesignLayout::with_interactions(vec!["z".into()]);
        let beta = Coefficients::from_rows(&[
            vec![0.1, -0.4, 0.3, 0.2],
            vec![-0.7, 0.5, 0.0, 1.1],
            vec![0.2, 0.2, -0.6, 0.4],
        ])
        .unwrap();
        let post = single_draw(beta.clone(), 2, layout.clone());
        let fx = effects_at_fixed_x(&post, &[0.8]).unwrap();
        for t in 0..2u8 {
            let x = layout.row(t, &[0.8]).unwrap();
            let phi = inverse_mlogit(&linear_predictors(&beta, &x).unwrap());
            assert_eq!(fx.phi(t, 0), phi.as_slice());
        }
    }

    #[test]
    fn fixed_x_requires_matching_covariates() {
        let layout = DesignLayout::with_interactions(vec!["z".into()]);
        let post = single_draw(Coefficients::zeros(3, 4), 2, layout);
        assert!(effects_at_fixed_x(&post, &[]).is_err());
        let post = single_draw(Coefficients::zeros(1, 1), 1, DesignLayout::intercept_only());
        assert!(effects_at_fixed_x(&post, &[]).is_err());
    }

    fn toy_data() -> TrialDataset {
        let y = vec![vec![1, 1], vec![0, 1], vec![1, 0], vec![0, 0], vec![1, 1], vec![0, 0]];
        TrialDataset::new(
            2,
            &y,
            vec![0, 0, 0, 1, 1, 1],
            vec![vec![0.0], vec![1.0], vec![2.5], vec![0.0], vec![1.0], vec![-1.0]],
            DesignLayout::with_interactions(vec!["z".into()]),
        )
        .unwrap()
    }

    #[test]
    fn empirical_is_arithmetic_mean_of_subjects() {
        let data = toy_data();
        let beta = Coefficients::from_rows(&[
            vec![0.1, -0.4, 0.3, 0.2],
            vec![-0.7, 0.5, 0.0, 1.1],
            vec![0.2, 0.2, -0.6, 0.4],
        ])
        .unwrap();
        let post = single_draw(beta.clone(), 2, data.layout().clone());
        // two subjects per arm with z in [0, 2)
        let filter = Filter(vec![Predicate::Interval {
            covariate: "z".into(),
            lo: Some(0.0),
            hi: Some(2.0),
        }]);
        let em = effects_empirical_marginal(&post, &data, &filter).unwrap();
        for (t, subjects) in [(0u8, [0usize, 1]), (1, [3, 4])] {
            let mut expect = [0.0; 4];
            for i in subjects {
                let phi = inverse_mlogit(&linear_predictors(&beta, &data.design()[i]).unwrap());
                for (e, p) in expect.iter_mut().zip(phi.as_slice()) {
                    *e += p / 2.0;
                }
            }
            for (a, b) in em.phi(t, 0).iter().zip(expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empirical_with_shared_x_equals_fixed() {
        let data = toy_data();
        let beta = Coefficients::from_rows(&[
            vec![0.3, -0.4, 0.3, 0.2],
            vec![-0.2, 0.5, 0.9, 1.1],
            vec![0.2, 0.1, -0.6, 0.4],
        ])
        .unwrap();
        let post = single_draw(beta, 2, data.layout().clone());
        let filter = Filter(vec![Predicate::Equals { covariate: "z".into(), value: 1.0 }]);
        let em = effects_empirical_marginal(&post, &data, &filter).unwrap();
        let fx = effects_at_fixed_x(&post, &[1.0]).unwrap();
        for (a, b) in em.delta(0).iter().zip(fx.delta(0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn homogeneous_model_marginal_equals_fixed() {
        let data = toy_data();
        let beta = Coefficients::from_rows(&[
            vec![0.3, -0.4, 0.0, 0.0],
            vec![-0.2, 0.5, 0.0, 0.0],
            vec![0.2, 0.1, 0.0, 0.0],
        ])
        .unwrap();
        let post = single_draw(beta, 2, data.layout().clone());
        let fx = effects_at_fixed_x(&post, &[7.0]).unwrap();
        for filter in [Filter::all(), Filter(vec![Predicate::Interval { covariate: "z".into(), lo: None, hi: Some(1.5) }])] {
            let em = effects_empirical_marginal(&post, &data, &filter).unwrap();
            for (a, b) in em.delta(0).iter().zip(fx.delta(0)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_arm_is_reported() {
        let data = toy_data();
        let post = single_draw(Coefficients::zeros(3, 4), 2, data.layout().clone());
        let filter = Filter(vec![Predicate::Interval { covariate: "z".into(), lo: Some(2.0), hi: None }]);
        let err = effects_empirical_marginal(&post, &data, &filter).unwrap_err();
        assert!(matches!(err, Error::EmptySubpopulation { treatment: 1 }));
        let bad = Filter(vec![Predicate::Equals { covariate: "age".into(), value: 1.0 }]);
        assert!(matches!(effects_empirical_marginal(&post, &data, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn interval_is_half_open() {
        let p = Predicate::Interval { covariate: "z".into(), lo: Some(0.0), hi: Some(1.0) };
        assert!(p.holds(0.0) && p.holds(0.999) && !p.holds(1.0) && !p.holds(-1e-12));
    }

    #[test]
    fn dirichlet_means() {
        let h = OutcomeMatrix::new(2).unwrap();
        let empty = TrialDataset::from_categories(h.clone(), vec![], vec![], vec![], DesignLayout::treatment_only()).unwrap();
        let post = DirichletPosterior::new(&empty, &[1.0; 4]).unwrap();
        assert_eq!(post.mean(1), vec![0.25; 4]);

        let cats = [vec![0; 3], vec![1; 1], vec![2; 2], vec![3; 4]].concat();
        let n = cats.len();
        let data = TrialDataset::from_categories(h.clone(), cats, vec![1; n], vec![vec![]; n], DesignLayout::treatment_only()).unwrap();
        let post = DirichletPosterior::new(&data, &[0.0; 4]).unwrap();
        assert_eq!(post.mean(1), vec![0.3, 0.1, 0.2, 0.4]);
        // the control arm is empty under the improper prior
        let mut rng = SeedStream::new(1).rng();
        let err = post.sample(&h, 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::ImproperPosterior { treatment: 0, category: 1, .. }));
    }

    #[test]
    fn dirichlet_sample_mean_converges() {
        let h = OutcomeMatrix::new(2).unwrap();
        let cats = [vec![0; 30], vec![1; 10], vec![2; 20], vec![3; 40]].concat();
        let treat: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let data = TrialDataset::from_categories(h.clone(), cats, treat, vec![vec![]; 100], DesignLayout::treatment_only()).unwrap();
        let post = DirichletPosterior::new(&data, &[0.5; 4]).unwrap();
        let mut rng = SeedStream::new(9).rng();
        let s = post.sample(&h, 20_000, &mut rng).unwrap();
        for t in 0..2u8 {
            for (a, b) in s.mean_phi(t).iter().zip(post.mean(t)) {
                assert!((a - b).abs() < 0.005);
            }
        }
    }

    #[test]
    fn csv_export_row_count() {
        let layout = DesignLayout::treatment_only();
        let post = single_draw(Coefficients::zeros(3, 2), 2, layout);
        let fx = effects_at_fixed_x(&post, &[]).unwrap();
        let mut buf = Vec::new();
        fx.write_csv(&mut buf).unwrap();
        // per draw: 2 arms * (4 phi + 2 theta) + 2 delta
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 14);
    }

    #[test]
    fn summary_interval_of_constant_sample() {
        let layout = DesignLayout::treatment_only();
        let post = single_draw(Coefficients::from_rows(&[vec![0.0, 1.0]]).unwrap(), 1, layout);
        let s = effects_at_fixed_x(&post, &[]).unwrap().summary(0.95);
        assert_eq!(s.delta_interval[0][0], s.delta_interval[0][1]);
        assert!((s.delta_mean[0] - (1f64.exp() / (1.0 + 1f64.exp()) - 0.5)).abs() < 1e-15);
    }

    fn simplex(q: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, q).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn theta_matches_brute_force_k3(phi in simplex(8)) {
            let h = OutcomeMatrix::new(3).unwrap();
            let th = phi_to_theta(&phi, &h);
            for k in 0..3 {
                let mut s = 0.0;
                for (q, p) in phi.iter().enumerate() {
                    let bits = h.decode(q).unwrap();
                    if bits[k] == 1 { s += p; }
                }
                prop_assert_eq!(th[k], s);
            }
        }

        #[test]
        fn effect_sample_bounds(phi0 in simplex(4), phi1 in simplex(4)) {
            let h = OutcomeMatrix::new(2).unwrap();
            let s = EffectSample::from_phi(h, [phi0, phi1]).unwrap();
            for t in 0..2u8 {
                prop_assert!(s.theta(t, 0).iter().all(|v| (0.0..=1.0).contains(v)));
            }
            prop_assert!(s.delta(0).iter().all(|d| (-1.0..=1.0).contains(d)));
        }
    }
}
