//! Frequentist sample-size planning for the three decision rules and prior
//! elicitation from beliefs about success probabilities.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::decision::RuleKind;
use crate::error::{validation, Error, Result};
use crate::model::{Coefficients, JointProbs};
use crate::rng::SeedStream;

pub const DEFAULT_N_MAX: u64 = 1_000_000;
const QMC_TOLERANCE: f64 = 1e-4;
const QMC_SEED: u64 = 0x4d56_4e43;

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub(crate) fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[inline]
fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// An orthant probability with its numerical error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
}

fn check_correlation(sigma: &DMatrix<f64>, k: usize) -> Result<()> {
    if sigma.nrows() != k || sigma.ncols() != k {
        return Err(validation(format!(
            "correlation matrix is {}x{}, expected {k}x{k}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    for i in 0..k {
        if (sigma[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(validation("correlation matrix needs a unit diagonal"));
        }
        for j in 0..i {
            let r = sigma[(i, j)];
            if !r.is_finite() || (r - sigma[(j, i)]).abs() > 1e-12 || r.abs() > 1.0 {
                return Err(validation("correlation matrix must be symmetric with entries in [-1, 1]"));
            }
        }
    }
    let min_eig = SymmetricEigen::new(sigma.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(validation("correlation matrix is not positive semi-definite"));
    }
    Ok(())
}

/// P(Z <= c) for Z ~ N(0, sigma), with sigma a correlation matrix.
pub fn mvn_cdf(c: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    mvn_cdf_seeded(c, sigma, QMC_SEED).map(|e| e.value)
}

/// As [`mvn_cdf`], with the quasi-Monte Carlo seed (K >= 3) and the error
/// estimate exposed.
pub fn mvn_cdf_seeded(c: &[f64], sigma: &DMatrix<f64>, seed: u64) -> Result<MvnEstimate> {
    let k = c.len();
    if k == 0 {
        return Err(validation("empty limit vector"));
    }
    check_correlation(sigma, k)?;
    if c.iter().any(|v| v.is_nan()) {
        return Err(validation("limits must not be NaN"));
    }
    if c.contains(&f64::NEG_INFINITY) {
        return Ok(MvnEstimate { value: 0.0, error: 0.0 });
    }
    // infinite upper limits integrate out
    let keep: Vec<usize> = (0..k).filter(|&i| c[i] < f64::INFINITY).collect();
    let c: Vec<f64> = keep.iter().map(|&i| c[i]).collect();
    let sigma = DMatrix::from_fn(keep.len(), keep.len(), |i, j| sigma[(keep[i], keep[j])]);
    let exact = |value| Ok(MvnEstimate { value, error: 0.0 });
    match c.len() {
        0 => exact(1.0),
        1 => exact(norm_cdf(c[0])),
        2 => exact(bvn_cdf(c[0], c[1], sigma[(0, 1)])),
        _ => Ok(genz(&c, &sigma, seed)),
    }
}

/// Bivariate orthant by conditioning on the first coordinate:
/// `int_{-inf}^{c1} pdf(x) cdf((c2 - rho x)/sqrt(1 - rho^2)) dx`.
fn bvn_cdf(c1: f64, c2: f64, rho: f64) -> f64 {
    if rho >= 1.0 {
        return norm_cdf(c1.min(c2));
    }
    if rho <= -1.0 {
        return (norm_cdf(c1) + norm_cdf(c2) - 1.0).max(0.0);
    }
    if rho == 0.0 {
        return norm_cdf(c1) * norm_cdf(c2);
    }
    let s = (1.0 - rho * rho).sqrt();
    let f = |x: f64| norm_pdf(x) * norm_cdf((c2 - rho * x) / s);
    let lo = -40.0_f64;
    if c1 <= lo {
        return 0.0;
    }
    // split at 0 so the peak of the density is a node
    let mut total = 0.0;
    let mut a = lo;
    for b in [-8.0, 0.0, c1] {
        let b = b.min(c1);
        if b > a {
            total += adaptive_simpson(&f, a, b, 1e-10);
            a = b;
        }
    }
    total.clamp(0.0, 1.0)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Lower-triangular factor of a semi-definite matrix; zero pivots leave a
/// zero column.
fn semidefinite_cholesky(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let k = sigma.nrows();
    let mut l = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut d = sigma[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= 1e-12 {
            continue;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..k {
            let mut s = sigma[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    l
}

/// Genz's sequential conditioning with randomly shifted Richtmyer lattices
/// and the baker's transform; the sample size doubles until 2.5 standard
/// errors fall below the tolerance.
fn genz(c: &[f64], sigma: &DMatrix<f64>, seed: u64) -> MvnEstimate {
    const SHIFTS: usize = 12;
    const MAX_POINTS: usize = 1 << 20;
    // K is capped at 10, so at most nine lattice dimensions
    const PRIMES: [f64; 9] = [2., 3., 5., 7., 11., 13., 17., 19., 23.];
    let k = c.len();
    let l = semidefinite_cholesky(sigma);
    let dims = k - 1;
    let gen: Vec<f64> = PRIMES[..dims].iter().map(|p| p.sqrt().fract()).collect();
    let mut rng = SeedStream::new(seed).rng();
    let integrand = |w: &[f64], y: &mut [f64]| -> f64 {
        let mut prod = 1.0;
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..i {
                s += l[(i, j)] * y[j];
            }
            let d = l[(i, i)];
            let e = if d > 0.0 {
                norm_cdf((c[i] - s) / d)
            } else if c[i] - s >= 0.0 {
                1.0
            } else {
                0.0
            };
            prod *= e;
            if prod == 0.0 {
                return 0.0;
            }
            if i < dims {
                let u = (w[i] * e).clamp(1e-300, 1.0 - 1e-16);
                y[i] = if d > 0.0 { norm_quantile(u) } else { 0.0 };
            }
        }
        prod
    };
    let mut n = 64;
    let mut w = vec![0.0; dims];
    let mut y = vec![0.0; k];
    loop {
        let mut estimates = [0.0; SHIFTS];
        for est in estimates.iter_mut() {
            let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
            let mut acc = 0.0;
            for j in 1..=n {
                for i in 0..dims {
                    let x = (j as f64 * gen[i] + shift[i]).fract();
                    w[i] = 1.0 - (2.0 * x - 1.0).abs();
                }
                acc += integrand(&w, &mut y);
            }
            *est = acc / n as f64;
        }
        let mean = estimates.iter().sum::<f64>() / SHIFTS as f64;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / ((SHIFTS - 1) * SHIFTS) as f64;
        let error = 2.5 * var.sqrt();
        if error <= QMC_TOLERANCE || n >= MAX_POINTS {
            return MvnEstimate {
                value: mean.clamp(0.0, 1.0),
                error,
            };
        }
        n *= 2;
    }
}

/// Planning inputs: per-arm success probabilities, outcome correlations,
/// error rates and the decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTargets {
    pub theta1: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Outcome correlation matrix; identity when omitted.
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
    pub alpha: f64,
    /// Type II error rate.
    pub beta: f64,
    pub rule: RuleKind,
    #[serde(default = "default_n_max")]
    pub n_max: u64,
}

fn default_n_max() -> u64 {
    DEFAULT_N_MAX
}

impl DesignTargets {
    pub fn k(&self) -> usize {
        self.theta1.len()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let k = self.k();
        match &self.correlation {
            Some(rows) => DMatrix::from_fn(k, k, |i, j| rows[i][j]),
            None => DMatrix::identity(k, k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.theta0.len() != k {
            return Err(Error::Config("theta1 and theta0 must be nonempty and of equal length".into()));
        }
        if self.theta1.iter().chain(&self.theta0).any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("success probabilities must lie in (0, 1)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config("alpha and beta must lie in (0, 1)".into()));
        }
        if self.n_max < 2 {
            return Err(Error::Config("n_max must be at least 2".into()));
        }
        if let Some(rows) = &self.correlation {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(Error::Config(format!("correlation must be {k}x{k}")));
            }
        }
        check_correlation(&self.sigma(), k)?;
        if let RuleKind::Compensatory(w) = &self.rule {
            if w.len() != k {
                return Err(Error::Config(format!("{} weights for {k} outcomes", w.len())));
            }
        }
        Ok(())
    }

    fn effects(&self) -> Vec<f64> {
        self.theta1.iter().zip(&self.theta0).map(|(a, b)| a - b).collect()
    }

    fn standard_errors(&self, n: u64) -> Vec<f64> {
        self.theta1
            .iter()
            .zip(&self.theta0)
            .map(|(a, b)| ((a * (1.0 - a) + b * (1.0 - b)) / n as f64).sqrt())
            .collect()
    }
}

/// Power of the Any or All rule with `n` subjects per arm.
///
/// All: `Psi_K(-z_{1-alpha} + Delta/se)`. Any: one minus the probability
/// that every statistic stays below `z_{1-alpha/K}`, i.e.
/// `1 - Psi_K(z_{1-alpha/K} - Delta/se)`.
pub fn power_any_all(targets: &DesignTargets, n: u64) -> Result<f64> {
    targets.validate()?;
    if n < 2 {
        return Err(validation("power needs at least two subjects per arm"));
    }
    let k = targets.k();
    let sigma = targets.sigma();
    let delta = targets.effects();
    let se = targets.standard_errors(n);
    let ratio = delta.iter().zip(&se).map(|(d, s)| d / s);
    match targets.rule {
        RuleKind::All => {
            let z = norm_quantile(1.0 - targets.alpha);
            let c: Vec<f64> = ratio.map(|r| r - z).collect();
            mvn_cdf(&c, &sigma)
        }
        RuleKind::Any => {
            let z = norm_quantile(1.0 - targets.alpha / k as f64);
            let c: Vec<f64> = ratio.map(|r| z - r).collect();
            Ok(1.0 - mvn_cdf(&c, &sigma)?)
        }
        RuleKind::Compensatory(_) => Err(validation(
            "the Compensatory rule is planned in closed form; use required_n",
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMethod {
    /// Smallest n found by increasing n one at a time.
    IterativeSearch,
    /// Two-proportion formula on the weighted success probabilities.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_per_arm: u64,
    pub power: f64,
    pub method: PlanMethod,
    pub rule: String,
}

/// Smallest per-arm sample size reaching power `1 - beta`.
pub fn required_n(targets: &DesignTargets) -> Result<SamplePlan> {
    targets.validate()?;
    let target = 1.0 - targets.beta;
    let z_a = norm_quantile(1.0 - targets.alpha);
    match &targets.rule {
        RuleKind::Compensatory(w) => {
            let tw = |th: &[f64]| -> f64 { th.iter().zip(w.as_slice()).map(|(t, w)| t * w).sum() };
            let (t1, t0) = (tw(&targets.theta1), tw(&targets.theta0));
            let d = t1 - t0;
            let v = t1 * (1.0 - t1) + t0 * (1.0 - t0);
            if d <= 0.0 {
                return Err(Error::Infeasible {
                    reason: "weighted effect is not positive".into(),
                    n: targets.n_max,
                    power: targets.alpha,
                });
            }
            let z_b = norm_quantile(1.0 - targets.beta);
            let raw = v * ((z_a + z_b) / d).powi(2);
            let n = (raw.ceil() as u64).max(2);
            let power = norm_cdf(d * (n as f64).sqrt() / v.sqrt() - z_a);
            if n > targets.n_max {
                return Err(Error::Infeasible {
                    reason: format!("closed-form size {n} exceeds n_max"),
                    n: targets.n_max,
                    power: norm_cdf(d * (targets.n_max as f64).sqrt() / v.sqrt() - z_a),
                });
            }
            Ok(SamplePlan {
                n_per_arm: n,
                power,
                method: PlanMethod::ClosedForm,
                rule: targets.rule.name().into(),
            })
        }
        RuleKind::Any | RuleKind::All => {
            let delta = targets.effects();
            let hopeless = match targets.rule {
                RuleKind::All => delta.iter().any(|&d| d <= 0.0),
                _ => delta.iter().all(|&d| d <= 0.0),
            };
            if hopeless {
                // power is bounded by alpha for every n
                return Err(Error::Infeasible {
                    reason: "no positive effect to detect under this rule".into(),
                    n: targets.n_max,
                    power: power_any_all(targets, targets.n_max)?,
                });
            }
            let mut power = 0.0;
            for n in 2..=targets.n_max {
                power = power_any_all(targets, n)?;
                if power >= target {
                    return Ok(SamplePlan {
                        n_per_arm: n,
                        power,
                        method: PlanMethod::IterativeSearch,
                        rule: targets.rule.name().into(),
                    });
                }
            }
            Err(Error::Infeasible {
                reason: "search cap reached".into(),
                n: targets.n_max,
                power,
            })
        }
    }
}

/// Joint distribution of two binary outcomes with margins `theta` and
/// correlation `rho`, ordered (11, 10, 01, 00).
pub fn elicit_joint_probs(theta: [f64; 2], rho: f64) -> Result<JointProbs> {
    let [t1, t2] = theta;
    if !(t1 > 0.0 && t1 < 1.0 && t2 > 0.0 && t2 < 1.0) {
        return Err(Error::Elicitation(format!("success probabilities {theta:?} must lie in (0, 1)")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Elicitation(format!("correlation {rho} outside [-1, 1]")));
    }
    let p11 = rho * (t1 * (1.0 - t1) * t2 * (1.0 - t2)).sqrt() + t1 * t2;
    let phi = [p11, t1 - p11, t2 - p11, 1.0 - t1 - t2 + p11];
    let bounds = ["phi11 >= 0", "phi10 >= 0", "phi01 >= 0", "phi00 >= 0"];
    for (p, b) in phi.iter().zip(bounds) {
        if *p < 0.0 {
            return Err(Error::Elicitation(format!(
                "theta {theta:?} with rho {rho} violates {b} (value {p:.6})"
            )));
        }
    }
    Ok(JointProbs(phi.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub theta: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmBeliefs {
    pub low: Belief,
    pub high: Belief,
}

/// Beliefs per arm at two covariate anchors `x_low < x_high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSet {
    pub x_low: f64,
    pub x_high: f64,
    pub control: ArmBeliefs,
    pub treatment: ArmBeliefs,
}

impl BeliefSet {
    fn joint(&self, treatment: u8, high: bool) -> Result<JointProbs> {
        let arm = if treatment == 1 { &self.treatment } else { &self.control };
        let b = if high { &arm.high } else { &arm.low };
        if b.theta.len() != 2 {
            return Err(Error::Unsupported(format!(
                "elicitation covers two outcomes, got {}",
                b.theta.len()
            )));
        }
        elicit_joint_probs([b.theta[0], b.theta[1]], b.rho)
    }
}

/// Prior means for the model `(1, T, x, xT)` whose implied joint
/// probabilities match the beliefs exactly at both anchors and arms.
pub fn elicit_prior_means(beliefs: &BeliefSet) -> Result<Coefficients> {
    let (xl, xh) = (beliefs.x_low, beliefs.x_high);
    if !(xl.is_finite() && xh.is_finite() && xl < xh) {
        return Err(Error::Elicitation(format!("anchors must satisfy x_low < x_high, got {xl} and {xh}")));
    }
    let log_ratios = |t: u8, high: bool| -> Result<Vec<f64>> {
        let phi = beliefs.joint(t, high)?;
        let p = phi.as_slice();
        let reference = p[3];
        if p.iter().any(|&v| v <= 0.0) {
            return Err(Error::Elicitation(format!(
                "beliefs for arm {t} at the {} anchor give a zero joint probability",
                if high { "high" } else { "low" }
            )));
        }
        Ok(p[..3].iter().map(|v| (v / reference).ln()).collect())
    };
    let (c_l, c_h) = (log_ratios(0, false)?, log_ratios(0, true)?);
    let (t_l, t_h) = (log_ratios(1, false)?, log_ratios(1, true)?);
    let span = xh - xl;
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|q| {
            let b2 = (c_h[q] - c_l[q]) / span;
            let b0 = (xh * c_l[q] - xl * c_h[q]) / span;
            let slope1 = (t_h[q] - t_l[q]) / span;
            let icept1 = (xh * t_l[q] - xl * t_h[q]) / span;
            vec![b0, icept1 - b0, b2, slope1 - b2]
        })
        .collect();
    Coefficients::from_rows(&rows)
}
