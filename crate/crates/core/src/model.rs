//! Multinomial representation of K correlated binary outcomes.
//!
//! A joint response on K outcomes is one of Q = 2^K patterns. Patterns are
//! enumerated by [`OutcomeMatrix`]: category `q` (0-based here) holds the
//! binary expansion of `Q - 1 - q`, first outcome most significant, so the
//! all-ones pattern comes first and the all-zeros pattern is the reference
//! category whose coefficients are pinned at zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

pub const MAX_OUTCOMES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    k: usize,
}

impl OutcomeMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if !(1..=MAX_OUTCOMES).contains(&k) {
            return Err(Error::Config(format!(
                "outcome count K = {k} outside supported range 1..={MAX_OUTCOMES}"
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of joint response categories, 2^K.
    pub fn q(&self) -> usize {
        1 << self.k
    }

    /// Number of non-reference categories, Q - 1.
    pub fn free_categories(&self) -> usize {
        self.q() - 1
    }

    pub fn reference(&self) -> usize {
        self.q() - 1
    }

    /// Entry H[q, k] for 0-based category and outcome.
    pub fn entry(&self, category: usize, outcome: usize) -> u8 {
        let code = self.q() - 1 - category;
        ((code >> (self.k - 1 - outcome)) & 1) as u8
    }

    pub fn row(&self, category: usize) -> Vec<u8> {
        (0..self.k).map(|o| self.entry(category, o)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.q()).map(|c| self.row(c)).collect()
    }

    pub fn encode(&self, y: &[u8]) -> Result<usize> {
        if y.len() != self.k {
            return Err(validation(format!(
                "response has {} entries, expected {}",
                y.len(),
                self.k
            )));
        }
        let mut code = 0usize;
        for &v in y {
            if v > 1 {
                return Err(validation(format!("response entry {v} is not binary")));
            }
            code = (code << 1) | v as usize;
        }
        Ok(self.q() - 1 - code)
    }

    pub fn decode(&self, category: usize) -> Result<Vec<u8>> {
        if category >= self.q() {
            return Err(validation(format!(
                "category {category} out of range for Q = {}",
                self.q()
            )));
        }
        Ok(self.row(category))
    }
}

/// Regression coefficients, one row per non-reference category and one
/// column per design term (intercept first). Serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Coefficients {
    values: DMatrix<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Coefficients {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Coefficients> for Vec<Vec<f64>> {
    fn from(c: Coefficients) -> Self {
        c.rows()
    }
}

impl Coefficients {
    pub fn zeros(categories: usize, width: usize) -> Self {
        Self {
            values: DMatrix::zeros(categories, width),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let categories = rows.len();
        if categories == 0 {
            return Err(validation("coefficient set needs at least one category row"));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(validation("coefficient rows must share a nonzero width"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(validation("coefficients must be finite"));
        }
        Ok(Self {
            values: DMatrix::from_fn(categories, width, |r, c| rows[r][c]),
        })
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn categories(&self) -> usize {
        self.values.nrows()
    }

    /// Design width including the intercept (P + 1).
    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, category: usize, term: usize) -> f64 {
        self.values[(category, term)]
    }

    pub fn set(&mut self, category: usize, term: usize, value: f64) {
        self.values[(category, term)] = value;
    }

    pub fn row(&self, category: usize) -> Vec<f64> {
        self.values.row(category).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.categories()).map(|c| self.row(c)).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Coefficients stacked category-major into one vector.
    pub fn stacked(&self) -> Vec<f64> {
        (0..self.categories())
            .flat_map(|c| self.values.row(c).iter().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One design term besides the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Treatment,
    Covariate(usize),
    /// Covariate times treatment indicator.
    Interaction(usize),
}

/// Records how a subject's treatment and covariates map onto a design row, so
/// that the treatment indicator can be substituted when computing effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    covariates: Vec<String>,
    terms: Vec<Term>,
}

impl DesignLayout {
    pub fn new(covariates: Vec<String>, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if let Term::Covariate(j) | Term::Interaction(j) = t {
                if *j >= covariates.len() {
                    return Err(Error::Config(format!(
                        "design term references covariate {j} but only {} are declared",
                        covariates.len()
                    )));
                }
            }
        }
        for (i, a) in terms.iter().enumerate() {
            if terms[i + 1..].contains(a) {
                return Err(Error::Config(format!("duplicate design term {a:?}")));
            }
        }
        Ok(Self { covariates, terms })
    }

    pub fn intercept_only() -> Self {
        Self {
            covariates: Vec::new(),
            terms: Vec::new(),
        }
    }

    pub fn treatment_only() -> Self {
        Self {
            covariates: Vec::new(),
            terms: vec![Term::Treatment],
        }
    }

    /// `T, z_1..z_m, z_1 T..z_m T`; with one covariate this is the four-term
    /// model `b0 + b1 T + b2 z + b3 z T`.
    pub fn with_interactions(covariates: Vec<String>) -> Self {
        let m = covariates.len();
        let mut terms = vec![Term::Treatment];
        terms.extend((0..m).map(Term::Covariate));
        terms.extend((0..m).map(Term::Interaction));
        Self { covariates, terms }
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// P, the number of design columns excluding the intercept.
    pub fn width(&self) -> usize {
        self.terms.len()
    }

    pub fn has_treatment(&self) -> bool {
        self.terms
            .iter()
            .any(|t| matches!(t, Term::Treatment | Term::Interaction(_)))
    }

    /// Design row (without intercept) for treatment `t` and covariates `z`.
    pub fn row(&self, t: u8, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.covariates.len() {
            return Err(validation(format!(
                "expected {} covariate values, got {}",
                self.covariates.len(),
                z.len()
            )));
        }
        if t > 1 {
            return Err(validation(format!("treatment indicator {t} is not 0/1")));
        }
        let tf = f64::from(t);
        Ok(self
            .terms
            .iter()
            .map(|term| match *term {
                Term::Treatment => tf,
                Term::Covariate(j) => z[j],
                Term::Interaction(j) => z[j] * tf,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProbs(pub Vec<f64>);

impl JointProbs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(validation("joint probabilities must lie in [0, 1]"));
        }
        let s: f64 = self.0.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(validation(format!("joint probabilities sum to {s}, not 1")));
        }
        Ok(())
    }
}

/// Validated trial data: binary responses, treatment arm and covariates.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    outcomes: OutcomeMatrix,
    categories: Vec<usize>,
    treatment: Vec<u8>,
    covariates: Vec<Vec<f64>>,
    layout: DesignLayout,
    design: Vec<Vec<f64>>,
}

impl TrialDataset {
    pub fn new(
        k: usize,
        responses: &[Vec<u8>],
        treatment: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        layout: DesignLayout,
    ) -> Result<Self> {
        let outcomes = OutcomeMatrix::new(k)?;
        let n = responses.len();
        if treatment.len() != n || covariates.len() != n {
            return Err(validation(format!(
                "length mismatch: {n} responses, {} treatment labels, {} covariate rows",
                treatment.len(),
                covariates.len()
            )));
        }
        let categories = responses
            .iter()
            .enumerate()
            .map(|(i, y)| {
                outcomes
                    .encode(y)
                    .map_err(|e| validation(format!("subject {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_categories(outcomes, categories, treatment, covariates, layout)
    }

    pub fn from_categories(
        outcomes: OutcomeMatrix,
        categories: Vec<usize>,
        treatment: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        layout: DesignLayout,
    ) -> Result<Self> {
        let n = categories.len();
        if treatment.len() != n || covariates.len() != n {
            return Err(validation("categories, treatment and covariates differ in length"));
        }
        if let Some(c) = categories.iter().find(|&&c| c >= outcomes.q()) {
            return Err(validation(format!("category {c} out of range")));
        }
        if covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(validation("covariates must be finite"));
        }
        let design = treatment
            .iter()
            .zip(&covariates)
            .map(|(&t, z)| layout.row(t, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            outcomes,
            categories,
            treatment,
            covariates,
            layout,
            design,
        })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn outcomes(&self) -> &OutcomeMatrix {
        &self.outcomes
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn layout(&self) -> &DesignLayout {
        &self.layout
    }

    /// Design rows without the intercept column.
    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn response(&self, i: usize) -> Vec<u8> {
        self.outcomes.row(self.categories[i])
    }

    pub fn arm_counts(&self) -> [usize; 2] {
        let treated = self.treatment.iter().filter(|&&t| t == 1).count();
        [self.len() - treated, treated]
    }

    /// Category counts per arm, indexed `[T][q]`.
    pub fn category_counts(&self) -> [Vec<usize>; 2] {
        let mut counts = [vec![0; self.outcomes.q()], vec![0; self.outcomes.q()]];
        for (&c, &t) in self.categories.iter().zip(&self.treatment) {
            counts[t as usize][c] += 1;
        }
        counts
    }

    /// Subset of subjects by index, keeping layout and outcome encoding.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::from_categories(
            self.outcomes.clone(),
            indices.iter().map(|&i| self.categories[i]).collect(),
            indices.iter().map(|&i| self.treatment[i]).collect(),
            indices.iter().map(|&i| self.covariates[i].clone()).collect(),
            self.layout.clone(),
        )
    }
}

/// psi^q = beta^q_0 + sum_p beta^q_p x_p for every non-reference category.
pub fn linear_predictors(beta: &Coefficients, x: &[f64]) -> Result<Vec<f64>> {
    if beta.width() != x.len() + 1 {
        return Err(validation(format!(
            "design row has {} entries but coefficients expect {}",
            x.len(),
            beta.width() - 1
        )));
    }
    Ok((0..beta.categories())
        .map(|q| linear_predictor(beta, q, x))
        .collect())
}

#[inline]
pub(crate) fn linear_predictor(beta: &Coefficients, q: usize, x: &[f64]) -> f64 {
    let m = beta.matrix();
    let mut s = m[(q, 0)];
    for (p, &xp) in x.iter().enumerate() {
        s += m[(q, p + 1)] * xp;
    }
    s
}

/// Multinomial logistic link. The reference category has predictor 0; the
/// softmax runs over the augmented vector `(psi, 0)` with max-subtraction.
pub fn inverse_mlogit(psi: &[f64]) -> JointProbs {
    let mut out = vec![0.0; psi.len() + 1];
    inverse_mlogit_into(psi, &mut out);
    JointProbs(out)
}

pub(crate) fn inverse_mlogit_into(psi: &[f64], out: &mut [f64]) {
    let m = psi.iter().copied().fold(0.0_f64, f64::max);
    let mut total = 0.0;
    for (o, &p) in out.iter_mut().zip(psi) {
        *o = (p - m).exp();
        total += *o;
    }
    let last = out.len() - 1;
    out[last] = (-m).exp();
    total += out[last];
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// log(exp(psi_1) + ... + exp(psi_{Q-1}) + 1)
pub(crate) fn log_normalizer(psi: &[f64]) -> f64 {
    let m = psi.iter().copied().fold(0.0_f64, f64::max);
    let s: f64 = psi.iter().map(|p| (p - m).exp()).sum::<f64>() + (-m).exp();
    m + s.ln()
}

pub fn log_likelihood(beta: &Coefficients, data: &TrialDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(validation("log-likelihood of an empty dataset"));
    }
    if beta.categories() != data.outcomes().free_categories() {
        return Err(validation(format!(
            "coefficients have {} categories, data needs {}",
            beta.categories(),
            data.outcomes().free_categories()
        )));
    }
    let reference = data.outcomes().reference();
    let mut total = 0.0;
    for (x, &c) in data.design().iter().zip(data.categories()) {
        let psi = linear_predictors(beta, x)?;
        let log_z = log_normalizer(&psi);
        let num = if c == reference { 0.0 } else { psi[c] };
        total += num - log_z;
    }
    Ok(total)
}
