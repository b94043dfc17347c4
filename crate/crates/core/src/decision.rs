//! Superiority and inferiority regions for the Any, All and Compensatory
//! rules, posterior rejection probabilities and threshold decisions.

use serde::{Deserialize, Serialize};

use crate::effects::{weighted_delta, EffectSample, Weights};
use crate::error::{validation, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weights", rename_all = "snake_case")]
pub enum RuleKind {
    Any,
    All,
    Compensatory(Weights),
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Any => "any",
            RuleKind::All => "all",
            RuleKind::Compensatory(_) => "compensatory",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    SuccessIsGood,
    /// The outcomes count failures, so a positive difference is harmful.
    FailureIsGood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    #[serde(flatten)]
    pub kind: RuleKind,
    #[serde(default)]
    pub direction: Direction,
}

impl DecisionRule {
    pub fn new(kind: RuleKind, direction: Direction) -> Self {
        Self { kind, direction }
    }

    pub fn any() -> Self {
        Self::new(RuleKind::Any, Direction::SuccessIsGood)
    }

    pub fn all() -> Self {
        Self::new(RuleKind::All, Direction::SuccessIsGood)
    }

    pub fn compensatory(w: Weights) -> Self {
        Self::new(RuleKind::Compensatory(w), Direction::SuccessIsGood)
    }

    pub fn check(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(validation("a decision needs at least one outcome"));
        }
        if let RuleKind::Compensatory(w) = &self.kind {
            if w.len() != k {
                return Err(validation(format!("{} weights for {k} outcomes", w.len())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Superiority,
    Inferiority,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    /// Test for superiority only.
    #[default]
    OneSidedRight,
    /// Test for inferiority only.
    OneSidedLeft,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Superior,
    Inferior,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub p_superior: f64,
    pub p_inferior: f64,
    pub verdict: Verdict,
    pub p_cut_superior: f64,
    pub p_cut_inferior: f64,
    pub sidedness: Sidedness,
}

/// Region membership with strict inequalities; under failure-is-good the
/// difference is negated first.
pub fn in_region(delta: &[f64], rule: &DecisionRule, region: Region) -> Result<bool> {
    rule.check(delta.len())?;
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(validation("treatment differences must be finite"));
    }
    Ok(in_region_unchecked(delta, rule, region))
}

fn in_region_unchecked(delta: &[f64], rule: &DecisionRule, region: Region) -> bool {
    let sign = match rule.direction {
        Direction::SuccessIsGood => 1.0,
        Direction::FailureIsGood => -1.0,
    };
    let max = delta.iter().map(|d| sign * d).fold(f64::NEG_INFINITY, f64::max);
    let min = delta.iter().map(|d| sign * d).fold(f64::INFINITY, f64::min);
    match (&rule.kind, region) {
        (RuleKind::Any, Region::Superiority) => max > 0.0,
        (RuleKind::Any, Region::Inferiority) => min < 0.0,
        (RuleKind::All, Region::Superiority) => min > 0.0,
        (RuleKind::All, Region::Inferiority) => max < 0.0,
        (RuleKind::Compensatory(w), r) => {
            let s = sign * weighted_delta(delta, w).expect("weights checked");
            match r {
                Region::Superiority => s > 0.0,
                Region::Inferiority => s < 0.0,
            }
        }
    }
}

/// Fraction of draws whose delta lies in the region.
pub fn rejection_probability(effects: &EffectSample, rule: &DecisionRule, region: Region) -> Result<f64> {
    if effects.n_draws() == 0 {
        return Err(validation("no posterior draws"));
    }
    rule.check(effects.k())?;
    let hits = effects
        .deltas()
        .filter(|d| in_region_unchecked(d, rule, region))
        .count();
    Ok(hits as f64 / effects.n_draws() as f64)
}

/// Default threshold: `1 - alpha` (All, Compensatory) or `1 - alpha/K` (Any)
/// one-sided, with alpha halved for two-sided testing.
pub fn default_p_cut(kind: &RuleKind, k: usize, alpha: f64, sidedness: Sidedness) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if k == 0 {
        return Err(validation("a decision needs at least one outcome"));
    }
    let mut a = alpha;
    if sidedness == Sidedness::TwoSided {
        a /= 2.0;
    }
    if *kind == RuleKind::Any {
        a /= k as f64;
    }
    Ok(1.0 - a)
}

pub fn decide(
    p_superior: f64,
    p_inferior: f64,
    p_cut_superior: f64,
    p_cut_inferior: f64,
    sidedness: Sidedness,
) -> Result<DecisionOutcome> {
    for p in [p_superior, p_inferior, p_cut_superior, p_cut_inferior] {
        if !(0.0..=1.0).contains(&p) {
            return Err(validation(format!("probability {p} outside [0, 1]")));
        }
    }
    let sup = p_superior > p_cut_superior && sidedness != Sidedness::OneSidedLeft;
    let inf = p_inferior > p_cut_inferior && sidedness != Sidedness::OneSidedRight;
    let verdict = match (sup, inf) {
        (true, true) => {
            return Err(Error::Decision(format!(
                "superiority ({p_superior}) and inferiority ({p_inferior}) both exceed their thresholds"
            )))
        }
        (true, false) => Verdict::Superior,
        (false, true) => Verdict::Inferior,
        (false, false) => Verdict::Inconclusive,
    };
    Ok(DecisionOutcome {
        p_superior,
        p_inferior,
        verdict,
        p_cut_superior,
        p_cut_inferior,
        sidedness,
    })
}

/// Rejection probabilities for both regions followed by [`decide`] with one
/// threshold for both sides.
pub fn evaluate(
    effects: &EffectSample,
    rule: &DecisionRule,
    p_cut: f64,
    sidedness: Sidedness,
) -> Result<DecisionOutcome> {
    let sup = rejection_probability(effects, rule, Region::Superiority)?;
    let inf = rejection_probability(effects, rule, Region::Inferiority)?;
    decide(sup, inf, p_cut, p_cut, sidedness)
}
