//! Exact Pólya-Gamma PG(1, z) variates.
//!
//! Devroye-style accept–reject: propose from a mixture of a truncated
//! exponential (right of `TRUNC`) and a truncated inverse Gaussian (left of
//! `TRUNC`), then accept by evaluating the alternating series of the
//! Jacobi density until the partial sums bracket the uniform.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{validation, Result};

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

/// A single draw from PG(1, z); always strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PgDraw(f64);

impl PgDraw {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<PgDraw> {
    if !z.is_finite() {
        return Err(validation(format!("Polya-Gamma tilt must be finite, got {z}")));
    }
    Ok(PgDraw(draw_pg1(z, rng)))
}

/// E[PG(1, z)] = tanh(z/2) / (2z), with the limit 1/4 at z = 0.
pub fn pg1_mean(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-6 {
        // tanh(x)/x = 1 - x^2/3 + ...
        0.25 - z * z / 48.0
    } else {
        (0.5 * z).tanh() / (2.0 * z)
    }
}

/// Var[PG(1, z)] = (2 tanh(z/2) - z sech^2(z/2)) / (4 z^3), 1/24 at z = 0.
pub fn pg1_variance(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-2 {
        1.0 / 24.0 - z * z / 60.0
    } else {
        let sech = 1.0 / (0.5 * z).cosh();
        (2.0 * (0.5 * z).tanh() - z * sech * sech) / (4.0 * z * z * z)
    }
}

#[inline]
fn log_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
}

/// Probability of proposing from the exponential piece, p / (p + q).
#[inline]
fn exponential_mass(z: f64, fz: f64) -> f64 {
    let root_t = TRUNC_RECIP.sqrt();
    let b = root_t * (TRUNC * z - 1.0);
    let a = -root_t * (TRUNC * z + 1.0);
    let x0 = fz.ln() + fz * TRUNC;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    if z < TRUNC_RECIP {
        // mean beyond the truncation point: propose from the z = 0 law and
        // accept with exp(-z^2 x / 2)
        loop {
            let mut e1: f64 = rng.sample(Exp1);
            let mut e2: f64 = rng.sample(Exp1);
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let r = 1.0 + e1 * TRUNC;
            let x = TRUNC / (r * r);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let n: f64 = rng.sample(StandardNormal);
        let y = n * n;
        let mu_y = mu * y;
        let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x < TRUNC {
            return x;
        }
    }
}

/// Alternating-series coefficients a_n(x) of the J*(1, z) density; the
/// x-dependent factors are computed once per proposal.
struct Series {
    x: f64,
    left: bool,
    scale: f64,
}

impl Series {
    #[inline]
    fn new(x: f64) -> Self {
        let left = x <= TRUNC;
        // (2 / (pi x))^{3/2} on the left piece
        let scale = if left { (-1.5 * (0.5 * PI * x).ln()).exp() } else { 1.0 };
        Self { x, left, scale }
    }

    #[inline]
    fn term(&self, n: u32) -> f64 {
        let h = f64::from(n) + 0.5;
        let k = h * PI;
        if self.left {
            k * self.scale * (-2.0 * h * h / self.x).exp()
        } else {
            k * (-0.5 * k * k * self.x).exp()
        }
    }
}

/// Sampler for PG(1, z) with the tilt-dependent constants precomputed, so
/// repeated draws at the same tilt are cheap.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pg1 {
    z: f64,
    fz: f64,
    mass: f64,
}

impl Pg1 {
    /// `z` must be finite.
    pub(crate) fn new(z: f64) -> Self {
        // PG(1, z) = J*(1, z/2) / 4
        let z = 0.5 * z.abs();
        let fz = 0.125 * PI * PI + 0.5 * z * z;
        Self {
            z,
            fz,
            mass: exponential_mass(z, fz),
        }
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.mass {
                TRUNC + rng.sample::<f64, _>(Exp1) / self.fz
            } else {
                truncated_inverse_gaussian(self.z, rng)
            };
            let series = Series::new(x);
            let mut s = series.term(0);
            let y = rng.random::<f64>() * s;
            let mut n = 0u32;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series.term(n);
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += series.term(n);
                    if y > s {
                        break;
                    }
                }
            }
        }
    }
}

/// Hot-path draw; `z` must be finite.
pub(crate) fn draw_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    Pg1::new(z).draw(rng)
}
