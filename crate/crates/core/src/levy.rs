//! Supported Lévy models and their characteristic / Laplace exponents.
//!
//! Conventions: `Ψ` is the characteristic exponent, `E[exp(izX_t)] = exp(-tΨ(z))`,
//! and `Φ(s) = log E[exp(sX_1)] = -Ψ(-is)` is the Laplace exponent. Every model
//! carries a `drift` which is the coefficient of `s` in `Φ`; for Brownian motion
//! this is the mean of `X_1`.

use crate::error::{Error, Result};
use crate::special::{beta, beta_complex, beta_log_derivative};
use num_complex::Complex64;

/// Evaluations closer than this to a pole of `Φ` are rejected.
pub const POLE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Positive,
    Negative,
}

/// One exponential phase of a hyperexponential jump law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub weight: f64,
    pub rate: f64,
}

/// Brownian motion plus compound-Poisson jumps with hyperexponential sizes.
///
/// A jump is upward with probability `up_prob`; given its direction its size
/// follows the corresponding phase mixture (each mixture's weights sum to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperExpJd {
    pub sigma: f64,
    pub drift: f64,
    pub intensity: f64,
    pub up_prob: f64,
    pub up: Vec<Phase>,
    pub down: Vec<Phase>,
}

/// The β-class of meromorphic processes.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaClass {
    pub sigma: f64,
    pub drift: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevyModel {
    Brownian { sigma: f64, drift: f64 },
    HyperExp(HyperExpJd),
    Beta(BetaClass),
}

impl LevyModel {
    pub fn brownian(sigma: f64, drift: f64) -> Result<Self> {
        let m = LevyModel::Brownian { sigma, drift };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        let sigma = self.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return bad(format!("sigma must be finite and nonnegative, got {sigma}"));
        }
        if !self.drift().is_finite() {
            return bad("drift must be finite".into());
        }
        match self {
            LevyModel::Brownian { sigma, .. } => {
                if *sigma == 0.0 {
                    return bad("Brownian model with sigma = 0 is degenerate".into());
                }
            }
            LevyModel::HyperExp(h) => {
                if !(h.intensity > 0.0 && h.intensity.is_finite()) {
                    return bad(format!("jump intensity must be positive, got {}", h.intensity));
                }
                if !(0.0..=1.0).contains(&h.up_prob) {
                    return bad(format!("up_prob must lie in [0, 1], got {}", h.up_prob));
                }
                for (name, prob, phases) in [("up", h.up_prob, &h.up), ("down", 1.0 - h.up_prob, &h.down)] {
                    if prob == 0.0 && phases.is_empty() {
                        continue;
                    }
                    if phases.is_empty() {
                        return bad(format!("{name} jumps have positive probability but no phases"));
                    }
                    let mut total = 0.0;
                    for p in phases {
                        if !(p.weight >= 0.0 && p.rate > 0.0 && p.rate.is_finite()) {
                            return bad(format!("{name} phase needs weight >= 0 and rate > 0, got {p:?}"));
                        }
                        total += p.weight;
                    }
                    if (total - 1.0).abs() > 1e-12 {
                        return bad(format!("{name} phase weights sum to {total}, expected 1"));
                    }
                }
            }
            LevyModel::Beta(b) => {
                for (name, v) in [
                    ("c1", b.c1),
                    ("c2", b.c2),
                    ("alpha1", b.alpha1),
                    ("alpha2", b.alpha2),
                    ("beta1", b.beta1),
                    ("beta2", b.beta2),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        return bad(format!("{name} must be positive, got {v}"));
                    }
                }
                for (name, l) in [("lambda1", b.lambda1), ("lambda2", b.lambda2)] {
                    if !(l > 0.0 && l < 3.0) || l == 1.0 || l == 2.0 {
                        return bad(format!("{name} must lie in (0,3) minus {{1,2}}, got {l}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        match self {
            LevyModel::Brownian { sigma, .. } => *sigma,
            LevyModel::HyperExp(h) => h.sigma,
            LevyModel::Beta(b) => b.sigma,
        }
    }

    pub fn drift(&self) -> f64 {
        match self {
            LevyModel::Brownian { drift, .. } => *drift,
            LevyModel::HyperExp(h) => h.drift,
            LevyModel::Beta(b) => b.drift,
        }
    }

    pub fn with_drift(&self, drift: f64) -> LevyModel {
        let mut m = self.clone();
        match &mut m {
            LevyModel::Brownian { drift: d, .. } => *d = drift,
            LevyModel::HyperExp(h) => h.drift = drift,
            LevyModel::Beta(b) => b.drift = drift,
        }
        m
    }

    /// Whether the jump part has infinitely many poles on each side.
    pub fn has_infinite_poles(&self) -> bool {
        matches!(self, LevyModel::Beta(_))
    }

    /// Characteristic exponent Ψ(z) for complex z.
    pub fn char_exponent(&self, z: Complex64) -> Result<Complex64> {
        let i = Complex64::i();
        let sigma = self.sigma();
        let base = 0.5 * sigma * sigma * z * z - i * self.drift() * z;
        match self {
            LevyModel::Brownian { .. } => Ok(base),
            LevyModel::HyperExp(h) => {
                let mut cf = Complex64::new(0.0, 0.0);
                for p in &h.up {
                    let d = p.rate - i * z;
                    if d.norm() < POLE_GUARD {
                        return Err(pole_error_complex(z, p.rate));
                    }
                    cf += h.up_prob * p.weight * p.rate / d;
                }
                for p in &h.down {
                    let d = p.rate + i * z;
                    if d.norm() < POLE_GUARD {
                        return Err(pole_error_complex(z, -p.rate));
                    }
                    cf += (1.0 - h.up_prob) * p.weight * p.rate / d;
                }
                Ok(base + h.intensity * (1.0 - cf))
            }
            LevyModel::Beta(b) => {
                let x1 = Complex64::new(b.alpha1, 0.0) - i * z / b.beta1;
                let x2 = Complex64::new(b.alpha2, 0.0) + i * z / b.beta2;
                for x in [x1, x2] {
                    if near_nonpositive_integer(x) {
                        return Err(Error::Domain(format!(
                            "Beta-function argument {x} is within {POLE_GUARD:e} of a nonpositive integer"
                        )));
                    }
                }
                let (y1, y2) = (1.0 - b.lambda1, 1.0 - b.lambda2);
                let j1 = b.c1 / b.beta1 * (beta(b.alpha1, y1) - beta_complex(x1, y1));
                let j2 = b.c2 / b.beta2 * (beta(b.alpha2, y2) - beta_complex(x2, y2));
                Ok(base + j1 + j2)
            }
        }
    }

    /// Laplace exponent Φ(s) for real s strictly between the innermost poles
    /// surrounding it.
    pub fn laplace_exponent(&self, s: f64) -> Result<f64> {
        self.check_pole_distance(s)?;
        Ok(self.phi_unchecked(s))
    }

    /// Analytic derivative Φ′(s).
    pub fn laplace_exponent_derivative(&self, s: f64) -> Result<f64> {
        self.check_pole_distance(s)?;
        Ok(self.dphi_unchecked(s))
    }

    pub(crate) fn phi_unchecked(&self, s: f64) -> f64 {
        let sigma = self.sigma();
        let base = 0.5 * sigma * sigma * s * s + self.drift() * s;
        match self {
            LevyModel::Brownian { .. } => base,
            LevyModel::HyperExp(h) => {
                let mut mgf = 0.0;
                for p in &h.up {
                    mgf += h.up_prob * p.weight * p.rate / (p.rate - s);
                }
                for p in &h.down {
                    mgf += (1.0 - h.up_prob) * p.weight * p.rate / (p.rate + s);
                }
                base + h.intensity * (mgf - 1.0)
            }
            LevyModel::Beta(b) => {
                let (y1, y2) = (1.0 - b.lambda1, 1.0 - b.lambda2);
                let j1 = b.c1 / b.beta1 * (beta(b.alpha1 - s / b.beta1, y1) - beta(b.alpha1, y1));
                let j2 = b.c2 / b.beta2 * (beta(b.alpha2 + s / b.beta2, y2) - beta(b.alpha2, y2));
                base + j1 + j2
            }
        }
    }

    pub(crate) fn dphi_unchecked(&self, s: f64) -> f64 {
        let sigma = self.sigma();
        let base = sigma * sigma * s + self.drift();
        match self {
            LevyModel::Brownian { .. } => base,
            LevyModel::HyperExp(h) => {
                let mut d = 0.0;
                for p in &h.up {
                    d += h.up_prob * p.weight * p.rate / ((p.rate - s) * (p.rate - s));
                }
                for p in &h.down {
                    d -= (1.0 - h.up_prob) * p.weight * p.rate / ((p.rate + s) * (p.rate + s));
                }
                base + h.intensity * d
            }
            LevyModel::Beta(b) => {
                let (y1, y2) = (1.0 - b.lambda1, 1.0 - b.lambda2);
                let x1 = b.alpha1 - s / b.beta1;
                let x2 = b.alpha2 + s / b.beta2;
                let d1 = -b.c1 / (b.beta1 * b.beta1) * beta(x1, y1) * beta_log_derivative(x1, y1);
                let d2 = b.c2 / (b.beta2 * b.beta2) * beta(x2, y2) * beta_log_derivative(x2, y2);
                base + d1 + d2
            }
        }
    }

    /// The first `count` poles of Φ on the requested side, ordered away from 0.
    pub fn pole_sequence(&self, side: Side, count: usize) -> Vec<f64> {
        match self {
            LevyModel::Brownian { .. } => Vec::new(),
            LevyModel::HyperExp(h) => {
                let phases = match side {
                    Side::Positive if h.up_prob > 0.0 => &h.up,
                    Side::Negative if h.up_prob < 1.0 => &h.down,
                    _ => return Vec::new(),
                };
                let mut rates: Vec<f64> = phases.iter().filter(|p| p.weight > 0.0).map(|p| p.rate).collect();
                rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rates.dedup();
                rates.truncate(count);
                match side {
                    Side::Positive => rates,
                    Side::Negative => rates.into_iter().map(|r| -r).collect(),
                }
            }
            LevyModel::Beta(b) => (0..count)
                .map(|m| match side {
                    Side::Positive => b.beta1 * (b.alpha1 + m as f64),
                    Side::Negative => -b.beta2 * (b.alpha2 + m as f64),
                })
                .collect(),
        }
    }

    /// Distance from s to the nearest pole of Φ (infinite when there is none).
    pub fn pole_distance(&self, s: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, f64::NAN);
        let mut consider = |p: f64| {
            let d = (s - p).abs();
            if d < best.0 {
                best = (d, p);
            }
        };
        match self {
            LevyModel::Brownian { .. } => {}
            LevyModel::HyperExp(_) => {
                for side in [Side::Positive, Side::Negative] {
                    for p in self.pole_sequence(side, usize::MAX) {
                        consider(p);
                    }
                }
            }
            LevyModel::Beta(b) => {
                let m1 = (s / b.beta1 - b.alpha1).round().max(0.0);
                consider(b.beta1 * (b.alpha1 + m1));
                let m2 = (-s / b.beta2 - b.alpha2).round().max(0.0);
                consider(-b.beta2 * (b.alpha2 + m2));
            }
        }
        best
    }

    fn check_pole_distance(&self, s: f64) -> Result<()> {
        let (distance, pole) = self.pole_distance(s);
        if distance < POLE_GUARD {
            return Err(Error::PoleProximity { s, pole, distance });
        }
        Ok(())
    }

    /// Replace the drift so that Φ(1) = r, i.e. `exp(-rt + X_t)` is a martingale.
    pub fn martingale_drift(&self, r: f64) -> Result<LevyModel> {
        self.validate()?;
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidModel(format!("rate r must be finite and nonnegative, got {r}")));
        }
        let first_pos = self.pole_sequence(Side::Positive, 1);
        if let Some(&p) = first_pos.first() {
            if p <= 1.0 + POLE_GUARD {
                return Err(Error::Domain(format!("Φ(1) is infinite for every drift: first positive pole {p} <= 1")));
            }
        }
        // the drift enters Φ(1) additively
        let phi1 = self.phi_unchecked(1.0);
        let calibrated = self.with_drift(self.drift() + (r - phi1));
        Ok(calibrated)
    }
}

fn near_nonpositive_integer(x: Complex64) -> bool {
    let m = x.re.round();
    m <= 0.0 && Complex64::new(x.re - m, x.im).norm() < POLE_GUARD
}

fn pole_error_complex(z: Complex64, pole: f64) -> Error {
    Error::Domain(format!("Ψ evaluated at {z} is within {POLE_GUARD:e} of the pole at s = {pole}"))
}
