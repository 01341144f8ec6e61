//! The law of X at an independent exponential time as a mixture of exponentials.
//!
//! For a meromorphic process and clock rate q the density of `X_ξ` is
//! `Σ c₊(j) e^{ζ₊(j) x}` on `x < 0` and `Σ c₋(j) e^{ζ₋(j) x}` on `x > 0`, where
//! `ζ₊ > 0` and `ζ₋ < 0` are the real solutions of `Φ(−ζ) = q`. Note the sign
//! convention: positive rates govern the negative half-line.

use crate::error::{Error, Result};
use crate::levy::{LevyModel, Side};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

/// Default cap on the number of roots per side.
pub const DEFAULT_MAX_ROOTS: usize = 512;

/// One exponential component: `weight · e^{rate · x}` on its half-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub rate: f64,
    pub weight: f64,
}

impl Component {
    /// Probability mass carried by this component.
    pub fn mass(&self) -> f64 {
        (self.weight / self.rate).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMixture {
    pub q: f64,
    /// `ζ₊ > 0` increasing; density on `x < 0`.
    pub pos_side: Vec<Component>,
    /// `ζ₋ < 0` decreasing; density on `x > 0`.
    pub neg_side: Vec<Component>,
    /// Truncated mass before normalization.
    pub raw_mass: f64,
}

impl ExpMixture {
    /// Assemble a mixture from explicit components, checking the sign and
    /// ordering invariants. `raw_mass` is set to the current mass.
    pub fn from_parts(q: f64, pos_side: Vec<Component>, neg_side: Vec<Component>) -> Result<Self> {
        let check = |side: &'static str, comps: &[Component], positive: bool| -> Result<()> {
            for (i, c) in comps.iter().enumerate() {
                let sign_ok = if positive { c.rate > 0.0 } else { c.rate < 0.0 };
                if !sign_ok || !c.rate.is_finite() {
                    return Err(Error::Domain(format!("{side} rate #{i} = {} has the wrong sign", c.rate)));
                }
                if !(c.weight > 0.0 && c.weight.is_finite()) {
                    return Err(Error::Positivity { side, index: i, value: c.weight });
                }
                if i > 0 && c.rate.abs() <= comps[i - 1].rate.abs() {
                    return Err(Error::Domain(format!("{side} rates are not strictly increasing in magnitude")));
                }
            }
            Ok(())
        };
        check("positive", &pos_side, true)?;
        check("negative", &neg_side, false)?;
        let mut mix = ExpMixture { q, pos_side, neg_side, raw_mass: 0.0 };
        mix.raw_mass = mix.mass();
        Ok(mix)
    }

    /// `Σ c₊/ζ₊ − Σ c₋/ζ₋`.
    pub fn mass(&self) -> f64 {
        self.pos_mass() + self.neg_mass()
    }

    /// P(X_ξ < 0).
    pub fn pos_mass(&self) -> f64 {
        self.pos_side.iter().map(Component::mass).sum()
    }

    /// P(X_ξ > 0).
    pub fn neg_mass(&self) -> f64 {
        self.neg_side.iter().map(Component::mass).sum()
    }

    /// Rescale all weights so the mass is exactly one; `raw_mass` keeps the
    /// pre-normalization value.
    pub fn normalize(&mut self) {
        let m = self.mass();
        for c in self.pos_side.iter_mut().chain(self.neg_side.iter_mut()) {
            c.weight /= m;
        }
        self.raw_mass = m;
    }

    /// The open interval of s on which `E[e^{sX_ξ}]` is finite.
    pub fn strip(&self) -> (f64, f64) {
        let lo = self.pos_side.first().map_or(f64::NEG_INFINITY, |c| -c.rate);
        let hi = self.neg_side.first().map_or(f64::INFINITY, |c| -c.rate);
        (lo, hi)
    }

    /// Density of `X_ξ` at x.
    pub fn density(&self, x: f64) -> f64 {
        let side = if x < 0.0 { &self.pos_side } else { &self.neg_side };
        side.iter().map(|c| c.weight * (c.rate * x).exp()).sum()
    }

    pub fn sampler(&self) -> MixtureSampler {
        let comps: Vec<Component> = self.pos_side.iter().chain(self.neg_side.iter()).copied().collect();
        let index = WeightedIndex::new(comps.iter().map(Component::mass)).expect("mixture has positive mass");
        MixtureSampler { comps, index }
    }
}

/// Precomputed component table for drawing from an [`ExpMixture`].
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    comps: Vec<Component>,
    index: WeightedIndex<f64>,
}

impl MixtureSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.comps[self.index.sample(rng)];
        let u: f64 = rng.gen();
        // Exp(|ζ|) magnitude; a positive rate lives on the negative half-line
        -(-u).ln_1p() / -c.rate
    }
}

/// Draw one variate from `mix`.
pub fn sample<R: Rng + ?Sized>(mix: &ExpMixture, rng: &mut R) -> f64 {
    mix.sampler().sample(rng)
}

/// `E[e^{sX_ξ}]` for s inside the strip of finiteness.
pub fn mixture_mgf(mix: &ExpMixture, s: f64) -> Result<f64> {
    let (lo, hi) = mix.strip();
    if !(s > lo && s < hi) {
        return Err(Error::StripViolation { s, lo, hi });
    }
    let pos: f64 = mix.pos_side.iter().map(|c| c.weight / (c.rate + s)).sum();
    let neg: f64 = mix.neg_side.iter().map(|c| c.weight / (c.rate + s)).sum();
    Ok(pos - neg)
}

/// How many roots of `Φ(−ζ) = q` exist on the side whose rates have the given
/// sign; `None` means infinitely many.
pub fn root_capacity(model: &LevyModel, side: Side) -> Option<usize> {
    if model.has_infinite_poles() {
        return None;
    }
    // Roots for ζ₊ live at s = −ζ < 0, i.e. among the negative poles.
    let poles = model.pole_sequence(flip(side), usize::MAX).len();
    let toward = match side {
        Side::Positive => -1.0,
        Side::Negative => 1.0,
    };
    let unbounded = model.sigma() > 0.0 || model.drift() * toward > 0.0;
    Some(poles + unbounded as usize)
}

fn flip(side: Side) -> Side {
    match side {
        Side::Positive => Side::Negative,
        Side::Negative => Side::Positive,
    }
}

/// The first `count_pos` positive and `count_neg` negative solutions of
/// `Φ(−ζ) = q`, ordered by magnitude.
pub fn find_roots(model: &LevyModel, q: f64, count_pos: usize, count_neg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("clock rate q must be positive, got {q}")));
    }
    model.validate()?;
    let pos = roots_on_side(model, q, Side::Positive, count_pos)?;
    let neg = roots_on_side(model, q, Side::Negative, count_neg)?;
    Ok((pos, neg))
}

fn roots_on_side(model: &LevyModel, q: f64, side: Side, count: usize) -> Result<Vec<f64>> {
    if let Some(cap) = root_capacity(model, side) {
        if count > cap {
            return Err(Error::Domain(format!("only {cap} roots exist on the {side:?} side, {count} requested")));
        }
    }
    let poles = model.pole_sequence(flip(side), count);
    (0..count).into_par_iter().map(|j| root_in_bracket(model, q, side, j, &poles)).collect()
}

/// Solve `Φ(s) = q` for s between pole j−1 (or 0) and pole j on the side
/// opposite to the root, then return ζ = −s.
fn root_in_bracket(model: &LevyModel, q: f64, side: Side, j: usize, poles: &[f64]) -> Result<f64> {
    // `inner` is nearer to 0, `outer` farther; g < 0 just outside `inner`
    // and g > 0 just inside `outer`.
    let inner = if j == 0 { 0.0 } else { poles[j - 1] };
    let g = |s: f64| model.phi_unchecked(s) - q;
    let dir = match side {
        Side::Positive => -1.0,
        Side::Negative => 1.0,
    };
    let outer = match poles.get(j) {
        Some(&p) => p,
        None => {
            let mut width = 1.0f64.max(inner.abs());
            let mut guess = inner + dir * width;
            let mut tries = 0;
            while g(guess) <= 0.0 {
                width *= 2.0;
                guess = inner + dir * width;
                tries += 1;
                if tries > 200 {
                    return Err(Error::RootCount { index: j, lo: inner, hi: guess });
                }
            }
            guess
        }
    };
    let width = (outer - inner).abs();
    let eps = width * 1e-10;
    let a = if j == 0 { inner } else { inner + dir * eps };
    let b = if poles.get(j).is_some() { outer - dir * eps } else { outer };
    let (ga, gb) = (g(a), g(b));
    if !(ga < 0.0 && gb > 0.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        return Err(Error::RootCount { index: j, lo, hi });
    }
    let s = refine(&g, |s| model.dphi_unchecked(s), a, b)?;
    Ok(-s)
}

/// Bisection followed by safeguarded Newton on a bracket with g(neg) < 0 < g(pos).
fn refine(g: &impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64, neg: f64, pos: f64) -> Result<f64> {
    let (mut lo, mut hi) = (neg, pos);
    let close = |lo: f64, hi: f64, tol: f64| (hi - lo).abs() <= tol * lo.abs().max(hi.abs());
    while !close(lo, hi, 1e-6) {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..100 {
        let v = g(s);
        if v == 0.0 {
            return Ok(s);
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let d = dg(s);
        let mut next = s - v / d;
        let inside = (next - lo) * (next - hi) < 0.0;
        if !inside || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - s).abs();
        s = next;
        if step <= 1e-15 * s.abs() || close(lo, hi, 1e-15) {
            return Ok(s);
        }
    }
    if close(lo, hi, 1e-14) {
        Ok(s)
    } else {
        Err(Error::RootPrecision { at: s })
    }
}

/// Mixture weights `c = ∓q / Φ′(−ζ)` for the given roots; the result is not normalized.
pub fn coefficients(model: &LevyModel, q: f64, pos_roots: &[f64], neg_roots: &[f64]) -> Result<ExpMixture> {
    let pos = side_coefficients(model, q, pos_roots, "positive", -1.0)?;
    let neg = side_coefficients(model, q, neg_roots, "negative", 1.0)?;
    ExpMixture::from_parts(q, pos, neg)
}

fn side_coefficients(
    model: &LevyModel,
    q: f64,
    roots: &[f64],
    side: &'static str,
    sign: f64,
) -> Result<Vec<Component>> {
    roots
        .iter()
        .enumerate()
        .map(|(index, &z)| {
            let weight = sign * q / model.dphi_unchecked(-z);
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::Positivity { side, index, value: weight });
            }
            Ok(Component { rate: z, weight })
        })
        .collect()
}

/// Grow both root sequences until the truncated mass reaches
/// `mass_threshold`, then normalize.
pub fn build_mixture(model: &LevyModel, q: f64, mass_threshold: f64) -> Result<ExpMixture> {
    build_mixture_capped(model, q, mass_threshold, DEFAULT_MAX_ROOTS)
}

pub fn build_mixture_capped(model: &LevyModel, q: f64, mass_threshold: f64, cap: usize) -> Result<ExpMixture> {
    if !(mass_threshold > 0.0 && mass_threshold <= 1.0) {
        return Err(Error::Domain(format!("mass threshold must lie in (0, 1], got {mass_threshold}")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("clock rate q must be positive, got {q}")));
    }
    model.validate()?;
    let mut sides = [Grower::new(model, q, Side::Positive, cap), Grower::new(model, q, Side::Negative, cap)];
    for g in sides.iter_mut() {
        g.advance()?;
    }
    loop {
        let mass: f64 = sides.iter().map(|g| g.mass()).sum();
        if mass >= mass_threshold {
            break;
        }
        let next = [sides[0].peek_mass()?, sides[1].peek_mass()?];
        let pick = match next {
            [None, None] => {
                if sides.iter().all(|g| g.exhausted()) {
                    break;
                }
                let count = sides.iter().map(|g| g.taken.len()).max().unwrap_or(0);
                return Err(Error::TruncationCap { threshold: mass_threshold, count, mass });
            }
            [Some(_), None] => 0,
            [None, Some(_)] => 1,
            [Some(a), Some(b)] => {
                if a >= b {
                    0
                } else {
                    1
                }
            }
        };
        sides[pick].advance()?;
    }
    let [pos, neg] = sides;
    let mut mix = ExpMixture::from_parts(q, pos.taken, neg.taken)?;
    mix.normalize();
    Ok(mix)
}

/// Lazily extends the root sequence on one side.
struct Grower<'a> {
    model: &'a LevyModel,
    q: f64,
    side: Side,
    cap: usize,
    capacity: Option<usize>,
    taken: Vec<Component>,
    pending: Option<Component>,
}

impl<'a> Grower<'a> {
    fn new(model: &'a LevyModel, q: f64, side: Side, cap: usize) -> Self {
        let capacity = root_capacity(model, side);
        Grower { model, q, side, cap, capacity, taken: Vec::new(), pending: None }
    }

    fn exhausted(&self) -> bool {
        self.capacity.is_some_and(|c| self.taken.len() >= c)
    }

    fn mass(&self) -> f64 {
        self.taken.iter().map(Component::mass).sum()
    }

    fn compute(&self, j: usize) -> Result<Component> {
        let poles = self.model.pole_sequence(flip(self.side), j + 1);
        let z = root_in_bracket(self.model, self.q, self.side, j, &poles)?;
        let (name, sign) = match self.side {
            Side::Positive => ("positive", -1.0),
            Side::Negative => ("negative", 1.0),
        };
        let mut c = side_coefficients(self.model, self.q, &[z], name, sign).map_err(|e| match e {
            Error::Positivity { side, value, .. } => Error::Positivity { side, index: j, value },
            other => other,
        })?;
        Ok(c.remove(0))
    }

    /// Mass of the next component, or `None` if the side cannot grow.
    fn peek_mass(&mut self) -> Result<Option<f64>> {
        if self.exhausted() || self.taken.len() >= self.cap {
            return Ok(None);
        }
        if self.pending.is_none() {
            self.pending = Some(self.compute(self.taken.len())?);
        }
        Ok(self.pending.map(|c| c.mass()))
    }

    fn advance(&mut self) -> Result<()> {
        if self.exhausted() {
            return Ok(());
        }
        let c = match self.pending.take() {
            Some(c) => c,
            None => self.compute(self.taken.len())?,
        };
        self.taken.push(c);
        Ok(())
    }
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{BetaClass, HyperExpJd, Phase};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beta_model(sigma: f64, a: f64, c: f64, alpha: (f64, f64), beta: f64, lambda: f64) -> LevyModel {
        LevyModel::Beta(BetaClass {
            sigma,
            drift: 0.0,
            c1: c,
            c2: c,
            alpha1: alpha.0,
            alpha2: alpha.1,
            beta1: beta,
            beta2: beta,
            lambda1: lambda,
            lambda2: lambda,
        })
        .with_drift(a)
    }

    fn fig1() -> LevyModel {
        beta_model(0.0, 0.0, 100.0, (10.0, 100.0), 0.5, 1.8).martingale_drift(0.05).unwrap()
    }

    fn fig3() -> LevyModel {
        beta_model(1.0, 0.0, 1.5, (56.0, 56.4), 2.0, 2.8).martingale_drift(0.05).unwrap()
    }

    fn kou() -> LevyModel {
        LevyModel::HyperExp(HyperExpJd {
            sigma: 0.2,
            drift: 0.0,
            intensity: 3.0,
            up_prob: 0.4,
            up: vec![Phase { weight: 0.7, rate: 25.0 }, Phase { weight: 0.3, rate: 50.0 }],
            down: vec![Phase { weight: 0.6, rate: 10.0 }, Phase { weight: 0.4, rate: 30.0 }],
        })
    }

    /// Composite Simpson on geometrically growing panels of [0, len].
    fn integrate_half_line(f: impl Fn(f64) -> f64, len: f64) -> f64 {
        let mut edges = vec![0.0];
        let mut e = 1e-4;
        while e < len {
            edges.push(e);
            e *= 2.0;
        }
        edges.push(len);
        let mut total = 0.0;
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let m = 400;
            let h = (b - a) / m as f64;
            let mut acc = f(a) + f(b);
            for i in 1..m {
                acc += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += acc * h / 3.0;
        }
        total
    }

    fn quadrature_mass(mix: &ExpMixture, len: f64) -> f64 {
        let right = integrate_half_line(|x| mix.density(x), len);
        let left = integrate_half_line(|x| mix.density(-x - 1e-300), len);
        let tail_right: f64 = mix.neg_side.iter().map(|c| c.mass() * (c.rate * len).exp()).sum();
        let tail_left: f64 = mix.pos_side.iter().map(|c| c.mass() * (-c.rate * len).exp()).sum();
        right + left + tail_right + tail_left
    }

    #[test]
    fn symmetric_brownian_roots_and_coefficients() {
        let m = LevyModel::brownian(2f64.sqrt(), 0.0).unwrap();
        let (p, n) = find_roots(&m, 1.0, 1, 1).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-14 && (n[0] + 1.0).abs() < 1e-14);
        let mix = coefficients(&m, 1.0, &p, &n).unwrap();
        assert!((mix.pos_side[0].weight - 0.5).abs() < 1e-14);
        assert!((mix.neg_side[0].weight - 0.5).abs() < 1e-14);
        assert!((mix.raw_mass - 1.0).abs() < 1e-14);
        assert!((mix.density(0.7) - 0.5 * (-0.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn brownian_roots_match_quadratic_formula() {
        for &(sigma, a, q) in &[(0.4, -0.03, 2000.0), (1.3, 0.7, 5.0), (0.05, 2.0, 0.3)] {
            let m = LevyModel::brownian(sigma, a).unwrap();
            let (p, n) = find_roots(&m, q, 1, 1).unwrap();
            // Φ(−ζ) = q  ⇔  σ²ζ²/2 − aζ − q = 0
            let disc = (a * a + 2.0 * sigma * sigma * q).sqrt();
            let zp = (a + disc) / (sigma * sigma);
            let zn = (a - disc) / (sigma * sigma);
            assert!((p[0] - zp).abs() < 1e-12 * zp.abs(), "{} vs {zp}", p[0]);
            assert!((n[0] - zn).abs() < 1e-12 * zn.abs(), "{} vs {zn}", n[0]);
            let mix = build_mixture(&m, q, 0.99).unwrap();
            assert_eq!((mix.pos_side.len(), mix.neg_side.len()), (1, 1));
            assert!((mix.raw_mass - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn fig1_roots_have_small_residuals_and_interlace() {
        let m = fig1();
        let (p, n) = find_roots(&m, 100.0, 31, 61).unwrap();
        assert_eq!((p.len(), n.len()), (31, 61));
        for &z in p.iter().chain(n.iter()) {
            let r = (m.laplace_exponent(-z).unwrap() - 100.0).abs();
            assert!(r < 1e-8 * 100.0, "root {z}: residual {r}");
            // Relative 1e-10 where the root is well conditioned; near a pole a
            // one-ulp change of ζ already moves Φ(−ζ) by |Φ′|·ulp(ζ).
            let slope = m.laplace_exponent_derivative(-z).unwrap().abs();
            let floor = 8.0 * f64::EPSILON * z.abs() * slope;
            assert!(r < 1e-10 * 100.0 + floor, "root {z}: residual {r}, floor {floor}");
        }
        for (roots, side) in [(&p, Side::Negative), (&n, Side::Positive)] {
            let poles = m.pole_sequence(side, 200);
            for w in roots.windows(2) {
                let (a, b) = (-w[0], -w[1]);
                let between = poles.iter().filter(|&&x| (x - a) * (x - b) < 0.0).count();
                assert_eq!(between, 1, "roots {} and {}", w[0], w[1]);
            }
            let first = poles.iter().filter(|&&x| x * (-roots[0]) > 0.0 && x.abs() < roots[0].abs()).count();
            assert_eq!(first, 0);
        }
    }

    #[test]
    fn fig3_single_pair_carries_most_of_the_mass() {
        let m = fig3();
        let (p, n) = find_roots(&m, 500.0, 1, 1).unwrap();
        let mix = coefficients(&m, 500.0, &p, &n).unwrap();
        assert!(mix.raw_mass >= 0.99, "raw mass {}", mix.raw_mass);
        let built = build_mixture(&m, 500.0, 0.99).unwrap();
        assert_eq!((built.pos_side.len(), built.neg_side.len()), (1, 1));
    }

    #[test]
    fn hyperexponential_mixture_is_complete() {
        let m = kou().martingale_drift(0.03).unwrap();
        for q in [1.0, 100.0, 2000.0] {
            let (p, n) = find_roots(&m, q, 3, 3).unwrap();
            let raw = coefficients(&m, q, &p, &n).unwrap();
            assert!((raw.raw_mass - 1.0).abs() < 1e-10, "q={q}: {}", raw.raw_mass);
            assert!(find_roots(&m, q, 4, 3).is_err());
            let mix = build_mixture(&m, q, 1.0).unwrap();
            assert_eq!((mix.pos_side.len(), mix.neg_side.len()), (3, 3));
            assert!((quadrature_mass(&mix, 30.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_mixtures_satisfy_the_mass_identity() {
        for (m, q) in [(fig1(), 100.0), (fig3(), 500.0), (kou(), 50.0)] {
            let mix = build_mixture(&m, q, 0.99).unwrap();
            assert!((mix.mass() - 1.0).abs() < 1e-12);
            assert!(mix.raw_mass >= 0.99);
            for c in mix.pos_side.iter().chain(mix.neg_side.iter()) {
                assert!(c.weight > 0.0 && c.mass() > 0.0);
            }
            assert!((quadrature_mass(&mix, 20.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fig1_truncation_counts() {
        let mix = build_mixture(&fig1(), 100.0, 0.99).unwrap();
        assert!(mix.raw_mass >= 0.99);
        // The truncated mass is monotone in the counts, so dropping the last
        // root on the side that was grown last must fall below the threshold.
        let (np, nn) = (mix.pos_side.len(), mix.neg_side.len());
        let (p, n) = find_roots(&fig1(), 100.0, np, nn).unwrap();
        let full = coefficients(&fig1(), 100.0, &p, &n).unwrap();
        let fewer = coefficients(&fig1(), 100.0, &p, &n[..nn - 1]).unwrap();
        assert!((full.raw_mass - mix.raw_mass).abs() < 1e-14);
        assert!(fewer.raw_mass < 0.99 || nn == 1);
    }

    #[test]
    fn mgf_values() {
        let m = LevyModel::brownian(2f64.sqrt(), 0.0).unwrap();
        let mix = build_mixture(&m, 1.0, 0.99).unwrap();
        assert!((mixture_mgf(&mix, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((mixture_mgf(&mix, 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!(matches!(mixture_mgf(&mix, 1.0), Err(Error::StripViolation { .. })));
        assert!(matches!(mixture_mgf(&mix, -1.5), Err(Error::StripViolation { .. })));

        let (n, r) = (2000.0, 0.05);
        for model in [LevyModel::brownian(0.4, 0.0).unwrap(), kou()] {
            let m = model.martingale_drift(r).unwrap();
            let mix = build_mixture(&m, n, 1.0).unwrap();
            assert!((mixture_mgf(&mix, 1.0).unwrap() - n / (n - r)).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_matches_the_law() {
        let m = LevyModel::brownian(2f64.sqrt(), 0.0).unwrap();
        let mix = build_mixture(&m, 1.0, 0.99).unwrap();
        let sampler = mix.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sampler.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 3e-3, "mean {mean}");

        let mix = build_mixture(&fig3(), 500.0, 0.99).unwrap();
        let sampler = mix.sampler();
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        let p_neg = mix.pos_mass();
        let frac = draws.iter().filter(|&&x| x < 0.0).count() as f64 / n as f64;
        let se = (p_neg * (1.0 - p_neg) / n as f64).sqrt();
        assert!((frac - p_neg).abs() < 3.0 * se);

        let vals: Vec<f64> = draws.iter().map(|x| (0.5 * x).exp()).collect();
        let avg = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((avg - mixture_mgf(&mix, 0.5).unwrap()).abs() < 3.0 * se);
        assert!(sample(&mix, &mut rng).is_finite());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let m = kou();
        assert!(build_mixture(&m, 0.0, 0.99).is_err());
        assert!(build_mixture(&m, 10.0, 1.5).is_err());
        assert!(matches!(build_mixture_capped(&fig1(), 100.0, 0.99999, 3), Err(Error::TruncationCap { .. })));
        let bad = Component { rate: -1.0, weight: 1.0 };
        assert!(ExpMixture::from_parts(1.0, vec![bad], vec![]).is_err());
        let neg_weight = Component { rate: 1.0, weight: -1.0 };
        assert!(matches!(ExpMixture::from_parts(1.0, vec![neg_weight], vec![]), Err(Error::Positivity { .. })));
    }
}
