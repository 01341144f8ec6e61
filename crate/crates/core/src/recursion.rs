//! Closed-form backward recursion for the randomized-grid American put.
//!
//! `V_k` is stored piecewise. Between consecutive boundary points each piece
//! is a finite exponential polynomial
//!
//! ```text
//!   Σ_j Σ_i A₊(i,j)·(x − lo)^i·e^{−ζ₊(j)(x − lo)}
//! + Σ_j Σ_i A₋(i,j)·(x − hi)^i·e^{−ζ₋(j)(x − hi)}  −  B·e^x  +  C
//! ```
//!
//! with the ζ₊ terms anchored at the left end of the piece and the ζ₋ terms at
//! the right end, so every exponential factor is at most one on its own piece.
//! The top piece `[x̄₀, ∞)` carries only ζ₊ terms and below `x̄_k` the value is
//! the payoff `K − e^x`.
//!
//! One step integrates every piece of `V_{k−1}` against each exponential
//! component of the law of `X_ξ`. A term `A·t^i·e^{−ρt}` integrated against
//! `e^{ζt}` has antiderivative `e^{(ζ−ρ)t}·P(t)` with `P' + (ζ−ρ)P = A·t^i`,
//! which is solved by a backward recurrence on the coefficients. Summed over
//! components these carries reproduce the Υ₁/Υ₂-weighted sums and the
//! `±c/(i+1)` self terms; the remaining endpoint values produce the new
//! degree-zero coefficients.

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};
use crate::spectral::ExpMixture;
use rayon::prelude::*;
use std::time::{Duration, Instant};

/// Relative separation below which two rates are treated as equal.
pub const RATE_SEPARATION: f64 = 1e-10;

fn coincident(alpha: f64, zeta: f64) -> bool {
    alpha.abs() < RATE_SEPARATION * zeta.abs().max(1.0)
}

/// A single term `coef · x^power · e^{−rate·x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpPolyTerm {
    pub coef: f64,
    pub power: u32,
    pub rate: f64,
}

/// Antiderivative at x of `u ↦ A·u^i·e^{(shift_rate − ζ)u}`.
pub fn antiderivative_eval(term: &ExpPolyTerm, shift_rate: f64, x: f64) -> f64 {
    let alpha = shift_rate - term.rate;
    let i = term.power as i32;
    if coincident(alpha, term.rate) {
        return term.coef * x.powi(i + 1) / (i + 1) as f64;
    }
    let mut sum = 0.0;
    let mut falling = 1.0;
    let mut apow = alpha;
    for j in 0..=i {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * falling * x.powi(i - j) / apow;
        falling *= (i - j) as f64;
        apow *= alpha;
    }
    term.coef * (alpha * x).exp() * sum
}

/// Coefficients of P with `P' + αP = p`, or of `∫p` when α is degenerate.
fn anti_poly<T: Scalar>(p: &[T], alpha: &T, degenerate: bool) -> Vec<T> {
    if p.is_empty() {
        return Vec::new();
    }
    if degenerate {
        let mut out = Vec::with_capacity(p.len() + 1);
        out.push(T::zero());
        for (i, a) in p.iter().enumerate() {
            out.push(a.clone() / T::from_usize(i + 1));
        }
        return out;
    }
    let d = p.len() - 1;
    let mut out = vec![T::zero(); p.len()];
    out[d] = p[d].clone() / alpha.clone();
    for i in (0..d).rev() {
        out[i] = (p[i].clone() - T::from_usize(i + 1) * out[i + 1].clone()) / alpha.clone();
    }
    out
}

/// Magnitude companion of [`anti_poly`].
fn anti_poly_mag(p: &[f64], alpha: f64, degenerate: bool) -> Vec<f64> {
    if p.is_empty() {
        return Vec::new();
    }
    if degenerate {
        let mut out = Vec::with_capacity(p.len() + 1);
        out.push(0.0);
        for (i, a) in p.iter().enumerate() {
            out.push(a / (i + 1) as f64);
        }
        return out;
    }
    let a = alpha.abs();
    let d = p.len() - 1;
    let mut out = vec![0.0; p.len()];
    out[d] = p[d] / a;
    for i in (0..d).rev() {
        out[i] = (p[i] + (i + 1) as f64 * out[i + 1]) / a;
    }
    out
}

fn horner<T: Scalar>(p: &[T], t: &T) -> T {
    let mut acc = T::zero();
    for a in p.iter().rev() {
        acc = acc * t.clone() + a.clone();
    }
    acc
}

fn abs_poly<T: Scalar>(p: &[T]) -> Vec<f64> {
    p.iter().map(|a| a.to_f64().abs()).collect()
}

fn horner_mag(p: &[f64], t: f64) -> f64 {
    let t = t.abs();
    p.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

/// One exponential component of the transition kernel.
#[derive(Debug, Clone)]
pub struct Rate<T> {
    pub zeta: T,
    pub weight: T,
    pub zeta_f: f64,
    pub weight_f: f64,
}

/// The mixture, discount and strike converted to working precision.
#[derive(Debug, Clone)]
pub struct Kernel<T> {
    pub pos: Vec<Rate<T>>,
    pub neg: Vec<Rate<T>>,
    /// e^{−r/n}
    pub disc: T,
    pub upsilon0: T,
    pub strike: T,
    pub strike_f: f64,
    pub r: f64,
    pub n: usize,
}

impl<T: Scalar> Kernel<T> {
    pub fn new(mix: &ExpMixture, strike: f64, r: f64, n: usize) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(Error::Domain(format!("strike must be positive, got {strike}")));
        }
        if n == 0 {
            return Err(Error::Domain("grid rate n must be at least 1".into()));
        }
        let (lo, hi) = mix.strip();
        if !(hi > 1.0) {
            return Err(Error::StripViolation { s: 1.0, lo, hi });
        }
        let conv = |c: &crate::spectral::Component| Rate {
            zeta: T::from_f64(c.rate),
            weight: T::from_f64(c.weight),
            zeta_f: c.rate,
            weight_f: c.weight,
        };
        let mut pos: Vec<Rate<T>> = mix.pos_side.iter().map(conv).collect();
        let mut neg: Vec<Rate<T>> = mix.neg_side.iter().map(conv).collect();
        // re-normalize at working precision so the constant carries exactly
        let mut mass = CompensatedSum::default();
        for c in &pos {
            mass.add(c.weight.clone() / c.zeta.clone());
        }
        for c in &neg {
            mass.add(-(c.weight.clone() / c.zeta.clone()));
        }
        let mass = mass.value();
        for c in pos.iter_mut().chain(neg.iter_mut()) {
            c.weight = c.weight.clone() / mass.clone();
        }
        let mut ker = Kernel {
            pos,
            neg,
            disc: (-(T::from_f64(r) / T::from_usize(n))).exp(),
            upsilon0: T::zero(),
            strike: T::from_f64(strike),
            strike_f: strike,
            r,
            n,
        };
        ker.upsilon0 = upsilon0(&ker)?;
        Ok(ker)
    }

    fn all(&self) -> impl Iterator<Item = (&Rate<T>, bool)> {
        self.pos.iter().map(|c| (c, true)).chain(self.neg.iter().map(|c| (c, false)))
    }
}

/// `Υ₀ = Σ c₊/(ζ₊+1) − Σ c₋/(ζ₋+1) = E[e^{X_ξ}]`.
pub fn upsilon0<T: Scalar>(ker: &Kernel<T>) -> Result<T> {
    if let Some(c) = ker.neg.first() {
        if c.zeta_f >= -1.0 {
            let lo = ker.pos.first().map_or(f64::NEG_INFINITY, |c| -c.zeta_f);
            return Err(Error::StripViolation { s: 1.0, lo, hi: -c.zeta_f });
        }
    }
    let mut acc = CompensatedSum::default();
    for c in &ker.pos {
        acc.add(c.weight.clone() / (c.zeta.clone() + T::one()));
    }
    for c in &ker.neg {
        acc.add(-(c.weight.clone() / (c.zeta.clone() + T::one())));
    }
    Ok(acc.value())
}

fn check_separation(a: f64, b: f64) -> Result<()> {
    if coincident(a - b, b) {
        Err(Error::CoincidentRates { a, b })
    } else {
        Ok(())
    }
}

fn signed_power<T: Scalar>(base: T, h: usize) -> T {
    // base^{−(h+1)}
    let inv = T::one() / base;
    let mut out = inv.clone();
    for _ in 0..h {
        out *= inv.clone();
    }
    out
}

/// `Υ₁(h, j) = (−1)^h [Σ_{q≠j} c₊(q)(ζ₊(q) − ζ₊(j))^{−(h+1)} − Σ_q c₋(q)(ζ₋(q) − ζ₊(j))^{−(h+1)}]`.
pub fn upsilon1<T: Scalar>(ker: &Kernel<T>, h: usize, j: usize) -> Result<T> {
    let z = &ker.pos[j];
    let mut acc = CompensatedSum::default();
    for (q, c) in ker.pos.iter().enumerate() {
        if q == j {
            continue;
        }
        check_separation(c.zeta_f, z.zeta_f)?;
        acc.add(c.weight.clone() * signed_power(c.zeta.clone() - z.zeta.clone(), h));
    }
    for c in &ker.neg {
        acc.add(-(c.weight.clone() * signed_power(c.zeta.clone() - z.zeta.clone(), h)));
    }
    let v = acc.value();
    Ok(if h.is_multiple_of(2) { v } else { -v })
}

/// `Υ₂(h, j) = (−1)^h [Σ_q c₊(q)(ζ₊(q) − ζ₋(j))^{−(h+1)} − Σ_{q≠j} c₋(q)(ζ₋(q) − ζ₋(j))^{−(h+1)}]`.
pub fn upsilon2<T: Scalar>(ker: &Kernel<T>, h: usize, j: usize) -> Result<T> {
    let z = &ker.neg[j];
    let mut acc = CompensatedSum::default();
    for c in &ker.pos {
        acc.add(c.weight.clone() * signed_power(c.zeta.clone() - z.zeta.clone(), h));
    }
    for (q, c) in ker.neg.iter().enumerate() {
        if q == j {
            continue;
        }
        check_separation(c.zeta_f, z.zeta_f)?;
        acc.add(-(c.weight.clone() * signed_power(c.zeta.clone() - z.zeta.clone(), h)));
    }
    let v = acc.value();
    Ok(if h.is_multiple_of(2) { v } else { -v })
}

/// One piece of a value or continuation function.
#[derive(Debug, Clone)]
pub struct Piece<T> {
    /// Left end; `None` means −∞.
    pub lo: Option<T>,
    /// Right end; `None` means +∞.
    pub hi: Option<T>,
    /// `pos[j][i]` multiplies `(x − lo)^i e^{−ζ₊(j)(x − lo)}`.
    pub pos: Vec<Vec<T>>,
    /// `neg[j][i]` multiplies `(x − hi)^i e^{−ζ₋(j)(x − hi)}`.
    pub neg: Vec<Vec<T>>,
    /// Coefficient of `−e^x`.
    pub b: T,
    pub c: T,
    pub pos_mag: Vec<Vec<f64>>,
    pub neg_mag: Vec<Vec<f64>>,
}

impl<T: Scalar> Piece<T> {
    fn empty(lo: Option<T>, hi: Option<T>, np: usize, nn: usize) -> Self {
        Piece {
            lo,
            hi,
            pos: vec![Vec::new(); np],
            neg: vec![Vec::new(); nn],
            b: T::zero(),
            c: T::zero(),
            pos_mag: vec![Vec::new(); np],
            neg_mag: vec![Vec::new(); nn],
        }
    }

    /// Highest power present.
    pub fn degree(&self) -> Option<usize> {
        self.pos.iter().chain(self.neg.iter()).filter(|p| !p.is_empty()).map(|p| p.len() - 1).max()
    }

    /// Value and magnitude envelope at x.
    pub fn eval(&self, ker: &Kernel<T>, x: &T) -> (T, f64) {
        let mut acc = CompensatedSum::default();
        let mut mag = 0.0;
        if let Some(lo) = &self.lo {
            let t = x.clone() - lo.clone();
            let tf = t.to_f64();
            for (j, p) in self.pos.iter().enumerate() {
                if p.is_empty() {
                    continue;
                }
                let e = (-(ker.pos[j].zeta.clone() * t.clone())).exp();
                let ef = e.to_f64();
                acc.add(e * horner(p, &t));
                mag += ef * horner_mag(&self.pos_mag[j], tf);
            }
        }
        if let Some(hi) = &self.hi {
            let t = x.clone() - hi.clone();
            let tf = t.to_f64();
            for (j, p) in self.neg.iter().enumerate() {
                if p.is_empty() {
                    continue;
                }
                let e = (-(ker.neg[j].zeta.clone() * t.clone())).exp();
                let ef = e.to_f64();
                acc.add(e * horner(p, &t));
                mag += ef * horner_mag(&self.neg_mag[j], tf);
            }
        }
        let ex = x.exp();
        mag += self.b.abs().to_f64() * ex.to_f64() + self.c.abs().to_f64();
        acc.add(-(self.b.clone() * ex));
        acc.add(self.c.clone());
        (acc.value(), mag)
    }

    fn eval_derivative(&self, ker: &Kernel<T>, x: &T) -> T {
        let mut acc = CompensatedSum::default();
        let dpoly =
            |p: &[T]| -> Vec<T> { p.iter().enumerate().skip(1).map(|(i, a)| a.clone() * T::from_usize(i)).collect() };
        if let Some(lo) = &self.lo {
            let t = x.clone() - lo.clone();
            for (j, p) in self.pos.iter().enumerate() {
                if p.is_empty() {
                    continue;
                }
                let z = &ker.pos[j].zeta;
                let e = (-(z.clone() * t.clone())).exp();
                acc.add(e * (horner(&dpoly(p), &t) - z.clone() * horner(p, &t)));
            }
        }
        if let Some(hi) = &self.hi {
            let t = x.clone() - hi.clone();
            for (j, p) in self.neg.iter().enumerate() {
                if p.is_empty() {
                    continue;
                }
                let z = &ker.neg[j].zeta;
                let e = (-(z.clone() * t.clone())).exp();
                acc.add(e * (horner(&dpoly(p), &t) - z.clone() * horner(p, &t)));
            }
        }
        acc.add(-(self.b.clone() * x.exp()));
        acc.value()
    }
}

/// `V_k` for one working precision.
#[derive(Debug, Clone)]
pub struct PiecewiseValueFn<T> {
    pub k: usize,
    pub n: usize,
    pub strike: T,
    /// `x̄₀ > x̄₁ > … > x̄_k`.
    pub boundaries: Vec<T>,
    /// `pieces[0]` is `[x̄₀, ∞)`, `pieces[m]` is `[x̄_m, x̄_{m−1})`.
    pub pieces: Vec<Piece<T>>,
}

/// `V₀ = (K − e^x)⁺`.
pub fn init_value<T: Scalar>(strike: f64, n: usize, ker: &Kernel<T>) -> PiecewiseValueFn<T> {
    let x0 = T::from_f64(strike).ln();
    PiecewiseValueFn {
        k: 0,
        n,
        strike: T::from_f64(strike),
        boundaries: vec![x0.clone()],
        pieces: vec![Piece::empty(Some(x0), None, ker.pos.len(), ker.neg.len())],
    }
}

impl<T: Scalar> PiecewiseValueFn<T> {
    pub fn lowest_boundary(&self) -> &T {
        self.boundaries.last().expect("at least x̄₀")
    }

    /// Index of the piece containing x, or `None` below `x̄_k`.
    pub fn locate(&self, x: &T) -> Option<usize> {
        if x < self.lowest_boundary() {
            return None;
        }
        if *x >= self.boundaries[0] {
            return Some(0);
        }
        // boundaries decrease: find m with x̄_m ≤ x < x̄_{m−1}
        let (mut lo, mut hi) = (1usize, self.k);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if *x >= self.boundaries[mid] {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }

    pub fn eval_with_mag(&self, ker: &Kernel<T>, x: &T) -> (T, f64) {
        match self.locate(x) {
            None => {
                let ex = x.exp();
                let mag = self.strike.to_f64() + ex.to_f64();
                (self.strike.clone() - ex, mag)
            }
            Some(m) => self.pieces[m].eval(ker, x),
        }
    }

    pub fn evaluate(&self, ker: &Kernel<T>, x: &T) -> T {
        self.eval_with_mag(ker, x).0
    }

    /// Largest ratio of term magnitude to value over the piece end points
    /// and midpoints.
    pub fn cancellation_ratio(&self, ker: &Kernel<T>) -> f64 {
        let mut worst: f64 = 1.0;
        let mut probe = |x: T| {
            let (v, m) = self.eval_with_mag(ker, &x);
            let v = v.to_f64().abs();
            let ratio = if v > 0.0 { m / v } else { f64::INFINITY };
            if m > 0.0 {
                worst = worst.max(ratio);
            }
        };
        probe(self.boundaries[0].clone());
        for m in 1..=self.k {
            let lo = self.boundaries[m].clone();
            let hi = self.boundaries[m - 1].clone();
            let mid = (lo.clone() + hi.clone()) / T::from_f64(2.0);
            probe(lo);
            probe(mid);
        }
        worst
    }
}

/// Output of one application of the discounted transition operator.
#[derive(Debug, Clone)]
pub struct Continuation<T> {
    /// Same intervals as the pieces of `V_{k−1}`.
    pub pieces: Vec<Piece<T>>,
    /// Valid on `(−∞, x̄_{k−1})`: only ζ₋ terms anchored at `x̄_{k−1}`.
    pub bottom: Piece<T>,
}

/// Per-piece partial results of a step.
struct PieceWork<T> {
    pos: Vec<Vec<T>>,
    neg: Vec<Vec<T>>,
    pos_mag: Vec<Vec<f64>>,
    neg_mag: Vec<Vec<f64>>,
    /// Q_j(lo), Q_j(hi) per kernel component (pos kernels, then neg).
    q_lo: Vec<(T, f64)>,
    q_hi: Vec<(T, f64)>,
}

fn add_into<T: Scalar>(dst: &mut Vec<T>, src: &[T], w: &T) {
    if dst.len() < src.len() {
        dst.resize(src.len(), T::zero());
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w.clone() * s.clone();
    }
}

fn add_into_mag(dst: &mut Vec<f64>, src: &[f64], w: f64) {
    if dst.len() < src.len() {
        dst.resize(src.len(), 0.0);
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

fn piece_work<T: Scalar>(piece: &Piece<T>, ker: &Kernel<T>) -> PieceWork<T> {
    let np = ker.pos.len();
    let nn = ker.neg.len();
    let mut work = PieceWork {
        pos: vec![Vec::new(); np],
        neg: vec![Vec::new(); nn],
        pos_mag: vec![Vec::new(); np],
        neg_mag: vec![Vec::new(); nn],
        q_lo: Vec::with_capacity(np + nn),
        q_hi: Vec::with_capacity(np + nn),
    };
    let lo = piece.lo.clone().expect("pieces of V have a finite left end");
    let width = piece.hi.clone().map(|h| h - lo.clone());
    let e_lo = lo.exp();
    let e_hi = piece.hi.as_ref().map(|h| h.exp());
    for (kc, is_pos) in ker.all() {
        let sign = if is_pos { kc.weight.clone() } else { -kc.weight.clone() };
        let wf = kc.weight_f;
        let mut qlo = CompensatedSum::default();
        let mut qhi = CompensatedSum::default();
        let (mut qlo_m, mut qhi_m) = (0.0, 0.0);
        // ζ₊ groups: t = x − lo, so t = 0 at lo and t = width at hi
        for (l, p) in piece.pos.iter().enumerate() {
            if p.is_empty() {
                continue;
            }
            let rho = &ker.pos[l];
            let alpha_f = kc.zeta_f - rho.zeta_f;
            let deg = coincident(alpha_f, kc.zeta_f);
            let alpha = kc.zeta.clone() - rho.zeta.clone();
            let pp = anti_poly(p, &alpha, deg);
            let pm = anti_poly_mag(&abs_poly(p), alpha_f, deg);
            qlo.add(pp[0].clone());
            qlo_m += pm[0];
            if let Some(w) = &width {
                let e = (-(rho.zeta.clone() * w.clone())).exp();
                let ef = e.to_f64();
                qhi.add(e * horner(&pp, w));
                qhi_m += ef * horner_mag(&pm, w.to_f64());
            }
            add_into(&mut work.pos[l], &pp, &sign);
            add_into_mag(&mut work.pos_mag[l], &pm, wf);
        }
        // ζ₋ groups: t = x − hi, so t = −width at lo and t = 0 at hi
        if let Some(w) = &width {
            let neg_w = -w.clone();
            for (l, p) in piece.neg.iter().enumerate() {
                if p.is_empty() {
                    continue;
                }
                let rho = &ker.neg[l];
                let alpha_f = kc.zeta_f - rho.zeta_f;
                let deg = coincident(alpha_f, kc.zeta_f);
                let alpha = kc.zeta.clone() - rho.zeta.clone();
                let pp = anti_poly(p, &alpha, deg);
                let pm = anti_poly_mag(&abs_poly(p), alpha_f, deg);
                qhi.add(pp[0].clone());
                qhi_m += pm[0];
                let e = (-(rho.zeta.clone() * neg_w.clone())).exp();
                let ef = e.to_f64();
                qlo.add(e * horner(&pp, &neg_w));
                qlo_m += ef * horner_mag(&pm, w.to_f64());
                add_into(&mut work.neg[l], &pp, &sign);
                add_into_mag(&mut work.neg_mag[l], &pm, wf);
            }
        }
        // −B e^x and C
        let inv1 = T::one() / (kc.zeta.clone() + T::one());
        let invz = T::one() / kc.zeta.clone();
        let bmag = piece.b.abs().to_f64() / (kc.zeta_f + 1.0).abs();
        let cmag = piece.c.abs().to_f64() / kc.zeta_f.abs();
        qlo.add(-(piece.b.clone() * e_lo.clone() * inv1.clone()));
        qlo.add(piece.c.clone() * invz.clone());
        qlo_m += bmag * e_lo.to_f64() + cmag;
        if let Some(eh) = &e_hi {
            qhi.add(-(piece.b.clone() * eh.clone() * inv1));
            qhi.add(piece.c.clone() * invz);
            qhi_m += bmag * eh.to_f64() + cmag;
        }
        work.q_lo.push((qlo.value(), qlo_m));
        work.q_hi.push((qhi.value(), qhi_m));
    }
    work
}

/// Apply `x ↦ e^{−r/n}·E_x[V(X_ξ)]` to `V_{k−1}` in closed form.
pub fn step<T: Scalar>(v: &PiecewiseValueFn<T>, ker: &Kernel<T>) -> Result<Continuation<T>> {
    let np = ker.pos.len();
    let nn = ker.neg.len();
    let works: Vec<PieceWork<T>> = v.pieces.par_iter().map(|p| piece_work(p, ker)).collect();

    let k1 = v.k;
    let strike = &ker.strike;
    let xb = v.lowest_boundary().clone();
    let exb = xb.exp();

    let mut out: Vec<Piece<T>> = v
        .pieces
        .iter()
        .zip(works.iter())
        .map(|(p, w)| Piece {
            lo: p.lo.clone(),
            hi: p.hi.clone(),
            pos: w.pos.clone(),
            neg: if p.hi.is_some() { w.neg.clone() } else { vec![Vec::new(); nn] },
            b: p.b.clone() * ker.upsilon0.clone(),
            c: p.c.clone(),
            pos_mag: w.pos_mag.clone(),
            neg_mag: if p.hi.is_some() { w.neg_mag.clone() } else { vec![Vec::new(); nn] },
        })
        .collect();
    // ascending order of intervals: pieces k1, k1−1, …, 1, 0
    let order: Vec<usize> = (0..=k1).rev().collect();

    // S₊(j) = ∫_{−∞}^{a} V(z) e^{−ζ(a−z)} dz, starting from the payoff below x̄_{k−1}
    for (j, kc) in ker.pos.iter().enumerate() {
        let inv1 = T::one() / (kc.zeta.clone() + T::one());
        let mut s = strike.clone() / kc.zeta.clone() - exb.clone() * inv1;
        let mut s_m = ker.strike_f / kc.zeta_f + exb.to_f64() / (kc.zeta_f + 1.0);
        for &m in &order {
            let (qlo, qlo_m) = &works[m].q_lo[j];
            let coef = kc.weight.clone() * (s.clone() - qlo.clone());
            let coef_m = kc.weight_f * (s_m + qlo_m);
            let p = &mut out[m];
            push_const(&mut p.pos[j], &mut p.pos_mag[j], coef, coef_m);
            if let (Some(lo), Some(hi)) = (&v.pieces[m].lo, &v.pieces[m].hi) {
                let w = hi.clone() - lo.clone();
                let e = (-(kc.zeta.clone() * w)).exp();
                let (qhi, qhi_m) = &works[m].q_hi[j];
                s = e.clone() * (s - qlo.clone()) + qhi.clone();
                s_m = e.to_f64() * (s_m + qlo_m) + qhi_m;
            }
        }
    }

    // S₋(j) = ∫_{b}^{∞} V(z) e^{−ζ(b−z)} dz, descending from the top
    let mut bottom = Piece::empty(None, Some(xb.clone()), np, nn);
    for (jn, kc) in ker.neg.iter().enumerate() {
        let j = np + jn;
        let mut s = T::zero();
        let mut s_m = 0.0;
        for &m in order.iter().rev() {
            let (qlo, qlo_m) = &works[m].q_lo[j];
            match (&v.pieces[m].lo, &v.pieces[m].hi) {
                (Some(lo), Some(hi)) => {
                    let (qhi, qhi_m) = &works[m].q_hi[j];
                    let coef = kc.weight.clone() * (s.clone() + qhi.clone());
                    let coef_m = kc.weight_f * (s_m + qhi_m);
                    let p = &mut out[m];
                    push_const(&mut p.neg[jn], &mut p.neg_mag[jn], coef, coef_m);
                    let w = hi.clone() - lo.clone();
                    let e = (kc.zeta.clone() * w).exp();
                    let ef = e.to_f64();
                    s = e * (s + qhi.clone()) - qlo.clone();
                    s_m = ef * (s_m + qhi_m) + qlo_m;
                }
                _ => {
                    // top piece: nothing above it
                    s = -qlo.clone();
                    s_m = *qlo_m;
                }
            }
        }
        let inv1 = T::one() / (kc.zeta.clone() + T::one());
        let q_bot = strike.clone() / kc.zeta.clone() - exb.clone() * inv1;
        let q_bot_m = ker.strike_f / kc.zeta_f.abs() + exb.to_f64() / (kc.zeta_f + 1.0).abs();
        bottom.neg[jn] = vec![kc.weight.clone() * (s + q_bot)];
        bottom.neg_mag[jn] = vec![kc.weight_f * (s_m + q_bot_m)];
    }
    bottom.b = ker.upsilon0.clone();
    bottom.c = strike.clone();

    for piece in out.iter_mut().chain(std::iter::once(&mut bottom)) {
        scale_piece(piece, &ker.disc);
    }
    Ok(Continuation { pieces: out, bottom })
}

fn push_const<T: Scalar>(poly: &mut Vec<T>, mag: &mut Vec<f64>, coef: T, coef_m: f64) {
    if poly.is_empty() {
        poly.push(T::zero());
    }
    if mag.is_empty() {
        mag.push(0.0);
    }
    poly[0] += coef;
    mag[0] += coef_m;
}

fn scale_piece<T: Scalar>(piece: &mut Piece<T>, s: &T) {
    let sf = s.to_f64();
    for p in piece.pos.iter_mut().chain(piece.neg.iter_mut()) {
        for a in p.iter_mut() {
            *a *= s.clone();
        }
    }
    for p in piece.pos_mag.iter_mut().chain(piece.neg_mag.iter_mut()) {
        for a in p.iter_mut() {
            *a *= sf;
        }
    }
    piece.b *= s.clone();
    piece.c *= s.clone();
}

/// Boundary equation `F(z) − (K − e^z)` for the continuation below `x̄_{k−1}`.
fn boundary_gap<T: Scalar>(bottom: &Piece<T>, ker: &Kernel<T>, z: &T) -> T {
    bottom.eval(ker, z).0 - (ker.strike.clone() - z.exp())
}

fn boundary_gap_derivative<T: Scalar>(bottom: &Piece<T>, ker: &Kernel<T>, z: &T) -> T {
    bottom.eval_derivative(ker, z) + z.exp()
}

/// The unique root of `F = K − e^z` on `(−∞, upper)`.
pub fn solve_boundary<T: Scalar>(bottom: &Piece<T>, ker: &Kernel<T>, upper: &T, step: usize, tol: f64) -> Result<T> {
    let upper_f = upper.to_f64();
    let g = |z: &T| boundary_gap(bottom, ker, z);
    if g(upper).to_f64() <= 0.0 || bottom.c >= ker.strike {
        return Err(Error::BracketFailure { step, upper: upper_f });
    }
    // bisection in s = e^z on (0, e^upper)
    let su = upper_f.exp();
    let (mut s_lo, mut s_hi) = (0.0f64, su);
    for _ in 0..2000 {
        let mid = 0.5 * (s_lo + s_hi);
        if mid <= s_lo || mid >= s_hi {
            break;
        }
        let v = g(&T::from_f64(mid.ln())).to_f64();
        if v < 0.0 {
            s_lo = mid;
        } else {
            s_hi = mid;
        }
        if s_lo > 0.0 && s_hi / s_lo < 1.0 + 1e-9 {
            break;
        }
    }
    if s_lo == 0.0 {
        return Err(Error::BracketFailure { step, upper: upper_f });
    }
    let (mut z_lo, mut z_hi) = (T::from_f64(s_lo.ln()), T::from_f64(s_hi.ln()));
    let mut z = (z_lo.clone() + z_hi.clone()) / T::from_f64(2.0);
    let tol = tol.min(1e-13).max(64.0 * T::epsilon());
    let mut extra = if T::BITS > 53 { 2 } else { 0 };
    for _ in 0..100 {
        let v = g(&z);
        if v < T::zero() {
            z_lo = z.clone();
        } else {
            z_hi = z.clone();
        }
        let d = boundary_gap_derivative(bottom, ker, &z);
        let mut next = z.clone() - v / d;
        if !(next > z_lo && next < z_hi) || !next.is_finite() {
            next = (z_lo.clone() + z_hi.clone()) / T::from_f64(2.0);
        }
        let dz = (next.clone() - z.clone()).abs().to_f64();
        z = next;
        if dz <= tol * z.abs().to_f64().max(1.0) {
            if extra == 0 {
                break;
            }
            extra -= 1;
        }
    }
    if !(z < *upper) {
        return Err(Error::BracketFailure { step, upper: upper_f });
    }
    Ok(z)
}

/// Whether the boundary objective is convex in s on a few probe points below
/// the root; a failure suggests more than one crossing.
fn boundary_convex<T: Scalar>(bottom: &Piece<T>, ker: &Kernel<T>, upper: &T) -> bool {
    let su = upper.to_f64().exp();
    let h = su / 64.0;
    (2..63).step_by(4).all(|i| {
        let s = h * i as f64;
        let f = |s: f64| boundary_gap(bottom, ker, &T::from_f64(s.ln())).to_f64();
        let second = f(s + h) - 2.0 * f(s) + f(s - h);
        second >= -1e-9 * ker.strike_f
    })
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub boundary: f64,
    pub cancellation: f64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub steps: Vec<StepReport>,
    pub warnings: Vec<String>,
}

/// Combine the continuation and the new boundary point into `V_k`.
pub fn assemble<T: Scalar>(v: &PiecewiseValueFn<T>, cont: Continuation<T>, xk: T) -> PiecewiseValueFn<T> {
    let mut pieces = cont.pieces;
    let mut newest = cont.bottom;
    newest.lo = Some(xk.clone());
    pieces.push(newest);
    let mut boundaries = v.boundaries.clone();
    boundaries.push(xk);
    PiecewiseValueFn { k: v.k + 1, n: v.n, strike: v.strike.clone(), boundaries, pieces }
}

/// Knobs for [`recurse_fixed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// The cancellation ratio may reach `10^{budget·bits}`.
    pub budget: f64,
    /// Boundary points are solved to this tolerance in z (at most 1e-13).
    pub boundary_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { budget: 0.3, boundary_tol: 1e-13 }
    }
}

/// Run k steps at one fixed precision.
pub fn recurse_fixed<T: Scalar>(
    mix: &ExpMixture,
    strike: f64,
    r: f64,
    n: usize,
    k: usize,
    settings: Settings,
) -> Result<(Kernel<T>, PiecewiseValueFn<T>, Diagnostics)> {
    let budget = settings.budget;
    let ker = Kernel::<T>::new(mix, strike, r, n)?;
    let mut v = init_value(strike, n, &ker);
    let mut diag = Diagnostics::default();
    let limit = 10f64.powf(budget * T::BITS as f64);
    for i in 1..=k {
        let started = Instant::now();
        let cont = step(&v, &ker).map_err(|e| e.at_step(i))?;
        let upper = v.lowest_boundary().clone();
        let xk = solve_boundary(&cont.bottom, &ker, &upper, i, settings.boundary_tol).map_err(|e| e.at_step(i))?;
        if !boundary_convex(&cont.bottom, &ker, &upper) {
            diag.warnings.push(format!("step {i}: boundary objective not convex on probe grid"));
        }
        v = assemble(&v, cont, xk.clone());
        let ratio = v.cancellation_ratio(&ker);
        diag.steps.push(StepReport { step: i, boundary: xk.to_f64(), cancellation: ratio, elapsed: started.elapsed() });
        if !(ratio <= limit) {
            return Err(Error::PrecisionExhausted { step: i, ratio, bits: T::BITS });
        }
    }
    Ok((ker, v, diag))
}

/// Dense view of the coefficients of `V_k` together with the Υ tables.
///
/// `a_pos[m][j][i]` multiplies `(x − x̄_m)^i e^{−ζ₊(j)(x − x̄_m)}` on piece m and
/// `a_neg[m][j][i]` multiplies `(x − x̄_{m−1})^i e^{−ζ₋(j)(x − x̄_{m−1})}`.
#[derive(Debug, Clone)]
pub struct CoefficientLedger {
    pub k: usize,
    pub a_pos: Vec<Vec<Vec<f64>>>,
    pub a_neg: Vec<Vec<Vec<f64>>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub upsilon0: f64,
    /// `upsilon1[h][j]`, h = 0..k−1
    pub upsilon1: Vec<Vec<f64>>,
    pub upsilon2: Vec<Vec<f64>>,
}

impl CoefficientLedger {
    pub fn build<T: Scalar>(v: &PiecewiseValueFn<T>, ker: &Kernel<T>) -> Result<Self> {
        let dense = |groups: &Vec<Vec<T>>| -> Vec<Vec<f64>> {
            groups.iter().map(|p| p.iter().map(Scalar::to_f64).collect()).collect()
        };
        let hmax = v.k.max(1);
        let mut u1 = Vec::with_capacity(hmax);
        let mut u2 = Vec::with_capacity(hmax);
        for h in 0..hmax {
            u1.push((0..ker.pos.len()).map(|j| upsilon1(ker, h, j).map(|x| x.to_f64())).collect::<Result<Vec<_>>>()?);
            u2.push((0..ker.neg.len()).map(|j| upsilon2(ker, h, j).map(|x| x.to_f64())).collect::<Result<Vec<_>>>()?);
        }
        let ledger = CoefficientLedger {
            k: v.k,
            a_pos: v.pieces.iter().map(|p| dense(&p.pos)).collect(),
            a_neg: v.pieces.iter().map(|p| dense(&p.neg)).collect(),
            b: v.pieces.iter().map(|p| p.b.to_f64()).collect(),
            c: v.pieces.iter().map(|p| p.c.to_f64()).collect(),
            upsilon0: ker.upsilon0.to_f64(),
            upsilon1: u1,
            upsilon2: u2,
        };
        let finite = ledger
            .a_pos
            .iter()
            .chain(ledger.a_neg.iter())
            .flatten()
            .flatten()
            .chain(ledger.b.iter())
            .chain(ledger.c.iter())
            .chain(ledger.upsilon1.iter().flatten())
            .chain(ledger.upsilon2.iter().flatten())
            .all(|x| x.is_finite());
        if !finite || !(ledger.upsilon0 > 0.0) {
            return Err(Error::Domain("coefficient ledger contains non-finite entries".into()));
        }
        Ok(ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{HyperExpJd, LevyModel, Phase};
    use crate::spectral::{build_mixture, mixture_mgf, Component};

    const K: f64 = 100.0;

    fn hyperexp() -> LevyModel {
        LevyModel::HyperExp(HyperExpJd {
            sigma: 0.3,
            drift: 0.0,
            intensity: 2.0,
            up_prob: 0.4,
            up: vec![Phase { weight: 0.6, rate: 20.0 }, Phase { weight: 0.4, rate: 45.0 }],
            down: vec![Phase { weight: 0.5, rate: 15.0 }, Phase { weight: 0.5, rate: 35.0 }],
        })
        .martingale_drift(0.05)
        .unwrap()
    }

    fn hyperexp_mix(n: f64) -> ExpMixture {
        build_mixture(&hyperexp(), n, 1.0).unwrap()
    }

    fn run(mix: &ExpMixture, n: usize, k: usize) -> (Kernel<f64>, PiecewiseValueFn<f64>) {
        let (ker, v, _) = recurse_fixed::<f64>(mix, K, 0.05, n, k, Settings::default()).unwrap();
        (ker, v)
    }

    #[test]
    fn antiderivative_examples() {
        let t = |coef, power, rate| ExpPolyTerm { coef, power, rate };
        for &x in &[-1.3, 0.0, 0.7] {
            // shift − rate = 1
            assert!((antiderivative_eval(&t(1.0, 0, 0.0), 1.0, x) - f64::exp(x)).abs() < 1e-15 * f64::exp(x));
            let f = |x: f64| antiderivative_eval(&t(1.0, 1, 0.5), 2.5, x);
            assert!((f(x) - (2.0 * x).exp() * (x / 2.0 - 0.25)).abs() < 1e-14);
            let h = 1e-5;
            let d = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((d - x * (2.0 * x).exp()).abs() < 1e-8);
        }
        assert_eq!(antiderivative_eval(&t(3.0, 2, 4.0), 4.0, 2.0), 8.0);
    }

    #[test]
    fn polynomial_antiderivative_matches_termwise_formula() {
        let p = [0.7, -1.2, 0.4, 2.5];
        for &(alpha, x) in &[(1.7, 0.3), (-3.2, -0.4), (0.0, 0.9), (12.0, 0.05)] {
            let deg = coincident(alpha, 1.0);
            let pp = anti_poly(&p, &alpha, deg);
            let whole = (alpha * x).exp() * horner(&pp, &x);
            let termwise: f64 = p
                .iter()
                .enumerate()
                .map(|(i, &a)| antiderivative_eval(&ExpPolyTerm { coef: a, power: i as u32, rate: 0.0 }, alpha, x))
                .sum();
            assert!((whole - termwise).abs() < 1e-13 * termwise.abs().max(1.0), "{alpha}: {whole} {termwise}");
        }
    }

    #[test]
    fn initial_value_is_the_payoff() {
        let mix = hyperexp_mix(50.0);
        let ker = Kernel::<f64>::new(&mix, K, 0.05, 50).unwrap();
        let v = init_value(K, 50, &ker);
        assert_eq!(v.evaluate(&ker, &K.ln()), 0.0);
        assert!((v.evaluate(&ker, &(K / 2.0).ln()) - K / 2.0).abs() < 1e-12);
        assert_eq!(v.evaluate(&ker, &(2.0 * K).ln()), 0.0);
        let (_, v0) = run(&mix, 50, 0);
        assert_eq!(v0.k, 0);
        assert_eq!(v0.boundaries, vec![K.ln()]);
    }

    #[test]
    fn upsilon0_is_the_mgf_at_one() {
        // Φ(s) = s², q = 4: ζ = ±2 and X_ξ has density e^{−2|x|}
        let mix = build_mixture(&LevyModel::brownian(2f64.sqrt(), 0.0).unwrap(), 4.0, 1.0).unwrap();
        let ker = Kernel::<f64>::new(&mix, K, 0.0, 4).unwrap();
        assert!((ker.upsilon0 - 4.0 / 3.0).abs() < 1e-14);
        assert!((ker.upsilon0 - mixture_mgf(&mix, 1.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn upsilon0_for_martingale_models() {
        let r = 0.05;
        for n in [50usize, 500] {
            let brown = LevyModel::brownian(0.4, 0.0).unwrap().martingale_drift(r).unwrap();
            for model in [brown, hyperexp()] {
                let mix = build_mixture(&model, n as f64, 1.0).unwrap();
                let ker = Kernel::<f64>::new(&mix, K, r, n).unwrap();
                let expect = n as f64 / (n as f64 - r);
                assert!((ker.upsilon0 - expect).abs() < 1e-9, "{model:?}: {}", ker.upsilon0);
            }
        }
    }

    #[test]
    fn strip_violation_is_reported() {
        let mix = ExpMixture::from_parts(
            1.0,
            vec![Component { rate: 2.0, weight: 1.0 }],
            vec![Component { rate: -0.8, weight: 0.4 }],
        )
        .unwrap();
        assert!(matches!(Kernel::<f64>::new(&mix, K, 0.0, 1), Err(Error::StripViolation { .. })));
    }

    #[test]
    fn upsilon_single_pair_signs() {
        let mix =
            build_mixture(&LevyModel::brownian(0.4, 0.0).unwrap().martingale_drift(0.05).unwrap(), 500.0, 1.0).unwrap();
        let ker = Kernel::<f64>::new(&mix, K, 0.05, 500).unwrap();
        let (zp, zn, cn) = (ker.pos[0].zeta, ker.neg[0].zeta, ker.neg[0].weight);
        let u10 = upsilon1(&ker, 0, 0).unwrap();
        assert!((u10 - (-cn / (zn - zp))).abs() < 1e-15 * u10.abs());
        assert!(u10 > 0.0);
        for h in 0..=20 {
            let u1 = upsilon1(&ker, h, 0).unwrap();
            let u2 = upsilon2(&ker, h, 0).unwrap();
            assert!(u1.is_finite() && u2.is_finite());
            assert!(u1 > 0.0, "Υ₁({h}) = {u1}");
            assert_eq!(u2 > 0.0, h % 2 == 0, "Υ₂({h}) = {u2}");
        }
    }

    #[test]
    fn upsilon1_order_one_is_the_rate_derivative() {
        let mix = hyperexp_mix(50.0);
        let ker = Kernel::<f64>::new(&mix, K, 0.05, 50).unwrap();
        for j in 0..ker.pos.len() {
            let at = |z: f64| {
                let mut kk = ker.clone();
                kk.pos[j].zeta = z;
                kk.pos[j].zeta_f = z;
                upsilon1(&kk, 0, j).unwrap()
            };
            let z = ker.pos[j].zeta;
            let h = 1e-4 * z;
            let fd = (-at(z + 2.0 * h) + 8.0 * at(z + h) - 8.0 * at(z - h) + at(z - 2.0 * h)) / (12.0 * h);
            let direct = upsilon1(&ker, 1, j).unwrap();
            assert!((direct + fd).abs() < 1e-8 * direct.abs(), "j={j}: {direct} vs {}", -fd);
        }
    }

    #[test]
    fn coincident_rates_are_rejected() {
        let mix = ExpMixture::from_parts(
            1.0,
            vec![Component { rate: 2.0, weight: 1.0 }, Component { rate: 2.0 + 1e-12, weight: 1.0 }],
            vec![Component { rate: -3.0, weight: 1.0 }],
        );
        // from_parts already refuses equal magnitudes only when not strictly increasing
        let mix = mix.unwrap();
        let ker = Kernel::<f64>::new(&mix, K, 0.0, 1).unwrap();
        assert!(matches!(upsilon1(&ker, 0, 0), Err(Error::CoincidentRates { .. })));
    }

    /// Powers ≥ 1 of every group after a step must equal the Υ-weighted
    /// carries plus the `±c/i` self terms.
    #[test]
    fn carries_match_upsilon_sums() {
        let mix = hyperexp_mix(40.0);
        for k_prev in 1..=3 {
            let (ker, v) = run(&mix, 40, k_prev);
            let cont = step(&v, &ker).unwrap();
            let disc = ker.disc;
            let fact_ratio = |i: usize, lo: usize| ((lo + 1)..=i).map(|t| t as f64).product::<f64>();
            for (m, piece) in v.pieces.iter().enumerate() {
                for (l, p) in piece.pos.iter().enumerate() {
                    for out_pow in 1..=p.len() {
                        let mut expect = ker.pos[l].weight * p[out_pow - 1] / out_pow as f64;
                        for (i, &a) in p.iter().enumerate().skip(out_pow) {
                            expect += a * fact_ratio(i, out_pow) * upsilon1(&ker, i - out_pow, l).unwrap();
                        }
                        let got = cont.pieces[m].pos[l][out_pow];
                        assert!(
                            (got - disc * expect).abs() < 1e-11 * got.abs().max(1e-3),
                            "k={k_prev} m={m} l={l} i={out_pow}: {got} vs {}",
                            disc * expect
                        );
                    }
                }
                for (l, p) in piece.neg.iter().enumerate() {
                    for out_pow in 1..=p.len() {
                        let mut expect = -ker.neg[l].weight * p[out_pow - 1] / out_pow as f64;
                        for (i, &a) in p.iter().enumerate().skip(out_pow) {
                            expect += a * fact_ratio(i, out_pow) * upsilon2(&ker, i - out_pow, l).unwrap();
                        }
                        let got = cont.pieces[m].neg[l][out_pow];
                        assert!(
                            (got - disc * expect).abs() < 1e-11 * got.abs().max(1e-3),
                            "k={k_prev} m={m} l={l} i={out_pow}: {got} vs {}",
                            disc * expect
                        );
                    }
                }
            }
        }
    }

    fn direct_expectation(mix: &ExpMixture, x: f64, r: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        // integrate f(x + y) against the density, split at 0 and at the kink
        let kink = K.ln() - x;
        let slow = mix.pos_side[0].rate.min(-mix.neg_side[0].rate);
        let reach = 80.0 / slow;
        let mut cuts = vec![-reach, 0.0, reach];
        if kink.abs() < reach {
            cuts.push(kink);
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let g = |y: f64| f(x + y) * mix.density(y);
        let total: f64 =
            cuts.windows(2).map(|w| quadrature::double_exponential::integrate(g, w[0], w[1], 1e-14).integral).sum();
        (-r / n as f64).exp() * total
    }

    #[test]
    fn first_continuation_matches_direct_quadrature() {
        let n = 50;
        for mix in [
            hyperexp_mix(n as f64),
            build_mixture(&LevyModel::brownian(0.4, 0.0).unwrap().martingale_drift(0.05).unwrap(), n as f64, 1.0)
                .unwrap(),
        ] {
            let ker = Kernel::<f64>::new(&mix, K, 0.05, n).unwrap();
            let v0 = init_value(K, n, &ker);
            let cont = step(&v0, &ker).unwrap();
            assert_eq!(cont.bottom.c, ker.disc * K);
            assert_eq!(cont.bottom.b, ker.disc * ker.upsilon0);
            for i in 0..50 {
                let x = K.ln() - 1.5 + 1.49 * i as f64 / 49.0;
                let got = cont.bottom.eval(&ker, &x).0;
                let expect = direct_expectation(&mix, x, 0.05, n, |z| (K - z.exp()).max(0.0));
                assert!((got - expect).abs() < 1e-9 * expect, "x={x}: {got} vs {expect}");
            }
            // the top piece of the same continuation
            for i in 0..10 {
                let x = K.ln() + 0.05 * i as f64;
                let got = cont.pieces[0].eval(&ker, &x).0;
                let expect = direct_expectation(&mix, x, 0.05, n, |z| (K - z.exp()).max(0.0));
                assert!((got - expect).abs() < 1e-9 * expect.max(1e-6 * K), "x={x}: {got} vs {expect}");
            }
            // deep in the money the continuation tends to e^{−r/n}K − e^{−r/n}Υ₀e^x
            let far = K.ln() - 30.0;
            assert!((cont.bottom.eval(&ker, &far).0 - ker.disc * K).abs() < 1e-9 * K);
        }
    }

    #[test]
    fn discounted_strike_telescopes_exactly() {
        let mix = hyperexp_mix(40.0);
        let (ker, v) = run(&mix, 40, 8);
        for m in 1..=v.k {
            let mut c = ker.disc * K;
            for _ in m..v.k {
                c *= ker.disc;
            }
            assert_eq!(v.pieces[m].c, c, "m={m}");
            let mut b = ker.upsilon0 * ker.disc;
            for _ in m..v.k {
                b = b * ker.upsilon0 * ker.disc;
            }
            assert_eq!(v.pieces[m].b, b, "m={m}");
        }
        assert_eq!(v.pieces[0].c, 0.0);
    }

    #[test]
    fn degree_bound_holds() {
        let mix = hyperexp_mix(40.0);
        let (_, v) = run(&mix, 40, 10);
        for (m, p) in v.pieces.iter().enumerate() {
            if let Some(d) = p.degree() {
                assert!(d <= v.k - m, "piece {m} has degree {d}");
            }
        }
        assert!(v.pieces[v.k].pos.iter().all(Vec::is_empty));
        assert!(v.pieces[0].neg.iter().all(Vec::is_empty));
    }

    #[test]
    fn value_is_continuous_across_boundaries() {
        let mix = hyperexp_mix(40.0);
        let (ker, v) = run(&mix, 40, 10);
        for (m, &x) in v.boundaries.iter().enumerate() {
            let below = v.evaluate(&ker, &(x - 1e-9));
            let above = v.evaluate(&ker, &(x + 1e-9));
            assert!((below - above).abs() < 1e-8 * K, "x̄_{m}: {below} vs {above}");
        }
    }

    #[test]
    fn boundary_points_solve_their_equation() {
        let mix = hyperexp_mix(40.0);
        let ker = Kernel::<f64>::new(&mix, K, 0.05, 40).unwrap();
        let mut v = init_value(K, 40, &ker);
        for i in 1..=6 {
            let cont = step(&v, &ker).unwrap();
            let upper = *v.lowest_boundary();
            let xk = solve_boundary(&cont.bottom, &ker, &upper, i, 1e-13).unwrap();
            assert!(xk < upper);
            assert!(boundary_gap(&cont.bottom, &ker, &xk).abs() < 1e-9 * K);
            assert!(boundary_convex(&cont.bottom, &ker, &upper));
            v = assemble(&v, cont, xk);
        }
    }

    #[test]
    fn corrupted_continuation_has_no_bracket() {
        let mix = hyperexp_mix(40.0);
        let ker = Kernel::<f64>::new(&mix, K, 0.05, 40).unwrap();
        let v = init_value(K, 40, &ker);
        let mut cont = step(&v, &ker).unwrap();
        for p in cont.bottom.neg.iter_mut() {
            p[0] = -p[0];
        }
        let err = solve_boundary(&cont.bottom, &ker, &K.ln(), 1, 1e-13).unwrap_err();
        assert!(matches!(err, Error::BracketFailure { step: 1, .. }));
    }

    #[test]
    fn ledger_is_finite_and_sized() {
        let mix = hyperexp_mix(40.0);
        let (ker, v) = run(&mix, 40, 5);
        let ledger = CoefficientLedger::build(&v, &ker).unwrap();
        assert_eq!(ledger.a_pos.len(), 6);
        assert_eq!(ledger.upsilon1.len(), 5);
        assert_eq!(ledger.upsilon1[0].len(), ker.pos.len());
        assert!(ledger.upsilon0 > 0.0);
    }

    #[cfg(feature = "mpfr")]
    #[test]
    fn extended_precision_agrees_with_double() {
        use crate::scalar::Mpf;
        let mix = hyperexp_mix(40.0);
        let (kf, vf) = run(&mix, 40, 8);
        let (kb, vb, _) = recurse_fixed::<Mpf<128>>(&mix, K, 0.05, 40, 8, Settings::default()).unwrap();
        for i in 0..40 {
            let x = vf.boundaries[8] - 0.2 + 0.02 * i as f64;
            let a = vf.evaluate(&kf, &x);
            let b = vb.evaluate(&kb, &Mpf::from_f64(x)).to_f64();
            assert!((a - b).abs() < 1e-11 * b, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn tight_budget_reports_exhaustion() {
        let mix = hyperexp_mix(40.0);
        let settings = Settings { budget: 1e-3, boundary_tol: 1e-13 };
        let err = recurse_fixed::<f64>(&mix, K, 0.05, 40, 3, settings).unwrap_err();
        assert!(matches!(err, Error::PrecisionExhausted { step: 1, bits: 53, .. }));
    }
}
