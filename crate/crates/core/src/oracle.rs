//! Independent reference engines: grid quadrature, a binomial tree and a
//! Monte Carlo evaluator for a fixed exercise rule.

use crate::error::{Error, Result};
use crate::spectral::ExpMixture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Analytic extension `c + b·e^x` of a grid function beyond one of its ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tail {
    pub c: f64,
    pub b: f64,
}

impl Tail {
    pub const ZERO: Tail = Tail { c: 0.0, b: 0.0 };

    pub fn put_payoff(strike: f64) -> Tail {
        Tail { c: strike, b: -1.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c + self.b * x.exp()
    }
}

/// Node values on a uniform grid, linearly interpolated between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValueFn {
    pub x_lo: f64,
    pub h: f64,
    pub values: Vec<f64>,
    pub lower: Tail,
    pub upper: Tail,
    /// Largest value seen at the top node, a bound on what zero
    /// extrapolation above the grid can have dropped.
    pub tail_error: f64,
}

impl GridValueFn {
    pub fn from_fn(x_lo: f64, x_hi: f64, nodes: usize, f: impl Fn(f64) -> f64, lower: Tail, upper: Tail) -> Self {
        assert!(nodes >= 2 && x_hi > x_lo);
        let h = (x_hi - x_lo) / (nodes - 1) as f64;
        let values = (0..nodes).map(|i| f(x_lo + i as f64 * h)).collect();
        GridValueFn { x_lo, h, values, lower, upper, tail_error: 0.0 }
    }

    /// `(K − e^x)⁺` on `[log K − half_width, log K + half_width]`.
    pub fn payoff(strike: f64, half_width: f64, nodes: usize) -> Self {
        let x0 = strike.ln();
        Self::from_fn(
            x0 - half_width,
            x0 + half_width,
            nodes,
            |x| (strike - x.exp()).max(0.0),
            Tail::put_payoff(strike),
            Tail::ZERO,
        )
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.h
    }

    pub fn x_hi(&self) -> f64 {
        self.x(self.values.len() - 1)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        if x < self.x_lo {
            return self.lower.eval(x);
        }
        if x > self.x_hi() {
            return self.upper.eval(x);
        }
        let u = (x - self.x_lo) / self.h;
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let w = u - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// `∫₀^h e^{−ηs} ds` and `∫₀^h s·e^{−ηs} ds` for η > 0.
fn moments(eta: f64, h: f64) -> (f64, f64) {
    let u = eta * h;
    let e0 = -(-u).exp_m1() / eta;
    let e1 = if u < 0.1 {
        // 1 − e^{−u}(1+u) = Σ_{m≥2} (−1)^m (m−1) u^m / m!
        let mut term = u * u / 2.0;
        let mut sum = term;
        for m in 3..30 {
            term *= -u / m as f64;
            sum += (m - 1) as f64 * term;
        }
        sum / (eta * eta)
    } else {
        (1.0 - (-u).exp() * (1.0 + u)) / (eta * eta)
    };
    (e0, e1)
}

/// Kernel mass of `X_ξ` beyond distance `d` on either side.
pub fn tail_mass(mix: &ExpMixture, d: f64) -> f64 {
    let lower: f64 = mix.pos_side.iter().map(|c| c.mass() * (-c.rate * d).exp()).sum();
    let upper: f64 = mix.neg_side.iter().map(|c| c.mass() * (c.rate * d).exp()).sum();
    lower + upper
}

/// `e^{−r/n}·E[G(x + X_ξ)]` at every node.
pub fn quadrature_continuation(g: &GridValueFn, mix: &ExpMixture, r: f64, n: usize) -> Vec<f64> {
    let nodes = g.values.len();
    let h = g.h;
    let vals = &g.values;
    let x_lo = g.x_lo;
    let x_hi = g.x_hi();
    let pos: Vec<Vec<f64>> = mix
        .pos_side
        .par_iter()
        .map(|c| {
            let z = c.rate;
            let (e0, e1) = moments(z, h);
            let decay = (-z * h).exp();
            let mut out = vec![0.0; nodes];
            let mut acc = g.lower.c / z + g.lower.b * x_lo.exp() / (1.0 + z);
            out[0] = c.weight * acc;
            for i in 1..nodes {
                acc = decay * acc + vals[i] * e0 - (vals[i] - vals[i - 1]) / h * e1;
                out[i] = c.weight * acc;
            }
            out
        })
        .collect();
    let neg: Vec<Vec<f64>> = mix
        .neg_side
        .par_iter()
        .map(|c| {
            let eta = -c.rate;
            let (e0, e1) = moments(eta, h);
            let decay = (-eta * h).exp();
            let mut out = vec![0.0; nodes];
            let upper_b = if g.upper.b == 0.0 { 0.0 } else { g.upper.b * x_hi.exp() / (eta - 1.0) };
            let mut acc = g.upper.c / eta + upper_b;
            out[nodes - 1] = c.weight * acc;
            for i in (0..nodes - 1).rev() {
                acc = decay * acc + vals[i] * e0 + (vals[i + 1] - vals[i]) / h * e1;
                out[i] = c.weight * acc;
            }
            out
        })
        .collect();
    let disc = (-r / n as f64).exp();
    (0..nodes)
        .into_par_iter()
        .map(|i| {
            let s: f64 = pos.iter().chain(neg.iter()).map(|v| v[i]).sum();
            disc * s
        })
        .collect()
}

/// One step of the grid backward induction for the put.
pub fn quadrature_step(g: &GridValueFn, mix: &ExpMixture, r: f64, n: usize, strike: f64) -> Result<GridValueFn> {
    let half = (g.x_hi() - g.x_lo) / 2.0;
    let mass = tail_mass(mix, half);
    if mass > 1e-10 {
        return Err(Error::TailMass { mass, limit: 1e-10 });
    }
    let cont = quadrature_continuation(g, mix, r, n);
    let values: Vec<f64> = cont.iter().enumerate().map(|(i, &c)| c.max((strike - g.x(i).exp()).max(0.0))).collect();
    let top = *values.last().expect("grid has nodes");
    Ok(GridValueFn { x_lo: g.x_lo, h: g.h, values, lower: g.lower, upper: g.upper, tail_error: g.tail_error.max(top) })
}

/// Largest x where the step-k grid value equals the payoff, refined on the
/// interpolant of continuation minus payoff.
fn boundary_estimate(g: &GridValueFn, cont: &[f64], strike: f64) -> f64 {
    let gap = |i: usize| cont[i] - (strike - g.x(i).exp());
    let mut last = None;
    for i in 0..cont.len() {
        if g.x(i) >= strike.ln() {
            break;
        }
        if gap(i) <= 0.0 {
            last = Some(i);
        }
    }
    let Some(i) = last else { return g.x_lo };
    if i + 1 >= cont.len() {
        return g.x(i);
    }
    let (a, b) = (g.x(i), g.x(i + 1));
    let interp = |x: f64| {
        let w = (x - a) / g.h;
        cont[i] * (1.0 - w) + cont[i + 1] * w - (strike - x.exp())
    };
    let (mut lo, mut hi) = (a, b);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if interp(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Grid settings for [`quadrature_recursion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub half_width: f64,
    pub nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { half_width: 12.0, nodes: 1001 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRun {
    pub value: GridValueFn,
    /// Continuation values of the final step, node by node.
    pub continuation: Vec<f64>,
    /// `x̄₀, x̄₁, …, x̄_k` estimated from the grid.
    pub boundaries: Vec<f64>,
}

pub fn quadrature_recursion(
    mix: &ExpMixture,
    strike: f64,
    r: f64,
    n: usize,
    k: usize,
    grid: GridSpec,
) -> Result<QuadratureRun> {
    let mut g = GridValueFn::payoff(strike, grid.half_width, grid.nodes);
    let mut boundaries = vec![strike.ln()];
    let mut continuation = g.values.clone();
    for _ in 0..k {
        let next = quadrature_step(&g, mix, r, n, strike)?;
        continuation = quadrature_continuation(&g, mix, r, n);
        boundaries.push(boundary_estimate(&g, &continuation, strike));
        g = next;
    }
    Ok(QuadratureRun { value: g, continuation, boundaries })
}

/// Cox–Ross–Rubinstein American put.
pub fn crr_binomial(sigma: f64, r: f64, strike: f64, s0: f64, t: f64, steps: usize) -> f64 {
    if t <= 0.0 || steps == 0 {
        return (strike - s0).max(0.0);
    }
    let dt = t / steps as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (r * dt).exp();
    let p = (growth - d) / (u - d);
    let disc = 1.0 / growth;
    let ln_u = u.ln();
    let spot = |i: usize, j: usize| s0 * (ln_u * (2.0 * j as f64 - i as f64)).exp();
    let mut v: Vec<f64> = (0..=steps).map(|j| (strike - spot(steps, j)).max(0.0)).collect();
    for i in (0..steps).rev() {
        for j in 0..=i {
            let cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            v[j] = cont.max(strike - spot(i, j));
        }
    }
    v[0]
}

/// Monte Carlo estimate of the value of the boundary rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

const MC_BLOCK: usize = 4096;

/// Simulate the grid chain from x₀ and stop at the first `i ≥ 1` with
/// `X ≤ x̄_{k−i}`, or at `i = k`. `boundaries` holds `x̄₀, …, x̄_k`.
#[allow(clippy::too_many_arguments)]
pub fn mc_lower_bound(
    mix: &ExpMixture,
    boundaries: &[f64],
    n: usize,
    k: usize,
    strike: f64,
    r: f64,
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if boundaries.len() < k + 1 {
        return Err(Error::Domain(format!("need {} boundary points, got {}", k + 1, boundaries.len())));
    }
    if paths < 2 {
        return Err(Error::Domain("at least two paths are required".into()));
    }
    let sampler = mix.sampler();
    let blocks = paths.div_ceil(MC_BLOCK);
    let partial: Vec<(f64, f64, usize)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BLOCK.min(paths - b * MC_BLOCK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let mut x = x0;
                let mut pay = 0.0;
                for i in 1..=k {
                    x += sampler.sample(&mut rng);
                    if i == k || x <= boundaries[k - i] {
                        pay = (-r * i as f64 / n as f64).exp() * (strike - x.exp()).max(0.0);
                        break;
                    }
                }
                s += pay;
                s2 += pay * pay;
            }
            (s, s2, count)
        })
        .collect();
    let (mut s, mut s2, mut m) = (0.0, 0.0, 0usize);
    for (a, b, c) in partial {
        s += a;
        s2 += b;
        m += c;
    }
    let mf = m as f64;
    let mean = s / mf;
    let var = ((s2 - mf * mean * mean) / (mf - 1.0)).max(0.0);
    Ok(McEstimate { mean, std_error: (var / mf).sqrt(), paths: m })
}
