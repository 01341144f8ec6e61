//! Gamma-family special functions needed by the β-class exponents.
//!
//! The Beta function is evaluated as Γ(y)·Γ(x)/Γ(x+y) where the ratio is
//! computed from the Stirling expansion of log Γ(x) − log Γ(x+y) after an
//! upward shift by the recurrence. This keeps full relative accuracy for
//! arguments of size ~10^2, where subtracting two separately computed
//! log-Gamma values would lose several digits.

use num_complex::Complex64;

/// Arguments are shifted above this before the asymptotic series is used.
const SHIFT_TO: f64 = 15.0;

/// B_{2k} for k = 1..8.
const BERNOULLI: [f64; 8] =
    [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0, -3617.0 / 510.0];

fn shift_count(lowest: f64) -> usize {
    if lowest >= SHIFT_TO {
        0
    } else {
        (SHIFT_TO - lowest).ceil() as usize
    }
}

/// Γ(x) / Γ(x + y) for real x, y.
pub fn gamma_ratio(x: f64, y: f64) -> f64 {
    let n = shift_count(x.min(x + y));
    let mut prod = 1.0;
    for k in 0..n {
        let k = k as f64;
        prod *= (x + y + k) / (x + k);
    }
    let big = x + n as f64;
    let w = y / big;
    let mut series = 0.0;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let p = (2 * k + 1) as i32;
        let coef = b / ((2 * k + 2) as f64 * (2 * k + 1) as f64);
        series += coef * (big.powi(-p) - (big + y).powi(-p));
    }
    let log_ratio = -y * big.ln() - (big + y - 0.5) * w.ln_1p() + y + series;
    prod * log_ratio.exp()
}

/// Beta function B(x, y) for real arguments.
///
/// Returns ±inf when x or y is a nonpositive integer and 0 when x + y is.
pub fn beta(x: f64, y: f64) -> f64 {
    if is_nonpositive_integer(y) {
        return f64::INFINITY;
    }
    if is_nonpositive_integer(x) {
        return f64::INFINITY;
    }
    libm::tgamma(y) * gamma_ratio(x, y)
}

/// ψ(x) − ψ(x + y), the logarithmic derivative of B(·, y) at x.
pub fn beta_log_derivative(x: f64, y: f64) -> f64 {
    let n = shift_count(x.min(x + y));
    let mut shift = 0.0;
    for k in 0..n {
        let k = k as f64;
        shift += 1.0 / (x + k) - 1.0 / (x + y + k);
    }
    let big = x + n as f64;
    let mut series = -(y / big).ln_1p() - 0.5 / big + 0.5 / (big + y);
    for (k, b) in BERNOULLI.iter().enumerate() {
        let p = (2 * k + 2) as i32;
        series -= b / p as f64 * (big.powi(-p) - (big + y).powi(-p));
    }
    series - shift
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.round()
}

fn ln_1p_complex(w: Complex64) -> Complex64 {
    if w.norm() < 0.2 {
        // ln(1+w) = 2 atanh(u), u = w / (2 + w)
        let u = w / (w + 2.0);
        let u2 = u * u;
        let mut term = u;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..40 {
            let add = term / (2 * k + 1) as f64;
            acc += add;
            if add.norm() < 1e-18 * acc.norm() {
                break;
            }
            term *= u2;
        }
        2.0 * acc
    } else {
        (w + 1.0).ln()
    }
}

/// Γ(x) / Γ(x + y) for complex arguments.
pub fn gamma_ratio_complex(x: Complex64, y: Complex64) -> Complex64 {
    let n = shift_count(x.re.min(x.re + y.re));
    let mut prod = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let k = k as f64;
        prod *= (x + y + k) / (x + k);
    }
    let big = x + n as f64;
    let mut series = Complex64::new(0.0, 0.0);
    for (k, b) in BERNOULLI.iter().enumerate() {
        let p = (2 * k + 1) as i32;
        let coef = b / ((2 * k + 2) as f64 * (2 * k + 1) as f64);
        series += coef * (big.powi(-p) - (big + y).powi(-p));
    }
    let log_ratio = -y * big.ln() - (big + y - 0.5) * ln_1p_complex(y / big) + y + series;
    prod * log_ratio.exp()
}

/// Beta function with complex first argument and real second argument.
pub fn beta_complex(x: Complex64, y: f64) -> Complex64 {
    libm::tgamma(y) * gamma_ratio_complex(x, Complex64::new(y, 0.0))
}
