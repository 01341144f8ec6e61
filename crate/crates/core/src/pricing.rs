//! Precision dispatch around the value recursion.

use crate::config::PricingConfig;
use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::recursion::{recurse_fixed, upsilon0, CoefficientLedger, Diagnostics, Kernel, PiecewiseValueFn, Settings};
use crate::scalar::Scalar;
use crate::spectral::{build_mixture_capped, ExpMixture};

/// Precisions tried in order when the cancellation diagnostic trips.
pub const PRECISION_LADDER: [u32; 5] = [53, 128, 256, 512, 1024];

/// A computed `V_k`, whatever its working precision.
pub trait ValueFunction: Send + Sync {
    fn evaluate(&self, x: f64) -> f64;
    /// `x̄₀, …, x̄_k`.
    fn boundaries(&self) -> Vec<f64>;
    fn k(&self) -> usize;
    fn bits(&self) -> u32;
    fn ledger(&self) -> Result<CoefficientLedger>;
}

struct Typed<T: Scalar> {
    ker: Kernel<T>,
    v: PiecewiseValueFn<T>,
}

impl<T: Scalar> ValueFunction for Typed<T> {
    fn evaluate(&self, x: f64) -> f64 {
        self.v.evaluate(&self.ker, &T::from_f64(x)).to_f64()
    }
    fn boundaries(&self) -> Vec<f64> {
        self.v.boundaries.iter().map(Scalar::to_f64).collect()
    }
    fn k(&self) -> usize {
        self.v.k
    }
    fn bits(&self) -> u32 {
        T::BITS
    }
    fn ledger(&self) -> Result<CoefficientLedger> {
        CoefficientLedger::build(&self.v, &self.ker)
    }
}

pub struct PricingRun {
    pub model: LevyModel,
    pub mixture: ExpMixture,
    pub value: Box<dyn ValueFunction>,
    pub diagnostics: Diagnostics,
    /// Precisions that tripped the cancellation diagnostic before success.
    pub escalations: Vec<u32>,
    /// `|Υ₀ (n − r)/n − 1|` for martingale-calibrated models. Truncating the
    /// mixture breaks calibration; once this is comparable to `r/n` the
    /// per-step drift error outweighs the discounting.
    pub drift_defect: Option<f64>,
}

impl std::fmt::Debug for PricingRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PricingRun")
            .field("bits", &self.value.bits())
            .field("k", &self.value.k())
            .field("escalations", &self.escalations)
            .finish()
    }
}

fn run_at<T: Scalar>(
    mix: &ExpMixture,
    cfg: &PricingConfig,
    settings: Settings,
) -> Result<(Box<dyn ValueFunction>, Diagnostics)> {
    let (ker, v, diag) = recurse_fixed::<T>(mix, cfg.strike, cfg.r, cfg.n, cfg.k, settings)?;
    Ok((Box::new(Typed { ker, v }), diag))
}

fn run_bits(
    bits: u32,
    mix: &ExpMixture,
    cfg: &PricingConfig,
    settings: Settings,
) -> Result<(Box<dyn ValueFunction>, Diagnostics)> {
    match bits {
        53 => run_at::<f64>(mix, cfg, settings),
        #[cfg(feature = "mpfr")]
        128 => run_at::<crate::scalar::Mpf<128>>(mix, cfg, settings),
        #[cfg(feature = "mpfr")]
        256 => run_at::<crate::scalar::Mpf<256>>(mix, cfg, settings),
        #[cfg(feature = "mpfr")]
        512 => run_at::<crate::scalar::Mpf<512>>(mix, cfg, settings),
        #[cfg(feature = "mpfr")]
        1024 => run_at::<crate::scalar::Mpf<1024>>(mix, cfg, settings),
        other => Err(Error::Config(format!("unsupported working precision of {other} bits"))),
    }
}

/// The rung of the ladder to start from: the smallest one holding at least
/// `bits`.
fn first_rung(bits: u32) -> Result<usize> {
    PRECISION_LADDER
        .iter()
        .position(|&b| b >= bits)
        .ok_or_else(|| Error::Config(format!("precision of {bits} bits exceeds the largest supported rung")))
}

/// Build the mixture for `q = n` and run the recursion, escalating precision
/// while the cancellation diagnostic trips.
pub fn recurse(model: &LevyModel, cfg: &PricingConfig) -> Result<PricingRun> {
    cfg.validate()?;
    let mixture = build_mixture_capped(model, cfg.n as f64, cfg.mass_threshold, cfg.max_roots)?;
    recurse_with_mixture(model, mixture, cfg)
}

pub fn recurse_with_mixture(model: &LevyModel, mixture: ExpMixture, cfg: &PricingConfig) -> Result<PricingRun> {
    let settings = Settings { budget: cfg.cancellation_budget, boundary_tol: cfg.boundary_tol };
    let mut escalations = Vec::new();
    let mut rung = first_rung(cfg.precision_bits)?;
    loop {
        let bits = PRECISION_LADDER[rung];
        match run_bits(bits, &mixture, cfg, settings) {
            Ok((value, mut diagnostics)) => {
                let drift_defect = drift_defect(model, &mixture, cfg);
                let scale = cfg.r / cfg.n as f64;
                if let Some(d) = drift_defect.filter(|&d| d > 0.1 * scale) {
                    diagnostics.warnings.push(format!(
                        "truncated mixture drift error {d:.3e} is not small against r/n = {scale:.3e}; \
                         raise spectral.mass_threshold"
                    ));
                }
                return Ok(PricingRun { model: model.clone(), mixture, value, diagnostics, escalations, drift_defect });
            }
            Err(e @ Error::PrecisionExhausted { .. }) => {
                let next = rung + 1;
                if next >= PRECISION_LADDER.len() || PRECISION_LADDER[next] > cfg.max_precision_bits {
                    return Err(e);
                }
                escalations.push(bits);
                rung = next;
            }
            Err(e) => return Err(e),
        }
    }
}

fn drift_defect(model: &LevyModel, mixture: &ExpMixture, cfg: &PricingConfig) -> Option<f64> {
    let phi1 = model.laplace_exponent(1.0).ok()?;
    if (phi1 - cfg.r).abs() > 1e-9 * cfg.r.max(1.0) {
        return None;
    }
    let ker = Kernel::<f64>::new(mixture, cfg.strike, cfg.r, cfg.n).ok()?;
    let n = cfg.n as f64;
    Some((upsilon0(&ker).ok()? * (n - cfg.r) / n - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DriftSpec, ModelSpec};

    fn beta_cfg(n: usize, threshold: f64) -> PricingConfig {
        let mut cfg = PricingConfig::with_model(ModelSpec::Beta {
            sigma: 1.0,
            c: (1.5, 1.5),
            alpha: (56.0, 56.4),
            beta: (2.0, 2.0),
            lambda: (2.8, 2.8),
        });
        cfg.strike = 10000.0;
        cfg.n = n;
        cfg.k = 1;
        cfg.mass_threshold = threshold;
        cfg
    }

    #[test]
    fn untruncated_models_are_calibrated() {
        let mut cfg = PricingConfig::with_model(ModelSpec::Brownian { sigma: 0.3 });
        cfg.k = 3;
        let run = recurse(&cfg.levy_model().unwrap(), &cfg).unwrap();
        assert!(run.drift_defect.unwrap() < 1e-14);
        assert!(run.diagnostics.warnings.is_empty());
        assert_eq!(run.value.bits(), 53);
        assert_eq!(run.value.boundaries().len(), 4);
    }

    #[test]
    fn coarse_truncation_at_large_n_is_flagged() {
        let coarse = beta_cfg(32000, 0.99);
        let run = recurse(&coarse.levy_model().unwrap(), &coarse).unwrap();
        assert!(run.drift_defect.unwrap() > 0.1 * coarse.r / coarse.n as f64);
        assert!(run.diagnostics.warnings.iter().any(|w| w.contains("mass_threshold")));

        let mut fine = beta_cfg(32000, 0.999);
        fine.max_roots = 2000;
        let run = recurse(&fine.levy_model().unwrap(), &fine).unwrap();
        assert!(run.diagnostics.warnings.is_empty(), "{:?}", run.diagnostics.warnings);
    }

    #[test]
    fn fixed_drift_has_no_defect() {
        let mut cfg = beta_cfg(100, 0.99);
        cfg.drift = DriftSpec::Fixed(0.0);
        let run = recurse(&cfg.levy_model().unwrap(), &cfg).unwrap();
        assert_eq!(run.drift_defect, None);
    }

    #[test]
    fn ladder_starts_at_requested_precision() {
        assert_eq!(first_rung(53).unwrap(), 0);
        assert_eq!(first_rung(100).unwrap(), 1);
        assert!(first_rung(4096).is_err());
    }

    #[cfg(feature = "mpfr")]
    #[test]
    fn escalates_when_budget_is_tight() {
        let mut cfg = beta_cfg(500, 0.99);
        cfg.k = 5;
        cfg.cancellation_budget = 0.02;
        let run = recurse(&cfg.levy_model().unwrap(), &cfg).unwrap();
        assert!(!run.escalations.is_empty());
        assert!(run.value.bits() > 53);
        let mut plain_cfg = beta_cfg(500, 0.99);
        plain_cfg.k = 5;
        let plain = recurse(&plain_cfg.levy_model().unwrap(), &plain_cfg).unwrap();
        assert!(plain.escalations.is_empty());
        let x = 10000f64.ln() - 0.05;
        assert!((run.value.evaluate(x) - plain.value.evaluate(x)).abs() < 1e-9 * 10000.0);
    }
}
