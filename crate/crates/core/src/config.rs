//! Run configuration in a flat `key = value` text format.
//!
//! Keys are dotted (`pricing.n`, `model.sigma`, ...). Blank lines and lines
//! starting with `#` are ignored; a trailing `# comment` after a value is
//! stripped. Unknown keys are rejected so typos surface early.

use crate::error::{Error, Result};
use crate::levy::{BetaClass, HyperExpJd, LevyModel, Phase};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSpec {
    /// Chosen so that `Φ(1) = r`.
    Martingale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Brownian { sigma: f64 },
    HyperExp { sigma: f64, intensity: f64, up_prob: f64, up: Vec<Phase>, down: Vec<Phase> },
    Beta { sigma: f64, c: (f64, f64), alpha: (f64, f64), beta: (f64, f64), lambda: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingConfig {
    pub model: ModelSpec,
    pub drift: DriftSpec,
    pub r: f64,
    pub strike: f64,
    pub n: usize,
    pub k: usize,
    pub mass_threshold: f64,
    pub max_roots: usize,
    pub precision_bits: u32,
    pub max_precision_bits: u32,
    pub cancellation_budget: f64,
    pub boundary_tol: f64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    /// Evaluation grid: `points` values on `[x̄_k − below, log K + above]`.
    pub grid_points: usize,
    pub grid_below: f64,
    pub grid_above: f64,
    pub seed: u64,
    pub mc_paths: usize,
    /// Monte Carlo start point relative to log K.
    pub mc_offset: f64,
    pub oracle_nodes: usize,
    pub oracle_half_width: f64,
    pub oracle_tolerance: f64,
    /// Binomial steps for the Brownian cross-check.
    pub crr_steps: usize,
    pub crr_tolerance: f64,
    /// `(n, k)` pairs for the convergence study.
    pub converge: Vec<(usize, usize)>,
}

impl PricingConfig {
    /// Defaults for everything except the model.
    pub fn with_model(model: ModelSpec) -> Self {
        PricingConfig {
            model,
            drift: DriftSpec::Martingale,
            r: 0.05,
            strike: 100.0,
            n: 100,
            k: 20,
            mass_threshold: 0.99,
            max_roots: crate::spectral::DEFAULT_MAX_ROOTS,
            precision_bits: 53,
            max_precision_bits: 1024,
            cancellation_budget: 0.3,
            boundary_tol: 1e-13,
            workers: 0,
            output_dir: None,
            grid_points: 1000,
            grid_below: 2.0,
            grid_above: 2.0,
            seed: 1,
            mc_paths: 100_000,
            mc_offset: 0.1,
            oracle_nodes: 96_001,
            oracle_half_width: 12.0,
            oracle_tolerance: 1e-4,
            crr_steps: 5000,
            crr_tolerance: 5e-3,
            converge: Vec::new(),
        }
    }

    /// Build the Lévy model with the requested drift.
    pub fn levy_model(&self) -> Result<LevyModel> {
        let base = match &self.model {
            ModelSpec::Brownian { sigma } => LevyModel::Brownian { sigma: *sigma, drift: 0.0 },
            ModelSpec::HyperExp { sigma, intensity, up_prob, up, down } => LevyModel::HyperExp(HyperExpJd {
                sigma: *sigma,
                drift: 0.0,
                intensity: *intensity,
                up_prob: *up_prob,
                up: up.clone(),
                down: down.clone(),
            }),
            ModelSpec::Beta { sigma, c, alpha, beta, lambda } => LevyModel::Beta(BetaClass {
                sigma: *sigma,
                drift: 0.0,
                c1: c.0,
                c2: c.1,
                alpha1: alpha.0,
                alpha2: alpha.1,
                beta1: beta.0,
                beta2: beta.1,
                lambda1: lambda.0,
                lambda2: lambda.1,
            }),
        };
        base.validate()?;
        match self.drift {
            DriftSpec::Martingale => base.martingale_drift(self.r),
            DriftSpec::Fixed(d) => {
                let m = base.with_drift(d);
                m.validate()?;
                Ok(m)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return bad(format!("pricing.r must be nonnegative, got {}", self.r));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad(format!("pricing.strike must be positive, got {}", self.strike));
        }
        if self.n == 0 {
            return bad("pricing.n must be at least 1".into());
        }
        if !(self.mass_threshold > 0.0 && self.mass_threshold <= 1.0) {
            return bad(format!("spectral.mass_threshold must lie in (0, 1], got {}", self.mass_threshold));
        }
        if self.max_roots == 0 {
            return bad("spectral.max_roots must be positive".into());
        }
        if self.precision_bits < 53 || self.max_precision_bits < self.precision_bits {
            return bad(format!(
                "numerics.precision_bits ({}) must be >= 53 and <= numerics.max_precision_bits ({})",
                self.precision_bits, self.max_precision_bits
            ));
        }
        for (name, v) in [
            ("numerics.cancellation_budget", self.cancellation_budget),
            ("numerics.boundary_tol", self.boundary_tol),
            ("oracle.half_width", self.oracle_half_width),
            ("oracle.tolerance", self.oracle_tolerance),
            ("oracle.crr_tolerance", self.crr_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.grid_points < 2 || self.oracle_nodes < 3 || self.crr_steps == 0 {
            return bad("grid.points, oracle.nodes and oracle.crr_steps need at least 2, 3 and 1".into());
        }
        for &(n, _) in &self.converge {
            if n == 0 {
                return bad("converge.pairs entries need n >= 1".into());
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        let mut kv = Keys { map };
        let kind = kv.take_str("model.kind")?;
        let sigma = kv.opt("model.sigma", 0.0)?;
        let model = match kind.as_str() {
            "brownian" => ModelSpec::Brownian { sigma },
            "hyperexp" => ModelSpec::HyperExp {
                sigma,
                intensity: kv.req("model.intensity")?,
                up_prob: kv.req("model.up_prob")?,
                up: phases(kv.list("model.up_weights")?, kv.list("model.up_rates")?, "up")?,
                down: phases(kv.list("model.down_weights")?, kv.list("model.down_rates")?, "down")?,
            },
            "beta" => ModelSpec::Beta {
                sigma,
                c: (kv.req("model.c1")?, kv.req("model.c2")?),
                alpha: (kv.req("model.alpha1")?, kv.req("model.alpha2")?),
                beta: (kv.req("model.beta1")?, kv.req("model.beta2")?),
                lambda: (kv.req("model.lambda1")?, kv.req("model.lambda2")?),
            },
            other => return Err(Error::Config(format!("unknown model.kind `{other}`"))),
        };
        let mut cfg = PricingConfig::with_model(model);
        cfg.drift = match kv.map.remove("model.drift") {
            None => DriftSpec::Martingale,
            Some(s) if s == "martingale" => DriftSpec::Martingale,
            Some(s) => DriftSpec::Fixed(parse_num("model.drift", &s)?),
        };
        cfg.r = kv.opt("pricing.r", cfg.r)?;
        cfg.strike = kv.opt("pricing.strike", cfg.strike)?;
        cfg.n = kv.opt("pricing.n", cfg.n)?;
        cfg.k = kv.opt("pricing.k", cfg.k)?;
        cfg.mass_threshold = kv.opt("spectral.mass_threshold", cfg.mass_threshold)?;
        cfg.max_roots = kv.opt("spectral.max_roots", cfg.max_roots)?;
        cfg.precision_bits = kv.opt("numerics.precision_bits", cfg.precision_bits)?;
        cfg.max_precision_bits = kv.opt("numerics.max_precision_bits", cfg.max_precision_bits)?;
        cfg.cancellation_budget = kv.opt("numerics.cancellation_budget", cfg.cancellation_budget)?;
        cfg.boundary_tol = kv.opt("numerics.boundary_tol", cfg.boundary_tol)?;
        cfg.workers = kv.opt("numerics.workers", cfg.workers)?;
        cfg.output_dir = kv.map.remove("output.dir").map(PathBuf::from);
        cfg.grid_points = kv.opt("grid.points", cfg.grid_points)?;
        cfg.grid_below = kv.opt("grid.below", cfg.grid_below)?;
        cfg.grid_above = kv.opt("grid.above", cfg.grid_above)?;
        cfg.seed = kv.opt("mc.seed", cfg.seed)?;
        cfg.mc_paths = kv.opt("mc.paths", cfg.mc_paths)?;
        cfg.mc_offset = kv.opt("mc.offset", cfg.mc_offset)?;
        cfg.oracle_nodes = kv.opt("oracle.nodes", cfg.oracle_nodes)?;
        cfg.oracle_half_width = kv.opt("oracle.half_width", cfg.oracle_half_width)?;
        cfg.oracle_tolerance = kv.opt("oracle.tolerance", cfg.oracle_tolerance)?;
        cfg.crr_steps = kv.opt("oracle.crr_steps", cfg.crr_steps)?;
        cfg.crr_tolerance = kv.opt("oracle.crr_tolerance", cfg.crr_tolerance)?;
        if let Some(s) = kv.map.remove("converge.pairs") {
            cfg.converge = parse_pairs(&s)?;
        }
        if let Some(key) = kv.map.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.model {
            ModelSpec::Brownian { sigma } => {
                put("model.kind", "brownian".into());
                put("model.sigma", fmt(*sigma));
            }
            ModelSpec::HyperExp { sigma, intensity, up_prob, up, down } => {
                put("model.kind", "hyperexp".into());
                put("model.sigma", fmt(*sigma));
                put("model.intensity", fmt(*intensity));
                put("model.up_prob", fmt(*up_prob));
                put("model.up_weights", join(up.iter().map(|p| p.weight)));
                put("model.up_rates", join(up.iter().map(|p| p.rate)));
                put("model.down_weights", join(down.iter().map(|p| p.weight)));
                put("model.down_rates", join(down.iter().map(|p| p.rate)));
            }
            ModelSpec::Beta { sigma, c, alpha, beta, lambda } => {
                put("model.kind", "beta".into());
                put("model.sigma", fmt(*sigma));
                put("model.c1", fmt(c.0));
                put("model.c2", fmt(c.1));
                put("model.alpha1", fmt(alpha.0));
                put("model.alpha2", fmt(alpha.1));
                put("model.beta1", fmt(beta.0));
                put("model.beta2", fmt(beta.1));
                put("model.lambda1", fmt(lambda.0));
                put("model.lambda2", fmt(lambda.1));
            }
        }
        put(
            "model.drift",
            match self.drift {
                DriftSpec::Martingale => "martingale".into(),
                DriftSpec::Fixed(d) => fmt(d),
            },
        );
        put("pricing.r", fmt(self.r));
        put("pricing.strike", fmt(self.strike));
        put("pricing.n", self.n.to_string());
        put("pricing.k", self.k.to_string());
        put("spectral.mass_threshold", fmt(self.mass_threshold));
        put("spectral.max_roots", self.max_roots.to_string());
        put("numerics.precision_bits", self.precision_bits.to_string());
        put("numerics.max_precision_bits", self.max_precision_bits.to_string());
        put("numerics.cancellation_budget", fmt(self.cancellation_budget));
        put("numerics.boundary_tol", fmt(self.boundary_tol));
        put("numerics.workers", self.workers.to_string());
        if let Some(dir) = &self.output_dir {
            put("output.dir", dir.display().to_string());
        }
        put("grid.points", self.grid_points.to_string());
        put("grid.below", fmt(self.grid_below));
        put("grid.above", fmt(self.grid_above));
        put("mc.seed", self.seed.to_string());
        put("mc.paths", self.mc_paths.to_string());
        put("mc.offset", fmt(self.mc_offset));
        put("oracle.nodes", self.oracle_nodes.to_string());
        put("oracle.half_width", fmt(self.oracle_half_width));
        put("oracle.tolerance", fmt(self.oracle_tolerance));
        put("oracle.crr_steps", self.crr_steps.to_string());
        put("oracle.crr_tolerance", fmt(self.crr_tolerance));
        if !self.converge.is_empty() {
            let pairs: Vec<String> = self.converge.iter().map(|(n, k)| format!("{n}:{k}")).collect();
            put("converge.pairs", pairs.join(", "));
        }
        s
    }
}

fn fmt(x: f64) -> String {
    // shortest representation that parses back to the same bits
    format!("{x:?}")
}

fn join(xs: impl Iterator<Item = f64>) -> String {
    xs.map(fmt).collect::<Vec<_>>().join(", ")
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`")))
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let (n, k) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("converge.pairs: expected n:k, got `{}`", p.trim())))?;
            Ok((parse_num("converge.pairs", n.trim())?, parse_num("converge.pairs", k.trim())?))
        })
        .collect()
}

fn phases(weights: Vec<f64>, rates: Vec<f64>, side: &str) -> Result<Vec<Phase>> {
    if weights.len() != rates.len() {
        return Err(Error::Config(format!(
            "model.{side}_weights has {} entries but model.{side}_rates has {}",
            weights.len(),
            rates.len()
        )));
    }
    Ok(weights.into_iter().zip(rates).map(|(weight, rate)| Phase { weight, rate }).collect())
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn take_str(&mut self, key: &str) -> Result<String> {
        self.map.remove(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    fn req<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let s = self.take_str(key)?;
        parse_num(key, &s)
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            Some(s) => parse_num(key, &s),
            None => Ok(default),
        }
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>> {
        let s = self.take_str(key)?;
        s.split(',').map(|x| parse_num(key, x.trim())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = "
        # sigma = 1 member of the comparison
        model.kind = beta
        model.sigma = 1
        model.c1 = 1.5
        model.c2 = 1.5
        model.alpha1 = 56
        model.alpha2 = 56.4
        model.beta1 = 2
        model.beta2 = 2
        model.lambda1 = 2.8
        model.lambda2 = 2.8
        pricing.r = 0.05
        pricing.strike = 10000
        pricing.n = 500
        pricing.k = 100   # T = 0.2
    ";

    #[test]
    fn parses_figure_style_config() {
        let c = PricingConfig::parse(FIG3).unwrap();
        assert_eq!(c.n, 500);
        assert_eq!(c.k, 100);
        assert_eq!(c.drift, DriftSpec::Martingale);
        assert!(matches!(c.model, ModelSpec::Beta { alpha: (a, _), .. } if a == 56.0));
        let m = c.levy_model().unwrap();
        assert!((m.laplace_exponent(1.0).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = PricingConfig::parse(FIG3).unwrap();
        let again = PricingConfig::parse(&c.serialize()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.serialize(), again.serialize());
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let typo = format!("{FIG3}\npricing.strik = 5\n");
        assert!(matches!(PricingConfig::parse(&typo), Err(Error::Config(_))));
        let bad = FIG3.replace("pricing.n = 500", "pricing.n = five hundred");
        assert!(matches!(PricingConfig::parse(&bad), Err(Error::Config(_))));
        let zero = FIG3.replace("pricing.n = 500", "pricing.n = 0");
        assert!(matches!(PricingConfig::parse(&zero), Err(Error::Config(_))));
        assert!(PricingConfig::parse("model.kind = levy").is_err());
    }

    #[test]
    fn hyperexp_lists_must_match() {
        let text = "model.kind = hyperexp\nmodel.sigma = 0.2\nmodel.intensity = 1\nmodel.up_prob = 0.4\n\
                    model.up_weights = 1\nmodel.up_rates = 20, 30\nmodel.down_weights = 1\nmodel.down_rates = 25\n";
        assert!(matches!(PricingConfig::parse(text), Err(Error::Config(_))));
    }
}
