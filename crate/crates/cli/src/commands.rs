use crate::error::{CliError, Result};
use crate::output::{linspace, num, resolve_out_dir, Writer};
use meroput::config::ModelSpec;
use meroput::oracle::{crr_binomial, mc_lower_bound, quadrature_recursion, GridSpec};
use meroput::{recurse, PricingConfig, PricingRun};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Context {
    pub config_path: PathBuf,
    pub cfg: PricingConfig,
    pub verbose: bool,
}

impl Context {
    pub fn load(path: &Path, verbose: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let cfg = PricingConfig::parse(&text).map_err(|e| run_err(path, e))?;
        Ok(Context { config_path: path.to_path_buf(), cfg, verbose })
    }

    fn err(&self, e: meroput::Error) -> CliError {
        run_err(&self.config_path, e)
    }

    fn run(&self, cfg: &PricingConfig) -> Result<PricingRun> {
        let started = Instant::now();
        let model = cfg.levy_model().map_err(|e| self.err(e))?;
        let run = recurse(&model, cfg).map_err(|e| self.err(e))?;
        if self.verbose {
            for s in &run.diagnostics.steps {
                eprintln!("step {:>5}: {:>10.3} ms", s.step, s.elapsed.as_secs_f64() * 1e3);
            }
        }
        eprintln!("n={} k={}: {} bits, {:.3} s", cfg.n, cfg.k, run.value.bits(), started.elapsed().as_secs_f64());
        for w in &run.diagnostics.warnings {
            eprintln!("warning: {w}");
        }
        Ok(run)
    }

    fn writer(&self, command: &str) -> Result<Writer> {
        Writer::new(&resolve_out_dir(&self.cfg), command, &self.cfg)
    }
}

fn run_err(path: &Path, source: meroput::Error) -> CliError {
    CliError::Run { path: path.to_path_buf(), source }
}

fn diagnostics(run: &PricingRun) -> String {
    let mix = &run.mixture;
    let mut s = String::new();
    let _ = writeln!(s, "mixture.pos_components = {}", mix.pos_side.len());
    let _ = writeln!(s, "mixture.neg_components = {}", mix.neg_side.len());
    let _ = writeln!(s, "mixture.raw_mass = {}", num(mix.raw_mass));
    let _ = writeln!(s, "mixture.mass = {}", num(mix.mass()));
    match run.drift_defect {
        Some(d) => {
            let _ = writeln!(s, "mixture.drift_defect = {}", num(d));
        }
        None => {
            let _ = writeln!(s, "mixture.drift_defect = not calibrated");
        }
    }
    let _ = writeln!(s, "precision_bits = {}", run.value.bits());
    let esc: Vec<String> = run.escalations.iter().map(u32::to_string).collect();
    let _ = writeln!(s, "escalated_from = {}", if esc.is_empty() { "none".into() } else { esc.join(",") });
    let worst = run.diagnostics.steps.iter().map(|r| r.cancellation).fold(1.0, f64::max);
    let _ = writeln!(s, "max_cancellation_ratio = {}", num(worst));
    let _ = writeln!(s, "warnings = {}", run.diagnostics.warnings.len());
    for w in &run.diagnostics.warnings {
        let _ = writeln!(s, "warning = {w}");
    }
    let _ = writeln!(s, "step,boundary,cancellation_ratio");
    for r in &run.diagnostics.steps {
        let _ = writeln!(s, "{},{},{}", r.step, num(r.boundary), num(r.cancellation));
    }
    s
}

fn write_boundary(w: &Writer, cfg: &PricingConfig, run: &PricingRun) -> Result<PathBuf> {
    let rows = run.value.boundaries().into_iter().enumerate().map(|(i, b)| vec![i as f64 / cfg.n as f64, b]);
    w.csv("boundary.csv", &["t".into(), "boundary".into()], rows)
}

/// `V_k` on `[x̄_k − below, log K + above]`.
fn eval_grid(cfg: &PricingConfig, lowest_boundary: f64) -> Vec<f64> {
    linspace(lowest_boundary - cfg.grid_below, cfg.strike.ln() + cfg.grid_above, cfg.grid_points)
}

pub fn price(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let run = ctx.run(cfg)?;
    let w = ctx.writer("price")?;
    let b = run.value.boundaries();
    let xs = eval_grid(cfg, b[b.len() - 1]);
    let value =
        w.csv("value.csv", &["x".into(), "value".into()], xs.iter().map(|&x| vec![x, run.value.evaluate(x)]))?;
    let boundary = write_boundary(&w, cfg, &run)?;
    let mix = &run.mixture;
    let comps = mix
        .pos_side
        .iter()
        .map(|c| vec![1.0, c.rate, c.weight])
        .chain(mix.neg_side.iter().map(|c| vec![-1.0, c.rate, c.weight]));
    let mixture = w.csv("mixture.csv", &["side".into(), "rate".into(), "weight".into()], comps)?;
    let diag = w.write("diagnostics.txt", &diagnostics(&run))?;
    Ok(vec![value, boundary, mixture, diag])
}

pub fn boundary(ctx: &Context) -> Result<Vec<PathBuf>> {
    let run = ctx.run(&ctx.cfg)?;
    let w = ctx.writer("boundary")?;
    let boundary = write_boundary(&w, &ctx.cfg, &run)?;
    let diag = w.write("diagnostics.txt", &diagnostics(&run))?;
    Ok(vec![boundary, diag])
}

pub fn converge(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let pairs = if cfg.converge.is_empty() { vec![(cfg.n, cfg.k)] } else { cfg.converge.clone() };
    let first = pairs[0];
    if let Some(&bad) = pairs.iter().find(|(n, k)| k * first.0 != first.1 * n) {
        return Err(CliError::RatioMismatch { path: ctx.config_path.clone(), a: first, b: bad });
    }
    let base = pairs.iter().enumerate().max_by_key(|(_, p)| p.0).map(|(i, _)| i).unwrap_or(0);
    let runs = pairs
        .iter()
        .map(|&(n, k)| {
            let mut c = cfg.clone();
            c.n = n;
            c.k = k;
            ctx.run(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let b = runs[base].value.boundaries();
    let xs = eval_grid(cfg, b[b.len() - 1]);
    let values: Vec<Vec<f64>> = runs.iter().map(|r| xs.iter().map(|&x| r.value.evaluate(x)).collect()).collect();
    let rel: Vec<Vec<f64>> =
        values.iter().map(|v| v.iter().zip(&values[base]).map(|(a, b)| ((a - b) / b).abs()).collect()).collect();

    let w = ctx.writer("converge")?;
    let mut cols = vec!["x".to_string()];
    cols.extend(pairs.iter().map(|(n, k)| format!("value_n{n}_k{k}")));
    cols.extend(pairs.iter().map(|(n, k)| format!("reldiff_n{n}_k{k}")));
    let rows = xs.iter().enumerate().map(|(i, &x)| {
        let mut row = vec![x];
        row.extend(values.iter().map(|v| v[i]));
        row.extend(rel.iter().map(|r| r[i]));
        row
    });
    let table = w.csv("converge.csv", &cols, rows)?;
    let mut summary = String::from("n,k,max_reldiff,mean_reldiff\n");
    for ((n, k), r) in pairs.iter().zip(&rel) {
        let max = r.iter().copied().fold(0.0, f64::max);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let _ = writeln!(summary, "{n},{k},{},{}", num(max), num(mean));
    }
    let summary = w.write("converge_summary.csv", &summary)?;
    Ok(vec![table, summary])
}

pub fn compare_oracle(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let run = ctx.run(cfg)?;
    let b = run.value.boundaries();
    let (lo, hi) = (b[cfg.k] - 1.0, b[0] + 1.0);

    let started = Instant::now();
    let grid = GridSpec { half_width: cfg.oracle_half_width, nodes: cfg.oracle_nodes };
    let quad = quadrature_recursion(&run.mixture, cfg.strike, cfg.r, cfg.n, cfg.k, grid).map_err(|e| ctx.err(e))?;
    eprintln!("quadrature ({} nodes): {:.3} s", cfg.oracle_nodes, started.elapsed().as_secs_f64());
    let devs: Vec<f64> = (0..quad.value.values.len())
        .map(|i| quad.value.x(i))
        .filter(|x| (lo..=hi).contains(x))
        .map(|x| {
            let c = run.value.evaluate(x);
            ((quad.value.evaluate(x) - c) / c).abs()
        })
        .collect();
    let quad_max = devs.iter().copied().fold(0.0, f64::max);
    let quad_mean = devs.iter().sum::<f64>() / devs.len().max(1) as f64;
    let quad_pass = !devs.is_empty() && quad_max < cfg.oracle_tolerance;

    let x0 = cfg.strike.ln() + cfg.mc_offset;
    let closed_x0 = run.value.evaluate(x0);
    let started = Instant::now();
    let mc = mc_lower_bound(&run.mixture, &b, cfg.n, cfg.k, cfg.strike, cfg.r, x0, cfg.mc_paths, cfg.seed)
        .map_err(|e| ctx.err(e))?;
    eprintln!("monte carlo ({} paths): {:.3} s", cfg.mc_paths, started.elapsed().as_secs_f64());
    let mc_z = (mc.mean - closed_x0).abs() / mc.std_error;
    let mc_pass = mc_z < 3.0;

    let crr = match cfg.model {
        ModelSpec::Brownian { sigma } => {
            let t = cfg.k as f64 / cfg.n as f64;
            let v = crr_binomial(sigma, cfg.r, cfg.strike, x0.exp(), t, cfg.crr_steps);
            let rel = ((closed_x0 - v) / v).abs();
            Some((v, rel, rel < cfg.crr_tolerance))
        }
        _ => None,
    };

    let w = ctx.writer("compare-oracle")?;
    let cols: Vec<String> = ["x", "closed_form", "quadrature", "quadrature_reldev"].map(String::from).to_vec();
    let rows = linspace(lo, hi, cfg.grid_points).into_iter().map(|x| {
        let c = run.value.evaluate(x);
        let q = quad.value.evaluate(x);
        vec![x, c, q, ((q - c) / c).abs()]
    });
    let table = w.csv("compare.csv", &cols, rows)?;

    let mut rep = String::new();
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(rep, "window = [{}, {}]", num(lo), num(hi));
    let _ = writeln!(rep, "precision_bits = {}", run.value.bits());
    let _ = writeln!(rep, "quadrature.nodes = {}", cfg.oracle_nodes);
    let _ = writeln!(rep, "quadrature.max_reldev = {}", num(quad_max));
    let _ = writeln!(rep, "quadrature.mean_reldev = {}", num(quad_mean));
    let _ = writeln!(rep, "quadrature.tolerance = {}", num(cfg.oracle_tolerance));
    let _ = writeln!(rep, "quadrature.gate = {}", verdict(quad_pass));
    let _ = writeln!(rep, "x0 = {}", num(x0));
    let _ = writeln!(rep, "closed_form.x0 = {}", num(closed_x0));
    let _ = writeln!(rep, "mc.paths = {}", mc.paths);
    let _ = writeln!(rep, "mc.seed = {}", cfg.seed);
    let _ = writeln!(rep, "mc.mean = {}", num(mc.mean));
    let _ = writeln!(rep, "mc.std_error = {}", num(mc.std_error));
    let _ = writeln!(rep, "mc.z = {}", num(mc_z));
    let _ = writeln!(rep, "mc.gate = {}", verdict(mc_pass));
    let mut failed = usize::from(!quad_pass) + usize::from(!mc_pass);
    match crr {
        Some((v, rel, ok)) => {
            let _ = writeln!(rep, "crr.steps = {}", cfg.crr_steps);
            let _ = writeln!(rep, "crr.value = {}", num(v));
            let _ = writeln!(rep, "crr.reldev = {}", num(rel));
            let _ = writeln!(rep, "crr.gate = {}", verdict(ok));
            failed += usize::from(!ok);
        }
        None => {
            let _ = writeln!(rep, "crr = not applicable");
        }
    }
    let report = w.write("report.txt", &rep)?;
    if failed > 0 {
        return Err(CliError::Gate { path: ctx.config_path.clone(), failed });
    }
    Ok(vec![table, report])
}
