//! Builtin experiments. Each one reads an [`ExperimentConfig`], writes its CSVs and
//! `report.json` under `run.out`, and returns the [`ExperimentReport`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use dtmc::linalg::mean_se;
use dtmc::localization::{eta_thresholds, hoeffding_bound, hoeffding_indicator, Thresholds};
use dtmc::malliavin::DerivativeCap;
use dtmc::noise::{parse_law, LawRef};
use dtmc::scheme::{euler_scheme_from_fields, fields_from_scheme, scheme_from_fn, simulate_path, Grid, IteratedSums, Quadratic, RandomWalk, SchemeRef};
use dtmc::semigroup::{
    bandwidth, density_derivative, density_with_se, duality_check, ibp_identity_check, localized_expectation, sample_terminals, tv_distance, tv_distance_sliced, IdentityRow,
    TestFunction, TvGridSpec, TvResult,
};
use dtmc::vectorfield::{from_fn, hormander_quantity, KineticDiffusion, KineticDrift, Profile};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, SchemeSpec};
use crate::error::{HarnessError, Result};
use crate::fit::{rate_fit, RateFit};

/// Projections used when the state has more than three coordinates.
pub const TV_SLICES: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    /// Canonical config text; running it again reproduces this report.
    pub config_text: String,
    pub scheme: Value,
    pub law: Value,
    pub per_delta: Vec<Value>,
    pub rate_fit: Option<RateFit>,
    pub a5: Vec<Value>,
    pub summary: Value,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

pub fn build_scheme(s: &SchemeSpec) -> Result<SchemeRef> {
    let profile = |p: &str| Profile::parse(p).map_err(HarnessError::from);
    Ok(match s.id.as_str() {
        "random-walk" => scheme_from_fn(RandomWalk(s.dim), "random-walk", None)?,
        "kinetic" => euler_scheme_from_fields(from_fn(KineticDrift(profile(&s.drift)?)), vec![from_fn(KineticDiffusion(profile(&s.diffusion)?))], "kinetic")?,
        "iterated" => scheme_from_fn(IteratedSums(s.levels), "iterated", None)?,
        "quadratic" => scheme_from_fn(Quadratic, "quadratic", None)?,
        other => return Err(HarnessError::Config { path: "scheme.id".into(), line: 0, msg: format!("unknown scheme `{other}`") }),
    })
}

/// Derives an independent seed for sub-run `j` of kind `tag`.
pub fn sub_seed(master: u64, tag: u64, j: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ j.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worst-case resident memory in bytes, declared before any work starts.
pub fn memory_estimate(cfg: &ExperimentConfig) -> u64 {
    let (d, n) = cfg.dims();
    let m = cfg.n_paths as u64;
    let sample = 48 + 8 * d as u64;
    let nodes = cfg.tv.max_nodes as u64 * 8 * 4;
    let max_steps = cfg.deltas.iter().map(|dl| (cfg.horizon / dl).round() as u64).max().unwrap_or(0);
    match cfg.experiment.as_str() {
        "simulate" => m * sample + cfg.record as u64 * (max_steps + 1) * 8 * (2 + d + 3 * n) as u64 * 4,
        "hormander-scan" => cfg.hormander.axes.iter().map(|a| a.count as u64).product::<u64>() * (8 * (d as u64 + 1) + 48),
        "ibp-check" => {
            let dirs = max_steps * n as u64;
            let per_thread = dirs * dirs * d as u64 * 8 * 3;
            let threads = rayon::current_num_threads().max(cfg.threads) as u64;
            threads * per_thread + m * (cfg.ibp.tests.len() as u64 * d as u64 * 16 + 64)
        }
        "kinetic-tv" => 3 * m * sample + nodes,
        "iterated-clt" => cfg.deltas.len() as u64 * m * sample + nodes,
        "density" => m * sample,
        "localization" => m * 128 + cfg.localization.hoeffding_paths as u64,
        _ => 0,
    }
}

fn check_resources(cfg: &ExperimentConfig) -> Result<()> {
    let need = memory_estimate(cfg);
    let cap = cfg.max_memory_mb.saturating_mul(1 << 20);
    if need > cap {
        return Err(HarnessError::Resource(format!("experiment `{}` needs about {} MiB, cap is {} MiB (run.max_memory_mb)", cfg.experiment, need >> 20, cfg.max_memory_mb)));
    }
    if cfg.experiment == "ibp-check" {
        let (_, n) = cfg.dims();
        for &delta in &cfg.deltas {
            let steps = (cfg.horizon / delta).round() as usize;
            DerivativeCap::default().check(steps, n)?;
        }
    }
    if cfg.experiment == "simulate" && cfg.record > 1000 {
        return Err(HarnessError::Resource("run.record is limited to 1000 path files".into()));
    }
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    psi: SchemeRef,
    law: LawRef,
    out: PathBuf,
    files: Vec<String>,
    notes: Vec<String>,
    warnings: Vec<String>,
}

fn fmt(v: f64) -> String {
    v.to_string()
}

impl Ctx<'_> {
    fn grid(&self, delta: f64) -> Result<Grid> {
        Ok(Grid::new(delta, self.cfg.horizon)?)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.out.join(name)).map_err(csv_io)?;
        w.write_record(header).map_err(csv_io)?;
        for r in rows {
            w.write_record(r).map_err(csv_io)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn thresholds(&self, delta: f64) -> Result<Thresholds> {
        let (d, n) = self.cfg.dims();
        let l = &self.cfg.localization;
        let cert = self.law.certificate().ok_or_else(|| dtmc::Error::Certificate(format!("law `{}` does not support splitting", self.law.id())))?;
        let thr = match (l.eta1, l.eta2) {
            (Some(a), Some(b)) => Thresholds::manual(a, b, delta)?,
            _ => eta_thresholds(delta, d, self.cfg.horizon, cert.m_star, l.frak_d, l.frak_p),
        };
        // A5 is a diagnostic; a bracket order beyond the derivative tower only drops it.
        match self.v_l() {
            Ok(v) => Ok(thr.with_a5(self.cfg.horizon, cert.m_star, d, n, self.cfg.l, v)),
            Err(HarnessError::Core(dtmc::Error::Capability { .. })) => Ok(thr),
            Err(e) => Err(e),
        }
    }

    fn v_l(&self) -> Result<f64> {
        let fields = fields_from_scheme(&self.psi)?.bracket_fields();
        Ok(hormander_quantity(&fields, self.cfg.l, &self.cfg.x0, 0.0)?)
    }

    fn a5_block(&self) -> Vec<Value> {
        if self.law.certificate().is_none() {
            return Vec::new();
        }
        if let Err(e) = self.v_l() {
            return vec![json!({ "error": e.to_string() })];
        }
        self.cfg
            .deltas
            .iter()
            .map(|&delta| match self.thresholds(delta) {
                Ok(t) => serde_json::to_value(&t).unwrap_or(Value::Null),
                Err(e) => json!({ "delta": delta, "error": e.to_string() }),
            })
            .collect()
    }
}

fn csv_io(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e.to_string()))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

/// Smoothed total variation, falling back to the sliced lower bound above three coordinates.
pub fn smoothed_tv(a: &[Vec<f64>], b: &[Vec<f64>], h: f64, max_nodes: usize, seed: u64) -> Result<TvResult> {
    let d = a.first().map_or(0, Vec::len);
    if d <= 3 {
        Ok(tv_distance(a, b, h, &TvGridSpec { max_nodes, ..TvGridSpec::default() })?)
    } else {
        Ok(tv_distance_sliced(a, b, h, TV_SLICES, seed)?)
    }
}

/// Runs the experiment in a pool of `run.threads` workers (0 = all cores).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check_resources(cfg)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cfg.threads > 0 {
        pool = pool.num_threads(cfg.threads);
    }
    let pool = pool.build().map_err(|e| HarnessError::Resource(e.to_string()))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let psi = build_scheme(&cfg.scheme)?;
    let (_, n) = cfg.dims();
    let law = parse_law(&cfg.law, n)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut ctx = Ctx { cfg, psi, law, out: cfg.out.clone(), files: Vec::new(), notes: Vec::new(), warnings: Vec::new() };
    let (per_delta, rate, summary) = match cfg.experiment.as_str() {
        "simulate" => simulate(&mut ctx)?,
        "hormander-scan" => hormander_scan(&mut ctx)?,
        "ibp-check" => ibp_check(&mut ctx)?,
        "kinetic-tv" => kinetic_tv(&mut ctx)?,
        "iterated-clt" => iterated_clt(&mut ctx)?,
        "density" => density(&mut ctx)?,
        "localization" => localization(&mut ctx)?,
        other => return Err(HarnessError::Config { path: "experiment.id".into(), line: 0, msg: format!("unknown experiment `{other}`") }),
    };
    let a5 = ctx.a5_block();
    ctx.files.push("report.json".into());
    let (d, n) = cfg.dims();
    let report = ExperimentReport {
        experiment: cfg.experiment.clone(),
        config: cfg.clone(),
        config_text: cfg.to_text(),
        scheme: json!({ "id": ctx.psi.id(), "d": d, "n": n, "spec": cfg.scheme }),
        law: json!({ "id": ctx.law.id(), "params": ctx.law.params(), "certificate": ctx.law.certificate(), "third_moment_zero": ctx.law.third_moment_zero() }),
        per_delta,
        rate_fit: rate,
        a5,
        summary,
        notes: ctx.notes,
        warnings: ctx.warnings,
        files: ctx.files,
    };
    write_report(&report, &ctx.out)?;
    Ok(report)
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), text + "\n")?;
    Ok(())
}

type Outcome = (Vec<Value>, Option<RateFit>, Value);

fn simulate(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let (d, _) = cfg.dims();
    let cert = ctx.law.certificate().cloned();
    let mut per = Vec::new();
    let mut rows = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let grid = ctx.grid(delta)?;
        let seed = sub_seed(cfg.seed, 1, j as u64);
        let (psi, law) = (&*ctx.psi, &*ctx.law);
        let sims: Vec<(Vec<f64>, f64)> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let p = simulate_path(psi, law, &cfg.x0, grid, seed, i as u64)?;
                let freq = p.chi.iter().filter(|c| **c).count() as f64 / p.steps().max(1) as f64;
                Ok((p.terminal().to_vec(), freq))
            })
            .collect::<Result<_>>()?;
        for i in 0..cfg.record.min(cfg.n_paths) {
            let p = simulate_path(psi, law, &cfg.x0, grid, seed, i as u64)?;
            let name = format!("path_{j}_{i}.csv");
            let f = std::fs::File::create(ctx.out.join(&name))?;
            dtmc::record::write_path(&p, std::io::BufWriter::new(f))?;
            ctx.files.push(name);
        }
        let mut mean = Vec::new();
        let mut se = Vec::new();
        for k in 0..d {
            let (m, s) = mean_se(&sims.iter().map(|(x, _)| x[k]).collect::<Vec<_>>());
            mean.push(m);
            se.push(s);
        }
        let chi = mean_se(&sims.iter().map(|(_, f)| *f).collect::<Vec<_>>());
        for (i, (x, _)) in sims.iter().enumerate() {
            let mut r = vec![fmt(delta), i.to_string()];
            r.extend(x.iter().map(|v| fmt(*v)));
            rows.push(r);
        }
        per.push(json!({
            "delta": delta, "steps": grid.steps, "seed": seed,
            "estimate": mean, "std_error": se,
            "chi_frequency": chi.0, "chi_frequency_se": chi.1, "m_star": cert.as_ref().map(|c| c.m_star),
        }));
    }
    let mut h = header(&["delta", "path"]);
    h.extend(coord_header("X", d));
    ctx.csv("terminals.csv", &h, &rows)?;
    Ok((per, None, json!({ "paths": cfg.n_paths })))
}

fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for ax in axes {
        pts = pts.into_iter().flat_map(|p| ax.iter().map(move |v| {
            let mut q = p.clone();
            q.push(*v);
            q
        })).collect();
    }
    pts
}

fn hormander_scan(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let (d, _) = cfg.dims();
    let fields = fields_from_scheme(&ctx.psi)?.bracket_fields();
    let axes: Vec<Vec<f64>> = cfg.hormander.axes.iter().map(|a| a.points()).collect();
    let pts = tensor_points(&axes);
    let t = cfg.hormander.t;
    let vals: Vec<f64> = pts.par_iter().map(|x| hormander_quantity(&fields, cfg.l, x, t)).collect::<dtmc::Result<_>>()?;
    let (imin, vmin) = vals.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    let rows: Vec<Vec<String>> = pts.iter().zip(&vals).map(|(x, v)| x.iter().map(|c| fmt(*c)).chain(std::iter::once(fmt(*v))).collect()).collect();
    let mut h = coord_header("x", d);
    h.push("value".into());
    ctx.csv("hormander.csv", &h, &rows)?;
    let positive = vals.iter().filter(|v| **v > 0.0).count();
    Ok((Vec::new(), None, json!({ "L": cfg.l, "t": t, "points": pts.len(), "min": vmin, "argmin": pts[imin], "positive": positive })))
}

fn identity_row_csv(kind: &str, r: &IdentityRow) -> Vec<String> {
    vec![kind.into(), r.label.clone(), fmt(r.lhs.0), fmt(r.lhs.1), fmt(r.rhs.0), fmt(r.rhs.1), fmt(r.diff.0), fmt(r.diff.1), fmt(r.z_score), r.n_paths.to_string()]
}

fn ibp_check(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let (d, _) = cfg.dims();
    let tests: Vec<TestFunction> = cfg.ibp.tests.iter().map(|t| TestFunction::parse(t)).collect::<dtmc::Result<_>>()?;
    let dual = TestFunction::parse(&cfg.ibp.dual)?;
    let mut per = Vec::new();
    let mut rows = Vec::new();
    let mut max_z: f64 = 0.0;
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let grid = ctx.grid(delta)?;
        let thr = ctx.thresholds(delta)?;
        let mut dual_rows = Vec::new();
        for k in 0..d {
            let r = duality_check(&*ctx.psi, &*ctx.law, &cfg.x0, grid, k, &dual, cfg.n_paths, sub_seed(cfg.seed, 2, (j * d + k) as u64), DerivativeCap::default())?;
            rows.push(identity_row_csv("duality", &r));
            dual_rows.push(r);
        }
        let rep = ibp_identity_check(&*ctx.psi, &*ctx.law, &cfg.x0, grid, &thr, &tests, cfg.n_paths, sub_seed(cfg.seed, 3, j as u64), DerivativeCap::default())?;
        for r in &rep.rows {
            rows.push(identity_row_csv("ibp", r));
        }
        let z = dual_rows.iter().chain(&rep.rows).map(|r| r.z_score.abs()).fold(0.0, f64::max);
        max_z = max_z.max(z);
        if rep.active_fraction < 0.5 {
            ctx.warnings.push(format!("δ = {delta}: only {:.1}% of paths have Θ > 0", 100.0 * rep.active_fraction));
        }
        per.push(json!({
            "delta": delta, "thresholds": thr, "active_fraction": rep.active_fraction,
            "duality": dual_rows, "ibp": rep.rows, "max_abs_z": z,
        }));
    }
    ctx.csv("ibp.csv", &header(&["kind", "label", "lhs", "lhs_se", "rhs", "rhs_se", "diff", "diff_se", "z", "n_paths"]), &rows)?;
    ctx.notes.push("IBP rows compare E[∂_hφ(X_T)Θ] with E[φ(X_T)H_h] using G = Θ built on G₀ = det(Ẋ_T)²".into());
    Ok((per, None, json!({ "max_abs_z": max_z, "pass": max_z <= 3.0 })))
}

fn kinetic_tv(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let ref_law = parse_law(&cfg.tv.reference_law, ctx.law.dim())?;
    let f = cfg.tv.reference_factor;
    let mut per = Vec::new();
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let grid = ctx.grid(delta)?;
        let fine = ctx.grid(delta / f as f64)?;
        let a = sample_terminals(&*ctx.psi, &*ctx.law, &cfg.x0, grid, cfg.n_paths, sub_seed(cfg.seed, 4, j as u64))?;
        let b = sample_terminals(&*ctx.psi, &*ref_law, &cfg.x0, fine, cfg.n_paths, sub_seed(cfg.seed, 5, j as u64))?;
        let h = bandwidth(delta, cfg.theta);
        let tv = smoothed_tv(&a, &b, h, cfg.tv.max_nodes, sub_seed(cfg.seed, 6, j as u64))?;
        let half = a.len() / 2;
        let floor = smoothed_tv(&a[..half], &a[half..2 * half], h, cfg.tv.max_nodes, sub_seed(cfg.seed, 7, j as u64))?.value / 2f64.sqrt();
        if tv.coarsened {
            ctx.warnings.push(format!("δ = {delta}: quadrature grid coarsened to {:?} nodes", tv.nodes));
        }
        rows.push(vec![fmt(delta), fmt(h), fmt(tv.value), fmt(tv.std_error), fmt(floor), fmt(tv.residual), format!("{:?}", tv.nodes), tv.coarsened.to_string(), tv.lower_bound.to_string()]);
        pts.push((delta, tv.value, tv.std_error));
        per.push(json!({ "delta": delta, "reference_delta": delta / f as f64, "estimate": tv.value, "std_error": tv.std_error, "noise_floor": floor, "tv": tv }));
    }
    ctx.csv("tv.csv", &header(&["delta", "bandwidth", "tv", "std_error", "noise_floor", "residual", "nodes", "coarsened", "lower_bound"]), &rows)?;
    ctx.notes.push(format!(
        "reference: the same scheme at δ/{f} driven by `{}` noise, smoothed with the same bandwidth δ^θ",
        cfg.tv.reference_law
    ));
    ctx.notes.push(
        "the plug-in distance between two smoothed empirical laws is biased upward by about the noise_floor column; once the true distance nears that floor the fitted slope flattens, so the slope is indicative only".into(),
    );
    let fit = match rate_fit(&pts) {
        Ok(f) => {
            ctx.warnings.extend(f.warnings.iter().cloned());
            Some(f)
        }
        Err(e) => {
            ctx.warnings.push(e.to_string());
            None
        }
    };
    let summary = json!({
        "slope": fit.as_ref().map(|f| f.slope), "ci": fit.as_ref().map(|f| f.ci),
        "third_moment_zero": ctx.law.third_moment_zero(),
    });
    Ok((per, fit, summary))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `Cov(I_k, I_l)` for `I_k = ∫₀^T (T−s)^k/k! dW_s`.
pub fn iterated_limit_cov(k: usize, l: usize, horizon: f64) -> f64 {
    horizon.powi((k + l + 1) as i32) / (factorial(k) * factorial(l) * (k + l + 1) as f64)
}

/// Sample covariance entries with standard errors from the product influence function.
pub fn covariance_with_se(xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = xs.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..d).map(|k| mean_se(&xs.iter().map(|x| x[k]).collect::<Vec<_>>()).0).collect();
    let mut c = vec![vec![0.0; d]; d];
    let mut s = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = xs.iter().map(|x| (x[i] - means[i]) * (x[j] - means[j])).collect();
            let (m, se) = mean_se(&prods);
            c[i][j] = m;
            s[i][j] = se;
        }
    }
    (c, s)
}

fn iterated_clt(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let (d, _) = cfg.dims();
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        samples.push(sample_terminals(&*ctx.psi, &*ctx.law, &cfg.x0, ctx.grid(delta)?, cfg.n_paths, sub_seed(cfg.seed, 8, j as u64))?);
    }
    let finest = cfg.deltas.iter().enumerate().fold(0, |b, (i, v)| if *v < cfg.deltas[b] { i } else { b });
    let mut per = Vec::new();
    let mut cov_rows = Vec::new();
    let mut tv_rows = Vec::new();
    let mut worst_z: f64 = 0.0;
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let (c, s) = covariance_with_se(&samples[j]);
        let mut z_max: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let lim = iterated_limit_cov(a, b, cfg.horizon);
                let z = (c[a][b] - lim) / s[a][b];
                z_max = z_max.max(z.abs());
                cov_rows.push(vec![fmt(delta), a.to_string(), b.to_string(), fmt(c[a][b]), fmt(s[a][b]), fmt(lim), fmt(z)]);
            }
        }
        worst_z = worst_z.max(z_max);
        let tv = if j != finest {
            let h = bandwidth(delta, cfg.theta);
            let t = smoothed_tv(&samples[j], &samples[finest], h, cfg.tv.max_nodes, sub_seed(cfg.seed, 9, j as u64))?;
            tv_rows.push(vec![fmt(delta), fmt(cfg.deltas[finest]), fmt(h), fmt(t.value), fmt(t.std_error), fmt(t.residual), t.lower_bound.to_string()]);
            Some(t)
        } else {
            None
        };
        per.push(json!({
            "delta": delta, "steps": (cfg.horizon / delta).round(), "covariance": c, "std_error": s,
            "max_abs_z": z_max, "tv_vs_finest": tv,
        }));
    }
    ctx.csv("clt.csv", &header(&["delta", "i", "j", "cov", "std_error", "limit", "z"]), &cov_rows)?;
    ctx.csv("tv.csv", &header(&["delta", "reference_delta", "bandwidth", "tv", "std_error", "residual", "lower_bound"]), &tv_rows)?;
    ctx.notes.push("limit covariance Cov(I_k, I_l) = T^(k+l+1) / (k! l! (k+l+1)) for I_k = ∫(T−s)^k/k! dW_s".into());
    Ok((per, None, json!({ "max_abs_z": worst_z, "finest_delta": cfg.deltas[finest] })))
}

fn density(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let (d, _) = cfg.dims();
    let exact_case = cfg.scheme.id == "random-walk" && ctx.law.id() == "gaussian";
    let ys = cfg.density.axis.points();
    let mut per = Vec::new();
    let mut rows = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let grid = ctx.grid(delta)?;
        let samples = sample_terminals(&*ctx.psi, &*ctx.law, &cfg.x0, grid, cfg.n_paths, sub_seed(cfg.seed, 10, j as u64))?;
        let h = bandwidth(delta, cfg.theta);
        let var = cfg.horizon + h * h;
        let beta: Vec<usize> = (0..d).map(|k| if k == 0 { cfg.density.beta } else { 0 }).collect();
        let evals: Vec<(f64, f64, f64, Option<f64>)> = ys
            .par_iter()
            .map(|&y| {
                let mut p = cfg.x0.clone();
                p[0] = y;
                let (q, se) = density_with_se(&samples, h, &p);
                let dq = density_derivative(&samples, h, &beta, &p)?;
                let exact = exact_case.then(|| {
                    let r2: f64 = p.iter().zip(&cfg.x0).map(|(a, b)| (a - b).powi(2)).sum();
                    (2.0 * PI * var).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * var)).exp()
                });
                Ok((q, se, dq, exact))
            })
            .collect::<dtmc::Result<_>>()?;
        let step = if ys.len() > 1 { ys[1] - ys[0] } else { 0.0 };
        let integral = if ys.len() > 1 { step * (evals.iter().map(|e| e.0).sum::<f64>() - 0.5 * (evals[0].0 + evals[evals.len() - 1].0)) } else { f64::NAN };
        let mut sup_z: f64 = 0.0;
        let mut sup_err: f64 = 0.0;
        for (y, e) in ys.iter().zip(&evals) {
            let exact = e.3.map_or(String::new(), fmt);
            if let Some(x) = e.3 {
                sup_err = sup_err.max((e.0 - x).abs());
                if e.1 > 0.0 {
                    sup_z = sup_z.max((e.0 - x).abs() / e.1);
                }
            }
            rows.push(vec![fmt(delta), fmt(*y), fmt(e.0), fmt(e.1), fmt(e.2), exact]);
        }
        per.push(json!({
            "delta": delta, "bandwidth": h, "integral": if d == 1 { Some(integral) } else { None },
            "sup_abs_error": exact_case.then_some(sup_err), "sup_z": exact_case.then_some(sup_z),
        }));
    }
    ctx.csv("density.csv", &header(&["delta", "y", "density", "std_error", "derivative", "exact"]), &rows)?;
    ctx.notes.push(format!("density evaluated along coordinate 0 with the others fixed at x0; derivative order {} in coordinate 0", cfg.density.beta));
    if exact_case {
        ctx.notes.push("exact column: 𝒩(x0, (T + h²) I), the law of X_T convolved with the kernel".into());
    }
    Ok((per, None, json!({ "points": ys.len() })))
}

fn localization(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let cert = ctx.law.certificate().cloned().ok_or_else(|| dtmc::Error::Certificate(format!("law `{}` does not support splitting", ctx.law.id())))?;
    let one = |_: &[f64]| 1.0;
    let mut per = Vec::new();
    let mut rows = Vec::new();
    let mut losses = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let grid = ctx.grid(delta)?;
        let thr = ctx.thresholds(delta)?;
        let r = localized_expectation(&*ctx.psi, &*ctx.law, &cfg.x0, grid, &thr, &one, cfg.n_paths, sub_seed(cfg.seed, 11, j as u64))?;
        losses.push(r.loss.0);
        rows.push(vec![
            fmt(delta),
            fmt(thr.eta1),
            fmt(thr.eta2),
            thr.feasible.to_string(),
            fmt(r.loss.0),
            fmt(r.loss.1),
            fmt(r.lambda_miss.0),
            fmt(r.lambda_miss.1),
        ]);
        per.push(json!({
            "delta": delta, "thresholds": thr, "estimate": r.loss.0, "std_error": r.loss.1,
            "lambda_miss": r.lambda_miss.0, "lambda_miss_se": r.lambda_miss.1,
        }));
    }
    ctx.csv("localization.csv", &header(&["delta", "eta1", "eta2", "feasible", "loss", "loss_se", "lambda_miss", "lambda_miss_se"]), &rows)?;

    let steps = cfg.localization.hoeffding_steps;
    let hdelta = cfg.horizon / steps.max(1) as f64;
    let hgrid = Grid::new(hdelta.min(1.0), hdelta.min(1.0) * steps as f64)?;
    let seed = sub_seed(cfg.seed, 12, 0);
    let (psi, law) = (&*ctx.psi, &*ctx.law);
    let miss: Vec<f64> = (0..cfg.localization.hoeffding_paths)
        .into_par_iter()
        .map(|i| Ok(if hoeffding_indicator(&simulate_path(psi, law, &cfg.x0, hgrid, seed, i as u64)?, cert.m_star) { 0.0 } else { 1.0 }))
        .collect::<dtmc::Result<_>>()?;
    let (p, se) = mean_se(&miss);
    let bound = hoeffding_bound(cert.m_star, steps);
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);
    ctx.notes.push("loss = Ê[1 − Θ]; lambda_miss = empirical P(Λᶜ) on the same paths".into());
    Ok((
        per,
        None,
        json!({
            "loss_decreasing": decreasing,
            "hoeffding": { "steps": steps, "paths": miss.len(), "miss": p, "std_error": se, "bound": bound, "pass": p <= bound + 3.0 * se },
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limit_covariance_matches_ito_isometry() {
        assert_eq!(iterated_limit_cov(0, 0, 1.0), 1.0);
        assert_eq!(iterated_limit_cov(0, 1, 1.0), 0.5);
        assert!((iterated_limit_cov(1, 1, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        // ∫₀² (2−s)³/2 ds = 2
        assert!((iterated_limit_cov(1, 2, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sub_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..4).flat_map(|t| (0..64).map(move |j| sub_seed(7, t, j))).collect();
        assert_eq!(s.len(), 256);
    }

    #[test]
    fn tensor_points_enumerate_row_major() {
        let p = tensor_points(&[vec![0.0, 1.0], vec![2.0, 3.0, 4.0]]);
        assert_eq!(p.len(), 6);
        assert_eq!(p[1], vec![0.0, 3.0]);
        assert_eq!(p[3], vec![1.0, 2.0]);
    }
}
