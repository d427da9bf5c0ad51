//! Monte Carlo estimators of `Q^δ_T f`, the Gaussian-regularised `Q^{δ,θ}_T f`, the
//! localised `E[Θ f(X_T)]`, kernel densities with Hermite derivatives, smoothed total
//! variation, and the duality / integration-by-parts checks.
//!
//! Path `i` always draws from stream `i` of the master seed (see [`crate::rng`]).
//! Every reduction is a pairwise sum over the path-indexed sample, so results are
//! identical for any thread count.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, mean_se, pairwise_sum};
use crate::localization::{default_g, default_g_derivative, smooth_cutoff, theta_derivative, theta_from_parts, ThetaFactors, Thresholds};
use crate::malliavin::{ibp_weight_order1, CovarianceAccumulator, DerivativeCap, MalliavinBundle};
use crate::noise::{bump_radial, sample_split, NoiseLaw};
use crate::rng::{aux_rng, path_rng};
use crate::scheme::{jet1, simulate_path, Grid, SchemeMap};

/// Kernel bandwidth `δ^θ`.
pub fn bandwidth(delta: f64, theta: f64) -> f64 {
    delta.powf(theta)
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorResult {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_paths: usize,
    pub config: serde_json::Value,
}

impl EstimatorResult {
    fn scalar(xs: &[f64], config: serde_json::Value) -> Self {
        let (m, se) = mean_se(xs);
        Self { value: vec![m], std_error: vec![se], n_paths: xs.len(), config }
    }
}

fn run_config(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, n_paths: usize, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "scheme": psi.id(), "law": law.id(), "law_params": law.params(), "x0": x0,
        "delta": grid.delta, "horizon": grid.horizon(), "n_paths": n_paths, "seed": seed,
    })
}

/// `X_T` drawing `Z` directly from the law (no splitting).
pub fn terminal_direct(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let mut rng = path_rng(seed, stream);
    let sd = grid.delta.sqrt();
    let mut x = x0.to_vec();
    let mut out = vec![0.0; psi.dim()];
    let mut z = vec![0.0; psi.noise_dim()];
    for k in 0..grid.steps {
        law.sample(&mut rng, &mut z);
        for v in z.iter_mut() {
            *v *= sd;
        }
        psi.eval_l0(&x, grid.time(k), &z, grid.delta, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1, time: grid.time(k + 1) });
        }
        std::mem::swap(&mut x, &mut out);
    }
    Ok(x)
}

/// `n_paths` terminal values, path `i` on stream `i`.
pub fn sample_terminals(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, n_paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if psi.dim() != x0.len() || psi.noise_dim() != law.dim() {
        return Err(Error::Dimension { what: "scheme/law/x0".into(), expected: psi.dim(), got: x0.len() });
    }
    (0..n_paths).into_par_iter().map(|i| terminal_direct(psi, law, x0, grid, seed, i as u64)).collect()
}

fn checked(values: Vec<f64>) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Estimator { path: i, stream: i as u64 });
    }
    Ok(values)
}

pub type Functional<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// `Q^δ_T f(x₀)`.
pub fn expectation(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, f: Functional, n_paths: usize, seed: u64) -> Result<EstimatorResult> {
    let xs = sample_terminals(psi, law, x0, grid, n_paths, seed)?;
    let vals = checked(xs.iter().map(|x| f(x)).collect())?;
    Ok(EstimatorResult::scalar(&vals, run_config(psi, law, x0, grid, n_paths, seed)))
}

/// Adds `δ^θ G` to each terminal value, `G` drawn from the auxiliary stream of the path.
pub fn regularize(samples: &[Vec<f64>], h: f64, seed: u64) -> Vec<Vec<f64>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = aux_rng(seed, i as u64);
            x.iter().map(|v| v + h * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect()
}

/// `Q^{δ,θ}_T f(x₀) = E[f(δ^θ G + X_T)]`.
#[allow(clippy::too_many_arguments)]
pub fn regularized_expectation(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, theta: f64, f: Functional, n_paths: usize, seed: u64) -> Result<EstimatorResult> {
    if !(theta > 0.0) {
        return Err(Error::Invalid(format!("θ must be positive, got {theta}")));
    }
    let xs = regularize(&sample_terminals(psi, law, x0, grid, n_paths, seed)?, bandwidth(grid.delta, theta), seed);
    let vals = checked(xs.iter().map(|x| f(x)).collect())?;
    let mut cfg = run_config(psi, law, x0, grid, n_paths, seed);
    cfg["theta"] = theta.into();
    Ok(EstimatorResult::scalar(&vals, cfg))
}

/// Terminal value and `Θ` of one split path, with the covariance accumulated on the fly.
pub fn localized_path(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, thr: &Thresholds, seed: u64, stream: u64) -> Result<(Vec<f64>, ThetaFactors)> {
    let cert = law.certificate().ok_or_else(|| Error::Certificate(format!("law `{}` does not support splitting", law.id())))?;
    let mut rng = path_rng(seed, stream);
    let sd = grid.delta.sqrt();
    let mut x = x0.to_vec();
    let mut out = vec![0.0; psi.dim()];
    let mut acc = CovarianceAccumulator::new(psi.dim());
    let mut noise_factor = 1.0;
    let mut hits = 0usize;
    for k in 0..grid.steps {
        let s = sample_split(law, grid.delta, &mut rng)?;
        let inc: Vec<f64> = s.z.iter().map(|z| sd * z).collect();
        let t = grid.time(k);
        acc.push(&jet1(psi, &x, t, &inc, grid.delta)?, s.chi);
        psi.eval_l0(&x, t, &inc, grid.delta, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1, time: grid.time(k + 1) });
        }
        std::mem::swap(&mut x, &mut out);
        noise_factor *= smooth_cutoff(thr.eta2, linalg::norm(&s.z));
        hits += s.chi as usize;
    }
    let cov = acc.finish(grid.delta);
    let g = default_g(&acc.tangent);
    let det_factor = if cov.det_gamma.is_finite() { smooth_cutoff(thr.eta1, g * cov.det_gamma) } else { 0.0 };
    let lambda = grid.steps > 0 && hits as f64 / grid.steps as f64 >= cert.m_star / 2.0;
    let value = if lambda { det_factor * noise_factor } else { 0.0 };
    Ok((x, ThetaFactors { det_factor, noise_factor, lambda, value }))
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalizedResult {
    pub estimate: EstimatorResult,
    /// `Ê[1 − Θ]` and its standard error.
    pub loss: (f64, f64),
    /// Empirical `P(Λᶜ)` and its standard error.
    pub lambda_miss: (f64, f64),
}

/// `E[Θ f(X_T)]`, with `Θ` built from `G = det(Ẋ_T)²`.
#[allow(clippy::too_many_arguments)]
pub fn localized_expectation(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, thr: &Thresholds, f: Functional, n_paths: usize, seed: u64) -> Result<LocalizedResult> {
    let rows: Vec<(Vec<f64>, ThetaFactors)> = (0..n_paths)
        .into_par_iter()
        .map(|i| localized_path(psi, law, x0, grid, thr, seed, i as u64))
        .collect::<Result<_>>()?;
    let vals = checked(rows.iter().map(|(x, th)| th.value * f(x)).collect())?;
    let loss: Vec<f64> = rows.iter().map(|(_, th)| 1.0 - th.value).collect();
    let miss: Vec<f64> = rows.iter().map(|(_, th)| if th.lambda { 0.0 } else { 1.0 }).collect();
    let mut cfg = run_config(psi, law, x0, grid, n_paths, seed);
    cfg["thresholds"] = serde_json::to_value(thr).unwrap_or_default();
    Ok(LocalizedResult { estimate: EstimatorResult::scalar(&vals, cfg), loss: mean_se(&loss), lambda_miss: mean_se(&miss) })
}

fn gauss_kernel(u2: f64, h: f64, d: usize) -> f64 {
    (2.0 * PI * h * h).powf(-(d as f64) / 2.0) * (-u2 / (2.0 * h * h)).exp()
}

/// `(1/M) Σ_m 𝒩(y; X_m, h² I)`.
pub fn density(samples: &[Vec<f64>], h: f64, y: &[f64]) -> f64 {
    density_with_se(samples, h, y).0
}

/// Kernel density and the standard error of the sample mean it is.
pub fn density_with_se(samples: &[Vec<f64>], h: f64, y: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = samples
        .iter()
        .map(|x| {
            let u2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            gauss_kernel(u2, h, y.len())
        })
        .collect();
    mean_se(&vals)
}

/// Probabilists' Hermite polynomials `He_0 … He_4`.
pub fn hermite(k: usize, u: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => u,
        2 => u * u - 1.0,
        3 => u * u * u - 3.0 * u,
        4 => u * u * u * u - 6.0 * u * u + 3.0,
        _ => unreachable!("Hermite order above 4"),
    }
}

/// `∂_y^β` of the kernel density: `(1/M) Σ_m (−1)^{|β|} h^{−|β|} Π_k He_{β_k}((y_k − X_m^k)/h) 𝒩(y; X_m, h²I)`.
pub fn density_derivative(samples: &[Vec<f64>], h: f64, beta: &[usize], y: &[f64]) -> Result<f64> {
    let order: usize = beta.iter().sum();
    if order > 4 {
        return Err(Error::Invalid(format!("derivative order {order} above 4 is not supported")));
    }
    if beta.len() != y.len() {
        return Err(Error::Dimension { what: "multi-index".into(), expected: y.len(), got: beta.len() });
    }
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    let scale = sign * h.powi(-(order as i32));
    let vals: Vec<f64> = samples
        .iter()
        .map(|x| {
            let mut u2 = 0.0;
            let mut poly = 1.0;
            for k in 0..y.len() {
                let u = (y[k] - x[k]) / h;
                u2 += (y[k] - x[k]) * (y[k] - x[k]);
                poly *= hermite(beta[k], u);
            }
            scale * poly * gauss_kernel(u2, h, y.len())
        })
        .collect();
    Ok(pairwise_sum(&vals) / samples.len() as f64)
}

/// Quadrature grid controls for [`tv_distance`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TvGridSpec {
    /// Nodes per sample standard deviation (lower bound).
    pub nodes_per_std: f64,
    /// Nodes per bandwidth (lower bound).
    pub nodes_per_bandwidth: f64,
    /// Half-width of the margin added beyond the sample range, in bandwidths.
    pub margin: f64,
    /// Total node budget; spacing is coarsened uniformly beyond it.
    pub max_nodes: usize,
}

impl Default for TvGridSpec {
    fn default() -> Self {
        Self { nodes_per_std: 64.0, nodes_per_bandwidth: 4.0, margin: 6.0, max_nodes: 1 << 24 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TvResult {
    pub value: f64,
    pub std_error: f64,
    /// `max(|1 − ∫q̂_A|, |1 − ∫q̂_B|)` on the grid.
    pub residual: f64,
    pub bandwidth: f64,
    pub nodes: Vec<usize>,
    pub spacing: Vec<f64>,
    pub coarsened: bool,
    /// The sliced estimator only bounds the distance from below.
    pub lower_bound: bool,
}

struct TensorGrid {
    lo: Vec<f64>,
    dx: Vec<f64>,
    n: Vec<usize>,
    strides: Vec<usize>,
}

impl TensorGrid {
    fn len(&self) -> usize {
        self.n.iter().product()
    }

    fn cell_volume(&self) -> f64 {
        self.dx.iter().product()
    }

    /// Multilinear stencil: (flat index, weight) pairs.
    fn stencil(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        for k in 0..x.len() {
            let pos = ((x[k] - self.lo[k]) / self.dx[k]).clamp(0.0, (self.n[k] - 1) as f64);
            let i = (pos.floor() as usize).min(self.n[k].saturating_sub(2));
            let f = pos - i as f64;
            let len = out.len();
            for j in 0..len {
                let (idx, w) = out[j];
                out[j] = (idx + i * self.strides[k], w * (1.0 - f));
                if self.n[k] > 1 {
                    out.push((idx + (i + 1) * self.strides[k], w * f));
                }
            }
        }
    }

    fn bin(&self, samples: &[Vec<f64>]) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        let mut st = Vec::new();
        let unit = 1.0 / samples.len() as f64;
        for x in samples {
            self.stencil(x, &mut st);
            for (i, v) in &st {
                w[*i] += unit * v;
            }
        }
        w
    }

    fn interpolate(&self, field: &[f64], x: &[f64], st: &mut Vec<(usize, f64)>) -> f64 {
        self.stencil(x, st);
        st.iter().map(|(i, w)| field[*i] * w).sum()
    }

    /// Separable convolution with the `𝒩(0, h²)` density sampled at the nodes.
    fn convolve(&self, data: &[f64], h: f64, margin: f64) -> Vec<f64> {
        let mut cur = data.to_vec();
        for k in 0..self.n.len() {
            let r = ((margin * h) / self.dx[k]).ceil() as usize;
            let kern: Vec<f64> = (0..=r).map(|j| gauss_kernel((j as f64 * self.dx[k]).powi(2), h, 1) * self.dx[k]).collect();
            let (n, s) = (self.n[k], self.strides[k]);
            let mut next = vec![0.0; cur.len()];
            for base in 0..cur.len() {
                if (base / s) % n != 0 {
                    continue;
                }
                for i in 0..n {
                    let v = cur[base + i * s];
                    if v == 0.0 {
                        continue;
                    }
                    let lo = i.saturating_sub(r);
                    let hi = (i + r).min(n - 1);
                    for j in lo..=hi {
                        next[base + j * s] += v * kern[i.abs_diff(j)];
                    }
                }
            }
            cur = next;
        }
        cur
    }
}

fn axis_std(samples: &[Vec<f64>], k: usize) -> f64 {
    let xs: Vec<f64> = samples.iter().map(|x| x[k]).collect();
    let (m, _) = mean_se(&xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&sq) / xs.len().max(2).saturating_sub(1) as f64).sqrt()
}

/// `½ ∫ |q̂_A − q̂_B|` for the bandwidth-`h` kernel densities, by tensor-grid quadrature
/// (linear binning, then separable convolution). Dimension at most 3.
pub fn tv_distance(a: &[Vec<f64>], b: &[Vec<f64>], h: f64, spec: &TvGridSpec) -> Result<TvResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    let d = a[0].len();
    if d > 3 {
        return Err(Error::Invalid(format!("grid quadrature supports d ≤ 3 (got {d}); use tv_distance_sliced")));
    }
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(Error::Dimension { what: "samples".into(), expected: d, got: 0 });
    }
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("bandwidth must be positive, got {h}")));
    }
    let pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    let mut dx = vec![0.0; d];
    for k in 0..d {
        let (mn, mx) = pooled.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), x| (l.min(x[k]), u.max(x[k])));
        lo[k] = mn - spec.margin * h;
        hi[k] = mx + spec.margin * h;
        let sd = axis_std(&pooled, k);
        let by_bw = h / spec.nodes_per_bandwidth;
        dx[k] = if sd > 0.0 { by_bw.min(sd / spec.nodes_per_std) } else { by_bw };
    }
    let count = |dx: &[f64]| -> Vec<usize> { (0..d).map(|k| ((hi[k] - lo[k]) / dx[k]).ceil() as usize + 1).collect() };
    let mut n = count(&dx);
    let mut coarsened = false;
    let total: f64 = n.iter().map(|v| *v as f64).product();
    if total > spec.max_nodes as f64 {
        let f = (total / spec.max_nodes as f64).powf(1.0 / d as f64) * 1.0001;
        for v in dx.iter_mut() {
            *v *= f;
        }
        n = count(&dx);
        coarsened = true;
    }
    let mut strides = vec![1; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * n[k + 1];
    }
    let grid = TensorGrid { lo, dx: dx.clone(), n: n.clone(), strides };
    let vol = grid.cell_volume();
    // Binned weights become densities after division by the cell volume.
    let qa: Vec<f64> = grid.convolve(&grid.bin(a), h, spec.margin).iter().map(|v| v / vol).collect();
    let qb: Vec<f64> = grid.convolve(&grid.bin(b), h, spec.margin).iter().map(|v| v / vol).collect();
    let diff: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| x - y).collect();
    let value = 0.5 * vol * pairwise_sum(&diff.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let residual = (1.0 - vol * pairwise_sum(&qa)).abs().max((1.0 - vol * pairwise_sum(&qb)).abs());

    // Influence function: s̃ = sign(q̂_A − q̂_B) ⊛ K at each sample.
    let sign: Vec<f64> = diff.iter().map(|v| if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 }).collect();
    let smooth = grid.convolve(&sign, h, spec.margin);
    let mut st = Vec::new();
    let ia: Vec<f64> = a.iter().map(|x| grid.interpolate(&smooth, x, &mut st)).collect();
    let ib: Vec<f64> = b.iter().map(|x| grid.interpolate(&smooth, x, &mut st)).collect();
    let var = |v: &[f64]| {
        let (_, se) = mean_se(v);
        if se.is_finite() {
            se * se
        } else {
            0.0
        }
    };
    let std_error = 0.5 * (var(&ia) + var(&ib)).sqrt();
    Ok(TvResult { value, std_error, residual, bandwidth: h, nodes: n, spacing: dx, coarsened, lower_bound: false })
}

/// Maximum of the one-dimensional smoothed distances over random projections; a lower
/// bound on the full-dimensional distance.
pub fn tv_distance_sliced(a: &[Vec<f64>], b: &[Vec<f64>], h: f64, slices: usize, seed: u64) -> Result<TvResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    let d = a[0].len();
    let mut rng = aux_rng(seed, u32::MAX as u64);
    let mut best: Option<TvResult> = None;
    for _ in 0..slices.max(1) {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nu = linalg::norm(&u);
        u.iter_mut().for_each(|v| *v /= nu);
        let proj = |s: &[Vec<f64>]| -> Vec<Vec<f64>> { s.iter().map(|x| vec![x.iter().zip(&u).map(|(p, q)| p * q).sum()]).collect() };
        let r = tv_distance(&proj(a), &proj(b), h, &TvGridSpec::default())?;
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    let mut r = best.expect("at least one slice");
    r.lower_bound = true;
    Ok(r)
}

/// Smooth test functions with closed-form gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TestFunction {
    Constant(f64),
    Coordinate(usize),
    Square(usize),
    /// `sin(freq · x_k)`.
    Sine { k: usize, freq: f64 },
    /// `exp(−|x − c|² / (2s²))`.
    Gauss { center: Vec<f64>, scale: f64 },
    /// `φ_v(x − c)`, compactly supported in `B(c, 2v)`.
    Bump { center: Vec<f64>, radius: f64 },
}

impl TestFunction {
    /// `const:c`, `x:k`, `sq:k`, `sin:k,f`, `gauss:c1,..,cd;s`, `bump:c1,..,cd;v`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("cannot parse test function `{s}`"));
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums = |t: &str| -> Result<Vec<f64>> { t.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect() };
        let idx = |t: &str| -> Result<usize> { t.trim().parse::<usize>().map_err(|_| bad()) };
        match head.trim() {
            "const" => Ok(Self::Constant(rest.trim().parse().map_err(|_| bad())?)),
            "x" => Ok(Self::Coordinate(idx(rest)?)),
            "sq" => Ok(Self::Square(idx(rest)?)),
            "sin" => {
                let (k, f) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::Sine { k: idx(k)?, freq: f.trim().parse().map_err(|_| bad())? })
            }
            "gauss" | "bump" => {
                let (c, v) = rest.split_once(';').ok_or_else(bad)?;
                let center = nums(c)?;
                let v: f64 = v.trim().parse().map_err(|_| bad())?;
                if !(v > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(bad());
                }
                Ok(if head.trim() == "gauss" { Self::Gauss { center, scale: v } } else { Self::Bump { center, radius: v } })
            }
            _ => Err(bad()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).0
    }

    /// `(φ, ∇φ, ∇²φ)` at `x`, the Hessian row-major.
    pub fn jet(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut hs = vec![0.0; d * d];
        let v = match self {
            Self::Constant(c) => *c,
            Self::Coordinate(k) => {
                g[*k] = 1.0;
                x[*k]
            }
            Self::Square(k) => {
                g[*k] = 2.0 * x[*k];
                hs[k * d + k] = 2.0;
                x[*k] * x[*k]
            }
            Self::Sine { k, freq } => {
                g[*k] = freq * (freq * x[*k]).cos();
                hs[k * d + k] = -freq * freq * (freq * x[*k]).sin();
                (freq * x[*k]).sin()
            }
            Self::Gauss { center, scale } => {
                let u: Vec<f64> = x.iter().zip(center).map(|(a, c)| (a - c) / scale).collect();
                let v = (-0.5 * u.iter().map(|t| t * t).sum::<f64>()).exp();
                for i in 0..d {
                    g[i] = -u[i] / scale * v;
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        hs[i * d + j] = (u[i] * u[j] - delta) / (scale * scale) * v;
                    }
                }
                v
            }
            Self::Bump { center, radius } => {
                let w: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = linalg::norm(&w);
                let phi = bump_radial(*radius, r);
                if r > *radius && r < 2.0 * radius {
                    let vv = radius * radius;
                    let s = r - radius;
                    let q = vv - s * s;
                    let g1 = -2.0 * vv * s / (q * q);
                    let g2 = -2.0 * vv / (q * q) - 8.0 * vv * s * s / (q * q * q);
                    let (d1, d2) = (phi * g1, phi * (g1 * g1 + g2));
                    for i in 0..d {
                        g[i] = d1 * w[i] / r;
                        for j in 0..d {
                            let (ui, uj) = (w[i] / r, w[j] / r);
                            let delta = if i == j { 1.0 } else { 0.0 };
                            hs[i * d + j] = d2 * ui * uj + d1 / r * (delta - ui * uj);
                        }
                    }
                }
                phi
            }
        };
        (v, g, hs)
    }
}

/// One side-by-side comparison: `E[lhs]` against `E[rhs]` with the paired z-score.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub label: String,
    pub lhs: (f64, f64),
    pub rhs: (f64, f64),
    pub diff: (f64, f64),
    pub z_score: f64,
    pub n_paths: usize,
}

impl IdentityRow {
    fn from_samples(label: String, lhs: &[f64], rhs: &[f64]) -> Self {
        let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
        let d = mean_se(&diff);
        let z = if d.1 > 0.0 { d.0 / d.1 } else if d.0 == 0.0 { 0.0 } else { f64::INFINITY };
        Self { label, lhs: mean_se(lhs), rhs: mean_se(rhs), diff: d, z_score: z, n_paths: lhs.len() }
    }
}

fn bundle_for(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, seed: u64, stream: u64, cap: DerivativeCap) -> Result<(crate::scheme::PathRecord, MalliavinBundle)> {
    let cert = law.certificate().ok_or_else(|| Error::Certificate(format!("law `{}` does not support splitting", law.id())))?;
    let p = simulate_path(psi, law, x0, grid, seed, stream)?;
    let b = MalliavinBundle::compute(&p, psi, cert, cap)?;
    Ok((p, b))
}

/// `E[X_T^k · L g(X_T)]` against `E[(σ ∇g(X_T))_k]`, i.e. `E⟨F, LG⟩ = δ E⟨DF, DG⟩`.
#[allow(clippy::too_many_arguments)]
pub fn duality_check(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, k: usize, g: &TestFunction, n_paths: usize, seed: u64, cap: DerivativeCap) -> Result<IdentityRow> {
    let d = psi.dim();
    if k >= d {
        return Err(Error::Invalid(format!("component {k} out of range for d = {d}")));
    }
    let rows: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (p, b) = bundle_for(psi, law, x0, grid, seed, i as u64, cap)?;
            let x = p.terminal();
            let (_, grad, hess) = g.jet(x);
            // L g(X) = ∇g·LX − Σ ∂_{kl}g σ_{kl}
            let mut lg: f64 = grad.iter().zip(&b.lx).map(|(a, c)| a * c).sum();
            for r in 0..d {
                for c in 0..d {
                    lg -= hess[r * d + c] * b.cov.sigma[(r, c)];
                }
            }
            let rhs: f64 = (0..d).map(|l| b.cov.sigma[(k, l)] * grad[l]).sum();
            Ok((x[k] * lg, rhs))
        })
        .collect::<Result<_>>()?;
    let (l, r): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(IdentityRow::from_samples(format!("duality x{k} vs {g:?}"), &l, &r))
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpReport {
    pub rows: Vec<IdentityRow>,
    /// Fraction of paths with `Θ > 0`.
    pub active_fraction: f64,
    pub config: serde_json::Value,
}

/// `E[∂_h φ(X_T) Θ]` against `E[φ(X_T) H(X_T, Θ)[h]]` for every test function and direction.
#[allow(clippy::too_many_arguments)]
pub fn ibp_identity_check(
    psi: &dyn SchemeMap,
    law: &dyn NoiseLaw,
    x0: &[f64],
    grid: Grid,
    thr: &Thresholds,
    tests: &[TestFunction],
    n_paths: usize,
    seed: u64,
    cap: DerivativeCap,
) -> Result<IbpReport> {
    let d = psi.dim();
    let cert = law.certificate().ok_or_else(|| Error::Certificate(format!("law `{}` does not support splitting", law.id())))?;
    cap.check(grid.steps, psi.noise_dim())?;
    // Per path: for each (test, h) the pair (lhs, rhs), plus whether Θ > 0.
    let per_path: Vec<(Vec<(f64, f64)>, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (p, b) = bundle_for(psi, law, x0, grid, seed, i as u64, cap)?;
            let x = p.terminal();
            let g_det = default_g(&b.tangent);
            let th = theta_from_parts(thr, g_det, b.cov.det_gamma, &p.z, &p.chi, cert.m_star);
            let mut out = Vec::with_capacity(tests.len() * d);
            if th.value == 0.0 {
                out.resize(tests.len() * d, (0.0, 0.0));
                return Ok((out, false));
            }
            let dth = theta_derivative(&p, &b, thr, cert.m_star, g_det, &default_g_derivative(&b))?;
            let weights: Vec<f64> = (0..d).map(|h| ibp_weight_order1(&b, th.value, &dth, h)).collect::<Result<_>>()?;
            for t in tests {
                let (v, grad, _) = t.jet(x);
                for h in 0..d {
                    out.push((grad[h] * th.value, v * weights[h]));
                }
            }
            Ok((out, true))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ti, t) in tests.iter().enumerate() {
        for h in 0..d {
            let j = ti * d + h;
            let l: Vec<f64> = per_path.iter().map(|(r, _)| r[j].0).collect();
            let r: Vec<f64> = per_path.iter().map(|(r, _)| r[j].1).collect();
            rows.push(IdentityRow::from_samples(format!("ibp {t:?} h={h}"), &l, &r));
        }
    }
    let active = per_path.iter().filter(|(_, a)| *a).count() as f64 / n_paths.max(1) as f64;
    let mut cfg = run_config(psi, law, x0, grid, n_paths, seed);
    cfg["thresholds"] = serde_json::to_value(thr).unwrap_or_default();
    Ok(IbpReport { rows, active_fraction: active, config: cfg })
}

/// Draws `n` values of `law` on stream `stream` (used by the splitting checks).
pub fn sample_law(law: &dyn NoiseLaw, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut rng = path_rng(seed, stream);
    (0..n)
        .map(|_| {
            let mut z = vec![0.0; law.dim()];
            law.sample(&mut rng as &mut dyn RngCore, &mut z);
            z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::GaussianLaw;
    use crate::scheme::{scheme_from_fn, RandomWalk};
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn rw() -> crate::scheme::SchemeRef {
        scheme_from_fn(RandomWalk(1), "rw", None).unwrap()
    }

    #[test]
    fn constant_expectation_is_exact() {
        let law = GaussianLaw::new(1).unwrap();
        let r = expectation(&*rw(), &law, &[0.0], Grid::new(0.25, 1.0).unwrap(), &|_| 1.0, 500, 1).unwrap();
        assert_eq!(r.value[0], 1.0);
        assert_eq!(r.std_error[0], 0.0);
        let r = regularized_expectation(&*rw(), &law, &[0.0], Grid::new(0.25, 1.0).unwrap(), 0.5, &|_| 1.0, 500, 1).unwrap();
        assert_eq!(r.value[0], 1.0);
    }

    #[test]
    fn martingale_and_variance_addition() {
        let law = GaussianLaw::new(1).unwrap();
        let g = Grid::new(0.25, 1.0).unwrap();
        let r = expectation(&*rw(), &law, &[0.0], g, &|x| x[0], 20_000, 3).unwrap();
        assert!(r.value[0].abs() <= 3.0 * r.std_error[0]);
        let theta = 0.5;
        let r = regularized_expectation(&*rw(), &law, &[0.5], g, theta, &|x| x[0] * x[0], 20_000, 3).unwrap();
        let want = 1.0 + g.delta.powf(2.0 * theta) + 0.25;
        assert!((r.value[0] - want).abs() <= 3.0 * r.std_error[0], "{} vs {want}", r.value[0]);
    }

    #[test]
    fn non_finite_functional_names_the_path() {
        let law = GaussianLaw::new(1).unwrap();
        let e = expectation(&*rw(), &law, &[0.0], Grid::new(0.25, 1.0).unwrap(), &|x| if x[0] > 0.0 { f64::NAN } else { 0.0 }, 50, 1).err().unwrap();
        assert!(matches!(e, Error::Estimator { .. }));
    }

    #[test]
    fn deterministic_under_thread_counts() {
        let law = GaussianLaw::new(1).unwrap();
        let g = Grid::new(0.25, 1.0).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| expectation(&*rw(), &law, &[0.0], g, &|x| x[0].sin(), 3000, 9).unwrap());
        let b = three.install(|| expectation(&*rw(), &law, &[0.0], g, &|x| x[0].sin(), 3000, 9).unwrap());
        assert_eq!(a.value[0].to_bits(), b.value[0].to_bits());
        assert_eq!(a.std_error[0].to_bits(), b.std_error[0].to_bits());
    }

    #[test]
    fn single_sample_density_and_derivative() {
        let h = 0.3;
        let s = vec![vec![0.0]];
        for y in [-0.4f64, 0.0, 0.7] {
            let n = (-(y * y) / (2.0 * h * h)).exp() / (2.0 * PI * h * h).sqrt();
            assert_relative_eq!(density(&s, h, &[y]), n, max_relative = 1e-14);
            assert_relative_eq!(density_derivative(&s, h, &[0], &[y]).unwrap(), n, max_relative = 1e-14);
            assert_relative_eq!(density_derivative(&s, h, &[1], &[y]).unwrap(), -y / (h * h) * n, max_relative = 1e-13, epsilon = 1e-15);
        }
        assert!(density_derivative(&s, h, &[5], &[0.0]).is_err());
    }

    #[test]
    fn hermite_derivatives_match_differences() {
        let samples: Vec<Vec<f64>> = sample_law(&GaussianLaw::new(2).unwrap(), 400, 1, 0);
        let h = 0.4;
        let y = [0.3, -0.2];
        let eps = 1e-4;
        for beta in [[1usize, 0], [0, 1], [2, 0], [1, 1], [2, 2], [3, 1]] {
            let mut lower = beta;
            let axis = if beta[0] > 0 { 0 } else { 1 };
            lower[axis] -= 1;
            let mut yp = y;
            let mut ym = y;
            yp[axis] += eps;
            ym[axis] -= eps;
            let fd = (density_derivative(&samples, h, &lower, &yp).unwrap() - density_derivative(&samples, h, &lower, &ym).unwrap()) / (2.0 * eps);
            let got = density_derivative(&samples, h, &beta, &y).unwrap();
            assert!((got - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{beta:?}: {got} vs {fd}");
        }
    }

    #[test]
    fn tv_identical_disjoint_and_shifted_gaussians() {
        let a = sample_law(&GaussianLaw::new(1).unwrap(), 2000, 1, 0);
        let r = tv_distance(&a, &a, 0.2, &TvGridSpec::default()).unwrap();
        assert_eq!(r.value, 0.0);
        let p = vec![vec![0.0]; 10];
        let q = vec![vec![10.0]; 10];
        let r = tv_distance(&p, &q, 1e-3, &TvGridSpec::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-6, "{}", r.value);
        assert!(r.residual < 1e-6);

        let m = 100_000;
        let a = sample_law(&GaussianLaw::new(1).unwrap(), m, 5, 0);
        let b: Vec<Vec<f64>> = sample_law(&GaussianLaw::new(1).unwrap(), m, 5, 1).into_iter().map(|x| vec![x[0] + 0.1]).collect();
        let want = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.05) - 1.0;
        let r = tv_distance(&a, &b, 0.05, &TvGridSpec::default()).unwrap();
        assert!((r.value - want).abs() < 0.01, "{} vs {want}", r.value);
        assert!(r.std_error > 0.0 && r.std_error < 0.01);
    }

    #[test]
    fn tv_rejects_high_dimension_and_slices_bound_from_below() {
        let a = sample_law(&GaussianLaw::new(4).unwrap(), 500, 1, 0);
        let b: Vec<Vec<f64>> = sample_law(&GaussianLaw::new(4).unwrap(), 500, 1, 1).into_iter().map(|x| x.iter().map(|v| v + 3.0).collect()).collect();
        assert!(tv_distance(&a, &b, 0.3, &TvGridSpec::default()).is_err());
        let r = tv_distance_sliced(&a, &b, 0.3, 32, 1).unwrap();
        assert!(r.lower_bound && r.value > 0.9 && r.value <= 1.0 + 1e-9);
    }

    #[test]
    fn test_function_jets() {
        let fs = [
            TestFunction::parse("sq:1").unwrap(),
            TestFunction::parse("sin:0,1.5").unwrap(),
            TestFunction::parse("gauss:0.1,-0.2;0.7").unwrap(),
            TestFunction::parse("bump:0.1,0.0;0.5").unwrap(),
        ];
        let x = [0.55, 0.35];
        let e = 1e-5;
        for f in &fs {
            let (_, g, hs) = f.jet(&x);
            for i in 0..2 {
                let mut p = x;
                let mut m = x;
                p[i] += e;
                m[i] -= e;
                assert_relative_eq!(g[i], (f.value(&p) - f.value(&m)) / (2.0 * e), epsilon = 1e-7);
                let (gp, gm) = (f.jet(&p).1, f.jet(&m).1);
                for j in 0..2 {
                    assert_relative_eq!(hs[j * 2 + i], (gp[j] - gm[j]) / (2.0 * e), epsilon = 1e-6);
                }
            }
        }
        assert!(TestFunction::parse("nope:1").is_err());
        assert!(TestFunction::parse("bump:0;-1").is_err());
    }

    #[test]
    fn constant_test_function_has_zero_ibp_sides() {
        let law = GaussianLaw::new(1).unwrap();
        let thr = Thresholds::manual(50.0, 50.0, 0.25).unwrap();
        let rep = ibp_identity_check(&*rw(), &law, &[0.0], Grid::new(0.25, 1.0).unwrap(), &thr, &[TestFunction::Constant(1.0)], 4000, 2, DerivativeCap::default()).unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.lhs.0, 0.0);
        assert!(row.z_score.abs() <= 3.0 && rep.active_fraction > 0.5);
    }
}
