//! Noise laws with a Lebesgue lower bound, the bump `φ_v`, and the splitting
//! `δ^{1/2} Z = χ U + (1 − χ) V`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::linalg::{mean_se, norm};

/// Rejection loops give up after this many proposals.
pub const MAX_PROPOSALS: usize = 1_000_000;

/// `φ_v(z)`: 1 on `|z| ≤ v`, `exp(1 − v²/(v² − (|z|−v)²))` on the shell, 0 beyond `2v`.
pub fn bump(v: f64, z: &[f64]) -> f64 {
    bump_radial(v, norm(z))
}

pub fn bump_radial(v: f64, r: f64) -> f64 {
    if r <= v {
        1.0
    } else if r >= 2.0 * v {
        0.0
    } else {
        let s = r - v;
        (1.0 - v * v / (v * v - s * s)).exp()
    }
}

/// `∇_z ln φ_v(z)`, taken as zero off the open shell `v < |z| < 2v`.
pub fn bump_log_gradient(v: f64, z: &[f64]) -> Vec<f64> {
    let r = norm(z);
    if r <= v || r >= 2.0 * v {
        return vec![0.0; z.len()];
    }
    let s = r - v;
    let q = v * v - s * s;
    let dr = -2.0 * v * v * s / (q * q);
    z.iter().map(|zi| dr * zi / r).collect()
}

/// Volume of the `n`-ball of radius `r`.
pub fn ball_volume(n: usize, r: f64) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) * r.powi(n as i32) / gamma(h + 1.0)
}

fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫_{R^n} φ_v(z) dz` by radial quadrature.
pub fn bump_integral(v: f64, n: usize) -> f64 {
    let shell = adaptive_simpson(&|r| bump_radial(v, r) * r.powi(n as i32 - 1), v, 2.0 * v, 1e-14 * v.powi(n as i32));
    ball_volume(n, v) + sphere_area(n) * shell
}

/// `(ε*, r*, z*, m*)` with `P(Z ∈ dz) ≥ ε* φ_{r*/2}(z − z*) dz` and `m* = ε* ∫ φ_{r*/2}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitCertificate {
    pub eps_star: f64,
    pub r_star: f64,
    pub z_star: Vec<f64>,
    pub m_star: f64,
}

impl SplitCertificate {
    pub fn new(eps_star: f64, r_star: f64, z_star: Vec<f64>) -> Result<Self> {
        if !(eps_star > 0.0 && r_star > 0.0) || z_star.iter().any(|z| !z.is_finite()) {
            return Err(Error::Certificate(format!("need eps* > 0 and r* > 0, got {eps_star}, {r_star}")));
        }
        let m_star = eps_star * bump_integral(r_star / 2.0, z_star.len());
        if !(m_star > 0.0 && m_star < 1.0) {
            return Err(Error::Certificate(format!("m* = {m_star} outside (0, 1)")));
        }
        Ok(Self { eps_star, r_star, z_star, m_star })
    }
}

/// A centred, identity-covariance law on R^N.
pub trait NoiseLaw: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Draws `Z`; returns whether the draw came from the absolutely continuous part.
    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> bool;
    /// Density of the absolutely continuous part, when known in closed form.
    fn ac_density(&self, z: &[f64]) -> Option<f64>;
    fn certificate(&self) -> Option<&SplitCertificate>;
    /// `E|Z|^p` when known exactly.
    fn exact_abs_moment(&self, p: f64) -> Option<f64>;
    fn third_moment_zero(&self) -> bool;
    /// Almost-sure bound on `|Z|`, if any.
    fn support_bound(&self) -> Option<f64> {
        None
    }
    fn params(&self) -> serde_json::Value;
}

pub type LawRef = Arc<dyn NoiseLaw>;

fn uniform_ball(rng: &mut dyn RngCore, radius: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 1 {
        out[0] = radius * (2.0 * rng.random::<f64>() - 1.0);
        return;
    }
    loop {
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
        }
        let r = norm(out);
        if r > 0.0 {
            let scale = radius * rng.random::<f64>().powf(1.0 / n as f64) / r;
            out.iter_mut().for_each(|o| *o *= scale);
            return;
        }
    }
}

/// Standard Gaussian on R^N; certificate on the ball of radius `√N` about 0.
pub struct GaussianLaw {
    n: usize,
    cert: SplitCertificate,
}

impl GaussianLaw {
    pub fn new(n: usize) -> Result<Self> {
        let r = (n as f64).sqrt();
        Self::with_radius(n, r)
    }

    pub fn with_radius(n: usize, r_star: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("noise dimension must be positive".into()));
        }
        let eps = (2.0 * PI).powf(-(n as f64) / 2.0) * (-r_star * r_star / 2.0).exp();
        Ok(Self { n, cert: SplitCertificate::new(eps, r_star, vec![0.0; n])? })
    }
}

impl NoiseLaw for GaussianLaw {
    fn id(&self) -> String {
        "gaussian".into()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> bool {
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
        }
        true
    }
    fn ac_density(&self, z: &[f64]) -> Option<f64> {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        Some((2.0 * PI).powf(-(self.n as f64) / 2.0) * (-r2 / 2.0).exp())
    }
    fn certificate(&self) -> Option<&SplitCertificate> {
        Some(&self.cert)
    }
    fn exact_abs_moment(&self, p: f64) -> Option<f64> {
        if p >= 0.0 && p.fract() == 0.0 && (p as u64) % 2 == 0 && p <= 64.0 {
            // E|Z|^{2k} = N(N+2)…(N+2k−2), exact in floating point.
            return Some((0..(p as u64) / 2).map(|j| self.n as f64 + 2.0 * j as f64).product());
        }
        let h = self.n as f64 / 2.0;
        Some(2f64.powf(p / 2.0) * gamma(h + p / 2.0) / gamma(h))
    }
    fn third_moment_zero(&self) -> bool {
        true
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n })
    }
}

/// With probability `p` uniform on the ball of radius `a`, otherwise one of the
/// atoms `±c e_i` chosen uniformly. `a² = q(N+2)/p`, `c² = N(1−q)/(1−p)` makes the
/// covariance the identity; all odd moments vanish by symmetry.
pub struct MixtureLaw {
    n: usize,
    p: f64,
    q: f64,
    a: f64,
    c: f64,
    cert: SplitCertificate,
}

impl MixtureLaw {
    pub fn new(n: usize, p: f64, q: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("noise dimension must be positive".into()));
        }
        if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
            return Err(Error::Invalid(format!("mixture weights must lie in (0,1), got p = {p}, q = {q}")));
        }
        let nf = n as f64;
        let a = (q * (nf + 2.0) / p).sqrt();
        let c = (nf * (1.0 - q) / (1.0 - p)).sqrt();
        let cert = SplitCertificate::new(p / ball_volume(n, a), a, vec![0.0; n])?;
        Ok(Self { n, p, q, a, c, cert })
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, 0.5, 0.5)
    }
}

impl NoiseLaw for MixtureLaw {
    fn id(&self) -> String {
        "mixture".into()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> bool {
        if rng.random::<f64>() < self.p {
            uniform_ball(rng, self.a, out);
            true
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
            let i = rng.random_range(0..self.n);
            out[i] = if rng.random::<bool>() { self.c } else { -self.c };
            false
        }
    }
    fn ac_density(&self, z: &[f64]) -> Option<f64> {
        Some(if norm(z) < self.a { self.p / ball_volume(self.n, self.a) } else { 0.0 })
    }
    fn certificate(&self) -> Option<&SplitCertificate> {
        Some(&self.cert)
    }
    fn exact_abs_moment(&self, p: f64) -> Option<f64> {
        let nf = self.n as f64;
        Some(self.p * nf * self.a.powf(p) / (nf + p) + (1.0 - self.p) * self.c.powf(p))
    }
    fn third_moment_zero(&self) -> bool {
        true
    }
    fn support_bound(&self) -> Option<f64> {
        Some(self.a.max(self.c))
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n, "ac_weight": self.p, "uniform_share": self.q, "radius": self.a, "atom": self.c })
    }
}

/// Uniform law on the ball of radius `√(N+2)`, so `|Z| ≤ √(N+2)` almost surely.
pub struct UniformBallLaw {
    n: usize,
    radius: f64,
    cert: SplitCertificate,
}

impl UniformBallLaw {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("noise dimension must be positive".into()));
        }
        let radius = (n as f64 + 2.0).sqrt();
        let cert = SplitCertificate::new(1.0 / ball_volume(n, radius), radius, vec![0.0; n])?;
        Ok(Self { n, radius, cert })
    }
}

impl NoiseLaw for UniformBallLaw {
    fn id(&self) -> String {
        "uniform-ball".into()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> bool {
        uniform_ball(rng, self.radius, out);
        true
    }
    fn ac_density(&self, z: &[f64]) -> Option<f64> {
        Some(if norm(z) < self.radius { 1.0 / ball_volume(self.n, self.radius) } else { 0.0 })
    }
    fn certificate(&self) -> Option<&SplitCertificate> {
        Some(&self.cert)
    }
    fn exact_abs_moment(&self, p: f64) -> Option<f64> {
        let nf = self.n as f64;
        Some(nf * self.radius.powf(p) / (nf + p))
    }
    fn third_moment_zero(&self) -> bool {
        true
    }
    fn support_bound(&self) -> Option<f64> {
        Some(self.radius)
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n, "radius": self.radius })
    }
}

/// Builds a builtin law from `gaussian`, `mixture`, `mixture:p,q` or `uniform-ball`.
pub fn parse_law(spec: &str, n: usize) -> Result<LawRef> {
    let bad = |m: &str| Error::Parse { line: 0, msg: format!("law `{spec}`: {m}") };
    let (name, args) = match spec.trim().split_once(':') {
        Some((a, b)) => (a.trim(), Some(b)),
        None => (spec.trim(), None),
    };
    match (name, args) {
        ("gaussian", None) => Ok(Arc::new(GaussianLaw::new(n)?)),
        ("uniform-ball", None) => Ok(Arc::new(UniformBallLaw::new(n)?)),
        ("mixture", None) => Ok(Arc::new(MixtureLaw::standard(n)?)),
        ("mixture", Some(a)) => {
            let v: Vec<f64> = a.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number"))).collect::<Result<_>>()?;
            if v.len() != 2 {
                return Err(bad("expected `mixture:p,q`"));
            }
            Ok(Arc::new(MixtureLaw::new(n, v[0], v[1])?))
        }
        _ => Err(bad("unknown law")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSample {
    pub chi: bool,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
}

/// Draws `(χ, U, V)` independently and sets `Z` from them, so that
/// `√δ·Z == χU + (1−χ)V` holds bit-for-bit.
pub fn sample_split(law: &dyn NoiseLaw, delta: f64, rng: &mut dyn RngCore) -> Result<SplitSample> {
    let cert = law
        .certificate()
        .ok_or_else(|| Error::Certificate(format!("law `{}` does not support splitting", law.id())))?;
    let n = law.dim();
    let sd = delta.sqrt();
    let chi = rng.random::<f64>() < cert.m_star;
    let half = cert.r_star / 2.0;

    let mut s = vec![0.0; n];
    let mut accepted = false;
    for _ in 0..MAX_PROPOSALS {
        uniform_ball(rng, cert.r_star, &mut s);
        if rng.random::<f64>() < bump(half, &s) {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Certificate("U sampler stalled".into()));
    }
    let u_raw: Vec<f64> = s.iter().zip(&cert.z_star).map(|(a, b)| a + b).collect();

    let mut v_raw = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    accepted = false;
    for _ in 0..MAX_PROPOSALS {
        let ac = law.sample(rng, &mut v_raw);
        if !ac {
            accepted = true;
            break;
        }
        let dens = law
            .ac_density(&v_raw)
            .ok_or_else(|| Error::Certificate(format!("law `{}` has no closed-form density", law.id())))?;
        for k in 0..n {
            shifted[k] = v_raw[k] - cert.z_star[k];
        }
        let lower = cert.eps_star * bump(half, &shifted);
        if lower > dens * (1.0 + 1e-12) {
            return Err(Error::Certificate(format!("residual measure negative at {v_raw:?}")));
        }
        let accept = if dens > 0.0 { 1.0 - lower / dens } else { 1.0 };
        if rng.random::<f64>() < accept {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Certificate("V sampler stalled".into()));
    }
    let u: Vec<f64> = u_raw.iter().map(|x| sd * x).collect();
    let v: Vec<f64> = v_raw.iter().map(|x| sd * x).collect();
    let z = if chi { u_raw } else { v_raw };
    Ok(SplitSample { chi, u, v, z })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moment {
    pub value: f64,
    pub std_error: Option<f64>,
    pub estimated: bool,
}

/// `𝔐_p = max(1, E|Z|^p)`; Monte Carlo with a fixed seed when no exact value exists.
pub fn moment(law: &dyn NoiseLaw, p: f64, rng: &mut dyn RngCore) -> Moment {
    if let Some(m) = law.exact_abs_moment(p) {
        return Moment { value: m.max(1.0), std_error: None, estimated: false };
    }
    let mut z = vec![0.0; law.dim()];
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            law.sample(rng, &mut z);
            norm(&z).powf(p)
        })
        .collect();
    let (m, se) = mean_se(&xs);
    Moment { value: m.max(1.0), std_error: Some(se), estimated: true }
}

#[derive(Clone, Debug, Serialize)]
pub struct LawValidation {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub worst_z_score: f64,
    pub m_star_relative_error: f64,
    pub residual_nonnegative: bool,
    pub pass: bool,
}

/// Strict-mode validation: moments within 3·SE, `m*` recomputation to 1e-6, and
/// nonnegativity of the residual measure on a probe grid.
pub fn validate_law(law: &dyn NoiseLaw, n_samples: usize, rng: &mut dyn RngCore) -> LawValidation {
    let n = law.dim();
    let mut draws = vec![vec![0.0; n]; n_samples];
    for d in draws.iter_mut() {
        law.sample(rng, d);
    }
    let mut worst: f64 = 0.0;
    let mut mean = vec![0.0; n];
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let (m, se) = mean_se(&col);
        mean[i] = m;
        worst = worst.max(m.abs() / se);
        for j in 0..n {
            let prod: Vec<f64> = draws.iter().map(|d| d[i] * d[j]).collect();
            let (c, se) = mean_se(&prod);
            cov[i][j] = c;
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((c - target).abs() / se);
        }
    }
    let (m_err, residual_ok) = match law.certificate() {
        Some(cert) => {
            let m = cert.eps_star * bump_integral(cert.r_star / 2.0, n);
            let mut ok = true;
            let steps = 40;
            let half = cert.r_star / 2.0;
            let mut probe = vec![0.0; n];
            // Probe along each axis and the main diagonal.
            for dir in 0..=n {
                for k in 0..=steps {
                    let r = cert.r_star * (2.0 * k as f64 / steps as f64 - 1.0);
                    for (i, p) in probe.iter_mut().enumerate() {
                        *p = cert.z_star[i] + if dir == n { r / (n as f64).sqrt() } else if i == dir { r } else { 0.0 };
                    }
                    let shifted: Vec<f64> = probe.iter().zip(&cert.z_star).map(|(a, b)| a - b).collect();
                    if let Some(dens) = law.ac_density(&probe) {
                        if cert.eps_star * bump(half, &shifted) > dens * (1.0 + 1e-12) {
                            ok = false;
                        }
                    }
                }
            }
            ((m - cert.m_star).abs() / cert.m_star, ok)
        }
        None => (0.0, true),
    };
    LawValidation {
        mean,
        cov,
        worst_z_score: worst,
        m_star_relative_error: m_err,
        residual_nonnegative: residual_ok,
        pass: worst <= 3.0 && m_err <= 1e-6 && residual_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;
    use approx::assert_relative_eq;

    #[test]
    fn bump_values() {
        assert_eq!(bump(1.0, &[0.0]), 1.0);
        assert_eq!(bump(1.0, &[2.0]), 0.0);
        assert_relative_eq!(bump(2.0, &[3.0]), (-1.0f64 / 3.0).exp(), epsilon = 1e-15);
        assert_relative_eq!(bump(0.5, &[0.45, 0.6]), bump_radial(0.5, 0.75), epsilon = 1e-15);
    }

    #[test]
    fn bump_is_c1_at_seams() {
        let v = 0.8;
        for r0 in [v, 2.0 * v] {
            let h = 1e-6;
            let left = (bump_radial(v, r0) - bump_radial(v, r0 - h)) / h;
            let right = (bump_radial(v, r0 + h) - bump_radial(v, r0)) / h;
            assert!((left - right).abs() < 1e-4, "{left} {right}");
        }
    }

    #[test]
    fn log_gradient_matches_finite_difference() {
        let v = 0.7;
        let z = [0.6, 0.5];
        let g = bump_log_gradient(v, &z);
        let h = 1e-6;
        for i in 0..2 {
            let (mut zp, mut zm) = (z, z);
            zp[i] += h;
            zm[i] -= h;
            let fd = (bump(v, &zp).ln() - bump(v, &zm).ln()) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} vs {fd}", g[i]);
        }
        // radial: parallel to z
        assert_relative_eq!(g[0] * z[1], g[1] * z[0], epsilon = 1e-12);
        assert_eq!(bump_log_gradient(v, &[0.1, 0.1]), vec![0.0, 0.0]);
    }

    #[test]
    fn bump_integral_oracle() {
        // Independent oracle: composite midpoint rule on a fine 1-d grid.
        let v = 0.5;
        let m = 2_000_000;
        let h = 4.0 * v / m as f64;
        let mid: f64 = (0..m).map(|k| bump_radial(v, (-2.0 * v + (k as f64 + 0.5) * h).abs()) * h).sum();
        assert_relative_eq!(bump_integral(v, 1), mid, max_relative = 1e-9);
        // 2-d: ∫ = 2π ∫ r φ(r) dr, midpoint in r.
        let mid2: f64 = (0..m / 2)
            .map(|k| {
                let r = (k as f64 + 0.5) * (2.0 * v / (m / 2) as f64);
                2.0 * PI * r * bump_radial(v, r) * (2.0 * v / (m / 2) as f64)
            })
            .sum();
        assert_relative_eq!(bump_integral(v, 2), mid2, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let g = GaussianLaw::new(1).unwrap();
        let mut rng = path_rng(1, 0);
        assert_eq!(moment(&g, 2.0, &mut rng).value, 1.0);
        assert_eq!(moment(&g, 4.0, &mut rng).value, 3.0);
        assert_relative_eq!(g.exact_abs_moment(1.0).unwrap(), (2.0 / PI).sqrt(), epsilon = 1e-14);
        let b = UniformBallLaw::new(2).unwrap();
        let zinf = b.support_bound().unwrap();
        for p in [1.0, 2.0, 5.0] {
            assert!(moment(&b, p, &mut rng).value <= zinf.powf(p).max(1.0));
        }
    }

    #[test]
    fn mixture_has_unit_variance_and_known_kurtosis() {
        let m = MixtureLaw::standard(1).unwrap();
        assert_relative_eq!(m.exact_abs_moment(2.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.exact_abs_moment(4.0).unwrap(), 1.4, epsilon = 1e-14);
    }

    #[test]
    fn split_identity_is_exact() {
        for law in [parse_law("gaussian", 2).unwrap(), parse_law("mixture", 2).unwrap(), parse_law("uniform-ball", 2).unwrap()] {
            let mut rng = path_rng(9, 1);
            for _ in 0..2000 {
                let s = sample_split(&*law, 0.01, &mut rng).unwrap();
                for k in 0..2 {
                    let lhs = 0.01f64.sqrt() * s.z[k];
                    let rhs = if s.chi { s.u[k] } else { s.v[k] };
                    assert_eq!(lhs.to_bits(), rhs.to_bits());
                }
            }
        }
    }

    #[test]
    fn builtin_laws_validate() {
        for law in [parse_law("gaussian", 1).unwrap(), parse_law("mixture", 2).unwrap(), parse_law("uniform-ball", 3).unwrap()] {
            let mut rng = path_rng(3, 0);
            let v = validate_law(&*law, 200_000, &mut rng);
            assert!(v.residual_nonnegative && v.m_star_relative_error < 1e-6, "{v:?}");
            assert!(v.worst_z_score < 4.5, "{v:?}");
        }
    }

    #[test]
    fn gaussian_split_reproduces_moments() {
        let law = GaussianLaw::new(1).unwrap();
        let mut rng = path_rng(11, 0);
        let zs: Vec<f64> = (0..1_000_000).map(|_| sample_split(&law, 0.25, &mut rng).unwrap().z[0]).collect();
        let targets = [0.0, 1.0, 0.0, 3.0];
        for (p, target) in targets.iter().enumerate() {
            let xs: Vec<f64> = zs.iter().map(|z| z.powi(p as i32 + 1)).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - target).abs() <= 3.0 * se, "moment {}: {m} ± {se}", p + 1);
        }
    }

    #[test]
    fn parse_law_rejects_garbage() {
        assert!(parse_law("cauchy", 1).is_err());
        assert!(parse_law("mixture:0.5", 1).is_err());
        assert!(parse_law("mixture:1.5,0.5", 1).is_err());
        assert!(parse_law("gaussian", 0).is_err());
    }
}
