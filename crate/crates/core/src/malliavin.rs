//! Discrete Malliavin derivatives of `X_T` along a stored path, the covariance
//! matrix, the Ornstein–Uhlenbeck image `L X_T`, Sobolev norms, the order-1
//! integration-by-parts weight and the one-step Lie-expansion residual.
//!
//! Directions `(w, i)` (step `w ∈ 1..=n`, noise coordinate `i`) are flattened to
//! `a = (w − 1)·N + i`. `D_a = χ_w ∂_{U_w^i}`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::{bump_log_gradient, SplitCertificate};
use crate::scheme::{jet1, jet2, step_jacobian, FlowPair, PathRecord, SchemeMap, StepJet1};
use crate::vectorfield::{eval, BracketFields, FieldRef};

/// Bounds on the second-order tensors, which cost `(steps·N)²·d` memory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivativeCap {
    pub max_steps: usize,
    pub max_noise: usize,
}

impl Default for DerivativeCap {
    fn default() -> Self {
        Self { max_steps: 64, max_noise: 4 }
    }
}

impl DerivativeCap {
    pub fn check(&self, steps: usize, noise: usize) -> Result<()> {
        if steps > self.max_steps || noise > self.max_noise {
            return Err(Error::ResourceCap(format!(
                "second-order Malliavin tensors need steps ≤ {} and N ≤ {}, got {steps} and {noise}",
                self.max_steps, self.max_noise
            )));
        }
        Ok(())
    }
}

/// `DX`: column `a` holds `D_a X_T ∈ R^d`.
pub fn first_derivatives(path: &PathRecord, psi: &dyn SchemeMap) -> Result<DMatrix<f64>> {
    let (d, n, steps) = (psi.dim(), psi.noise_dim(), path.steps());
    let mut dx = DMatrix::zeros(d, steps * n);
    for k in 0..steps {
        let jet = jet1(psi, &path.states[k], k as f64 * path.delta, &path.increment(k), path.delta)?;
        let active = k * n;
        let old = dx.columns(0, active).clone_owned();
        dx.columns_mut(0, active).copy_from(&(&jet.j * old));
        if path.chi[k] {
            dx.columns_mut(active, n).copy_from(&jet.b);
        }
    }
    Ok(dx)
}

/// `DX`, `DDX` (`ddx[a]` column `b` = `D_b D_a X_T`), and `DẊ_T` (`d_tangent[a]`).
pub struct SecondOrder {
    pub dx: DMatrix<f64>,
    pub ddx: Vec<DMatrix<f64>>,
    pub tangent: DMatrix<f64>,
    pub d_tangent: Vec<DMatrix<f64>>,
}

fn quad(h: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for p in 0..u.len() {
        if u[p] == 0.0 {
            continue;
        }
        for q in 0..v.len() {
            acc += h[(p, q)] * u[p] * v[q];
        }
    }
    acc
}

/// Forward recursion for first and second derivatives and the tangent-flow derivative.
pub fn second_derivatives(path: &PathRecord, psi: &dyn SchemeMap, cap: DerivativeCap) -> Result<SecondOrder> {
    let (d, n, steps) = (psi.dim(), psi.noise_dim(), path.steps());
    cap.check(steps, n)?;
    let m = steps * n;
    let mut dx = DMatrix::zeros(d, m);
    let mut ddx = vec![DMatrix::zeros(d, m); m];
    let mut tangent = DMatrix::identity(d, d);
    let mut d_tangent = vec![DMatrix::zeros(d, d); m];
    let mut col_a = vec![0.0; d];
    let mut col_b = vec![0.0; d];
    for k in 0..steps {
        let jet = jet2(psi, &path.states[k], k as f64 * path.delta, &path.increment(k), path.delta)?;
        let chi = path.chi[k];
        let lo = k * n;
        let hi = lo + n;
        // Second derivatives use DX before this step's update.
        let mut new_ddx: Vec<DMatrix<f64>> = Vec::with_capacity(m);
        for a in 0..m {
            if a >= hi {
                new_ddx.push(DMatrix::zeros(d, m));
                continue;
            }
            let mut next = &jet.j * &ddx[a];
            for (p, c) in col_a.iter_mut().enumerate() {
                *c = dx[(p, a)];
            }
            let a_now = a >= lo && chi;
            for b in 0..hi {
                for (p, c) in col_b.iter_mut().enumerate() {
                    *c = dx[(p, b)];
                }
                let b_now = b >= lo && chi;
                for kk in 0..d {
                    let mut s = quad(&jet.hxx[kk], &col_a, &col_b);
                    if a_now {
                        let i = a - lo;
                        s += (0..d).map(|p| jet.hxz[kk][(p, i)] * col_b[p]).sum::<f64>();
                    }
                    if b_now {
                        let i = b - lo;
                        s += (0..d).map(|p| jet.hxz[kk][(p, i)] * col_a[p]).sum::<f64>();
                    }
                    if a_now && b_now {
                        s += jet.hzz[kk][(a - lo, b - lo)];
                    }
                    next[(kk, b)] += s;
                }
            }
            new_ddx.push(next);
        }
        // Tangent-flow derivative.
        let mut new_dt = Vec::with_capacity(m);
        for a in 0..m {
            if a >= hi {
                new_dt.push(DMatrix::zeros(d, d));
                continue;
            }
            let mut dj = DMatrix::zeros(d, d);
            for kk in 0..d {
                for q in 0..d {
                    let mut s = 0.0;
                    for p in 0..d {
                        s += jet.hxx[kk][(q, p)] * dx[(p, a)];
                    }
                    if a >= lo && chi {
                        s += jet.hxz[kk][(q, a - lo)];
                    }
                    dj[(kk, q)] = s;
                }
            }
            new_dt.push(dj * &tangent + &jet.j * &d_tangent[a]);
        }
        let old = dx.columns(0, lo).clone_owned();
        dx.columns_mut(0, lo).copy_from(&(&jet.j * old));
        if chi {
            dx.columns_mut(lo, n).copy_from(&jet.b);
        }
        tangent = &jet.j * &tangent;
        ddx = new_ddx;
        d_tangent = new_dt;
    }
    Ok(SecondOrder { dx, ddx, tangent, d_tangent })
}

/// `D_{(w,i)}Γ_w = δ^{-1/2} χ_w ∂_i ln φ_{r*/2}(δ^{-1/2}U_w − z*)`, flattened.
pub fn gamma_weights(path: &PathRecord, cert: &SplitCertificate) -> Vec<f64> {
    let n = path.noise_dim();
    let sd = path.delta.sqrt();
    let mut out = vec![0.0; path.steps() * n];
    for k in 0..path.steps() {
        if !path.chi[k] {
            continue;
        }
        let arg: Vec<f64> = path.u[k].iter().zip(&cert.z_star).map(|(u, z)| u / sd - z).collect();
        let g = bump_log_gradient(cert.r_star / 2.0, &arg);
        for i in 0..n {
            out[k * n + i] = g[i] / sd;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Covariance {
    pub sigma: DMatrix<f64>,
    pub gamma: Option<DMatrix<f64>>,
    /// `+∞` when `σ` is singular.
    pub det_gamma: f64,
}

impl Covariance {
    pub fn from_sigma(sigma: DMatrix<f64>) -> Self {
        let det = sigma.clone().lu().determinant();
        if !(det.abs() >= 1e-300) {
            return Self { sigma, gamma: None, det_gamma: f64::INFINITY };
        }
        match sigma.clone().lu().try_inverse() {
            Some(g) => Self { sigma, gamma: Some(g), det_gamma: 1.0 / det },
            None => Self { sigma, gamma: None, det_gamma: f64::INFINITY },
        }
    }

    pub fn is_singular(&self) -> bool {
        self.gamma.is_none()
    }
}

/// `σ = δ Σ_a DX_a DX_aᵀ`.
pub fn covariance(dx: &DMatrix<f64>, delta: f64) -> Covariance {
    let s = dx * dx.transpose() * delta;
    Covariance::from_sigma((&s + s.transpose()) * 0.5)
}

/// Streaming `S_k = J_k S_{k−1} J_kᵀ + χ_k B_k B_kᵀ`, so that `σ = δ S_n`, together with
/// the tangent flow. Avoids storing `DX` on long paths.
#[derive(Clone, Debug)]
pub struct CovarianceAccumulator {
    pub s: DMatrix<f64>,
    pub tangent: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(d: usize) -> Self {
        Self { s: DMatrix::zeros(d, d), tangent: DMatrix::identity(d, d) }
    }

    pub fn push(&mut self, jet: &StepJet1, chi: bool) {
        self.s = &jet.j * &self.s * jet.j.transpose();
        if chi {
            self.s += &jet.b * jet.b.transpose();
        }
        self.tangent = &jet.j * &self.tangent;
    }

    pub fn finish(&self, delta: f64) -> Covariance {
        let s = &self.s * delta;
        Covariance::from_sigma((&s + s.transpose()) * 0.5)
    }
}

/// `L F = −δ Σ_a (D_a D_a F + D_a F · D_aΓ)`.
pub fn ou_apply(dx: &DMatrix<f64>, ddx: &[DMatrix<f64>], dgamma: &[f64], delta: f64) -> Vec<f64> {
    let d = dx.nrows();
    let mut out = vec![0.0; d];
    for (a, dg) in dgamma.iter().enumerate() {
        for k in 0..d {
            out[k] += ddx[a][(k, a)] + dx[(k, a)] * dg;
        }
    }
    out.iter().map(|v| -delta * v).collect()
}

/// Everything the order-1 weight needs, for one path.
pub struct MalliavinBundle {
    pub delta: f64,
    pub dx: DMatrix<f64>,
    pub ddx: Vec<DMatrix<f64>>,
    pub dgamma: Vec<f64>,
    pub cov: Covariance,
    pub lx: Vec<f64>,
    pub tangent: DMatrix<f64>,
    pub d_tangent: Vec<DMatrix<f64>>,
    pub flows: Option<FlowPair>,
}

impl MalliavinBundle {
    pub fn compute(path: &PathRecord, psi: &dyn SchemeMap, cert: &SplitCertificate, cap: DerivativeCap) -> Result<Self> {
        let so = second_derivatives(path, psi, cap)?;
        let dgamma = gamma_weights(path, cert);
        let cov = covariance(&so.dx, path.delta);
        let lx = ou_apply(&so.dx, &so.ddx, &dgamma, path.delta);
        Ok(Self { delta: path.delta, dx: so.dx, ddx: so.ddx, dgamma, cov, lx, tangent: so.tangent, d_tangent: so.d_tangent, flows: None })
    }

    pub fn n_directions(&self) -> usize {
        self.dgamma.len()
    }

    /// `D_a σ = δ Σ_b (DDX[a,b] DX_bᵀ + DX_b DDX[a,b]ᵀ)`.
    pub fn d_sigma(&self, a: usize) -> DMatrix<f64> {
        let m = &self.ddx[a] * self.dx.transpose() * self.delta;
        &m + m.transpose()
    }

    /// `D_a det γ = −det γ · Tr(γ D_aσ)`; `None` when `σ` is singular.
    pub fn d_det_gamma(&self) -> Option<Vec<f64>> {
        let g = self.cov.gamma.as_ref()?;
        Some((0..self.n_directions()).map(|a| -self.cov.det_gamma * (g * self.d_sigma(a)).trace()).collect())
    }

    pub fn summary(&self, stream: u64, theta: f64) -> BundleSummary {
        BundleSummary {
            stream,
            det_gamma: self.cov.det_gamma,
            lambda_min_sigma: linalg::min_eigenvalue(&self.cov.sigma),
            theta,
            lx_norm: linalg::norm(&self.lx),
        }
    }
}

/// One CSV row of bundle diagnostics, keyed by the path's stream index.
#[derive(Clone, Debug, Serialize)]
pub struct BundleSummary {
    pub stream: u64,
    pub det_gamma: f64,
    pub lambda_min_sigma: f64,
    pub theta: f64,
    pub lx_norm: f64,
}

/// `Σ_{1≤j≤q} δ^j Σ_{|α|=j} |D_α X_T|²`, square-rooted.
pub fn sobolev_seminorm(bundle: &MalliavinBundle, q: usize) -> Result<f64> {
    if q > 2 {
        return Err(Error::Invalid(format!("Sobolev norms are implemented for q ≤ 2, got {q}")));
    }
    let mut s = 0.0;
    if q >= 1 {
        s += bundle.delta * bundle.dx.norm_squared();
    }
    if q >= 2 {
        s += bundle.delta * bundle.delta * bundle.ddx.iter().map(|m| m.norm_squared()).sum::<f64>();
    }
    Ok(s.sqrt())
}

/// `(|F|² + seminorm²)^{1/2}` with `F = X_T`.
pub fn sobolev_norm(bundle: &MalliavinBundle, terminal: &[f64], q: usize) -> Result<f64> {
    let semi = sobolev_seminorm(bundle, q)?;
    Ok((linalg::norm(terminal).powi(2) + semi * semi).sqrt())
}

/// `H(F, G)[h] = G(γ LF)_h − δ Σ_{h'} ⟨D(G γ[h,h']), D F^{h'}⟩` with
/// `D γ = −γ (Dσ) γ`, so that `E[∂_h φ(F) G] = E[φ(F) H]`. The first term's sign is
/// the one forced by `L = −δ Σ (DD + DΓ·D)` and the duality `E[F·LG] = δ E⟨DF, DG⟩`.
pub fn ibp_weight_order1(bundle: &MalliavinBundle, g: f64, dg: &[f64], h: usize) -> Result<f64> {
    let gamma = bundle.cov.gamma.as_ref().ok_or_else(|| Error::Singular("Malliavin covariance (localize first)".into()))?;
    let d = bundle.dx.nrows();
    if h >= d {
        return Err(Error::Invalid(format!("basis index {h} out of range for d = {d}")));
    }
    if dg.len() != bundle.n_directions() {
        return Err(Error::Dimension { what: "DG".into(), expected: bundle.n_directions(), got: dg.len() });
    }
    let glx = gamma * linalg::dvec(&bundle.lx);
    let mut out = g * glx[h];
    if g == 0.0 && dg.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for a in 0..bundle.n_directions() {
        let dgamma_a = if g != 0.0 { Some(-(gamma * bundle.d_sigma(a) * gamma)) } else { None };
        for hp in 0..d {
            let mut v = dg[a] * gamma[(h, hp)];
            if let Some(m) = &dgamma_a {
                v += g * m[(h, hp)];
            }
            acc += v * bundle.dx[(hp, a)];
        }
    }
    out -= bundle.delta * acc;
    Ok(out)
}

/// `DX_a = χ_w Ẋ_T X̊_w ∂_{zⁱ}ψ_w`, valid when every inverse flow is defined.
pub fn variation_of_constants(path: &PathRecord, psi: &dyn SchemeMap, flows: &FlowPair) -> Result<DMatrix<f64>> {
    let (d, n, steps) = (psi.dim(), psi.noise_dim(), path.steps());
    let tangent = &flows.forward[steps];
    let mut dx = DMatrix::zeros(d, steps * n);
    for k in 0..steps {
        if !path.chi[k] {
            continue;
        }
        let inv = flows.inverse[k + 1]
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("inverse flow invalid at step {}", k + 1)))?;
        let jet = jet1(psi, &path.states[k], k as f64 * path.delta, &path.increment(k), path.delta)?;
        dx.columns_mut(k * n, n).copy_from(&(tangent * inv * &jet.b));
    }
    Ok(dx)
}

/// `𝐑 = J_k⁻¹ V(X_k, kδ) − V(X_{k−1}) − δ^{1/2} Σ Zⁱ V^[i] − δ V^[0]`, brackets at
/// `(X_{k−1}, (k−1)δ)`; `k` is 1-based.
pub fn lie_expansion_residual(path: &PathRecord, psi: &dyn SchemeMap, fields: &BracketFields, v: &FieldRef, k: usize, eta2: f64) -> Result<Vec<f64>> {
    if k == 0 || k > path.steps() {
        return Err(Error::Invalid(format!("step {k} outside 1..={}", path.steps())));
    }
    if linalg::norm(&path.z[k - 1]) >= eta2 {
        return Err(Error::Invalid(format!("step {k} is not guarded: |Z| ≥ η₂")));
    }
    let delta = path.delta;
    let (x_prev, x_now) = (&path.states[k - 1], &path.states[k]);
    let t_prev = (k - 1) as f64 * delta;
    let j = step_jacobian(psi, x_prev, t_prev, &path.increment(k - 1), delta)?;
    let jinv = linalg::inverse(&j, "step jacobian")?;
    let lhs = jinv * linalg::dvec(&eval(&**v, x_now, t_prev + delta));
    let mut r: Vec<f64> = lhs.iter().zip(eval(&**v, x_prev, t_prev)).map(|(a, b)| a - b).collect();
    let sd = delta.sqrt();
    for i in 0..fields.n_noise() {
        let vi = eval(&*fields.iterate(v, &[i + 1])?, x_prev, t_prev);
        for (rk, b) in r.iter_mut().zip(vi) {
            *rk -= sd * path.z[k - 1][i] * b;
        }
    }
    let v0 = eval(&*fields.iterate(v, &[0])?, x_prev, t_prev);
    for (rk, b) in r.iter_mut().zip(v0) {
        *rk -= delta * b;
    }
    Ok(r)
}
