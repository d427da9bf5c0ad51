//! Smooth cutoff `Ψ_v`, the thresholds `η₁(δ)`, `η₂(δ)` with the A5 feasibility
//! margins, the Hoeffding event `Λ`, the localization weight `Θ` and `DΘ`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, adjugate};
use crate::malliavin::{Covariance, MalliavinBundle};
use crate::scheme::PathRecord;

/// `Ψ_v(x)`: 1 on `|x| ≤ v − ½`, 0 on `|x| ≥ v`, `exp(1 − 1/(1 − s²))` with
/// `s = 2|x| − 2v + 1` in between.
pub fn smooth_cutoff(v: f64, x: f64) -> f64 {
    let a = x.abs();
    if a <= v - 0.5 {
        1.0
    } else if a >= v {
        0.0
    } else {
        let s = 2.0 * a - 2.0 * v + 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// `dΨ_v/dx`.
pub fn smooth_cutoff_derivative(v: f64, x: f64) -> f64 {
    let a = x.abs();
    if a <= v - 0.5 || a >= v {
        return 0.0;
    }
    let s = 2.0 * a - 2.0 * v + 1.0;
    let q = 1.0 - s * s;
    let d = -4.0 * s * (1.0 - 1.0 / q).exp() / (q * q);
    if x < 0.0 {
        -d
    } else {
        d
    }
}

/// One inequality of the feasibility report. When `log_scale` is set, `lhs` and
/// `rhs` are natural logarithms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Margin {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    pub log_scale: bool,
}

impl Margin {
    fn strict(lhs: f64, rhs: f64, log_scale: bool) -> Self {
        Self { lhs, rhs, margin: lhs - rhs, holds: lhs > rhs, log_scale }
    }
}

/// Thresholds obtained with the exponent `44/(91 − 36r)` in place of `44/91`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremVariant {
    pub r: f64,
    pub eta1: f64,
    pub eta2: f64,
}

/// Default `r` for the theorem-variant diagnostic; must lie in `(0, 1/12)`.
pub const VARIANT_R: f64 = 1.0 / 24.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    pub eta1: f64,
    pub eta2: f64,
    pub delta: f64,
    pub feasible: bool,
    pub diagnostics: BTreeMap<String, Margin>,
    pub theorem_variant: Option<TheoremVariant>,
    pub manual: bool,
}

impl Thresholds {
    /// User-chosen `η₁, η₂`; only `η > 1` is checked.
    pub fn manual(eta1: f64, eta2: f64, delta: f64) -> Result<Self> {
        if !(eta1 > 1.0 && eta2 > 1.0) {
            return Err(Error::Invalid(format!("thresholds must exceed 1, got η₁ = {eta1}, η₂ = {eta2}")));
        }
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("eta1 > 1".into(), Margin::strict(eta1, 1.0, false));
        diagnostics.insert("eta2 > 1".into(), Margin::strict(eta2, 1.0, false));
        Ok(Self { eta1, eta2, delta, feasible: true, diagnostics, theorem_variant: None, manual: true })
    }

    /// Adds the A5 lower bounds on `η₁` for Hörmander order `L` with `𝒱_L(x₀) = v_l`
    /// and `N` noise coordinates, and folds them into `feasible`.
    pub fn with_a5(mut self, horizon: f64, m_star: f64, d: usize, n: usize, l: usize, v_l: f64) -> Self {
        let (df, nf, lf) = (d as f64, n as f64, l as f64);
        let ln_eta1 = self.eta1.ln();
        let thirteen_l = 13f64.powi(l as i32);
        let mut bounds: Vec<(&str, f64)> = vec![
            ("A5: eta1 > 1", 0.0),
            ("A5: eta1 > 2^(1-d/2) d^(d/2)", (1.0 - df / 2.0) * 2f64.ln() + df / 2.0 * df.ln()),
        ];
        // 2 (T 𝒱 m* / (40 (L+1) N^{L(L+1)/2}))^{−d 13^L}
        let base3 = (horizon * v_l * m_star).ln() - (40.0 * (lf + 1.0)).ln() - lf * (lf + 1.0) / 2.0 * nf.ln();
        let b3 = if v_l > 0.0 { 2f64.ln() - df * thirteen_l * base3 } else { f64::INFINITY };
        bounds.push(("A5: hormander bound", b3));
        let b4 = if l == 0 {
            2f64.ln()
        } else {
            // 2 |m* (2^8 (1+T))^{−143} / (10 N^{L(L−1)/2})|^{−d 13^{L−1}}
            let base = m_star.ln() - 143.0 * (256.0 * (1.0 + horizon)).ln() - 10f64.ln() - lf * (lf - 1.0) / 2.0 * nf.ln();
            2f64.ln() - df * 13f64.powi(l as i32 - 1) * base
        };
        bounds.push(("A5: iteration bound", b4));
        for (name, b) in bounds {
            let m = Margin::strict(ln_eta1, b, true);
            self.feasible &= m.holds;
            self.diagnostics.insert(name.into(), m);
        }
        self
    }
}

/// `η₁(δ) = δ^{−44d/91} min(1, 10^d / (m*^d |2¹⁰(1+T³)|^{d/2}))`,
/// `η₂(δ) = min(δ^{−1/2} η₁^{−1/d}, ½ |8𝔇 δ^{1/2}|^{−1/(𝔭+1)})`.
pub fn eta_thresholds(delta: f64, d: usize, horizon: f64, m_star: f64, frak_d: f64, frak_p: f64) -> Thresholds {
    let df = d as f64;
    let k = 10f64.powf(df) / (m_star.powf(df) * (1024.0 * (1.0 + horizon.powi(3))).powf(df / 2.0));
    let eta1 = delta.powf(-df * 44.0 / 91.0) * k.min(1.0);
    let inv_guard = 0.5 * (8.0 * frak_d * delta.sqrt()).powf(-1.0 / (frak_p + 1.0));
    let eta2 = (delta.powf(-0.5) * eta1.powf(-1.0 / df)).min(inv_guard);

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("eta1 > 1".into(), Margin::strict(eta1, 1.0, false));
    diagnostics.insert("eta2 > 1".into(), Margin::strict(eta2, 1.0, false));
    // δ^{1/2} η₂^{𝔭+1} 8𝔇 < 1
    let lhs = delta.sqrt() * eta2.powf(frak_p + 1.0) * 8.0 * frak_d;
    diagnostics.insert("inversibility".into(), Margin::strict(1.0, lhs, false));
    let feasible = diagnostics.values().all(|m| m.holds);

    let r = VARIANT_R;
    let ev = 44.0 / (91.0 - 36.0 * r);
    let kv = (10f64.powf(df) / (m_star.powf(df) * (1024.0 * (1.0 + horizon.powi(3))).powf(df * ev))).min(1.0);
    let eta1_v = delta.powf(-df * ev) * kv;
    let eta2_v = delta.powf(-0.5) * eta1_v.powf(-1.0 / df);
    Thresholds {
        eta1,
        eta2,
        delta,
        feasible,
        diagnostics,
        theorem_variant: Some(TheoremVariant { r, eta1: eta1_v, eta2: eta2_v }),
        manual: false,
    }
}

/// `Λ = {(1/|T|) Σ χ_w ≥ m*/2}`.
pub fn lambda_event(chi: &[bool], m_star: f64) -> bool {
    if chi.is_empty() {
        return false;
    }
    let hits = chi.iter().filter(|c| **c).count() as f64;
    hits / chi.len() as f64 >= m_star / 2.0
}

pub fn hoeffding_indicator(path: &PathRecord, m_star: f64) -> bool {
    lambda_event(&path.chi, m_star)
}

/// `exp(−m*² |T| / 2)`.
pub fn hoeffding_bound(m_star: f64, steps: usize) -> f64 {
    (-m_star * m_star * steps as f64 / 2.0).exp()
}

/// The three factors of `Θ` and their product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaFactors {
    pub det_factor: f64,
    pub noise_factor: f64,
    pub lambda: bool,
    pub value: f64,
}

/// `Θ = Ψ_{η₁}(G det γ) · Π_w Ψ_{η₂}(|Z_w|) · 1_Λ`; a singular `σ` gives 0.
pub fn theta_from_parts(thr: &Thresholds, g: f64, det_gamma: f64, z: &[Vec<f64>], chi: &[bool], m_star: f64) -> ThetaFactors {
    let det_factor = if det_gamma.is_finite() { smooth_cutoff(thr.eta1, g * det_gamma) } else { 0.0 };
    let mut noise_factor = 1.0;
    for zw in z {
        noise_factor *= smooth_cutoff(thr.eta2, linalg::norm(zw));
        if noise_factor == 0.0 {
            break;
        }
    }
    let lambda = lambda_event(chi, m_star);
    let value = if lambda { det_factor * noise_factor } else { 0.0 };
    ThetaFactors { det_factor, noise_factor, lambda, value }
}

/// `G = det(Ẋ_T)²`.
pub fn default_g(tangent: &DMatrix<f64>) -> f64 {
    tangent.determinant().powi(2)
}

/// `D G = 2 det Ẋ · Tr(adj(Ẋ) DẊ)`.
pub fn default_g_derivative(bundle: &MalliavinBundle) -> Vec<f64> {
    let det = bundle.tangent.determinant();
    let adj = adjugate(&bundle.tangent);
    bundle.d_tangent.iter().map(|dt| 2.0 * det * (&adj * dt).trace()).collect()
}

pub fn theta_weight(path: &PathRecord, cov: &Covariance, thr: &Thresholds, m_star: f64, g: f64) -> ThetaFactors {
    theta_from_parts(thr, g, cov.det_gamma, &path.z, &path.chi, m_star)
}

/// `D_{(v,j)}Θ`, flattened like `DX`. `χ` is not differentiated, so `1_Λ` contributes nothing.
pub fn theta_derivative(path: &PathRecord, bundle: &MalliavinBundle, thr: &Thresholds, m_star: f64, g: f64, dg: &[f64]) -> Result<Vec<f64>> {
    let m = bundle.n_directions();
    if dg.len() != m {
        return Err(Error::Dimension { what: "DG".into(), expected: m, got: dg.len() });
    }
    let n = path.noise_dim();
    let mut out = vec![0.0; m];
    if !lambda_event(&path.chi, m_star) || bundle.cov.is_singular() {
        return Ok(out);
    }
    let det_gamma = bundle.cov.det_gamma;
    let arg = g * det_gamma;
    let det_factor = smooth_cutoff(thr.eta1, arg);
    let det_slope = smooth_cutoff_derivative(thr.eta1, arg);

    let norms: Vec<f64> = path.z.iter().map(|z| linalg::norm(z)).collect();
    let factors: Vec<f64> = norms.iter().map(|r| smooth_cutoff(thr.eta2, *r)).collect();
    let steps = factors.len();
    let mut prefix = vec![1.0; steps + 1];
    for w in 0..steps {
        prefix[w + 1] = prefix[w] * factors[w];
    }
    let mut suffix = vec![1.0; steps + 1];
    for w in (0..steps).rev() {
        suffix[w] = suffix[w + 1] * factors[w];
    }
    let noise_factor = prefix[steps];

    if det_slope != 0.0 && noise_factor != 0.0 {
        let ddet = bundle.d_det_gamma().expect("non-singular");
        for a in 0..m {
            out[a] += det_slope * (dg[a] * det_gamma + g * ddet[a]) * noise_factor;
        }
    }
    if det_factor != 0.0 {
        let sd = path.delta.sqrt();
        for w in 0..steps {
            if !path.chi[w] || norms[w] == 0.0 {
                continue;
            }
            let slope = smooth_cutoff_derivative(thr.eta2, norms[w]);
            if slope == 0.0 {
                continue;
            }
            let others = prefix[w] * suffix[w + 1];
            for j in 0..n {
                let dnorm = path.z[w][j] / (norms[w] * sd);
                out[w * n + j] += det_factor * slope * dnorm * others;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::malliavin::DerivativeCap;
    use crate::noise::{GaussianLaw, NoiseLaw};
    use crate::scheme::{replay_increments, scheme_from_fn, simulate_path, Grid, Quadratic, RandomWalk, SchemeMap};
    use approx::assert_relative_eq;

    #[test]
    fn cutoff_values_and_seams() {
        assert_eq!(smooth_cutoff(2.0, 0.0), 1.0);
        assert_eq!(smooth_cutoff(2.0, 2.0), 0.0);
        assert_relative_eq!(smooth_cutoff(2.0, 1.75), (-1.0f64 / 3.0).exp(), max_relative = 1e-15);
        assert_relative_eq!(smooth_cutoff(2.0, -1.75), (-1.0f64 / 3.0).exp(), max_relative = 1e-15);
        assert!(smooth_cutoff(2.0, 1.5 + 1e-6) > 1.0 - 1e-5);
        assert!(smooth_cutoff(2.0, 2.0 - 1e-3) < 1e-100);
        for &x in &[1.55, 1.7, 1.9, -1.6] {
            let h = 1e-6;
            let fd = (smooth_cutoff(2.0, x + h) - smooth_cutoff(2.0, x - h)) / (2.0 * h);
            assert_relative_eq!(smooth_cutoff_derivative(2.0, x), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn eta_regression_constant() {
        let t = eta_thresholds(2f64.powi(-20), 1, 1.0, 0.5, 1.0, 0.0);
        // 2^{20·44/91} · 10 / (0.5 · 2048^{1/2})
        let want = 2f64.powf(20.0 * 44.0 / 91.0) * 10.0 / (0.5 * 2048f64.sqrt());
        assert_relative_eq!(t.eta1, want, max_relative = 1e-14);
        assert_relative_eq!(t.eta1, 360.100_992_398_673_95, max_relative = 1e-12);
        assert_relative_eq!(t.eta2, 1024.0 / t.eta1, max_relative = 1e-14);
        assert!(t.feasible);
    }

    #[test]
    fn eta_monotone_and_infeasible_at_coarse_steps() {
        let mut prev: Option<Thresholds> = None;
        for k in 0..30 {
            let t = eta_thresholds(2f64.powi(-k), 2, 1.0, 0.3, 2.0, 1.0);
            if let Some(p) = prev {
                assert!(t.eta1 >= p.eta1);
                assert!(t.feasible >= p.feasible);
            }
            prev = Some(t);
        }
        let t = eta_thresholds(1.0, 1, 1.0, 0.5, 100.0, 0.0);
        assert!(t.eta2 <= 1.0 && !t.feasible);
        assert!(prev.unwrap().feasible);
    }

    #[test]
    fn a5_bounds_in_log_space() {
        let t = eta_thresholds(2f64.powi(-40), 2, 1.0, 0.3, 1.0, 0.0).with_a5(1.0, 0.3, 2, 1, 1, 0.5);
        let b = &t.diagnostics["A5: iteration bound"];
        assert!(b.log_scale && b.rhs.is_finite() && b.rhs > 1000.0);
        assert!(!t.feasible);
        let e = eta_thresholds(2f64.powi(-40), 1, 1.0, 0.3, 1.0, 0.0).with_a5(1.0, 0.3, 1, 1, 0, 1.0);
        assert_relative_eq!(e.diagnostics["A5: hormander bound"].rhs, 2f64.ln() + (40.0f64 / 0.3).ln(), max_relative = 1e-14);
        assert!(e.feasible);
    }

    #[test]
    fn lambda_and_theta_basics() {
        assert!(lambda_event(&[true; 8], 0.4));
        assert!(!lambda_event(&[false; 8], 0.4));
        let thr = Thresholds::manual(10.0, 5.0, 0.25).unwrap();
        let z = vec![vec![0.1], vec![-0.3]];
        let f = theta_from_parts(&thr, 1.0, 2.0, &z, &[true, true], 0.4);
        assert_eq!(f.value, 1.0);
        let f = theta_from_parts(&thr, 1.0, 2.0, &[vec![0.1], vec![6.0]], &[true, true], 0.4);
        assert_eq!(f.value, 0.0);
        let f = theta_from_parts(&thr, 1.0, f64::INFINITY, &z, &[true, true], 0.4);
        assert_eq!(f.value, 0.0);
        assert!(Thresholds::manual(1.0, 2.0, 0.1).is_err());
    }

    fn theta_of(psi: &dyn SchemeMap, path: &PathRecord, thr: &Thresholds, m_star: f64, cert: &crate::noise::SplitCertificate) -> f64 {
        let b = MalliavinBundle::compute(path, psi, cert, DerivativeCap::default()).unwrap();
        theta_weight(path, &b.cov, thr, m_star, default_g(&b.tangent)).value
    }

    #[test]
    fn theta_derivative_matches_replay_on_bridges() {
        let psi = scheme_from_fn(Quadratic, "q", None).unwrap();
        let law = GaussianLaw::new(1).unwrap();
        let cert = law.certificate().unwrap();
        let g = Grid::new(0.25, 1.0).unwrap();
        let p = (0..).map(|s| simulate_path(&*psi, &law, &[0.3], g, s, 0).unwrap()).find(|p| p.chi.iter().all(|c| *c)).unwrap();
        let b = MalliavinBundle::compute(&p, &*psi, cert, DerivativeCap::default()).unwrap();
        let g0 = default_g(&b.tangent);
        let arg = g0 * b.cov.det_gamma;
        let zmax = p.z.iter().map(|z| z[0].abs()).fold(0.0, f64::max);
        for scale in [1.0, 2.5] {
            // Put both G det γ and the largest |Z| on their bridges.
            let thr = Thresholds::manual((scale * arg + 0.25).max(1.1), zmax + 0.2, g.delta).unwrap();
            let dg: Vec<f64> = default_g_derivative(&b).iter().map(|v| v * scale).collect();
            let got = theta_derivative(&p, &b, &thr, cert.m_star, g0 * scale, &dg).unwrap();
            assert!(got.iter().any(|v| v.abs() > 1e-3));
            let h = 1e-6;
            for a in 0..p.steps() {
                let at = |eps: f64| {
                    let mut incs = p.increments();
                    incs[a][0] += eps;
                    let mut q = p.clone();
                    q.states = replay_increments(&*psi, &p.x0, p.delta, &incs);
                    q.z = incs.iter().map(|i| vec![i[0] / p.delta.sqrt()]).collect();
                    let bq = MalliavinBundle::compute(&q, &*psi, cert, DerivativeCap::default()).unwrap();
                    theta_weight(&q, &bq.cov, &thr, cert.m_star, scale * default_g(&bq.tangent)).value
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                assert!((got[a] - fd).abs() <= 1e-3 * fd.abs().max(1e-2), "a={a} {} vs {fd}", got[a]);
            }
        }
    }

    #[test]
    fn plateaus_give_zero_derivative() {
        let psi = scheme_from_fn(RandomWalk(1), "rw", None).unwrap();
        let law = GaussianLaw::new(1).unwrap();
        let cert = law.certificate().unwrap();
        let p = (0..).map(|s| simulate_path(&*psi, &law, &[0.0], Grid::new(0.25, 1.0).unwrap(), s, 0).unwrap()).find(|p| p.chi.iter().all(|c| *c)).unwrap();
        let b = MalliavinBundle::compute(&p, &*psi, cert, DerivativeCap::default()).unwrap();
        let thr = Thresholds::manual(1e3, 1e3, 0.25).unwrap();
        assert_eq!(theta_of(&*psi, &p, &thr, cert.m_star, cert), 1.0);
        let d = theta_derivative(&p, &b, &thr, cert.m_star, 1.0, &default_g_derivative(&b)).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }
}
