//! One-step maps `ψ`, the fields derived from them, path simulation on the grid
//! `δ·{0..n}`, and tangent / inverse tangent flows.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::ad::{Dual, Level, Lift, Scalar, L0, L1, L2, L3, L4, L5, L6, TOWER_DEPTH};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::noise::{sample_split, NoiseLaw};
use crate::rng::path_rng;
use crate::vectorfield::{BracketFields, DirectionalDerivative, Field, FieldRef, LinearCombination};

/// Default derivative order declared for user schemes.
pub const DEFAULT_SCHEME_ORDER: usize = 6;

/// Polynomial-growth constants `(𝔇, 𝔭, 𝔇_r, 𝔭_r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthMeta {
    pub frak_d: f64,
    pub frak_p: f64,
    pub frak_d_r: f64,
    pub frak_p_r: f64,
}

/// `ψ(x, t, z, y)` with `ψ(x, t, 0, 0) = x`.
pub trait SchemeMap: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn max_order(&self) -> usize;
    fn id(&self) -> String;
    fn growth_meta(&self) -> Option<GrowthMeta> {
        None
    }
    fn eval_l0(&self, x: &[L0], t: L0, z: &[L0], y: L0, out: &mut [L0]);
    fn eval_l1(&self, x: &[L1], t: L1, z: &[L1], y: L1, out: &mut [L1]);
    fn eval_l2(&self, x: &[L2], t: L2, z: &[L2], y: L2, out: &mut [L2]);
    fn eval_l3(&self, x: &[L3], t: L3, z: &[L3], y: L3, out: &mut [L3]);
    fn eval_l4(&self, x: &[L4], t: L4, z: &[L4], y: L4, out: &mut [L4]);
    fn eval_l5(&self, x: &[L5], t: L5, z: &[L5], y: L5, out: &mut [L5]);
    fn eval_l6(&self, x: &[L6], t: L6, z: &[L6], y: L6, out: &mut [L6]);
}

pub type SchemeRef = Arc<dyn SchemeMap>;

/// User-facing definition of `ψ`, written once for any scalar type.
pub trait SchemeFn: Send + Sync + 'static {
    /// `(d, N)`.
    fn dims(&self) -> (usize, usize);
    fn apply<S: Scalar>(&self, x: &[S], t: S, z: &[S], y: S, out: &mut [S]);
}

pub struct FnScheme<F> {
    inner: F,
    id: String,
    order: usize,
    meta: Option<GrowthMeta>,
}

impl<F: SchemeFn> FnScheme<F> {
    fn go<S: Level>(&self, x: &[S], t: S, z: &[S], y: S, out: &mut [S]) {
        self.inner.apply(x, t, z, y, out)
    }
}

impl<F: SchemeFn> SchemeMap for FnScheme<F> {
    fn dim(&self) -> usize {
        self.inner.dims().0
    }
    fn noise_dim(&self) -> usize {
        self.inner.dims().1
    }
    fn max_order(&self) -> usize {
        self.order
    }
    fn id(&self) -> String {
        self.id.clone()
    }
    fn growth_meta(&self) -> Option<GrowthMeta> {
        self.meta
    }
    scheme_levels_same!(go);
}

/// Wraps a user map, checking `ψ(x, t, 0, 0) = x` on a probe grid.
pub fn scheme_from_fn<F: SchemeFn>(f: F, id: &str, meta: Option<GrowthMeta>) -> Result<SchemeRef> {
    let s: SchemeRef = Arc::new(FnScheme { inner: f, id: id.to_string(), order: DEFAULT_SCHEME_ORDER, meta });
    check_fixed_point(&*s)?;
    Ok(s)
}

pub fn scheme_from_fn_with_order<F: SchemeFn>(f: F, id: &str, meta: Option<GrowthMeta>, order: usize) -> Result<SchemeRef> {
    let s: SchemeRef = Arc::new(FnScheme { inner: f, id: id.to_string(), order: order.min(TOWER_DEPTH), meta });
    check_fixed_point(&*s)?;
    Ok(s)
}

/// `ψ(x, t, 0, 0) = x` at a handful of probe points, to 1e-12.
pub fn check_fixed_point(psi: &dyn SchemeMap) -> Result<()> {
    let (d, n) = (psi.dim(), psi.noise_dim());
    let z = vec![0.0; n];
    let mut out = vec![0.0; d];
    for (k, scale) in [0.0, 0.5, -1.3, 2.0].iter().enumerate() {
        let x: Vec<f64> = (0..d).map(|i| scale * (1.0 + 0.37 * i as f64)).collect();
        let t = 0.25 * k as f64;
        psi.eval_l0(&x, t, &z, 0.0, &mut out);
        let err = out.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !(err <= 1e-12 * (1.0 + linalg::norm(&x))) {
            return Err(Error::Invalid(format!("scheme `{}` violates ψ(x,t,0,0) = x at x = {x:?} (error {err:e})", psi.id())));
        }
    }
    Ok(())
}

pub fn eval_psi(psi: &dyn SchemeMap, x: &[f64], t: f64, z: &[f64], y: f64) -> Vec<f64> {
    let mut out = vec![0.0; psi.dim()];
    psi.eval_l0(x, t, z, y, &mut out);
    out
}

/// `x + z` on R^n.
pub struct RandomWalk(pub usize);
impl SchemeFn for RandomWalk {
    fn dims(&self) -> (usize, usize) {
        (self.0, self.0)
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], _y: S, out: &mut [S]) {
        for i in 0..self.0 {
            out[i] = x[i] + z[i];
        }
    }
}

/// `ψ = x`.
pub struct Frozen {
    pub d: usize,
    pub n: usize,
}
impl SchemeFn for Frozen {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.n)
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, _z: &[S], _y: S, out: &mut [S]) {
        out.copy_from_slice(x);
    }
}

/// `ψ = x(1 + y)` on R (noise ignored).
pub struct LinearGrowth;
impl SchemeFn for LinearGrowth {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, _z: &[S], y: S, out: &mut [S]) {
        out[0] = x[0] * (y + 1.0);
    }
}

/// `ψ = x + z + x²y/2` on R.
pub struct Quadratic;
impl SchemeFn for Quadratic {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], y: S, out: &mut [S]) {
        out[0] = x[0] + z[0] + x[0] * x[0] * y * 0.5;
    }
}

/// `(S⁰, …, S^h)`: `S⁰ ← S⁰ + z`, `S^k ← S^k + y·S^{k−1}` using the updated lower level.
pub struct IteratedSums(pub usize);
impl SchemeFn for IteratedSums {
    fn dims(&self) -> (usize, usize) {
        (self.0 + 1, 1)
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], y: S, out: &mut [S]) {
        out[0] = x[0] + z[0];
        for k in 1..=self.0 {
            out[k] = x[k] + y * out[k - 1];
        }
    }
}

/// `ψ = x + V₀(x,t)y + Σ V_i(x,t)zⁱ`.
pub struct EulerScheme {
    v0: FieldRef,
    vs: Vec<FieldRef>,
    id: String,
    order: usize,
    meta: Option<GrowthMeta>,
}

impl EulerScheme {
    fn go<S: Level>(&self, x: &[S], t: S, z: &[S], y: S, out: &mut [S]) {
        let d = self.v0.dim();
        let mut tmp = vec![S::zero(); d];
        S::field(&*self.v0, x, t, &mut tmp);
        for k in 0..d {
            out[k] = x[k] + tmp[k] * y;
        }
        for (i, v) in self.vs.iter().enumerate() {
            S::field(&**v, x, t, &mut tmp);
            for k in 0..d {
                out[k] += tmp[k] * z[i];
            }
        }
    }
}

impl SchemeMap for EulerScheme {
    fn dim(&self) -> usize {
        self.v0.dim()
    }
    fn noise_dim(&self) -> usize {
        self.vs.len()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    fn id(&self) -> String {
        self.id.clone()
    }
    fn growth_meta(&self) -> Option<GrowthMeta> {
        self.meta
    }
    scheme_levels_same!(go);
}

pub fn euler_scheme_from_fields(v0: FieldRef, vs: Vec<FieldRef>, id: &str) -> Result<SchemeRef> {
    euler_scheme_with_meta(v0, vs, id, None)
}

pub fn euler_scheme_with_meta(v0: FieldRef, vs: Vec<FieldRef>, id: &str, meta: Option<GrowthMeta>) -> Result<SchemeRef> {
    for v in &vs {
        check_dim("euler scheme fields", v0.dim(), v.dim())?;
    }
    let order = vs.iter().map(|v| v.max_order()).fold(v0.max_order(), usize::min);
    if order < 2 {
        return Err(Error::Capability { what: "euler_scheme_from_fields".into(), required: 2, available: order });
    }
    let s: SchemeRef = Arc::new(EulerScheme { v0, vs, id: id.to_string(), order, meta });
    check_fixed_point(&*s)?;
    Ok(s)
}

#[derive(Clone, Copy)]
enum Slot {
    Z(usize),
    Y,
}

/// `(x, t) ↦ ∂_{slot}ψ(x, t, 0, 0)`.
struct SchemeDerivativeField {
    psi: SchemeRef,
    slot: Slot,
    order: usize,
}

impl SchemeDerivativeField {
    fn go<S: Lift>(&self, x: &[S], t: S, out: &mut [S]) {
        let n = self.psi.noise_dim();
        let xs: Vec<S::Up> = x.iter().map(|&v| v.up()).collect();
        let mut zs = vec![S::Up::zero(); n];
        let mut ys = S::Up::zero();
        match self.slot {
            Slot::Z(i) => zs[i] = S::zero().seeded(S::one()),
            Slot::Y => ys = S::zero().seeded(S::one()),
        }
        let mut o = vec![S::Up::zero(); self.psi.dim()];
        S::Up::scheme(&*self.psi, &xs, t.up(), &zs, ys, &mut o);
        for (oi, ui) in out.iter_mut().zip(o) {
            *oi = S::tangent(ui);
        }
    }
}

impl Field for SchemeDerivativeField {
    fn dim(&self) -> usize {
        self.psi.dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_lifted!(go);
}

/// `(x, t, z, y) ↦ ∂_{zⁱ}ψ(x, t, z, y)`, itself a (non-fixed-point) map.
struct SchemeZPartial {
    psi: SchemeRef,
    i: usize,
    order: usize,
}

impl SchemeZPartial {
    fn go<S: Lift>(&self, x: &[S], t: S, z: &[S], y: S, out: &mut [S]) {
        let xs: Vec<S::Up> = x.iter().map(|&v| v.up()).collect();
        let zs: Vec<S::Up> = z.iter().enumerate().map(|(k, &v)| if k == self.i { v.seeded(S::one()) } else { v.up() }).collect();
        let mut o = vec![S::Up::zero(); self.psi.dim()];
        S::Up::scheme(&*self.psi, &xs, t.up(), &zs, y.up(), &mut o);
        for (oi, ui) in out.iter_mut().zip(o) {
            *oi = S::tangent(ui);
        }
    }
}

impl SchemeMap for SchemeZPartial {
    fn dim(&self) -> usize {
        self.psi.dim()
    }
    fn noise_dim(&self) -> usize {
        self.psi.noise_dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    fn id(&self) -> String {
        format!("d_z{}({})", self.i, self.psi.id())
    }
    scheme_levels_lifted!(go);
}

fn derivative_field(psi: SchemeRef, slot: Slot) -> Result<FieldRef> {
    let order = psi
        .max_order()
        .checked_sub(1)
        .ok_or_else(|| Error::Capability { what: "fields_from_scheme".into(), required: 1, available: 0 })?;
    Ok(Arc::new(SchemeDerivativeField { psi, slot, order }))
}

/// `Ṽ₀`, `V₀`, `V_i` and `V̄₀` derived from `ψ`.
#[derive(Clone)]
pub struct SchemeFields {
    pub v0_tilde: FieldRef,
    pub v0: FieldRef,
    pub noise: Vec<FieldRef>,
    pub v0_bar: FieldRef,
}

impl SchemeFields {
    pub fn bracket_fields(&self) -> BracketFields {
        BracketFields { drift_bar: self.v0_bar.clone(), noise: self.noise.clone() }
    }
}

pub fn fields_from_scheme(psi: &SchemeRef) -> Result<SchemeFields> {
    if psi.max_order() < 2 {
        return Err(Error::Capability { what: "fields_from_scheme".into(), required: 2, available: psi.max_order() });
    }
    let n = psi.noise_dim();
    let v0_tilde = derivative_field(psi.clone(), Slot::Y)?;
    let noise: Vec<FieldRef> = (0..n).map(|i| derivative_field(psi.clone(), Slot::Z(i))).collect::<Result<_>>()?;
    let mut terms = vec![(1.0, v0_tilde.clone())];
    for i in 0..n {
        let partial: SchemeRef = Arc::new(SchemeZPartial { psi: psi.clone(), i, order: psi.max_order() - 1 });
        terms.push((-0.5, derivative_field(partial, Slot::Z(i))?));
    }
    let v0 = LinearCombination::new(terms)?;
    let mut bar = vec![(1.0, v0.clone())];
    for v in &noise {
        bar.push((-0.5, DirectionalDerivative::new(v.clone(), v.clone())?));
    }
    let v0_bar = LinearCombination::new(bar)?;
    Ok(SchemeFields { v0_tilde, v0, noise, v0_bar })
}

/// Integer-step grid `δ·{0, …, steps}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub delta: f64,
    pub steps: usize,
}

impl Grid {
    /// Requires `0 < δ ≤ 1` and `T/δ` an integer (to 1e-9 relative).
    pub fn new(delta: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Grid(format!("delta = {delta} outside (0, 1]")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Grid(format!("horizon = {horizon} must be finite and nonnegative")));
        }
        let r = horizon / delta;
        let k = r.round();
        if (r - k).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Grid(format!("horizon {horizon} is not on the grid of step {delta}")));
        }
        Ok(Self { delta, steps: k as usize })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }
}

/// One simulated trajectory with its split noise. Index `k` of `z`, `chi`, `u`, `v`
/// refers to grid time `(k+1)δ`; `states[k]` is `X_{kδ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub delta: f64,
    pub x0: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub chi: Vec<bool>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub seed: u64,
    pub stream: u64,
    pub law_id: String,
    pub scheme_id: String,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.z.len()
    }
    pub fn dim(&self) -> usize {
        self.x0.len()
    }
    pub fn noise_dim(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }
    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.delta
    }
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("path has at least X_0")
    }
    /// `√δ Z_{k+1}`, the increment fed to `ψ` at step `k`.
    pub fn increment(&self, k: usize) -> Vec<f64> {
        let sd = self.delta.sqrt();
        self.z[k].iter().map(|z| sd * z).collect()
    }
    pub fn increments(&self) -> Vec<Vec<f64>> {
        (0..self.steps()).map(|k| self.increment(k)).collect()
    }
}

/// Simulates one path with the full split tuple, drawing from stream `stream` of `seed`.
pub fn simulate_path(psi: &dyn SchemeMap, law: &dyn NoiseLaw, x0: &[f64], grid: Grid, seed: u64, stream: u64) -> Result<PathRecord> {
    check_dim("x0", psi.dim(), x0.len())?;
    check_dim("law dimension", psi.noise_dim(), law.dim())?;
    let mut rng = path_rng(seed, stream);
    let sd = grid.delta.sqrt();
    let mut rec = PathRecord {
        delta: grid.delta,
        x0: x0.to_vec(),
        states: Vec::with_capacity(grid.steps + 1),
        z: Vec::with_capacity(grid.steps),
        chi: Vec::with_capacity(grid.steps),
        u: Vec::with_capacity(grid.steps),
        v: Vec::with_capacity(grid.steps),
        seed,
        stream,
        law_id: law.id(),
        scheme_id: psi.id(),
    };
    rec.states.push(x0.to_vec());
    let mut out = vec![0.0; psi.dim()];
    for k in 0..grid.steps {
        let s = sample_split(law, grid.delta, &mut rng)?;
        let inc: Vec<f64> = s.z.iter().map(|z| sd * z).collect();
        psi.eval_l0(&rec.states[k], grid.time(k), &inc, grid.delta, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1, time: grid.time(k + 1) });
        }
        rec.states.push(out.clone());
        rec.z.push(s.z);
        rec.chi.push(s.chi);
        rec.u.push(s.u);
        rec.v.push(s.v);
    }
    Ok(rec)
}

/// Replays `X` from `x0` and explicit increments `√δ Z`.
pub fn replay_increments(psi: &dyn SchemeMap, x0: &[f64], delta: f64, incs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut states = Vec::with_capacity(incs.len() + 1);
    states.push(x0.to_vec());
    let mut out = vec![0.0; psi.dim()];
    for (k, inc) in incs.iter().enumerate() {
        psi.eval_l0(&states[k], k as f64 * delta, inc, delta, &mut out);
        states.push(out.clone());
    }
    states
}

pub fn replay(psi: &dyn SchemeMap, path: &PathRecord) -> Vec<Vec<f64>> {
    replay_increments(psi, &path.x0, path.delta, &path.increments())
}

/// First-order jet of `ψ` at one step: `J = ∇_xψ`, `B = ∂_zψ`.
#[derive(Clone, Debug)]
pub struct StepJet1 {
    pub j: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Second-order jet: adds `hxx[k][(p,q)] = ∂²ψᵏ/∂x_p∂x_q`, `hxz[k][(p,i)]`, `hzz[k][(i,j)]`.
#[derive(Clone, Debug)]
pub struct StepJet2 {
    pub j: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub hxx: Vec<DMatrix<f64>>,
    pub hxz: Vec<DMatrix<f64>>,
    pub hzz: Vec<DMatrix<f64>>,
}

fn require(psi: &dyn SchemeMap, order: usize, what: &str) -> Result<()> {
    if psi.max_order() < order {
        return Err(Error::Capability { what: what.to_string(), required: order, available: psi.max_order() });
    }
    Ok(())
}

pub fn jet1(psi: &dyn SchemeMap, x: &[f64], t: f64, z: &[f64], y: f64) -> Result<StepJet1> {
    require(psi, 1, "scheme jet (order 1)")?;
    let (d, n) = (psi.dim(), psi.noise_dim());
    let mut xs: Vec<L1> = x.iter().map(|&v| L1::lift(v)).collect();
    let mut zs: Vec<L1> = z.iter().map(|&v| L1::lift(v)).collect();
    let mut out = vec![L1::lift(0.0); d];
    let mut j = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, n);
    for p in 0..d + n {
        if p < d { xs[p].eps = 1.0 } else { zs[p - d].eps = 1.0 }
        psi.eval_l1(&xs, L1::lift(t), &zs, L1::lift(y), &mut out);
        if p < d { xs[p].eps = 0.0 } else { zs[p - d].eps = 0.0 }
        for k in 0..d {
            if p < d { j[(k, p)] = out[k].eps } else { b[(k, p - d)] = out[k].eps }
        }
    }
    Ok(StepJet1 { j, b })
}

/// `∇_xψ` only.
pub fn step_jacobian(psi: &dyn SchemeMap, x: &[f64], t: f64, z: &[f64], y: f64) -> Result<DMatrix<f64>> {
    require(psi, 1, "step jacobian")?;
    let d = psi.dim();
    let mut xs: Vec<L1> = x.iter().map(|&v| L1::lift(v)).collect();
    let zs: Vec<L1> = z.iter().map(|&v| L1::lift(v)).collect();
    let mut out = vec![L1::lift(0.0); d];
    let mut j = DMatrix::zeros(d, d);
    for p in 0..d {
        xs[p].eps = 1.0;
        psi.eval_l1(&xs, L1::lift(t), &zs, L1::lift(y), &mut out);
        xs[p].eps = 0.0;
        for k in 0..d {
            j[(k, p)] = out[k].eps;
        }
    }
    Ok(j)
}

pub fn jet2(psi: &dyn SchemeMap, x: &[f64], t: f64, z: &[f64], y: f64) -> Result<StepJet2> {
    require(psi, 2, "scheme jet (order 2)")?;
    let (d, n) = (psi.dim(), psi.noise_dim());
    let m = d + n;
    let w: Vec<f64> = x.iter().chain(z).copied().collect();
    let mut j = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, n);
    let mut hxx = vec![DMatrix::zeros(d, d); d];
    let mut hxz = vec![DMatrix::zeros(d, n); d];
    let mut hzz = vec![DMatrix::zeros(n, n); d];
    let mut out = vec![L2::lift(L1::lift(0.0)); d];
    let tt = L2::lift(L1::lift(t));
    let yy = L2::lift(L1::lift(y));
    for a in 0..m {
        for c in a..m {
            let ws: Vec<L2> = (0..m)
                .map(|k| Dual::new(L1::new(w[k], if k == a { 1.0 } else { 0.0 }), L1::new(if k == c { 1.0 } else { 0.0 }, 0.0)))
                .collect();
            psi.eval_l2(&ws[..d], tt, &ws[d..], yy, &mut out);
            for k in 0..d {
                let h = out[k].eps.eps;
                if c == a {
                    let g = out[k].re.eps;
                    if a < d { j[(k, a)] = g } else { b[(k, a - d)] = g }
                }
                match (a < d, c < d) {
                    (true, true) => {
                        hxx[k][(a, c)] = h;
                        hxx[k][(c, a)] = h;
                    }
                    (true, false) => hxz[k][(a, c - d)] = h,
                    (false, false) => {
                        hzz[k][(a - d, c - d)] = h;
                        hzz[k][(c - d, a - d)] = h;
                    }
                    (false, true) => unreachable!("c >= a"),
                }
            }
        }
    }
    Ok(StepJet2 { j, b, hxx, hxz, hzz })
}

/// Tangent flow `Ẋ_k` and guarded inverse flow `X̊_k`, `k = 0..=steps`.
#[derive(Clone, Debug)]
pub struct FlowPair {
    pub forward: Vec<DMatrix<f64>>,
    /// `None` once the guard failed at or before that step.
    pub inverse: Vec<Option<DMatrix<f64>>>,
    /// Last step index whose inverse is valid.
    pub valid_up_to: usize,
    /// First invalid step, if any.
    pub first_invalid: Option<usize>,
    /// The per-step Neumann criterion stood in for missing growth metadata.
    pub heuristic: bool,
}

/// `Ẋ_k = ∇_xψ(X_{k−1}, (k−1)δ, √δZ_k, δ) Ẋ_{k−1}`.
pub fn tangent_flow(path: &PathRecord, psi: &dyn SchemeMap) -> Result<Vec<DMatrix<f64>>> {
    let d = psi.dim();
    let mut flows = vec![DMatrix::identity(d, d)];
    for k in 0..path.steps() {
        let j = step_jacobian(psi, &path.states[k], k as f64 * path.delta, &path.increment(k), path.delta)?;
        let next = &j * flows.last().expect("nonempty");
        flows.push(next);
    }
    Ok(flows)
}

/// Step `k` (1-based) is guarded when `|Z_k| < η₂` and `∇_xψ` is numerically invertible;
/// without growth metadata also `‖I − ∇_xψ‖_F < 1`.
pub fn inverse_tangent_flow(path: &PathRecord, psi: &dyn SchemeMap, eta2: f64) -> Result<FlowPair> {
    let d = psi.dim();
    let heuristic = match psi.growth_meta() {
        Some(g) => {
            let lhs = path.delta.sqrt() * eta2.powf(g.frak_p + 1.0) * 8.0 * g.frak_d;
            if !(lhs < 1.0) {
                return Err(Error::Invalid(format!("invertibility guard fails: δ^(1/2)·η₂^(𝔭+1)·8𝔇 = {lhs} ≥ 1")));
            }
            false
        }
        None => true,
    };
    let mut forward = vec![DMatrix::identity(d, d)];
    let mut inverse = vec![Some(DMatrix::identity(d, d))];
    let mut first_invalid = None;
    let id = DMatrix::<f64>::identity(d, d);
    for k in 0..path.steps() {
        let j = step_jacobian(psi, &path.states[k], k as f64 * path.delta, &path.increment(k), path.delta)?;
        forward.push(&j * forward.last().expect("nonempty"));
        let prev = inverse.last().expect("nonempty").clone();
        let next = prev.and_then(|p| {
            if linalg::norm(&path.z[k]) >= eta2 {
                return None;
            }
            if heuristic && (&id - &j).norm() >= 1.0 {
                return None;
            }
            linalg::inverse(&j, "step jacobian").ok().map(|ji| p * ji)
        });
        if next.is_none() && first_invalid.is_none() {
            first_invalid = Some(k + 1);
        }
        inverse.push(next);
    }
    let valid_up_to = first_invalid.map_or(path.steps(), |k| k - 1);
    Ok(FlowPair { forward, inverse, valid_up_to, first_invalid, heuristic })
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientBoundReport {
    pub pass: bool,
    pub worst: f64,
    /// `δ^{1/2}·4𝔇·max(η₂^{𝔭+1}, 1)` when growth metadata is present.
    pub bound: Option<f64>,
    pub heuristic: bool,
}

/// Worst `‖I − ∇_xψ(x, t, z, δ)‖_F` over probes `(x, t)` and `|z| ≤ δ^{1/2}η₂` along the
/// coordinate axes and diagonals. Passes when the worst deviation is at most ½, which
/// keeps the Neumann series for the inverse convergent with margin.
pub fn step_gradient_bound_check(psi: &dyn SchemeMap, delta: f64, eta2: f64, probes: &[(Vec<f64>, f64)]) -> Result<GradientBoundReport> {
    let (d, n) = (psi.dim(), psi.noise_dim());
    let rmax = delta.sqrt() * eta2;
    let mut dirs: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            dirs.push(e);
        }
    }
    for s in [-1.0, 1.0] {
        dirs.push(vec![s / (n as f64).sqrt(); n]);
    }
    let id = DMatrix::<f64>::identity(d, d);
    let mut worst: f64 = 0.0;
    for (x, t) in probes {
        check_dim("probe point", d, x.len())?;
        for dir in &dirs {
            for frac in [0.25, 0.5, 0.75, 1.0] {
                let z: Vec<f64> = dir.iter().map(|e| e * rmax * frac).collect();
                let j = step_jacobian(psi, x, *t, &z, delta)?;
                worst = worst.max((&id - j).norm());
            }
        }
    }
    let bound = psi.growth_meta().map(|g| delta.sqrt() * 4.0 * g.frak_d * eta2.powf(g.frak_p + 1.0).max(1.0));
    Ok(GradientBoundReport { pass: worst <= 0.5, worst, bound, heuristic: bound.is_none() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::GaussianLaw;
    use crate::vectorfield::{eval, from_fn, KineticDiffusion, KineticDrift, Profile};
    use approx::assert_relative_eq;

    fn kinetic() -> SchemeRef {
        let b = Profile::Sum(vec![Profile::Poly(vec![0.1, -1.0]), Profile::Sine { offset: 0.0, amp: 0.3, freq: 2.0 }]);
        let s = Profile::Poly(vec![1.0, 0.2]);
        euler_scheme_from_fields(from_fn(KineticDrift(b)), vec![from_fn(KineticDiffusion(s))], "kinetic").unwrap()
    }

    #[test]
    fn fixed_point_violation_is_rejected() {
        struct Bad;
        impl SchemeFn for Bad {
            fn dims(&self) -> (usize, usize) {
                (1, 1)
            }
            fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], _y: S, out: &mut [S]) {
                out[0] = x[0] + z[0] + 1.0;
            }
        }
        assert!(scheme_from_fn(Bad, "bad", None).is_err());
    }

    #[test]
    fn random_walk_fields() {
        let psi = scheme_from_fn(RandomWalk(1), "rw", None).unwrap();
        let f = fields_from_scheme(&psi).unwrap();
        assert_eq!(eval(&*f.v0, &[0.3], 0.0), vec![0.0]);
        assert_eq!(eval(&*f.noise[0], &[0.3], 0.0), vec![1.0]);
        assert_eq!(eval(&*f.v0_bar, &[0.3], 0.0), vec![0.0]);
    }

    #[test]
    fn euler_round_trip_recovers_fields() {
        let b = Profile::Sine { offset: 0.1, amp: 0.4, freq: 1.5 };
        let s = Profile::Poly(vec![0.5, 0.3, -0.2]);
        let v0 = from_fn(KineticDrift(b));
        let v1 = from_fn(KineticDiffusion(s));
        let psi = euler_scheme_from_fields(v0.clone(), vec![v1.clone()], "k").unwrap();
        let f = fields_from_scheme(&psi).unwrap();
        for x in [[0.0, 0.0], [0.7, -1.2], [-2.0, 3.0]] {
            for t in [0.0, 0.6] {
                for (a, b) in [(&f.v0, &v0), (&f.v0_tilde, &v0), (&f.noise[0], &v1)] {
                    let (ea, eb) = (eval(&**a, &x, t), eval(&**b, &x, t));
                    for k in 0..2 {
                        assert!((ea[k] - eb[k]).abs() <= 1e-12, "{ea:?} {eb:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn nonlinear_map_fields_by_hand() {
        // ψ = x + sin(x) z + z²/2 + x y: V₁ = sin x, Ṽ₀ = x, V₀ = x − 1/2,
        // V̄₀ = V₀ − ½ cos x sin x.
        struct Nl;
        impl SchemeFn for Nl {
            fn dims(&self) -> (usize, usize) {
                (1, 1)
            }
            fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], y: S, out: &mut [S]) {
                out[0] = x[0] + x[0].sin() * z[0] + z[0] * z[0] * 0.5 + x[0] * y;
            }
        }
        let psi = scheme_from_fn(Nl, "nl", None).unwrap();
        let f = fields_from_scheme(&psi).unwrap();
        let x = 0.8f64;
        assert_relative_eq!(eval(&*f.noise[0], &[x], 0.0)[0], x.sin(), epsilon = 1e-15);
        assert_relative_eq!(eval(&*f.v0_tilde, &[x], 0.0)[0], x, epsilon = 1e-15);
        assert_relative_eq!(eval(&*f.v0, &[x], 0.0)[0], x - 0.5, epsilon = 1e-15);
        assert_relative_eq!(eval(&*f.v0_bar, &[x], 0.0)[0], x - 0.5 - 0.5 * x.cos() * x.sin(), epsilon = 1e-15);
    }

    #[test]
    fn grid_checks_are_integer() {
        assert_eq!(Grid::new(0.25, 1.0).unwrap().steps, 4);
        assert_eq!(Grid::new(1.0 / 3.0, 1.0).unwrap().steps, 3);
        assert!(Grid::new(0.3, 1.0).is_err());
        assert!(Grid::new(0.0, 1.0).is_err());
        assert!(Grid::new(2.0, 2.0).is_err());
    }

    #[test]
    fn frozen_path_is_constant() {
        let psi = scheme_from_fn(Frozen { d: 2, n: 1 }, "frozen", None).unwrap();
        let law = GaussianLaw::new(1).unwrap();
        let p = simulate_path(&*psi, &law, &[1.0, -2.0], Grid::new(0.125, 1.0).unwrap(), 5, 0).unwrap();
        assert!(p.states.iter().all(|s| s == &vec![1.0, -2.0]));
    }

    #[test]
    fn simulation_is_bit_identical_and_replayable() {
        let psi = kinetic();
        let law = GaussianLaw::new(1).unwrap();
        let g = Grid::new(1.0 / 64.0, 1.0).unwrap();
        let a = simulate_path(&*psi, &law, &[0.2, 0.1], g, 42, 3).unwrap();
        let b = simulate_path(&*psi, &law, &[0.2, 0.1], g, 42, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay(&*psi, &a), a.states);
        // X²_T − x0² = δ Σ X¹ over the first n grid points.
        let s: f64 = a.states[..g.steps].iter().map(|x| x[0]).sum();
        assert_relative_eq!(a.terminal()[1] - 0.1, g.delta * s, epsilon = 1e-12);
    }

    #[test]
    fn linear_growth_flows() {
        let psi = scheme_from_fn(LinearGrowth, "lin", None).unwrap();
        let law = GaussianLaw::new(1).unwrap();
        let g = Grid::new(1.0 / 32.0, 1.0).unwrap();
        let p = simulate_path(&*psi, &law, &[1.0], g, 1, 0).unwrap();
        let fp = inverse_tangent_flow(&p, &*psi, 1e9).unwrap();
        let want = (1.0 + g.delta).powi(32);
        assert_relative_eq!(fp.forward[32][(0, 0)], want, max_relative = 1e-13);
        assert_relative_eq!(fp.inverse[32].as_ref().unwrap()[(0, 0)], 1.0 / want, max_relative = 1e-13);
    }

    #[test]
    fn random_walk_flows_are_identity() {
        let psi = scheme_from_fn(RandomWalk(2), "rw", None).unwrap();
        let law = GaussianLaw::new(2).unwrap();
        let p = simulate_path(&*psi, &law, &[0.0, 0.0], Grid::new(0.25, 1.0).unwrap(), 1, 0).unwrap();
        let fp = inverse_tangent_flow(&p, &*psi, 1e9).unwrap();
        for (f, i) in fp.forward.iter().zip(&fp.inverse) {
            assert_eq!(f, &DMatrix::identity(2, 2));
            assert_eq!(i.as_ref().unwrap(), &DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn guard_marks_large_noise_and_stays_invalid() {
        let psi = kinetic();
        let law = GaussianLaw::new(1).unwrap();
        let p = simulate_path(&*psi, &law, &[0.0, 0.0], Grid::new(1.0 / 16.0, 1.0).unwrap(), 7, 0).unwrap();
        let eta2 = p.z.iter().map(|z| z[0].abs()).fold(0.0, f64::max) * 0.999;
        let fp = inverse_tangent_flow(&p, &*psi, eta2).unwrap();
        let k = fp.first_invalid.unwrap();
        assert!(fp.inverse[k..].iter().all(Option::is_none));
        assert!(fp.inverse[..k].iter().all(Option::is_some));
        assert!(fp.heuristic);
    }

    #[test]
    fn jets_agree_with_each_other() {
        let psi = kinetic();
        let (x, z) = ([0.4, -0.3], [0.2]);
        let j1 = jet1(&*psi, &x, 0.1, &z, 0.05).unwrap();
        let j2 = jet2(&*psi, &x, 0.1, &z, 0.05).unwrap();
        assert_eq!(j1.j, j2.j);
        assert_eq!(j1.b, j2.b);
        assert_eq!(step_jacobian(&*psi, &x, 0.1, &z, 0.05).unwrap(), j1.j);
        // ψ¹ = x¹ + b(x¹)y + σ(x¹)z: ∂²/∂x¹∂z = σ' = 0.2.
        assert_relative_eq!(j2.hxz[0][(0, 0)], 0.2, epsilon = 1e-15);
        assert_eq!(j2.hzz[0][(0, 0)], 0.0);
    }

    #[test]
    fn gradient_bound_check() {
        let probes = vec![(vec![0.0, 0.0], 0.0), (vec![1.0, -1.0], 0.5)];
        let rw = scheme_from_fn(RandomWalk(2), "rw", None).unwrap();
        let r = step_gradient_bound_check(&*rw, 0.01, 3.0, &probes).unwrap();
        assert!(r.pass && r.worst == 0.0);
        let k = kinetic();
        assert!(step_gradient_bound_check(&*k, 1e-3, 3.0, &probes).unwrap().pass);
        struct Wild;
        impl SchemeFn for Wild {
            fn dims(&self) -> (usize, usize) {
                (1, 1)
            }
            fn apply<S: Scalar>(&self, x: &[S], _t: S, z: &[S], _y: S, out: &mut [S]) {
                out[0] = x[0] + x[0] * z[0] * 50.0;
            }
        }
        let w = scheme_from_fn(Wild, "wild", None).unwrap();
        let r = step_gradient_bound_check(&*w, 1.0, 2.0, &[(vec![0.5], 0.0)]).unwrap();
        assert!(!r.pass && r.worst > 50.0);
    }
}
