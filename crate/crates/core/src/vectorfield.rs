//! Time-dependent vector fields with exact derivatives, Lie brackets, the
//! bracket recursion `V^[α]` and the Hörmander quantity.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::ad::{Level, Lift, Scalar, L0, L1, L2, L3, L4, L5, L6, TOWER_DEPTH};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Default derivative order declared for user fields.
pub const DEFAULT_FIELD_ORDER: usize = 4;

/// Object-safe vector field `(x, t) -> R^d`, evaluable at every level of the AD tower
/// up to `max_order`.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn max_order(&self) -> usize;
    fn eval_l0(&self, x: &[L0], t: L0, out: &mut [L0]);
    fn eval_l1(&self, x: &[L1], t: L1, out: &mut [L1]);
    fn eval_l2(&self, x: &[L2], t: L2, out: &mut [L2]);
    fn eval_l3(&self, x: &[L3], t: L3, out: &mut [L3]);
    fn eval_l4(&self, x: &[L4], t: L4, out: &mut [L4]);
    fn eval_l5(&self, x: &[L5], t: L5, out: &mut [L5]);
    fn eval_l6(&self, x: &[L6], t: L6, out: &mut [L6]);
}

pub type FieldRef = Arc<dyn Field>;

/// User-facing definition of a field, written once for any scalar type.
pub trait FieldFn: Send + Sync + 'static {
    fn dim(&self) -> usize;
    fn apply<S: Scalar>(&self, x: &[S], t: S, out: &mut [S]);
}

pub struct FnField<F> {
    inner: F,
    order: usize,
}

impl<F: FieldFn> FnField<F> {
    fn go<S: Level>(&self, x: &[S], t: S, out: &mut [S]) {
        self.inner.apply(x, t, out)
    }
}

impl<F: FieldFn> Field for FnField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_same!(go);
}

pub fn from_fn<F: FieldFn>(f: F) -> FieldRef {
    from_fn_with_order(f, DEFAULT_FIELD_ORDER)
}

/// Orders above the tower depth are clamped.
pub fn from_fn_with_order<F: FieldFn>(f: F, order: usize) -> FieldRef {
    Arc::new(FnField { inner: f, order: order.min(TOWER_DEPTH) })
}

pub fn eval(f: &dyn Field, x: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.dim()];
    f.eval_l0(x, t, &mut out);
    out
}

fn need(what: &str, f: &dyn Field, order: usize) -> Result<()> {
    if f.max_order() < order {
        return Err(Error::Capability { what: what.to_string(), required: order, available: f.max_order() });
    }
    Ok(())
}

/// `∂_{x^j} V^i(x, t)` by `d` forward passes.
pub fn jacobian_x(v: &dyn Field, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    need("jacobian_x", v, 1)?;
    let d = v.dim();
    check_dim("jacobian_x point", d, x.len())?;
    let mut jac = DMatrix::zeros(d, d);
    let mut xs: Vec<L1> = x.iter().map(|&xi| L1::lift(xi)).collect();
    let mut out = vec![L1::lift(0.0); d];
    for j in 0..d {
        xs[j].eps = 1.0;
        v.eval_l1(&xs, L1::lift(t), &mut out);
        xs[j].eps = 0.0;
        for i in 0..d {
            jac[(i, j)] = out[i].eps;
        }
    }
    Ok(jac)
}

/// `∂_t V(x, t)`.
pub fn time_derivative(v: &dyn Field, x: &[f64], t: f64) -> Result<Vec<f64>> {
    need("time_derivative", v, 1)?;
    let xs: Vec<L1> = x.iter().map(|&xi| L1::lift(xi)).collect();
    let mut out = vec![L1::lift(0.0); v.dim()];
    v.eval_l1(&xs, L1::new(t, 1.0), &mut out);
    Ok(out.iter().map(|o| o.eps).collect())
}

fn order_after(what: &str, base: usize, cost: usize) -> Result<usize> {
    base.checked_sub(cost).ok_or_else(|| Error::Capability { what: what.to_string(), required: cost, available: base })
}

/// `DV(x)[W(x)]`.
pub struct DirectionalDerivative {
    v: FieldRef,
    w: FieldRef,
    order: usize,
}

impl DirectionalDerivative {
    pub fn new(v: FieldRef, w: FieldRef) -> Result<FieldRef> {
        check_dim("directional derivative", v.dim(), w.dim())?;
        let order = order_after("directional derivative", v.max_order(), 1)?.min(w.max_order());
        Ok(Arc::new(Self { v, w, order }))
    }

    fn go<S: Lift>(&self, x: &[S], t: S, out: &mut [S]) {
        let d = self.v.dim();
        let mut dir = vec![S::zero(); d];
        S::field(&*self.w, x, t, &mut dir);
        let xs: Vec<S::Up> = x.iter().zip(&dir).map(|(&xi, &di)| xi.seeded(di)).collect();
        let mut o = vec![S::Up::zero(); d];
        S::Up::field(&*self.v, &xs, t.up(), &mut o);
        for (oi, ui) in out.iter_mut().zip(o) {
            *oi = S::tangent(ui);
        }
    }
}

impl Field for DirectionalDerivative {
    fn dim(&self) -> usize {
        self.v.dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_lifted!(go);
}

/// `[V, W] = ∇W·V − ∇V·W`.
pub struct Bracket {
    v: FieldRef,
    w: FieldRef,
    order: usize,
}

impl Bracket {
    pub fn new(v: FieldRef, w: FieldRef) -> Result<FieldRef> {
        check_dim("lie bracket", v.dim(), w.dim())?;
        let order = order_after("lie bracket", v.max_order().min(w.max_order()), 1)?;
        Ok(Arc::new(Self { v, w, order }))
    }

    fn go<S: Lift>(&self, x: &[S], t: S, out: &mut [S]) {
        let d = self.v.dim();
        let mut vv = vec![S::zero(); d];
        let mut ww = vec![S::zero(); d];
        S::field(&*self.v, x, t, &mut vv);
        S::field(&*self.w, x, t, &mut ww);
        let mut a = vec![S::Up::zero(); d];
        let mut b = vec![S::Up::zero(); d];
        let xv: Vec<S::Up> = x.iter().zip(&vv).map(|(&xi, &di)| xi.seeded(di)).collect();
        S::Up::field(&*self.w, &xv, t.up(), &mut a);
        let xw: Vec<S::Up> = x.iter().zip(&ww).map(|(&xi, &di)| xi.seeded(di)).collect();
        S::Up::field(&*self.v, &xw, t.up(), &mut b);
        for i in 0..d {
            out[i] = S::tangent(a[i]) - S::tangent(b[i]);
        }
    }
}

impl Field for Bracket {
    fn dim(&self) -> usize {
        self.v.dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_lifted!(go);
}

/// `∂_t V`.
pub struct TimeDerivative {
    v: FieldRef,
    order: usize,
}

impl TimeDerivative {
    pub fn new(v: FieldRef) -> Result<FieldRef> {
        let order = order_after("time derivative", v.max_order(), 1)?;
        Ok(Arc::new(Self { v, order }))
    }

    fn go<S: Lift>(&self, x: &[S], t: S, out: &mut [S]) {
        let xs: Vec<S::Up> = x.iter().map(|&xi| xi.up()).collect();
        let mut o = vec![S::Up::zero(); self.v.dim()];
        S::Up::field(&*self.v, &xs, t.seeded(S::one()), &mut o);
        for (oi, ui) in out.iter_mut().zip(o) {
            *oi = S::tangent(ui);
        }
    }
}

impl Field for TimeDerivative {
    fn dim(&self) -> usize {
        self.v.dim()
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_lifted!(go);
}

/// `Σ_k c_k F_k`.
pub struct LinearCombination {
    terms: Vec<(f64, FieldRef)>,
    dim: usize,
    order: usize,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, FieldRef)>) -> Result<FieldRef> {
        let first = terms.first().ok_or_else(|| Error::Invalid("empty linear combination".into()))?;
        let dim = first.1.dim();
        for (_, f) in &terms {
            check_dim("linear combination", dim, f.dim())?;
        }
        let order = terms.iter().map(|(_, f)| f.max_order()).min().unwrap_or(0);
        Ok(Arc::new(Self { terms, dim, order }))
    }

    fn go<S: Level>(&self, x: &[S], t: S, out: &mut [S]) {
        let mut tmp = vec![S::zero(); self.dim];
        out.iter_mut().for_each(|o| *o = S::zero());
        for (c, f) in &self.terms {
            S::field(&**f, x, t, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += *v * *c;
            }
        }
    }
}

impl Field for LinearCombination {
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_order(&self) -> usize {
        self.order
    }
    field_levels_same!(go);
}

/// Constant field.
pub struct ConstantField(pub Vec<f64>);

impl FieldFn for ConstantField {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply<S: Scalar>(&self, _x: &[S], _t: S, out: &mut [S]) {
        for (o, c) in out.iter_mut().zip(&self.0) {
            *o = S::cst(*c);
        }
    }
}

/// `x ↦ A x`.
pub struct LinearField(pub DMatrix<f64>);

impl FieldFn for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply<S: Scalar>(&self, x: &[S], _t: S, out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (j, xj) in x.iter().enumerate() {
                acc += *xj * self.0[(i, j)];
            }
            *o = acc;
        }
    }
}

/// Scalar profile `f(x¹, t)` used by the builtin kinetic fields.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Const(f64),
    /// `Σ c_k x^k`
    Poly(Vec<f64>),
    /// `offset + amp·sin(freq·x)`
    Sine { offset: f64, amp: f64, freq: f64 },
    /// `offset + amp·sin(freq·t)`
    TimeSine { offset: f64, amp: f64, freq: f64 },
    /// `offset + amp·tanh(scale·x)`
    Tanh { offset: f64, amp: f64, scale: f64 },
    Sum(Vec<Profile>),
}

impl Profile {
    pub fn eval<S: Scalar>(&self, x: S, t: S) -> S {
        match self {
            Profile::Const(c) => S::cst(*c),
            Profile::Poly(c) => c.iter().rev().fold(S::zero(), |acc, &ck| acc * x + ck),
            Profile::Sine { offset, amp, freq } => (x * *freq).sin() * *amp + *offset,
            Profile::TimeSine { offset, amp, freq } => (t * *freq).sin() * *amp + *offset,
            Profile::Tanh { offset, amp, scale } => (x * *scale).tanh() * *amp + *offset,
            Profile::Sum(ps) => ps.iter().fold(S::zero(), |acc, p| acc + p.eval(x, t)),
        }
    }

    /// Parses `const:c`, `poly:c0,c1,..`, `sin:offset,amp,freq`, `tsin:offset,amp,freq`,
    /// `tanh:offset,amp,scale`, and sums of these joined by `+`.
    pub fn parse(s: &str) -> Result<Profile> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        if parts.len() > 1 {
            return Ok(Profile::Sum(parts.iter().map(|p| Profile::parse(p)).collect::<Result<_>>()?));
        }
        let bad = |m: &str| Error::Parse { line: 0, msg: format!("profile `{s}`: {m}") };
        let (kind, args) = s.trim().split_once(':').ok_or_else(|| bad("expected `kind:args`"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite coefficient"));
        }
        let three = |n: &[f64]| if n.len() == 3 { Ok((n[0], n[1], n[2])) } else { Err(bad("expected 3 numbers")) };
        match kind.trim() {
            "const" if nums.len() == 1 => Ok(Profile::Const(nums[0])),
            "poly" => Ok(Profile::Poly(nums)),
            "sin" => three(&nums).map(|(offset, amp, freq)| Profile::Sine { offset, amp, freq }),
            "tsin" => three(&nums).map(|(offset, amp, freq)| Profile::TimeSine { offset, amp, freq }),
            "tanh" => three(&nums).map(|(offset, amp, scale)| Profile::Tanh { offset, amp, scale }),
            _ => Err(bad("unknown kind or arity")),
        }
    }
}

/// Kinetic drift `(b(x¹,t), x¹)` on R².
pub struct KineticDrift(pub Profile);
/// Kinetic diffusion `(σ(x¹,t), 0)` on R².
pub struct KineticDiffusion(pub Profile);

impl FieldFn for KineticDrift {
    fn dim(&self) -> usize {
        2
    }
    fn apply<S: Scalar>(&self, x: &[S], t: S, out: &mut [S]) {
        out[0] = self.0.eval(x[0], t);
        out[1] = x[0];
    }
}

impl FieldFn for KineticDiffusion {
    fn dim(&self) -> usize {
        2
    }
    fn apply<S: Scalar>(&self, x: &[S], t: S, out: &mut [S]) {
        out[0] = self.0.eval(x[0], t);
        out[1] = S::zero();
    }
}

/// `[V, W]` as a field.
pub fn lie_bracket_field(v: &FieldRef, w: &FieldRef) -> Result<FieldRef> {
    Bracket::new(v.clone(), w.clone())
}

/// `[V, W](x, t)`.
pub fn lie_bracket(v: &FieldRef, w: &FieldRef, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("lie_bracket point", v.dim(), x.len())?;
    Ok(eval(&*lie_bracket_field(v, w)?, x, t))
}

/// `{V̄₀, V₁ … V_N}`: the fields driving the bracket recursion.
#[derive(Clone)]
pub struct BracketFields {
    pub drift_bar: FieldRef,
    pub noise: Vec<FieldRef>,
}

impl BracketFields {
    pub fn new(drift_bar: FieldRef, noise: Vec<FieldRef>) -> Result<Self> {
        for v in &noise {
            check_dim("bracket fields", drift_bar.dim(), v.dim())?;
        }
        Ok(Self { drift_bar, noise })
    }

    pub fn dim(&self) -> usize {
        self.drift_bar.dim()
    }

    pub fn n_noise(&self) -> usize {
        self.noise.len()
    }

    fn min_order(&self) -> usize {
        self.noise.iter().map(|v| v.max_order()).fold(self.drift_bar.max_order(), usize::min)
    }

    fn step(&self, v: &FieldRef, j: usize) -> Result<FieldRef> {
        if j > self.noise.len() {
            return Err(Error::Invalid(format!("bracket index {j} exceeds N = {}", self.noise.len())));
        }
        if j > 0 {
            return Bracket::new(self.noise[j - 1].clone(), v.clone());
        }
        let mut terms = vec![(1.0, Bracket::new(self.drift_bar.clone(), v.clone())?), (1.0, TimeDerivative::new(v.clone())?)];
        for vi in &self.noise {
            let inner = Bracket::new(vi.clone(), v.clone())?;
            terms.push((0.5, Bracket::new(vi.clone(), inner)?));
        }
        LinearCombination::new(terms)
    }

    /// `V^[α]` as a field, built by the recursion on the last index.
    pub fn iterate(&self, base: &FieldRef, alpha: &[usize]) -> Result<FieldRef> {
        let mut memo = HashMap::new();
        self.iterate_memo(base, alpha, &mut memo)
    }

    fn iterate_memo(&self, base: &FieldRef, alpha: &[usize], memo: &mut HashMap<Vec<usize>, FieldRef>) -> Result<FieldRef> {
        if alpha.is_empty() {
            return Ok(base.clone());
        }
        if let Some(f) = memo.get(alpha) {
            return Ok(f.clone());
        }
        let (last, head) = alpha.split_last().expect("non-empty");
        let prev = self.iterate_memo(base, head, memo)?;
        let f = self.step(&prev, *last).map_err(|e| match e {
            Error::Capability { .. } => Error::Capability {
                what: format!("bracket_iterate {alpha:?}"),
                required: bracket_cost(alpha),
                available: self.min_order().min(base.max_order()),
            },
            other => other,
        })?;
        memo.insert(alpha.to_vec(), f.clone());
        Ok(f)
    }
}

/// Derivative orders consumed by `V^[α]`: two per `0`, one per noise index.
pub fn bracket_cost(alpha: &[usize]) -> usize {
    alpha.iter().map(|&a| if a == 0 { 2 } else { 1 }).sum()
}

/// `V^[α](x, t)`.
pub fn bracket_iterate(fields: &BracketFields, base: &FieldRef, alpha: &[usize], x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("bracket_iterate point", fields.dim(), x.len())?;
    Ok(eval(&*fields.iterate(base, alpha)?, x, t))
}

/// All `α ∈ {0..N}^k`, `k = 0..=L`, lexicographic within each length.
pub fn enumerate_indices(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..l {
        let mut next = Vec::with_capacity(layer.len() * (n + 1));
        for a in &layer {
            for j in 0..=n {
                let mut b = a.clone();
                b.push(j);
                next.push(b);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// `Σ_{‖α‖≤L} Σ_i V_i^[α] (V_i^[α])ᵀ`.
pub fn gram_matrix(fields: &BracketFields, l: usize, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let d = fields.dim();
    check_dim("gram_matrix point", d, x.len())?;
    let mut m = DMatrix::zeros(d, d);
    let mut memo = HashMap::new();
    for vi in &fields.noise {
        memo.clear();
        for alpha in enumerate_indices(fields.n_noise(), l) {
            let f = fields.iterate_memo(vi, &alpha, &mut memo)?;
            let v = linalg::dvec(&eval(&*f, x, t));
            m += &v * v.transpose();
        }
    }
    Ok(m)
}

/// `min(1, λ_min(gram_matrix))`; exactly 0 when the Gram matrix is singular to
/// `1e-12·‖M‖`.
pub fn hormander_quantity(fields: &BracketFields, l: usize, x: &[f64], t: f64) -> Result<f64> {
    let m = gram_matrix(fields, l, x, t)?;
    Ok(hormander_from_gram(&m))
}

pub fn hormander_from_gram(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    let lmin = linalg::min_eigenvalue(m);
    if lmin <= linalg::SINGULAR_RTOL * scale || scale == 0.0 {
        0.0
    } else {
        lmin.min(1.0)
    }
}
