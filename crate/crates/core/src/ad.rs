//! Forward-mode dual numbers and the derivative tower used by every
//! differential operator in the crate.
//!
//! `Dual<S>` nests: `Dual<Dual<f64>>` carries mixed second derivatives and so
//! on. The aliases `L0..L6` name the levels a [`Field`](crate::vectorfield::Field)
//! or [`SchemeMap`](crate::scheme::SchemeMap) can be evaluated at.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::scheme::SchemeMap;
use crate::vectorfield::Field;

/// Arithmetic needed by user-supplied fields and schemes.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn cst(v: f64) -> Self;
    /// Innermost real part.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }
    pub fn lift(re: S) -> Self {
        Self { re, eps: S::zero() }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}
impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}
impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        let q = self.re * inv;
        Self::new(q, (self.eps - q * o.eps) * inv)
    }
}
impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}
impl<S: Scalar> Add<f64> for Dual<S> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self::new(self.re + o, self.eps)
    }
}
impl<S: Scalar> Sub<f64> for Dual<S> {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self::new(self.re - o, self.eps)
    }
}
impl<S: Scalar> Mul<f64> for Dual<S> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.re * o, self.eps * o)
    }
}
impl<S: Scalar> Div<f64> for Dual<S> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        Self::new(self.re / o, self.eps / o)
    }
}
impl<S: Scalar> AddAssign for Dual<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<S: Scalar> SubAssign for Dual<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<S: Scalar> MulAssign for Dual<S> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn cst(v: f64) -> Self {
        Self::lift(S::cst(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }
    fn sin(self) -> Self {
        Self::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Self::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps / (s * 2.0))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, self.eps * (S::one() - t * t))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        Self::new(self.re.powi(n), self.eps * self.re.powi(n - 1) * f64::from(n))
    }
    fn powf(self, p: f64) -> Self {
        Self::new(self.re.powf(p), self.eps * self.re.powf(p - 1.0) * p)
    }
}

pub type L0 = f64;
pub type L1 = Dual<L0>;
pub type L2 = Dual<L1>;
pub type L3 = Dual<L2>;
pub type L4 = Dual<L3>;
pub type L5 = Dual<L4>;
pub type L6 = Dual<L5>;

/// Deepest level of the tower; fields of order `k` may be evaluated up to `Lk`.
pub const TOWER_DEPTH: usize = 6;

/// A tower level: dispatches trait-object evaluation to the matching method.
pub trait Level: Scalar {
    const DEPTH: usize;
    fn field(f: &dyn Field, x: &[Self], t: Self, out: &mut [Self]);
    fn scheme(p: &dyn SchemeMap, x: &[Self], t: Self, z: &[Self], y: Self, out: &mut [Self]);
}

/// A level that has a level above it.
pub trait Lift: Level {
    type Up: Level;
    fn up(self) -> Self::Up;
    fn seeded(self, eps: Self) -> Self::Up;
    fn tangent(u: Self::Up) -> Self;
    fn primal(u: Self::Up) -> Self;
}

macro_rules! level {
    ($t:ty, $d:expr, $fm:ident, $sm:ident) => {
        impl Level for $t {
            const DEPTH: usize = $d;
            fn field(f: &dyn Field, x: &[Self], t: Self, out: &mut [Self]) {
                f.$fm(x, t, out)
            }
            fn scheme(p: &dyn SchemeMap, x: &[Self], t: Self, z: &[Self], y: Self, out: &mut [Self]) {
                p.$sm(x, t, z, y, out)
            }
        }
    };
}
level!(L0, 0, eval_l0, eval_l0);
level!(L1, 1, eval_l1, eval_l1);
level!(L2, 2, eval_l2, eval_l2);
level!(L3, 3, eval_l3, eval_l3);
level!(L4, 4, eval_l4, eval_l4);
level!(L5, 5, eval_l5, eval_l5);
level!(L6, 6, eval_l6, eval_l6);

macro_rules! lift {
    ($t:ty) => {
        impl Lift for $t {
            type Up = Dual<$t>;
            fn up(self) -> Dual<$t> {
                Dual::lift(self)
            }
            fn seeded(self, eps: Self) -> Dual<$t> {
                Dual::new(self, eps)
            }
            fn tangent(u: Dual<$t>) -> Self {
                u.eps
            }
            fn primal(u: Dual<$t>) -> Self {
                u.re
            }
        }
    };
}
lift!(L0);
lift!(L1);
lift!(L2);
lift!(L3);
lift!(L4);
lift!(L5);

pub(crate) fn tower_exhausted() -> ! {
    panic!("derivative tower exhausted; capability checks should have rejected this evaluation")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S) -> S {
        (x * x).sin() * x.exp() / (x + 2.0) + x.sqrt().tanh() + x.powi(3) - x.ln() * x.powf(1.5)
    }

    #[test]
    fn first_and_second_derivatives_match_finite_differences() {
        let x = 0.7;
        let d1 = f(L1::new(x, 1.0)).eps;
        let h = 1e-5;
        let fd1 = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!((d1 - fd1).abs() < 1e-8, "{d1} vs {fd1}");
        let d2 = f(L2::new(L1::new(x, 1.0), L1::new(1.0, 0.0))).eps.eps;
        let h = 1e-4;
        let fd2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        assert!((d2 - fd2).abs() < 1e-5, "{d2} vs {fd2}");
    }

    #[test]
    fn third_derivative_of_polynomial_is_exact() {
        // d^3/dx^3 (x^4) = 24x
        let x = 1.3;
        let v = L3::new(L2::new(L1::new(x, 1.0), L1::new(1.0, 0.0)), L2::new(L1::new(1.0, 0.0), L1::new(0.0, 0.0)));
        let y = v.powi(4);
        assert!((y.eps.eps.eps - 24.0 * x).abs() < 1e-12);
    }

    #[test]
    fn depth_constants() {
        assert_eq!(<L0 as Level>::DEPTH, 0);
        assert_eq!(<L6 as Level>::DEPTH, TOWER_DEPTH);
    }
}
