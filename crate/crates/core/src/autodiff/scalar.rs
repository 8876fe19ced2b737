//! Scalar number types the tape computes with.
//!
//! Every tape value is an element of the truncated polynomial ring
//! R[e]/e^(K+1) for K = 0, 1 or 2. `f64` is the plain case (K = 0).
//! [`Dual`] carries one tangent coefficient and [`Dual2`] two, which is
//! what forward-over-reverse evaluation of first and second directional
//! derivatives needs: seed the inputs with a direction, run the ordinary
//! arithmetic, and the higher coefficients of every intermediate value
//! are its directional Taylor coefficients.

use std::ops::{Add, Mul, Neg, Sub};

/// Ring element the tape is generic over.
///
/// `ORDER` is the number of tangent coefficients (0 for `f64`).
/// Coefficients are stored raw: for `Dual2`, `d2` is the coefficient of
/// e^2, so the second directional derivative of a seeded evaluation is
/// `2.0 * d2`.
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const ORDER: usize;

    fn from_f64(v: f64) -> Self;
    /// Value with the e^1 coefficient set (dropped when ORDER = 0).
    fn seeded(v: f64, tangent: f64) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// Coefficient of e^0.
    fn val(&self) -> f64;
    /// Coefficient of e^1 (0 when ORDER = 0).
    fn d1(&self) -> f64;
    /// Raw coefficient of e^2 (0 when ORDER < 2).
    fn d2_coeff(&self) -> f64;

    fn is_zero(&self) -> bool;
    fn all_finite(&self) -> bool;
    fn scale(self, c: f64) -> Self;
    /// Ring inverse; requires `val() != 0`.
    fn recip(self) -> Self;

    /// Lift a univariate smooth function through the ring.
    ///
    /// `d = [f, f', f'', f''']` evaluated at `self.val()`. Returns the
    /// function value and the ring derivative f'(self), which is the
    /// local partial a reverse sweep multiplies adjoints by. The third
    /// derivative only matters at ORDER = 2.
    fn lift(self, d: [f64; 4]) -> (Self, Self);

    /// Adjoint seed for the root of a reverse sweep: e^ORDER.
    ///
    /// Adjoints are stored reversed (coefficient j holds dL/d n_(ORDER-j)),
    /// which makes the sweep a plain ring multiply per edge; the gradient
    /// of the root's e^0 coefficient is then read from coefficient ORDER.
    fn adjoint_seed() -> Self;
    /// Read dL/d(value coefficient) out of a reversed-stored adjoint.
    fn adjoint_read(self) -> f64;
    /// Pullback of an `Extract{k}` node: the adjoint contribution to the
    /// operand, given the node's (reversed) adjoint.
    fn extract_pullback(adj: Self, k: usize) -> Self;
    /// Write `g` into the slot read by [`Scalar::adjoint_read`].
    fn inject_read_slot(g: f64) -> Self;
}

impl Scalar for f64 {
    const ORDER: usize = 0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn seeded(v: f64, _tangent: f64) -> Self {
        v
    }
    #[inline]
    fn val(&self) -> f64 {
        *self
    }
    #[inline]
    fn d1(&self) -> f64 {
        0.0
    }
    #[inline]
    fn d2_coeff(&self) -> f64 {
        0.0
    }
    #[inline]
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn lift(self, d: [f64; 4]) -> (Self, Self) {
        (d[0], d[1])
    }
    #[inline]
    fn adjoint_seed() -> Self {
        1.0
    }
    #[inline]
    fn adjoint_read(self) -> f64 {
        self
    }
    #[inline]
    fn extract_pullback(_adj: Self, _k: usize) -> Self {
        // Extract nodes require ORDER >= k; the tape rejects them earlier.
        0.0
    }
    #[inline]
    fn inject_read_slot(g: f64) -> Self {
        g
    }
}

/// First-order dual number `v + d1*e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d1: f64,
}

impl Dual {
    pub fn new(v: f64, d1: f64) -> Self {
        Self { v, d1 }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d1 + o.d1)
    }
}
impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d1 - o.d1)
    }
}
impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.v * o.d1 + self.d1 * o.v)
    }
}
impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d1)
    }
}

impl Scalar for Dual {
    const ORDER: usize = 1;

    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    #[inline]
    fn seeded(v: f64, tangent: f64) -> Self {
        Self::new(v, tangent)
    }
    #[inline]
    fn val(&self) -> f64 {
        self.v
    }
    #[inline]
    fn d1(&self) -> f64 {
        self.d1
    }
    #[inline]
    fn d2_coeff(&self) -> f64 {
        0.0
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.v == 0.0 && self.d1 == 0.0
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.v.is_finite() && self.d1.is_finite()
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Self::new(self.v * c, self.d1 * c)
    }
    #[inline]
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        Self::new(r, -self.d1 * r * r)
    }
    #[inline]
    fn lift(self, d: [f64; 4]) -> (Self, Self) {
        (
            Self::new(d[0], d[1] * self.d1),
            Self::new(d[1], d[2] * self.d1),
        )
    }
    #[inline]
    fn adjoint_seed() -> Self {
        Self::new(0.0, 1.0)
    }
    #[inline]
    fn adjoint_read(self) -> f64 {
        self.d1
    }
    #[inline]
    fn extract_pullback(adj: Self, k: usize) -> Self {
        debug_assert_eq!(k, 1);
        // dL/d a_1 += dL/d c_0, landing in reversed slot ORDER-1 = 0.
        Self::new(adj.d1, 0.0)
    }
    #[inline]
    fn inject_read_slot(g: f64) -> Self {
        Self::new(0.0, g)
    }
}

/// Second-order truncated Taylor number `v + d1*e + d2*e^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual2 {
    pub fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}
impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}
impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v * o.v,
            self.v * o.d1 + self.d1 * o.v,
            self.v * o.d2 + self.d1 * o.d1 + self.d2 * o.v,
        )
    }
}
impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d1, -self.d2)
    }
}

impl Scalar for Dual2 {
    const ORDER: usize = 2;

    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::new(v, 0.0, 0.0)
    }
    #[inline]
    fn seeded(v: f64, tangent: f64) -> Self {
        Self::new(v, tangent, 0.0)
    }
    #[inline]
    fn val(&self) -> f64 {
        self.v
    }
    #[inline]
    fn d1(&self) -> f64 {
        self.d1
    }
    #[inline]
    fn d2_coeff(&self) -> f64 {
        self.d2
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.v == 0.0 && self.d1 == 0.0 && self.d2 == 0.0
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.v.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Self::new(self.v * c, self.d1 * c, self.d2 * c)
    }
    #[inline]
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        let r2 = r * r;
        Self::new(r, -self.d1 * r2, self.d1 * self.d1 * r2 * r - self.d2 * r2)
    }
    #[inline]
    fn lift(self, d: [f64; 4]) -> (Self, Self) {
        let a1 = self.d1;
        let a2 = self.d2;
        let half_a1sq = 0.5 * a1 * a1;
        let value = Self::new(d[0], d[1] * a1, d[1] * a2 + d[2] * half_a1sq);
        let partial = Self::new(d[1], d[2] * a1, d[2] * a2 + d[3] * half_a1sq);
        (value, partial)
    }
    #[inline]
    fn adjoint_seed() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }
    #[inline]
    fn adjoint_read(self) -> f64 {
        self.d2
    }
    #[inline]
    fn extract_pullback(adj: Self, k: usize) -> Self {
        // Extract_k returns k! * a_k; pullback writes k! * dL/dc_0 into
        // reversed slot ORDER - k.
        match k {
            1 => Self::new(0.0, adj.d2, 0.0),
            2 => Self::new(2.0 * adj.d2, 0.0, 0.0),
            _ => unreachable!("unsupported extraction order {k}"),
        }
    }
    #[inline]
    fn inject_read_slot(g: f64) -> Self {
        Self::new(0.0, 0.0, g)
    }
}

/// Elementary functions lifted over any [`Scalar`], for writing analytic
/// test functions and exact solutions once, independent of the tape.
pub mod fns {
    use super::Scalar;

    pub fn sin<S: Scalar>(x: S) -> S {
        let (s, c) = x.val().sin_cos();
        x.lift([s, c, -s, -c]).0
    }
    pub fn cos<S: Scalar>(x: S) -> S {
        let (s, c) = x.val().sin_cos();
        x.lift([c, -s, -c, s]).0
    }
    pub fn exp<S: Scalar>(x: S) -> S {
        let e = x.val().exp();
        x.lift([e, e, e, e]).0
    }
    pub fn ln<S: Scalar>(x: S) -> S {
        let v = x.val();
        let r = 1.0 / v;
        x.lift([v.ln(), r, -r * r, 2.0 * r * r * r]).0
    }
    pub fn sqrt<S: Scalar>(x: S) -> S {
        let v = x.val();
        let s = v.sqrt();
        let r = 0.5 / s;
        x.lift([s, r, -0.5 * r / v, 0.75 * r / (v * v)]).0
    }
    pub fn tanh<S: Scalar>(x: S) -> S {
        let t = x.val().tanh();
        let s = 1.0 - t * t;
        x.lift([t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]).0
    }
    pub fn powf<S: Scalar>(x: S, p: f64) -> S {
        let v = x.val();
        x.lift([
            v.powf(p),
            p * v.powf(p - 1.0),
            p * (p - 1.0) * v.powf(p - 2.0),
            p * (p - 1.0) * (p - 2.0) * v.powf(p - 3.0),
        ])
        .0
    }
    pub fn powi<S: Scalar>(x: S, n: i32) -> S {
        let v = x.val();
        let nf = n as f64;
        let f1 = if n == 0 { 0.0 } else { nf * v.powi(n - 1) };
        let f2 = if n <= 1 { 0.0 } else { nf * (nf - 1.0) * v.powi(n - 2) };
        let f3 = if n <= 2 {
            0.0
        } else {
            nf * (nf - 1.0) * (nf - 2.0) * v.powi(n - 3)
        };
        x.lift([v.powi(n), f1, f2, f3]).0
    }
    pub fn relu<S: Scalar>(x: S) -> S {
        let v = x.val();
        let step = if v > 0.0 { 1.0 } else { 0.0 };
        x.lift([v.max(0.0), step, 0.0, 0.0]).0
    }
}
