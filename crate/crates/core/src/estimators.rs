//! Unbiased Monte Carlo estimators for the nonlocal operators.
//!
//! Every estimator takes a surrogate evaluation callback, a point, a
//! sample count and an RNG stream, and pushes a graph node onto the tape
//! that is differentiable with respect to the network parameters. Each
//! returns the canonical operator value; any multiplicative kernel
//! constant (e.g. a problem's delta^-2) is applied by the caller so the
//! two-regime radial formulas stay in one canonical form.
//!
//! Sampling orders are part of the reproducibility contract: draws happen
//! in the documented per-sample order and nowhere else.

use crate::autodiff::scalar::Scalar;
use crate::autodiff::tape::{NodeId, Tape, TapeError};
use crate::oracles::sphere_surface;
use crate::samplers::{beta_one, uniform, unit_sphere, RngStream, SamplerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

fn invalid(msg: impl Into<String>) -> EstimatorError {
    EstimatorError::Invalid(msg.into())
}

/// Surrogate evaluation callback: pushes u at a batch of points onto the
/// tape. Point layout is (dim, B) row-major: coordinate i of point j at
/// `points[i * n_points + j]`. `seeds` (same layout) carry the forward
/// tangent direction per point when derivatives are needed.
pub trait Surrogate<S: Scalar> {
    fn input_dim(&self) -> usize;
    fn eval_batch(
        &self,
        tape: &mut Tape<S>,
        points: &[f64],
        n_points: usize,
        seeds: Option<&[f64]>,
    ) -> Vec<NodeId>;
}

/// A fixed analytic function written once over any scalar ring; used for
/// exact solutions and estimator test functions.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Adapts a [`ScalarField`] (no trainable parameters) to the surrogate
/// interface: evaluations enter the tape as ring constants.
pub struct FieldSurrogate<'a, T: ?Sized>(pub &'a T);

impl<S: Scalar, T: ScalarField + ?Sized> Surrogate<S> for FieldSurrogate<'_, T> {
    fn input_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval_batch(
        &self,
        tape: &mut Tape<S>,
        points: &[f64],
        n_points: usize,
        seeds: Option<&[f64]>,
    ) -> Vec<NodeId> {
        let dim = self.0.dim();
        let mut xs = vec![S::zero(); dim];
        (0..n_points)
            .map(|j| {
                for (i, x) in xs.iter_mut().enumerate() {
                    *x = S::seeded(
                        points[i * n_points + j],
                        seeds.map_or(0.0, |s| s[i * n_points + j]),
                    );
                }
                let v = self.0.eval(&xs);
                tape.constant_ring(v)
            })
            .collect()
    }
}

/// Which nonlocal operator an [`EstimatorSpec`] configures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    VolterraBounded,
    VolterraWeakSingular,
    Fredholm,
    Hypersingular1d,
    Hypersingular2d,
    NonlocalDelta,
    FractionalLaplacian,
}

/// Boundary description for the 2D hypersingular region r < R(nu).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RadiusSpec {
    Constant { r: f64 },
}

impl RadiusSpec {
    pub fn at(&self, _nu: f64) -> f64 {
        match *self {
            RadiusSpec::Constant { r } => r,
        }
    }
}

/// Kernel parameters and sample count for one estimator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Kernel power-law exponent (meaning depends on the kind).
    pub alpha: f64,
    /// Interaction horizon for the nonlocal operator.
    pub delta: f64,
    /// Split radius for the fractional Laplacian.
    pub r0: f64,
    /// Radial truncation floor r_eps = max(r, epsilon).
    pub epsilon: f64,
    pub n_samples: usize,
    /// Fixed integration limits (Fredholm, 1D hypersingular).
    pub limits: (f64, f64),
    pub radius: RadiusSpec,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::VolterraBounded,
            alpha: 0.5,
            delta: 0.2,
            r0: 0.5,
            epsilon: 1e-6,
            n_samples: 100,
            limits: (0.0, 1.0),
            radius: RadiusSpec::Constant { r: 1.0 },
        }
    }
}

impl EstimatorSpec {
    pub fn validate(&self, dim: usize) -> Result<(), EstimatorError> {
        if self.n_samples < 1 {
            return Err(invalid("n_samples must be >= 1"));
        }
        if self.epsilon < 0.0 {
            return Err(invalid("epsilon must be >= 0"));
        }
        match self.kind {
            EstimatorKind::VolterraWeakSingular => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(invalid(format!(
                        "weakly singular kernel requires 0 < alpha < 1, got {}",
                        self.alpha
                    )));
                }
            }
            EstimatorKind::NonlocalDelta => {
                let bound = (dim + 2) as f64;
                if !(self.alpha > 0.0 && self.alpha < bound) {
                    return Err(invalid(format!(
                        "nonlocal kernel requires 0 < alpha < d+2 = {bound}, got {}",
                        self.alpha
                    )));
                }
                if !(self.delta > 0.0) {
                    return Err(invalid("delta must be positive"));
                }
            }
            EstimatorKind::FractionalLaplacian => {
                if !(self.alpha > 0.0 && self.alpha < 2.0) {
                    return Err(invalid(format!(
                        "fractional laplacian requires 0 < alpha < 2, got {}",
                        self.alpha
                    )));
                }
                if !(self.r0 > 0.0) {
                    return Err(invalid("r0 must be positive"));
                }
            }
            EstimatorKind::Fredholm | EstimatorKind::Hypersingular1d => {
                if !(self.limits.0 < self.limits.1) {
                    return Err(invalid("limits must satisfy a < b"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Nonlinearity under the Fredholm integral sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    Square,
}

/// int_0^x K(x,s) u(s) ds for bounded K:
/// (x/N) sum_i K(x, x xi_i) u(x xi_i), xi ~ U[0,1).
pub fn volterra_bounded<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    kernel: &dyn Fn(f64, f64) -> f64,
    x: f64,
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(1)?;
    if x < 0.0 {
        return Err(invalid(format!("volterra upper limit x={x} < 0")));
    }
    if x == 0.0 {
        return Ok(tape.constant(0.0));
    }
    let n = spec.n_samples;
    let mut pts = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let s = x * rng.u01();
        pts.push(s);
        weights.push(x * kernel(x, s) / n as f64);
    }
    let ids = u.eval_batch(tape, &pts, n, None);
    let terms: Vec<(NodeId, f64)> = ids.into_iter().zip(weights).collect();
    Ok(tape.weighted_sum(&terms))
}

/// Multi-dimensional bounded-kernel Volterra integral over the box
/// prod_i [0, x_i]: vol(x) E[K(x, s) u(s)] with s_i = x_i xi_i.
pub fn volterra_bounded_nd<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    kernel: &dyn Fn(&[f64], &[f64]) -> f64,
    x: &[f64],
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(x.len())?;
    if x.iter().any(|&v| v < 0.0) {
        return Err(invalid("volterra box corner has a negative coordinate"));
    }
    let vol: f64 = x.iter().product();
    if vol == 0.0 {
        return Ok(tape.constant(0.0));
    }
    let dim = x.len();
    let n = spec.n_samples;
    let mut pts = vec![0.0; dim * n];
    let mut weights = Vec::with_capacity(n);
    let mut s = vec![0.0; dim];
    for j in 0..n {
        for (i, si) in s.iter_mut().enumerate() {
            *si = x[i] * rng.u01();
            pts[i * n + j] = *si;
        }
        weights.push(vol * kernel(x, &s) / n as f64);
    }
    let ids = u.eval_batch(tape, &pts, n, None);
    let terms: Vec<(NodeId, f64)> = ids.into_iter().zip(weights).collect();
    Ok(tape.weighted_sum(&terms))
}

/// int_0^x (x-s)^(-alpha) u(s) ds =
/// x^(1-alpha)/(1-alpha) E_{xi ~ Beta(1-alpha, 1)}[u(x - x xi)].
pub fn volterra_weak_singular<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    x: f64,
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(1)?;
    if x < 0.0 {
        return Err(invalid(format!("volterra upper limit x={x} < 0")));
    }
    if x == 0.0 {
        return Ok(tape.constant(0.0));
    }
    let n = spec.n_samples;
    let alpha = spec.alpha;
    let scale = x.powf(1.0 - alpha) / ((1.0 - alpha) * n as f64);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = beta_one(rng, 1.0 - alpha)?;
        pts.push(x - x * xi);
    }
    let ids = u.eval_batch(tape, &pts, n, None);
    let terms: Vec<(NodeId, f64)> = ids.into_iter().map(|id| (id, scale)).collect();
    Ok(tape.weighted_sum(&terms))
}

/// Separable weakly singular kernel over the box prod_i [0, x_i]:
/// each coordinate gets its own Beta(1-alpha, 1) draw.
pub fn volterra_weak_singular_nd<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    x: &[f64],
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(x.len())?;
    if x.iter().any(|&v| v < 0.0) {
        return Err(invalid("volterra box corner has a negative coordinate"));
    }
    let alpha = spec.alpha;
    let dim = x.len();
    let n = spec.n_samples;
    let mut scale = 1.0 / n as f64;
    for &xi in x {
        if xi == 0.0 {
            return Ok(tape.constant(0.0));
        }
        scale *= xi.powf(1.0 - alpha) / (1.0 - alpha);
    }
    let mut pts = vec![0.0; dim * n];
    for j in 0..n {
        for i in 0..dim {
            let xi = beta_one(rng, 1.0 - alpha)?;
            pts[i * n + j] = x[i] - x[i] * xi;
        }
    }
    let ids = u.eval_batch(tape, &pts, n, None);
    let terms: Vec<(NodeId, f64)> = ids.into_iter().map(|id| (id, scale)).collect();
    Ok(tape.weighted_sum(&terms))
}

/// int_a^b K(x, s) G(u(s)) ds with fixed limits:
/// ((b-a)/N) sum_i K(x, s_i) G(u(s_i)), s_i ~ U[a, b).
pub fn fredholm<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    kernel: &dyn Fn(f64, f64) -> f64,
    nonlinearity: Nonlinearity,
    x: f64,
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(1)?;
    let (a, b) = spec.limits;
    let n = spec.n_samples;
    let mut pts = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let s = uniform(rng, a, b)?;
        pts.push(s);
        weights.push((b - a) * kernel(x, s) / n as f64);
    }
    let ids = u.eval_batch(tape, &pts, n, None);
    let terms: Vec<(NodeId, f64)> = ids
        .into_iter()
        .zip(weights)
        .map(|(id, w)| {
            let g = match nonlinearity {
                Nonlinearity::Identity => id,
                Nonlinearity::Square => tape.mul(id, id),
            };
            (g, w)
        })
        .collect();
    Ok(tape.weighted_sum(&terms))
}

/// Hadamard finite-part integral F.P. int_a^b u(x)/(x-s)^2 dx:
/// ((b-a)/N) sum_i (1-t_i) u''(t_i x_i + (1-t_i) s)
///   - u(s) (1/(b-s) + 1/(s-a)) + u'(s) ln((b-s)/(s-a)),
/// with t_i ~ U[0,1), x_i ~ U[a,b). u(s), u'(s) are evaluated once and
/// reused across the samples. Requires a second-order scalar.
pub fn hypersingular_1d<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    singular_point: f64,
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(1)?;
    let (a, b) = spec.limits;
    let s = singular_point;
    if !(a < s && s < b) {
        return Err(invalid(format!(
            "singular point {s} outside the open interval ({a}, {b})"
        )));
    }
    let n = spec.n_samples;
    // column 0 is the singular point; columns 1..=N are the samples
    let mut pts = Vec::with_capacity(n + 1);
    let mut seeds = Vec::with_capacity(n + 1);
    let mut one_minus_t = Vec::with_capacity(n);
    pts.push(s);
    seeds.push(1.0);
    for _ in 0..n {
        let t = rng.u01();
        let x = uniform(rng, a, b)?;
        pts.push(t * x + (1.0 - t) * s);
        seeds.push(1.0);
        one_minus_t.push(1.0 - t);
    }
    let ids = u.eval_batch(tape, &pts, n + 1, Some(&seeds));
    let u_s = ids[0];
    let du_s = tape.extract1(u_s);
    let mut terms: Vec<(NodeId, f64)> = Vec::with_capacity(n + 2);
    let scale = (b - a) / n as f64;
    for (j, &id) in ids[1..].iter().enumerate() {
        let d2 = tape.extract2(id);
        terms.push((d2, scale * one_minus_t[j]));
    }
    terms.push((u_s, -(1.0 / (b - s) + 1.0 / (s - a))));
    terms.push((du_s, ((b - s) / (s - a)).ln()));
    Ok(tape.weighted_sum(&terms))
}

/// 2D finite-part integral of u/r^3 over the star-shaped region
/// r < R(nu):
/// (2 pi / N) sum_i [ -u~(0, nu_i)/R + du~/dr(0, nu_i) ln R
///                    + R (1-t_i) d2u~/dr2 (t_i r_i, nu_i) ],
/// nu_i ~ U[0, 2 pi), r_i ~ U[0, R(nu_i)), t_i ~ U[0,1); the radial
/// derivatives ride the forward tangent along (cos nu, sin nu).
pub fn hypersingular_2d<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    spec.validate(2)?;
    let n = spec.n_samples;
    let two_pi = std::f64::consts::TAU;
    // columns 2j   : origin with direction seed of sample j
    // columns 2j+1 : interior point t r along the ray
    let mut pts = vec![0.0; 2 * 2 * n];
    let mut seeds = vec![0.0; 2 * 2 * n];
    let mut radii = Vec::with_capacity(n);
    let mut one_minus_t = Vec::with_capacity(n);
    let cols = 2 * n;
    for j in 0..n {
        let nu = two_pi * rng.u01();
        let r_max = spec.radius.at(nu);
        if !(r_max > 0.0) {
            return Err(invalid(format!("radius R({nu}) = {r_max} must be positive")));
        }
        let r = r_max * rng.u01();
        let t = rng.u01();
        let (dx, dy) = (nu.cos(), nu.sin());
        let q = t * r;
        pts[2 * j] = 0.0;
        pts[cols + 2 * j] = 0.0;
        pts[2 * j + 1] = q * dx;
        pts[cols + 2 * j + 1] = q * dy;
        for col in [2 * j, 2 * j + 1] {
            seeds[col] = dx;
            seeds[cols + col] = dy;
        }
        radii.push(r_max);
        one_minus_t.push(1.0 - t);
    }
    let ids = u.eval_batch(tape, &pts, cols, Some(&seeds));
    let scale = two_pi / n as f64;
    let mut terms: Vec<(NodeId, f64)> = Vec::with_capacity(3 * n);
    for j in 0..n {
        let origin = ids[2 * j];
        let interior = ids[2 * j + 1];
        let r_max = radii[j];
        terms.push((origin, -scale / r_max));
        if r_max != 1.0 {
            let dr = tape.extract1(origin);
            terms.push((dr, scale * r_max.ln()));
        }
        let d2 = tape.extract2(interior);
        terms.push((d2, scale * r_max * one_minus_t[j]));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Canonical nonlocal operator
/// int_{|y| < delta} (u(x+y) - 2 u(x) + u(x-y)) / |y|^alpha dy,
/// estimated in the two radial regimes with the epsilon truncation
/// r_eps = max(r, epsilon):
///  - alpha <= d : delta^(d-alpha) |S^(d-1)| E[D / r^(alpha+1-d)], r ~ U[0,1)
///  - alpha >  d : delta^(d+2-alpha)/(d+2-alpha) |S^(d-1)|
///                 E[D / (delta^2 r^2)], r ~ Beta(d+2-alpha, 1)
pub fn nonlocal_delta<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    x: &[f64],
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    let d = x.len();
    spec.validate(d)?;
    let df = d as f64;
    let (alpha, delta, eps) = (spec.alpha, spec.delta, spec.epsilon);
    let n = spec.n_samples;
    let surf = sphere_surface(d);
    let singular_regime = alpha > df;
    let base = if singular_regime {
        delta.powf(df + 2.0 - alpha) * surf / ((df + 2.0 - alpha) * n as f64)
    } else {
        delta.powf(df - alpha) * surf / n as f64
    };

    // column 0: u(x); columns 1 + 2j, 2 + 2j: u(x + y_j), u(x - y_j)
    let cols = 2 * n + 1;
    let mut pts = vec![0.0; d * cols];
    let mut weights = Vec::with_capacity(n);
    let mut xi = Vec::new();
    for (i, &c) in x.iter().enumerate() {
        pts[i * cols] = c;
    }
    for j in 0..n {
        unit_sphere(rng, d, &mut xi)?;
        let r = if singular_regime {
            beta_one(rng, df + 2.0 - alpha)?
        } else {
            rng.u01()
        };
        let r_eps = r.max(eps);
        let w = if singular_regime {
            base / (delta * delta * r_eps * r_eps)
        } else {
            base / r_eps.powf(alpha + 1.0 - df)
        };
        weights.push(w);
        for i in 0..d {
            let y = delta * r_eps * xi[i];
            pts[i * cols + 1 + 2 * j] = x[i] + y;
            pts[i * cols + 2 + 2 * j] = x[i] - y;
        }
    }
    let ids = u.eval_batch(tape, &pts, cols, None);
    // one second-difference node per sample keeps the cancellation exact
    // for constant u
    let mut terms: Vec<(NodeId, f64)> = Vec::with_capacity(n);
    for (j, &w) in weights.iter().enumerate() {
        let d = tape.weighted_sum(&[
            (ids[1 + 2 * j], 1.0),
            (ids[2 + 2 * j], 1.0),
            (ids[0], -2.0),
        ]);
        terms.push((d, w));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Fractional Laplacian (-Delta)^(alpha/2) u(x): the ball of radius r0
/// uses r_I = r0 * Beta(2-alpha, 1) draws with the 1/r^2 weight, the
/// exterior uses r_O = r0 / Beta(alpha, 1) draws unweighted. The sample
/// budget splits ceil(N/2) inner / floor(N/2) outer. The inner radii get
/// the same truncation floor as the nonlocal operator (r normalized by
/// r0), without which rounding noise in the second difference divided by
/// r^2 blows the estimator variance up at alpha > 1.
pub fn fractional_laplacian<S: Scalar>(
    tape: &mut Tape<S>,
    u: &dyn Surrogate<S>,
    x: &[f64],
    spec: &EstimatorSpec,
    rng: &mut RngStream,
) -> Result<NodeId, EstimatorError> {
    let d = x.len();
    spec.validate(d)?;
    let (alpha, r0) = (spec.alpha, spec.r0);
    let n_inner = spec.n_samples.div_ceil(2);
    let n_outer = spec.n_samples / 2;
    let c = crate::oracles::fractional_laplacian_constant(d, alpha);
    let surf = sphere_surface(d);
    let inner_pref = c * surf * r0.powf(2.0 - alpha) / (2.0 * (2.0 - alpha) * n_inner as f64);
    let outer_pref = if n_outer > 0 {
        c * surf * r0.powf(-alpha) / (2.0 * alpha * n_outer as f64)
    } else {
        0.0
    };

    let cols = 2 * (n_inner + n_outer) + 1;
    let mut pts = vec![0.0; d * cols];
    for (i, &cx) in x.iter().enumerate() {
        pts[i * cols] = cx;
    }
    let mut weights = Vec::with_capacity(n_inner + n_outer);
    let mut xi = Vec::new();
    for j in 0..n_inner + n_outer {
        unit_sphere(rng, d, &mut xi)?;
        let (r, w) = if j < n_inner {
            let r = r0 * beta_one(rng, 2.0 - alpha)?.max(spec.epsilon);
            (r, inner_pref / (r * r))
        } else {
            (r0 / beta_one(rng, alpha)?, outer_pref)
        };
        weights.push(w);
        for i in 0..d {
            pts[i * cols + 1 + 2 * j] = x[i] + r * xi[i];
            pts[i * cols + 2 + 2 * j] = x[i] - r * xi[i];
        }
    }
    let ids = u.eval_batch(tape, &pts, cols, None);
    // terms: w * (2 u(x) - u(x+y) - u(x-y)), one node per sample
    let mut terms: Vec<(NodeId, f64)> = Vec::with_capacity(weights.len());
    for (j, &w) in weights.iter().enumerate() {
        let d = tape.weighted_sum(&[
            (ids[0], 2.0),
            (ids[1 + 2 * j], -1.0),
            (ids[2 + 2 * j], -1.0),
        ]);
        terms.push((d, w));
    }
    Ok(tape.weighted_sum(&terms))
}
