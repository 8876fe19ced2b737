//! Estimator-versus-oracle verification: every Monte Carlo estimator is
//! checked against a deterministic quadrature value on fixed test
//! functions. Backs the `verify-estimators` command and the acceptance
//! suite.

use crate::autodiff::scalar::{fns, Dual2, Scalar};
use crate::autodiff::tape::Tape;
use crate::estimators::{
    fractional_laplacian, fredholm, hypersingular_1d, hypersingular_2d, nonlocal_delta,
    volterra_bounded, volterra_weak_singular, EstimatorKind, EstimatorSpec, FieldSurrogate,
    Nonlinearity, RadiusSpec, ScalarField,
};
use crate::oracles::{self, QuadratureRule};
use crate::problems::bessel_j0;
use crate::samplers::RngStream;
use serde::Serialize;
use std::f64::consts::PI;

/// Fixed smooth test functions for the verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFn {
    Const(f64),
    SinPi1d,
    SinOverSqrt,
    Exp1d,
    OnePlusSin,
    Square1d,
    CubicHyper,
    X1Linear2d,
    SinSinExp2d,
    QuarticCase2,
    Sin2x,
    Gauss2d,
    Gauss1d,
    Lorentzian1d,
}

impl ScalarField for TestFn {
    fn dim(&self) -> usize {
        match self {
            TestFn::X1Linear2d | TestFn::SinSinExp2d | TestFn::Gauss2d => 2,
            _ => 1,
        }
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match *self {
            TestFn::Const(c) => S::from_f64(c),
            TestFn::SinPi1d => fns::sin(x[0].scale(PI)),
            TestFn::SinOverSqrt => {
                if x[0].val() <= 0.0 {
                    S::zero()
                } else {
                    fns::sin(x[0]) * fns::powf(x[0], -0.5)
                }
            }
            TestFn::Exp1d => fns::exp(x[0]),
            TestFn::OnePlusSin => S::one() + fns::sin(x[0]),
            TestFn::Square1d => x[0] * x[0],
            TestFn::CubicHyper => x[0] * x[0] * (x[0] - S::one()),
            TestFn::X1Linear2d => x[0],
            TestFn::SinSinExp2d => {
                fns::sin(x[0].scale(PI)) * fns::sin(x[1].scale(PI))
                    + fns::exp(x[0] + x[1].scale(2.0))
            }
            TestFn::QuarticCase2 => {
                let d = S::one() - x[0];
                -(x[0] * x[0] * d * d)
            }
            TestFn::Sin2x => fns::sin(x[0].scale(2.0)),
            TestFn::Gauss2d => fns::exp(-(x[0] * x[0] + x[1] * x[1])),
            TestFn::Gauss1d => fns::exp(-(x[0] * x[0])),
            TestFn::Lorentzian1d => (S::one() + x[0] * x[0]).recip(),
        }
    }
}

/// Adapters so a [`TestFn`] can feed the quadrature oracles.
struct As1C2(TestFn);
impl oracles::Fn1C2 for As1C2 {
    fn f(&self, x: f64) -> f64 {
        self.0.eval::<f64>(&[x])
    }
    fn df(&self, x: f64) -> f64 {
        self.0.eval::<Dual2>(&[Dual2::seeded(x, 1.0)]).d1
    }
    fn d2f(&self, x: f64) -> f64 {
        2.0 * self.0.eval::<Dual2>(&[Dual2::seeded(x, 1.0)]).d2
    }
}

struct AsDC2(TestFn);
impl oracles::FnDC2 for AsDC2 {
    fn dim(&self) -> usize {
        ScalarField::dim(&self.0)
    }
    fn f(&self, x: &[f64]) -> f64 {
        self.0.eval::<f64>(x)
    }
    fn dirf(&self, x: &[f64], v: &[f64]) -> f64 {
        let s: Vec<Dual2> = x.iter().zip(v).map(|(&a, &t)| Dual2::seeded(a, t)).collect();
        self.0.eval::<Dual2>(&s).d1
    }
    fn dir2(&self, x: &[f64], v: &[f64]) -> f64 {
        let s: Vec<Dual2> = x.iter().zip(v).map(|(&a, &t)| Dual2::seeded(a, t)).collect();
        2.0 * self.0.eval::<Dual2>(&s).d2
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorCheck {
    pub estimator: &'static str,
    pub test_fn: &'static str,
    pub mc_mean: f64,
    pub oracle: f64,
    pub stderr: f64,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub tol_sigma: f64,
    pub samples: usize,
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<EstimatorCheck>,
}

/// One verification case: an estimator closure evaluated in chunks
/// against a deterministic oracle value.
struct Case {
    estimator: &'static str,
    test_fn: &'static str,
    oracle: f64,
    run: Box<dyn Fn(&mut RngStream, usize) -> f64>,
}

fn chunked_mc(case: &Case, samples: usize, seed: u64) -> (f64, f64) {
    // split the sample budget into equal chunks; each chunk value is an
    // unbiased estimate, so the grand mean is too and the chunk spread
    // gives the standard error of the mean.
    let chunk = samples.clamp(1, 1000.max(samples / 1000));
    let n_chunks = (samples / chunk).max(1);
    let mut rng = RngStream::substream(seed, 77);
    let mut vals = Vec::with_capacity(n_chunks);
    for _ in 0..n_chunks {
        vals.push((case.run)(&mut rng, chunk));
    }
    let mean = vals.iter().sum::<f64>() / n_chunks as f64;
    let var = if n_chunks > 1 {
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_chunks as f64 - 1.0)
    } else {
        0.0
    };
    (mean, (var / n_chunks as f64).sqrt())
}

fn spec_for(kind: EstimatorKind, n: usize) -> EstimatorSpec {
    EstimatorSpec {
        kind,
        n_samples: n,
        ..EstimatorSpec::default()
    }
}

fn cases() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    let tol = 1e-9;

    // --- bounded-kernel Volterra ---------------------------------------
    let vb = |test_fn: &'static str,
              u: TestFn,
              k: &'static (dyn Fn(f64, f64) -> f64 + Sync),
              x: f64,
              oracle: f64| Case {
        estimator: "volterra_bounded",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = spec_for(EstimatorKind::VolterraBounded, n);
            let id = volterra_bounded(&mut tape, &FieldSurrogate(&u), k, x, &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(vb("constant", TestFn::Const(1.0), &|_, _| 1.0, 0.8, 0.8));
    cases.push(vb(
        "sin_kernel_sin",
        TestFn::SinPi1d,
        &|x, s| -(PI * (x - s)).sin(),
        0.5,
        oracles::oracle_integral(
            |s| -(PI * (0.5 - s)).sin() * (PI * s).sin(),
            0.0,
            0.5,
            QuadratureRule::adaptive(tol),
        )
        .unwrap(),
    ));
    cases.push(vb(
        "exp_kernel_exp",
        TestFn::Exp1d,
        &|x, s| (s - x).exp(),
        0.9,
        oracles::oracle_integral(
            |s: f64| (s - 0.9).exp() * s.exp(),
            0.0,
            0.9,
            QuadratureRule::adaptive(tol),
        )
        .unwrap(),
    ));

    // --- weakly singular Volterra ---------------------------------------
    let ws = |test_fn: &'static str, u: TestFn, alpha: f64, x: f64, oracle: f64| Case {
        estimator: "volterra_weak_singular",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                alpha,
                ..spec_for(EstimatorKind::VolterraWeakSingular, n)
            };
            let id = volterra_weak_singular(&mut tape, &FieldSurrogate(&u), x, &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(ws("constant", TestFn::Const(1.0), 0.5, 1.0, 2.0));
    // reference closed form: pi sin(x/2) J0(x/2) at x = 1
    cases.push(ws(
        "abel_bessel",
        TestFn::SinOverSqrt,
        0.5,
        1.0,
        PI * 0.5f64.sin() * bessel_j0(0.5),
    ));
    cases.push(ws(
        "exponential",
        TestFn::Exp1d,
        0.25,
        0.7,
        oracles::weak_singular_volterra(|s: f64| s.exp(), 0.25, 0.7, tol).unwrap(),
    ));

    // --- Fredholm --------------------------------------------------------
    let fl = (-PI / 2.0, PI / 2.0);
    let fh = |test_fn: &'static str,
              u: TestFn,
              k: &'static (dyn Fn(f64, f64) -> f64 + Sync),
              g: Nonlinearity,
              x: f64,
              oracle: f64| Case {
        estimator: "fredholm",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                limits: fl,
                ..spec_for(EstimatorKind::Fredholm, n)
            };
            let id = fredholm(&mut tape, &FieldSurrogate(&u), k, g, x, &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(fh(
        "constant",
        TestFn::Const(2.5),
        &|_, _| 1.0,
        Nonlinearity::Identity,
        0.3,
        PI * 2.5,
    ));
    cases.push(fh(
        "nonlinear_xt",
        TestFn::OnePlusSin,
        &|x, t| 0.25 * x * t,
        Nonlinearity::Square,
        1.0,
        oracles::oracle_integral(
            |t: f64| {
                let u = 1.0 + t.sin();
                0.25 * t * u * u
            },
            fl.0,
            fl.1,
            QuadratureRule::adaptive(tol),
        )
        .unwrap(),
    ));
    cases.push(fh(
        "cos_kernel_square_arg",
        TestFn::Square1d,
        &|x, t| (x - t).cos(),
        Nonlinearity::Identity,
        0.4,
        oracles::oracle_integral(
            |t: f64| (0.4 - t).cos() * t * t,
            fl.0,
            fl.1,
            QuadratureRule::adaptive(tol),
        )
        .unwrap(),
    ));

    // --- 1D hypersingular -------------------------------------------------
    let h1 = |test_fn: &'static str, u: TestFn, s: f64, oracle: f64| Case {
        estimator: "hypersingular_1d",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<Dual2> = Tape::new();
            let spec = EstimatorSpec {
                limits: (0.0, 1.0),
                ..spec_for(EstimatorKind::Hypersingular1d, n)
            };
            let id = hypersingular_1d(&mut tape, &FieldSurrogate(&u), s, &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(h1("constant", TestFn::Const(1.0), 0.5, -4.0));
    let s = 0.3;
    cases.push(h1(
        "cubic_reference",
        TestFn::CubicHyper,
        s,
        -0.5 + 3.0 * s + (3.0 * s * s - 2.0 * s) * ((1.0 - s) / s).ln(),
    ));
    cases.push(h1(
        "sine",
        TestFn::SinPi1d,
        0.4,
        oracles::oracle_hypersingular_1d(&As1C2(TestFn::SinPi1d), 0.4, 0.0, 1.0, tol).unwrap(),
    ));

    // --- 2D hypersingular --------------------------------------------------
    let h2 = |test_fn: &'static str, u: TestFn, oracle: f64| Case {
        estimator: "hypersingular_2d",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<Dual2> = Tape::new();
            let spec = EstimatorSpec {
                radius: RadiusSpec::Constant { r: 1.0 },
                ..spec_for(EstimatorKind::Hypersingular2d, n)
            };
            let id = hypersingular_2d(&mut tape, &FieldSurrogate(&u), &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(h2("constant", TestFn::Const(1.0), -2.0 * PI));
    cases.push(h2("linear", TestFn::X1Linear2d, 0.0));
    cases.push(h2(
        "sinsinexp",
        TestFn::SinSinExp2d,
        oracles::oracle_hypersingular_2d(&AsDC2(TestFn::SinSinExp2d), &|_| 1.0, 1e-8).unwrap(),
    ));

    // --- nonlocal operator --------------------------------------------------
    let nl1 = |test_fn: &'static str,
               u: TestFn,
               x: f64,
               alpha: f64,
               delta: f64,
               eps: f64,
               oracle: f64| Case {
        estimator: "nonlocal_delta",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                alpha,
                delta,
                epsilon: eps,
                ..spec_for(EstimatorKind::NonlocalDelta, n)
            };
            let id = nonlocal_delta(&mut tape, &FieldSurrogate(&u), &[x], &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(nl1("constant", TestFn::Const(3.3), 0.5, 1.0, 0.2, 1e-6, 0.0));
    cases.push(nl1(
        "quartic_singular",
        TestFn::QuarticCase2,
        0.5,
        2.5,
        0.2,
        1e-6,
        oracles::oracle_nonlocal_delta_1d(&As1C2(TestFn::QuarticCase2), 0.5, 2.5, 0.2, tol)
            .unwrap(),
    ));
    let g2_oracle = oracles::oracle_nonlocal_delta_2d(
        &AsDC2(TestFn::Gauss2d),
        &[0.3, 0.2],
        1.5,
        0.4,
        tol,
    )
    .unwrap();
    cases.push(Case {
        estimator: "nonlocal_delta",
        test_fn: "gaussian_2d",
        oracle: g2_oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                alpha: 1.5,
                delta: 0.4,
                epsilon: 1e-6,
                ..spec_for(EstimatorKind::NonlocalDelta, n)
            };
            let u = TestFn::Gauss2d;
            let id =
                nonlocal_delta(&mut tape, &FieldSurrogate(&u), &[0.3, 0.2], &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    });

    // --- fractional Laplacian ------------------------------------------------
    let flap = |test_fn: &'static str, u: TestFn, x: f64, alpha: f64, r0: f64, oracle: f64| Case {
        estimator: "fractional_laplacian",
        test_fn,
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                alpha,
                r0,
                ..spec_for(EstimatorKind::FractionalLaplacian, n)
            };
            let id =
                fractional_laplacian(&mut tape, &FieldSurrogate(&u), &[x], &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    cases.push(flap("constant", TestFn::Const(1.0), 0.2, 1.0, 0.5, 0.0));
    cases.push(flap(
        "gaussian",
        TestFn::Gauss1d,
        0.0,
        1.0,
        0.7,
        oracles::oracle_fractional_laplacian_1d(&As1C2(TestFn::Gauss1d), 0.0, 1.0, 0.7, tol)
            .unwrap(),
    ));
    cases.push(flap(
        "lorentzian",
        TestFn::Lorentzian1d,
        0.3,
        1.5,
        0.5,
        oracles::oracle_fractional_laplacian_1d(&As1C2(TestFn::Lorentzian1d), 0.3, 1.5, 0.5, tol)
            .unwrap(),
    ));

    cases
}

/// Run every estimator-versus-oracle check: the Monte Carlo mean over
/// `samples` draws must lie within `tol_sigma` standard errors of the
/// deterministic oracle value (plus a tiny floating-point floor for the
/// exact constant cases, whose standard error is zero).
pub fn run_verification(samples: usize, tol_sigma: f64, seed: u64) -> VerifyReport {
    let mut checks = Vec::new();
    for case in cases() {
        let (mean, stderr) = chunked_mc(&case, samples, seed);
        let atol = 1e-9 * (1.0 + case.oracle.abs());
        let pass = (mean - case.oracle).abs() <= tol_sigma * stderr + atol;
        checks.push(EstimatorCheck {
            estimator: case.estimator,
            test_fn: case.test_fn,
            mc_mean: mean,
            oracle: case.oracle,
            stderr,
            samples,
            pass,
        });
    }
    let all_pass = checks.iter().all(|c| c.pass);
    VerifyReport {
        tol_sigma,
        samples,
        seed,
        all_pass,
        checks,
    }
}

/// Regression slope of log variance against log N_s for the bounded
/// Volterra estimator on a fixed smooth integrand; an unbiased
/// mean-of-N estimator decays with slope -1.
pub fn variance_decay_slope(seed: u64) -> f64 {
    let u = TestFn::SinPi1d;
    let ns_list = [10usize, 40, 160, 640];
    let reps = 400;
    let mut rng = RngStream::substream(seed, 99);
    let mut logs: Vec<(f64, f64)> = Vec::new();
    for &ns in &ns_list {
        let spec = spec_for(EstimatorKind::VolterraBounded, ns);
        let mut vals = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut tape: Tape<f64> = Tape::new();
            let id = volterra_bounded(
                &mut tape,
                &FieldSurrogate(&u),
                &|x, s| -(PI * (x - s)).sin(),
                0.5,
                &spec,
                &mut rng,
            )
            .unwrap();
            vals.push(tape.value(id).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps as f64 - 1.0);
        logs.push(((ns as f64).ln(), var.ln()));
    }
    // least squares slope
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// The nonlocal estimator's oracle-agreement run with a configurable
/// truncation floor, for the truncation-consistency check.
pub fn nonlocal_truncation_check(epsilon: f64, samples: usize, seed: u64) -> (f64, f64, f64) {
    let u = TestFn::QuarticCase2;
    let oracle =
        oracles::oracle_nonlocal_delta_1d(&As1C2(u), 0.5, 2.5, 0.2, 1e-10).unwrap();
    let case = Case {
        estimator: "nonlocal_delta",
        test_fn: "quartic_truncation",
        oracle,
        run: Box::new(move |rng, n| {
            let mut tape: Tape<f64> = Tape::new();
            let spec = EstimatorSpec {
                alpha: 2.5,
                delta: 0.2,
                epsilon,
                ..spec_for(EstimatorKind::NonlocalDelta, n)
            };
            let id = nonlocal_delta(&mut tape, &FieldSurrogate(&u), &[0.5], &spec, rng).unwrap();
            tape.value(id).unwrap()
        }),
    };
    let (mean, stderr) = chunked_mc(&case, samples, seed);
    (mean, oracle, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sample_verification_is_well_formed() {
        // with a tiny budget the report must still be structurally sound
        let report = run_verification(2_000, 3.0, 7);
        assert_eq!(report.checks.len(), 21);
        for c in &report.checks {
            assert!(c.mc_mean.is_finite());
            assert!(c.stderr.is_finite());
        }
        // constant rows are exact regardless of the budget
        for c in report.checks.iter().filter(|c| c.test_fn == "constant") {
            assert!(c.pass, "{}: {} vs {}", c.estimator, c.mc_mean, c.oracle);
        }
    }

    #[test]
    fn moderate_sample_verification_passes() {
        let report = run_verification(60_000, 4.0, 11);
        for c in &report.checks {
            assert!(
                c.pass,
                "{}/{}: mc {} vs oracle {} (stderr {})",
                c.estimator, c.test_fn, c.mc_mean, c.oracle, c.stderr
            );
        }
    }
}
