//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Budgets are desk-scale for a single CPU core; the verifiable
//! estimator-versus-oracle core runs at the full 1e6-sample budget.
//!
//! Run with `cargo test --test acceptance -- --test-threads=1 --nocapture`
//! to watch progress (the suite also passes under the default harness).

use nonlocal_pinn::autodiff::scalar::{Dual, Dual2, Scalar};
use nonlocal_pinn::autodiff::tape::{grad_input, grad_params, second_directional, Tape};
use nonlocal_pinn::estimators::Surrogate;
use nonlocal_pinn::network::{forward_graph, Activation, ConstraintWrapper, NetworkParams};
use nonlocal_pinn::oracles;
use nonlocal_pinn::problems;
use nonlocal_pinn::samplers::RngStream;
use nonlocal_pinn::training::{train, TrainArtifacts, TrainConfig};
use nonlocal_pinn::verify;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

/// Heavy criteria share the single core; serialize them.
fn lock() -> std::sync::MutexGuard<'static, ()> {
    static GUARD: OnceLock<Mutex<()>> = OnceLock::new();
    match GUARD.get_or_init(|| Mutex::new(())).lock() {
        Ok(g) => g,
        Err(poisoned) => poisoned.into_inner(),
    }
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {}: {}",
        criterion,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    assert!(pass, "[{criterion}] {detail}");
}

// -------------------------------------------------------------------
// criterion 1: estimator-oracle suite, 7 estimators x 3 test functions,
// |MC mean (1e6 samples) - oracle| <= 3 stderr, runtime < 5 min
// -------------------------------------------------------------------
#[test]
fn criterion_1_estimator_oracle_suite() {
    let _g = lock();
    let start = Instant::now();
    let rep = verify::run_verification(1_000_000, 3.0, 20_260_809);
    let elapsed = start.elapsed().as_secs_f64();
    for c in &rep.checks {
        println!(
            "  {}/{}: mc {:+.6e} oracle {:+.6e} stderr {:.1e} -> {}",
            c.estimator,
            c.test_fn,
            c.mc_mean,
            c.oracle,
            c.stderr,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    report(
        "criterion 1",
        rep.all_pass && rep.checks.len() == 21 && elapsed < 300.0,
        &format!(
            "{}/21 estimator-oracle checks passed in {elapsed:.1}s (limit 300s)",
            rep.checks.iter().filter(|c| c.pass).count()
        ),
    );
}

// -------------------------------------------------------------------
// criterion 2: regularization-identity exactness for the 1D
// hypersingular oracle on u = x^2(x-1) at 50 interior singular points
// -------------------------------------------------------------------
#[test]
fn criterion_2_hypersingular_identity_exactness() {
    let u = oracles::AutoC2(|x: Dual2| x * x * (x - Dual2::new(1.0, 0.0, 0.0)));
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let s = 0.02 + 0.96 * (k as f64 + 0.5) / 50.0;
        let got = oracles::oracle_hypersingular_1d(&u, s, 0.0, 1.0, 1e-10).unwrap();
        let exact = -0.5 + 3.0 * s + (3.0 * s * s - 2.0 * s) * ((1.0 - s) / s).ln();
        worst = worst.max((got - exact).abs());
    }
    report(
        "criterion 2",
        worst <= 1e-8,
        &format!("max |oracle - closed form| = {worst:.2e} over 50 singular points (tol 1e-8)"),
    );
}

// -------------------------------------------------------------------
// criterion 3: nonlocal forcing identities for both kernel cases at
// delta in {1/32, 0.2}, 50 interior points, within 1e-6
// -------------------------------------------------------------------
#[test]
fn criterion_3_nonlocal_forcing_identities() {
    let case1 = oracles::AutoC2(|x: Dual2| {
        let one = Dual2::new(1.0, 0.0, 0.0);
        x * x * (one - x * x)
    });
    let case2 = oracles::AutoC2(|x: Dual2| {
        let one = Dual2::new(1.0, 0.0, 0.0);
        -(x * x * (one - x) * (one - x))
    });
    let mut worst: f64 = 0.0;
    for &delta in &[1.0 / 32.0, 0.2] {
        for k in 0..50 {
            let x = (k as f64 + 0.5) / 50.0;
            // case 1: gamma = delta^-2 |s|^-1 (alpha = 1)
            let l1 = oracles::oracle_nonlocal_delta_1d(&case1, x, 1.0, delta, 1e-10).unwrap();
            let f1 = 12.0 * x * x - 2.0 + delta * delta;
            worst = worst.max((-l1 / (delta * delta) - f1).abs());
            // case 2: gamma = (1/4) delta^-1/2 |s|^-5/2 (alpha = 5/2)
            let l2 = oracles::oracle_nonlocal_delta_1d(&case2, x, 2.5, delta, 1e-10).unwrap();
            let f2 = 12.0 * x * x - 12.0 * x + 2.0 + 0.4 * delta * delta;
            worst = worst.max((-0.25 * delta.powf(-0.5) * l2 - f2).abs());
        }
    }
    report(
        "criterion 3",
        worst <= 1e-6,
        &format!("max forcing-identity error {worst:.2e} over 2 kernels x 2 deltas x 50 points (tol 1e-6)"),
    );
}

// -------------------------------------------------------------------
// criterion 4: end-to-end training on the six 1D problems, median
// relative L2 over 3 seeds within the stated tolerances, each run under
// 10 minutes desk-scale
// -------------------------------------------------------------------

struct Budget {
    problem: &'static str,
    tol: f64,
    batch: usize,
    adam: usize,
    lbfgs: usize,
    n_samples: Option<usize>,
}

fn run_budget(b: &Budget, seed: u64) -> (f64, f64) {
    let p = problems::lookup(b.problem).unwrap();
    let mut cfg = TrainConfig::for_problem(&p);
    cfg.seed = seed;
    cfg.batch_size = b.batch;
    cfg.adam.iterations = b.adam;
    cfg.lbfgs.iterations = b.lbfgs;
    cfg.n_samples = b.n_samples;
    let start = Instant::now();
    let out = train(&cfg, &TrainArtifacts::default()).unwrap();
    (out.final_rel_l2, start.elapsed().as_secs_f64())
}

fn median3(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn criterion_4_case(b: &Budget) {
    let _g = lock();
    let mut rels = Vec::new();
    let mut max_t: f64 = 0.0;
    for seed in 0..3 {
        let (rel, secs) = run_budget(b, seed);
        println!("  {} seed {seed}: rel_l2 {rel:.4e} in {secs:.0}s", b.problem);
        rels.push(rel);
        max_t = max_t.max(secs);
    }
    let med = median3(rels);
    report(
        "criterion 4",
        med <= b.tol && max_t < 600.0,
        &format!(
            "{}: median rel_l2 {med:.4e} (tol {:.0e}), slowest run {max_t:.0}s (limit 600s)",
            b.problem, b.tol
        ),
    );
}

#[test]
fn criterion_4_volterra_1d_bounded() {
    // the reference schedule verbatim: N_s=40, Adam 1000 + L-BFGS 1000,
    // batch 128 (paper endpoint 0.19% at its largest N_s)
    criterion_4_case(&Budget {
        problem: "volterra_1d_bounded",
        tol: 1e-2,
        batch: 128,
        adam: 1000,
        lbfgs: 1000,
        n_samples: Some(40),
    });
}

#[test]
fn criterion_4_volterra_1d_singular() {
    criterion_4_case(&Budget {
        problem: "volterra_1d_singular",
        tol: 2e-2,
        batch: 64,
        adam: 1000,
        lbfgs: 2000,
        n_samples: Some(100),
    });
}

#[test]
fn criterion_4_fredholm_1d() {
    criterion_4_case(&Budget {
        problem: "fredholm_1d",
        tol: 1e-2,
        batch: 32,
        adam: 2500,
        lbfgs: 800,
        n_samples: Some(400),
    });
}

#[test]
fn criterion_4_hypersingular_1d() {
    criterion_4_case(&Budget {
        problem: "hypersingular_1d",
        tol: 2e-2,
        batch: 64,
        adam: 2000,
        lbfgs: 300,
        n_samples: Some(40),
    });
}

#[test]
fn criterion_4_nonlocal_1d_bounded() {
    criterion_4_case(&Budget {
        problem: "nonlocal_1d_bounded",
        tol: 2e-2,
        batch: 64,
        adam: 2000,
        lbfgs: 500,
        n_samples: Some(80),
    });
}

#[test]
fn criterion_4_nonlocal_1d_singular() {
    criterion_4_case(&Budget {
        problem: "nonlocal_1d_singular",
        tol: 2e-2,
        batch: 64,
        adam: 2000,
        lbfgs: 500,
        n_samples: Some(40),
    });
}

// -------------------------------------------------------------------
// criterion 5: 4D nonlocal problem at the reduced budget (Adam 10 000,
// batch 128) reaches rel L2 <= 5e-2 on the slice [x1, x2, 0.2, 0.2]
// -------------------------------------------------------------------
#[test]
fn criterion_5_nonlocal_4d_desk_scale() {
    let _g = lock();
    let p = problems::lookup("nonlocal_4d").unwrap();
    let mut cfg = TrainConfig::for_problem(&p);
    cfg.seed = 0;
    cfg.adam.iterations = 10_000;
    cfg.lbfgs.iterations = 0;
    cfg.batch_size = 128;
    let start = Instant::now();
    let out = train(&cfg, &TrainArtifacts::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        "criterion 5",
        out.final_rel_l2 <= 5e-2,
        &format!(
            "nonlocal_4d slice rel_l2 {:.4e} (tol 5e-2) after Adam 10000 in {secs:.0}s \
             (reference full-budget value: 6.85e-3)",
            out.final_rel_l2
        ),
    );
}

// -------------------------------------------------------------------
// criterion 6: N_s sweep monotonicity on fredholm_1d and
// volterra_1d_bounded: medians over 5 seeds non-increasing across
// {4, 40, 400}, endpoints within a factor 3 of the printed extremes
// -------------------------------------------------------------------

fn sweep_medians(b: &Budget, ns_list: &[usize], seeds: u64) -> Vec<f64> {
    ns_list
        .iter()
        .map(|&ns| {
            let mut rels = Vec::new();
            for seed in 0..seeds {
                let p = problems::lookup(b.problem).unwrap();
                let mut cfg = TrainConfig::for_problem(&p);
                cfg.seed = seed;
                cfg.batch_size = b.batch;
                cfg.adam.iterations = b.adam;
                cfg.lbfgs.iterations = b.lbfgs;
                cfg.n_samples = Some(ns);
                let out = train(&cfg, &TrainArtifacts::default()).unwrap();
                println!(
                    "  {} ns {ns} seed {seed}: rel_l2 {:.4e}",
                    b.problem, out.final_rel_l2
                );
                rels.push(out.final_rel_l2);
            }
            rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            rels[rels.len() / 2]
        })
        .collect()
}

fn criterion_6_case(b: &Budget, lo_paper: f64, hi_paper: f64) {
    let _g = lock();
    let meds = sweep_medians(b, &[4, 40, 400], 5);
    let monotone = meds[0] >= meds[1] && meds[1] >= meds[2];
    let lo_ok = meds[0] >= lo_paper / 3.0 && meds[0] <= lo_paper * 3.0;
    let hi_ok = meds[2] >= hi_paper / 3.0 && meds[2] <= hi_paper * 3.0;
    report(
        "criterion 6",
        monotone && lo_ok && hi_ok,
        &format!(
            "{}: medians over 5 seeds at Ns=4/40/400 = {:.3e}/{:.3e}/{:.3e}; \
             non-increasing={monotone}, endpoints within 3x of {lo_paper}/{hi_paper}",
            b.problem, meds[0], meds[1], meds[2]
        ),
    );
}

#[test]
fn criterion_6_sweep_volterra() {
    criterion_6_case(
        &Budget {
            problem: "volterra_1d_bounded",
            tol: 0.0,
            batch: 32,
            adam: 1000,
            lbfgs: 1000,
            n_samples: None,
        },
        4.74e-2,
        0.19e-2,
    );
}

#[test]
fn criterion_6_sweep_fredholm() {
    criterion_6_case(
        &Budget {
            problem: "fredholm_1d",
            tol: 0.0,
            batch: 32,
            adam: 2500,
            lbfgs: 800,
            n_samples: None,
        },
        6.3e-2,
        0.49e-2,
    );
}

// -------------------------------------------------------------------
// criterion 7: autodiff correctness on 100 random MLP instances plus an
// end-to-end parameter gradient through a derivative-bearing loss
// -------------------------------------------------------------------
#[test]
fn criterion_7_autodiff_correctness() {
    let _g = lock();
    let dims = [4usize, 64, 64, 64, 64, 1];
    let mut worst_grad: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    let mut rng = RngStream::new(4242);

    for instance in 0..100 {
        let params =
            NetworkParams::init_glorot(&dims, Activation::Tanh, 10_000 + instance).unwrap();
        let x: Vec<f64> = (0..4).map(|_| 2.0 * rng.u01() - 1.0).collect();

        let value_at = |pt: &[f64]| -> f64 {
            let mut t: Tape<f64> = Tape::new();
            let block = t.alloc_params(&params.flat);
            let leaves: Vec<_> = pt.iter().map(|&v| t.leaf(v)).collect();
            let out =
                forward_graph(&mut t, &params, &block, ConstraintWrapper::None, &leaves).unwrap();
            t.value(out).unwrap()
        };

        // gradient vs central differences, h = 1e-4, 1e-5 relative
        let mut t: Tape<f64> = Tape::new();
        let block = t.alloc_params(&params.flat);
        let leaves: Vec<_> = x.iter().map(|&v| t.leaf(v)).collect();
        let out = forward_graph(&mut t, &params, &block, ConstraintWrapper::None, &leaves).unwrap();
        let g = grad_input(&mut t, out, &leaves).unwrap();
        let h = 1e-4;
        let scale = g.iter().fold(1e-3f64, |a, &b| a.max(b.abs()));
        for i in 0..4 {
            let mut up = x.clone();
            up[i] += h;
            let mut dn = x.clone();
            dn[i] -= h;
            let fd = (value_at(&up) - value_at(&dn)) / (2.0 * h);
            worst_grad = worst_grad.max((g[i] - fd).abs() / scale);
        }

        // second directional vs second central difference, h = 1e-3
        let mut v: Vec<f64> = (0..4).map(|_| 2.0 * rng.u01() - 1.0).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for c in v.iter_mut() {
            *c /= norm;
        }
        let mut t: Tape<Dual2> = Tape::new();
        let block = t.alloc_params(&params.flat);
        let leaves: Vec<_> = x
            .iter()
            .zip(&v)
            .map(|(&a, &s)| t.leaf(Dual2::seeded(a, s)))
            .collect();
        let out = forward_graph(&mut t, &params, &block, ConstraintWrapper::None, &leaves).unwrap();
        let d2 = second_directional(&mut t, out, &leaves, &v).unwrap();
        let h2 = 1e-3;
        let up: Vec<f64> = x.iter().zip(&v).map(|(&a, &s)| a + h2 * s).collect();
        let dn: Vec<f64> = x.iter().zip(&v).map(|(&a, &s)| a - h2 * s).collect();
        let fd2 = (value_at(&up) - 2.0 * value_at(&x) + value_at(&dn)) / (h2 * h2);
        worst_second = worst_second.max((d2 - fd2).abs() / fd2.abs().max(1e-2));
    }

    // end-to-end: loss = (du/dx)^2 for a small MLP, gradient over theta
    // against central differences at h = 1e-5, 1e-3 relative
    let dims_small = [1usize, 8, 8, 1];
    let params = NetworkParams::init_glorot(&dims_small, Activation::Tanh, 77).unwrap();
    let x0 = 0.37;
    let loss_at = |flat: &[f64]| -> f64 {
        let p = NetworkParams {
            dims: dims_small.to_vec(),
            activation: Activation::Tanh,
            flat: flat.to_vec(),
        };
        let mut t: Tape<Dual> = Tape::new();
        let block = t.alloc_params(flat);
        let leaf = t.leaf(Dual::seeded(x0, 1.0));
        let out = forward_graph(&mut t, &p, &block, ConstraintWrapper::None, &[leaf]).unwrap();
        let du = t.extract1(out);
        let l = t.mul(du, du);
        t.value(l).unwrap()
    };
    let mut t: Tape<Dual> = Tape::new();
    let block = t.alloc_params(&params.flat);
    let leaf = t.leaf(Dual::seeded(x0, 1.0));
    let out = forward_graph(&mut t, &params, &block, ConstraintWrapper::None, &[leaf]).unwrap();
    let du = t.extract1(out);
    let l = t.mul(du, du);
    let g = grad_params(&mut t, l, &block).unwrap();
    let h = 1e-5;
    let gscale = g.iter().fold(1e-6f64, |a, &b| a.max(b.abs()));
    let mut worst_e2e: f64 = 0.0;
    for k in 0..params.flat.len() {
        let mut up = params.flat.clone();
        up[k] += h;
        let mut dn = params.flat.clone();
        dn[k] -= h;
        let fd = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
        worst_e2e = worst_e2e.max((g[k] - fd).abs() / gscale);
    }

    report(
        "criterion 7",
        worst_grad <= 1e-5 && worst_second <= 1e-4 && worst_e2e <= 1e-3,
        &format!(
            "100 MLPs: grad rel err {worst_grad:.2e} (tol 1e-5), second-directional rel err \
             {worst_second:.2e} (tol 1e-4), derivative-loss parameter grad rel err {worst_e2e:.2e} (tol 1e-3)"
        ),
    );
}

// -------------------------------------------------------------------
// criterion 8: identical config + seed give a byte-identical
// metrics.csv (exercised through the CLI binary)
// -------------------------------------------------------------------
#[test]
fn criterion_8_byte_identical_metrics() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "problem": "nonlocal_1d_singular",
            "seed": 5,
            "train": {
                "n_residual_points": 64, "n_boundary_points": 32,
                "batch_size": 16,
                "adam": {"iterations": 40}, "lbfgs": {"iterations": 10}
            },
            "estimator": {"n_samples": 8}
        }"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_nonlocal-pinn");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = std::process::Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    report(
        "criterion 8",
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        &format!(
            "repeated runs produced byte-identical metrics.csv ({} bytes)",
            outputs[0].len()
        ),
    );
}

// -------------------------------------------------------------------
// long-running reference configuration, excluded from the default gate:
// the 10D Volterra problem (reference error 0.134%) with target <= 1%
// -------------------------------------------------------------------
#[test]
#[ignore = "long test: run with --ignored (several hours at the reference budget)"]
fn optional_volterra_10d_long() {
    let p = problems::lookup("volterra_10d_bounded").unwrap();
    let mut cfg = TrainConfig::for_problem(&p);
    cfg.seed = 0;
    let out = train(&cfg, &TrainArtifacts::default()).unwrap();
    report(
        "optional 10d",
        out.final_rel_l2 <= 1e-2,
        &format!("volterra_10d_bounded rel_l2 {:.4e} (target 1e-2)", out.final_rel_l2),
    );
}

// -------------------------------------------------------------------
// auxiliary surface used by criterion checks: the fused evaluation path
// must agree with the node-per-op graph path on the paper architecture
// -------------------------------------------------------------------
#[test]
fn fused_and_graph_paths_agree_on_paper_architecture() {
    let params = std::sync::Arc::new(
        NetworkParams::init_glorot(&[2, 64, 64, 64, 64, 1], Activation::Tanh, 5).unwrap(),
    );
    let net = nonlocal_pinn::network::FusedNet::new(params.clone(), ConstraintWrapper::None);
    let pt = [0.21, -0.63];
    let seeds = [0.8, -0.6];

    let mut tg: Tape<Dual2> = Tape::new();
    let block = tg.alloc_params(&params.flat);
    let leaves: Vec<_> = pt
        .iter()
        .zip(&seeds)
        .map(|(&a, &s)| tg.leaf(Dual2::seeded(a, s)))
        .collect();
    let out_g = forward_graph(&mut tg, &params, &block, ConstraintWrapper::None, &leaves).unwrap();
    let vg = tg.val_of(out_g);

    let mut tf: Tape<Dual2> = Tape::new();
    let _ = tf.alloc_params(&params.flat);
    let pts = [pt[0], pt[1]];
    let sds = [seeds[0], seeds[1]];
    let ids = net.eval_batch(&mut tf, &pts, 1, Some(&sds));
    let vf = tf.val_of(ids[0]);

    assert!((vg.v - vf.v).abs() < 1e-12);
    assert!((vg.d1 - vf.d1).abs() < 1e-11);
    assert!((vg.d2 - vf.d2).abs() < 1e-11);
}
