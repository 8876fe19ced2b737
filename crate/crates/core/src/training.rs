//! Loss assembly with adaptive weights, the Adam and L-BFGS optimizers,
//! the training loop, and metric/checkpoint emission.

use crate::autodiff::scalar::{Dual, Dual2, Scalar};
use crate::autodiff::tape::Tape;
use crate::estimators::{EstimatorSpec, Surrogate};
use crate::network::{
    batch::forward_batch, save_checkpoint, wrapper_factor, ConstraintWrapper, FusedNet,
    NetworkParams,
};
use crate::problems::{ProblemError, ProblemParams, ProblemSpec};
use crate::samplers::RngStream;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("empty evaluation grid or zero exact norm")]
    DegenerateEvalGrid,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            iterations: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub iterations: usize,
    pub history: usize,
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub max_expansions: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            iterations: 0,
            history: 20,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
            max_expansions: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrDecay {
    pub rate: f64,
    pub every: usize,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            rate: 0.9,
            every: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub problem: String,
    pub seed: u64,
    pub n_residual_points: usize,
    pub n_boundary_points: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub lr_decay: LrDecay,
    pub eval_every: usize,
    pub problem_params: ProblemParams,
    /// Estimator sample-count override (N_s); problem default if None.
    pub n_samples: Option<usize>,
}

impl TrainConfig {
    /// Per-problem defaults mirroring the reference schedules.
    pub fn for_problem(p: &ProblemSpec) -> Self {
        Self {
            problem: p.id.to_string(),
            seed: 0,
            n_residual_points: p.train.n_residual,
            n_boundary_points: p.train.n_boundary,
            batch_size: p.train.batch,
            adam: AdamConfig {
                lr: p.train.lr,
                iterations: p.train.adam_iters,
                ..AdamConfig::default()
            },
            lbfgs: LbfgsConfig {
                iterations: p.train.lbfgs_iters,
                ..LbfgsConfig::default()
            },
            lr_decay: LrDecay::default(),
            eval_every: 100,
            problem_params: ProblemParams::default(),
            n_samples: None,
        }
    }
}

/// One logged training iteration. `wall_ms` is kept at zero in the
/// metrics stream so that repeated runs of the same config and seed are
/// byte-identical; wall-clock timing is reported in the run summary.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub iteration: usize,
    pub loss_r: f64,
    pub loss_b: f64,
    pub w_r: f64,
    pub w_b: f64,
    pub rel_l2: Option<f64>,
    pub wall_ms: u64,
}

pub fn metrics_csv_header() -> &'static str {
    "iteration,loss_r,loss_b,w_r,w_b,rel_l2,wall_ms"
}

pub fn metrics_csv_row(m: &Metrics) -> String {
    let rel = m.rel_l2.map_or(String::new(), |v| format!("{v}"));
    format!(
        "{},{},{},{},{},{},{}",
        m.iteration, m.loss_r, m.loss_b, m.w_r, m.w_b, rel, m.wall_ms
    )
}

/// Adaptive weights [w_r, w_b] = [L_r, L_b] / min(L_r, L_b), treated as
/// detached constants within a step. With a single loss component the
/// weighting degenerates to 1.
pub fn adaptive_weights(loss_r: f64, loss_b: f64, has_boundary: bool) -> (f64, f64) {
    if !has_boundary {
        return (1.0, 0.0);
    }
    let min = loss_r.min(loss_b);
    if min > 0.0 {
        (loss_r / min, loss_b / min)
    } else {
        (1.0, 1.0)
    }
}

/// Training-set snapshot drawn once per run (Step 1 of the loop).
pub struct TrainingSet {
    pub residual_points: Vec<Vec<f64>>,
    pub forcing: Vec<f64>,
    pub boundary_points: Vec<Vec<f64>>,
    pub boundary_values: Vec<f64>,
}

impl TrainingSet {
    pub fn sample(problem: &ProblemSpec, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let mut rng_r = RngStream::substream(cfg.seed, 1);
        let mut residual_points = Vec::with_capacity(cfg.n_residual_points);
        let mut forcing = Vec::with_capacity(cfg.n_residual_points);
        for _ in 0..cfg.n_residual_points {
            let x = problem.sample_interior(&mut rng_r);
            forcing.push(problem.forcing(&x)?);
            residual_points.push(x);
        }
        let mut boundary_points = Vec::new();
        let mut boundary_values = Vec::new();
        if problem.constraint.has_data_loss() {
            let mut rng_b = RngStream::substream(cfg.seed, 2);
            for i in 0..cfg.n_boundary_points {
                let x = problem.sample_constraint(&mut rng_b, i);
                boundary_values.push(problem.constraint_value(&x));
                boundary_points.push(x);
            }
        }
        Ok(Self {
            residual_points,
            forcing,
            boundary_points,
            boundary_values,
        })
    }
}

/// Loss components with the gradient of the weighted total.
pub struct LossEval {
    pub loss_r: f64,
    pub loss_b: f64,
    pub w_r: f64,
    pub w_b: f64,
    pub total: f64,
    pub grad: Option<Vec<f64>>,
}

/// Per-point Monte Carlo streams: derived from the master seed, the
/// iteration key and the point's index in the training set, so draws are
/// independent across points and reproducible; a frozen iteration key
/// (L-BFGS line search) reproduces identical samples.
fn point_stream(seed: u64, iter_key: u64, point_index: usize) -> RngStream {
    let id = iter_key
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(point_index as u64)
        .wrapping_add(0x51_7C_C1_B7_27_22_0A_95);
    RngStream::substream(seed, id)
}

/// Assemble L(theta) = w_r L_r + w_b L_b over one mini-batch, with
/// L_r = 1/2 sum |r|^2 and L_b = 1/2 sum |u - g|^2, and optionally the
/// gradient of the weighted total. Weights are computed from the current
/// detached losses. Gradients accumulate point by point in index order
/// (fixed reduction order keeps runs deterministic).
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss<S: Scalar>(
    problem: &ProblemSpec,
    params: &Arc<NetworkParams>,
    wrapper: ConstraintWrapper,
    set: &TrainingSet,
    batch_idx: &[usize],
    boundary_idx: &[usize],
    espec: &EstimatorSpec,
    seed: u64,
    iter_key: u64,
    want_grad: bool,
    tape: &mut Tape<S>,
) -> Result<LossEval, TrainError> {
    let net = FusedNet::new(params.clone(), wrapper);
    let n_params = params.flat.len();
    let mut g_r = vec![0.0; if want_grad { n_params } else { 0 }];
    let mut loss_r = 0.0;

    for &pi in batch_idx {
        let x = &set.residual_points[pi];
        let mut rng = point_stream(seed, iter_key, pi);
        tape.clear();
        let block = tape.alloc_params(&params.flat);
        let r = problem.residual(tape, &net, x, espec, &mut rng, set.forcing[pi])?;
        let rv = tape.value(r).map_err(|_| TrainError::NonFinite {
            what: "residual",
            iteration: iter_key as usize,
        })?;
        loss_r += 0.5 * rv * rv;
        if want_grad {
            tape.backward(r).map_err(|_| TrainError::NonFinite {
                what: "residual gradient",
                iteration: iter_key as usize,
            })?;
            let g = tape.param_gradient(&block);
            for (acc, gi) in g_r.iter_mut().zip(&g) {
                *acc += rv * gi;
            }
        }
    }

    let has_boundary = !set.boundary_points.is_empty() && !boundary_idx.is_empty();
    let mut loss_b = 0.0;
    let mut g_b = vec![0.0; if want_grad && has_boundary { n_params } else { 0 }];
    if has_boundary {
        let dim = problem.input_dim;
        let nb = boundary_idx.len();
        let mut pts = vec![0.0; dim * nb];
        for (j, &bi) in boundary_idx.iter().enumerate() {
            for i in 0..dim {
                pts[i * nb + j] = set.boundary_points[bi][i];
            }
        }
        tape.clear();
        let block = tape.alloc_params(&params.flat);
        let ids = net.eval_batch(tape, &pts, nb, None);
        let mut diffs = Vec::with_capacity(nb);
        for (j, &bi) in boundary_idx.iter().enumerate() {
            let d = tape.value(ids[j]).map_err(|_| TrainError::NonFinite {
                what: "boundary value",
                iteration: iter_key as usize,
            })? - set.boundary_values[bi];
            loss_b += 0.5 * d * d;
            diffs.push(d);
        }
        if want_grad {
            let terms: Vec<_> = ids.iter().copied().zip(diffs.iter().copied()).collect();
            let root = tape.weighted_sum(&terms);
            tape.backward(root).map_err(|_| TrainError::NonFinite {
                what: "boundary gradient",
                iteration: iter_key as usize,
            })?;
            g_b = tape.param_gradient(&block);
        }
    }

    let (w_r, w_b) = adaptive_weights(loss_r, loss_b, has_boundary);
    let total = w_r * loss_r + w_b * loss_b;
    let grad = if want_grad {
        let mut g = g_r;
        if has_boundary {
            for (gi, bi) in g.iter_mut().zip(&g_b) {
                *gi = w_r * *gi + w_b * bi;
            }
        } else if w_r != 1.0 {
            for gi in g.iter_mut() {
                *gi *= w_r;
            }
        }
        Some(g)
    } else {
        None
    };
    Ok(LossEval {
        loss_r,
        loss_b,
        w_r,
        w_b,
        total,
        grad,
    })
}

// ---------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------

pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; `lr` is the already-decayed rate.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1t = 1.0 - cfg.beta1.powi(state.t as i32);
    let b2t = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Effective Adam learning rate at an iteration under exponential decay.
pub fn decayed_lr(lr0: f64, iteration: usize, decay: &LrDecay) -> f64 {
    lr0 * decay.rate.powi((iteration / decay.every) as i32)
}

pub struct LbfgsState {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, // (s, y, rho)
    history: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsStepInfo {
    pub loss: f64,
    pub step_size: f64,
    pub fallback: bool,
}

impl LbfgsState {
    pub fn new(history: usize) -> Self {
        Self {
            pairs: std::collections::VecDeque::with_capacity(history),
            history,
        }
    }

    /// Two-loop recursion: H0 scaled by the last curvature pair.
    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        for qi in q.iter_mut() {
            *qi = -*qi;
        }
        q
    }

    fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-10 {
            return; // skip non-curvature pairs
        }
        if self.pairs.len() == self.history {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One L-BFGS iteration with backtracking Armijo line search over the
/// (sample-frozen) objective. `f` evaluates the loss and, when asked,
/// the gradient at a parameter vector.
pub fn lbfgs_step(
    theta: &mut Vec<f64>,
    state: &mut LbfgsState,
    cfg: &LbfgsConfig,
    f: &mut dyn FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>), TrainError>,
) -> Result<LbfgsStepInfo, TrainError> {
    let (f0, g0) = f(theta, true)?;
    let g0 = g0.expect("gradient requested");
    let gnorm = dot(&g0, &g0).sqrt();
    if gnorm == 0.0 {
        return Ok(LbfgsStepInfo {
            loss: f0,
            step_size: 0.0,
            fallback: false,
        });
    }
    let mut dir = state.direction(&g0);
    let mut slope = dot(&g0, &dir);
    if slope >= 0.0 {
        // not a descent direction (stale curvature): restart from -g
        dir = g0.iter().map(|v| -v).collect();
        slope = -dot(&g0, &g0);
        state.pairs.clear();
    }

    let try_step = |alpha: f64,
                    f: &mut dyn FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>), TrainError>|
     -> Result<Option<(Vec<f64>, f64)>, TrainError> {
        let cand: Vec<f64> = theta
            .iter()
            .zip(&dir)
            .map(|(t, d)| t + alpha * d)
            .collect();
        let (fc, _) = f(&cand, false)?;
        Ok((fc.is_finite() && fc <= f0 + cfg.c1 * alpha * slope).then_some((cand, fc)))
    };

    let mut alpha = 1.0;
    let mut accepted = None;
    for _ in 0..=cfg.max_backtracks {
        if let Some((cand, fc)) = try_step(alpha, f)? {
            accepted = Some((cand, fc, alpha));
            break;
        }
        alpha *= cfg.backtrack;
    }
    if let Some((_, fc, a)) = accepted {
        if a == 1.0 {
            // forward-track: pure backtracking can trap the quasi-Newton
            // model in tiny steps (collinear curvature pairs); double the
            // step while the Armijo test keeps passing and f improves.
            let mut best = accepted.take().unwrap();
            let mut grow = 2.0;
            for _ in 0..cfg.max_expansions {
                match try_step(grow, f)? {
                    Some((cand, fg)) if fg < fc.min(best.1) => {
                        best = (cand, fg, grow);
                        grow *= 2.0;
                    }
                    _ => break,
                }
            }
            accepted = Some(best);
        }
    }

    let (new_theta, new_loss, step, fallback) = match accepted {
        Some((cand, fc, a)) => (cand, fc, a, false),
        None => {
            // line search exhausted: tiny steepest-descent move
            let sd = alpha / gnorm;
            let cand: Vec<f64> = theta.iter().zip(&g0).map(|(t, g)| t - sd * g).collect();
            let (fc, _) = f(&cand, false)?;
            eprintln!(
                "warning: L-BFGS line search failed after {} halvings; steepest-descent fallback",
                cfg.max_backtracks
            );
            (cand, fc, sd, true)
        }
    };

    let (_, g1) = f(&new_theta, true)?;
    let g1 = g1.expect("gradient requested");
    let s: Vec<f64> = new_theta.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
    state.push_pair(s, y);
    *theta = new_theta;
    Ok(LbfgsStepInfo {
        loss: new_loss,
        step_size: step,
        fallback,
    })
}

// ---------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------

/// Batched surrogate values at arbitrary points (no tape, no gradients).
pub fn network_values(
    params: &Arc<NetworkParams>,
    wrapper: ConstraintWrapper,
    pts: &[Vec<f64>],
) -> Vec<f64> {
    let dim = params.input_dim();
    let n = pts.len();
    let mut flat = vec![0.0; dim * n];
    for (j, x) in pts.iter().enumerate() {
        for i in 0..dim {
            flat[i * n + j] = x[i];
        }
    }
    let (outs, _) = forward_batch::<f64>(params, &flat, n, None);
    outs.iter()
        .enumerate()
        .map(|(j, &raw)| raw * wrapper_factor::<f64>(wrapper, &pts[j], None))
        .collect()
}

/// Discrete relative L2 error ||u_nn - u|| / ||u|| over a grid.
pub fn relative_l2(
    params: &Arc<NetworkParams>,
    wrapper: ConstraintWrapper,
    problem: &ProblemSpec,
    grid: &[Vec<f64>],
) -> Result<f64, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::DegenerateEvalGrid);
    }
    let pred = network_values(params, wrapper, grid);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, p) in grid.iter().zip(&pred) {
        let e = problem.exact_value(x);
        num += (p - e) * (p - e);
        den += e * e;
    }
    if den == 0.0 {
        return Err(TrainError::DegenerateEvalGrid);
    }
    Ok((num / den).sqrt())
}

// ---------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------

pub struct TrainOutput {
    pub params: Arc<NetworkParams>,
    pub wrapper: ConstraintWrapper,
    pub metrics: Vec<Metrics>,
    pub final_rel_l2: f64,
    pub wall_ms: u64,
    pub config: TrainConfig,
}

/// Side artifacts written during training (all optional).
#[derive(Default)]
pub struct TrainArtifacts {
    pub out_dir: Option<PathBuf>,
}

impl TrainArtifacts {
    fn checkpoint(&self, name: &str, params: &NetworkParams, wrapper: ConstraintWrapper) {
        if let Some(dir) = &self.out_dir {
            let _ = save_checkpoint(params, wrapper, &dir.join(name));
        }
    }
}

/// Run the full loop: sample the training set, Adam phase with decayed
/// learning rate and fresh Monte Carlo draws per iteration, then L-BFGS
/// with draws frozen within each line search, metrics every iteration
/// and the relative L2 error on the eval grid every `eval_every`.
pub fn train(cfg: &TrainConfig, artifacts: &TrainArtifacts) -> Result<TrainOutput, TrainError> {
    let problem = crate::problems::build(&cfg.problem, &cfg.problem_params)?;
    match problem.scalar_order {
        0 => train_typed::<f64>(problem, cfg, artifacts),
        1 => train_typed::<Dual>(problem, cfg, artifacts),
        _ => train_typed::<Dual2>(problem, cfg, artifacts),
    }
}

fn train_typed<S: Scalar>(
    problem: ProblemSpec,
    cfg: &TrainConfig,
    artifacts: &TrainArtifacts,
) -> Result<TrainOutput, TrainError> {
    let start = Instant::now();
    let mut espec = problem.estimator;
    if let Some(ns) = cfg.n_samples {
        espec.n_samples = ns;
    }
    let dims = problem.network_dims();
    let mut params = Arc::new(NetworkParams::init_glorot(
        &dims,
        problem.activation,
        RngStream::substream(cfg.seed, 0).next_u64(),
    )?);
    let wrapper = problem.wrapper;

    let set = TrainingSet::sample(&problem, cfg)?;
    let grid = problem.eval_grid();
    let mut batch_rng = RngStream::substream(cfg.seed, 3);
    let mut metrics: Vec<Metrics> = Vec::new();
    let mut tape: Tape<S> = Tape::new();

    let draw_batch = |rng: &mut RngStream, n_total: usize, n_batch: usize| -> Vec<usize> {
        if n_total <= n_batch {
            (0..n_total).collect()
        } else {
            (0..n_batch)
                .map(|_| (rng.next_u64() % n_total as u64) as usize)
                .collect()
        }
    };

    let total_iters = cfg.adam.iterations + cfg.lbfgs.iterations;
    let eval_and_log = |m: &mut Vec<Metrics>,
                            it: usize,
                            ev: &LossEval,
                            params: &Arc<NetworkParams>|
     -> Result<(), TrainError> {
        let rel = if it % cfg.eval_every == 0 || it + 1 == total_iters {
            Some(relative_l2(params, wrapper, &problem, &grid)?)
        } else {
            None
        };
        m.push(Metrics {
            iteration: it,
            loss_r: ev.loss_r,
            loss_b: ev.loss_b,
            w_r: ev.w_r,
            w_b: ev.w_b,
            rel_l2: rel,
            wall_ms: 0,
        });
        Ok(())
    };

    // Adam phase
    let mut adam_state = AdamState::new(params.flat.len());
    for it in 0..cfg.adam.iterations {
        let bidx = draw_batch(&mut batch_rng, set.residual_points.len(), cfg.batch_size);
        let bbidx = draw_batch(&mut batch_rng, set.boundary_points.len(), cfg.batch_size);
        let ev = assemble_loss(
            &problem, &params, wrapper, &set, &bidx, &bbidx, &espec, cfg.seed, it as u64, true,
            &mut tape,
        )?;
        if !ev.total.is_finite() {
            artifacts.checkpoint("checkpoint_abort.json", &params, wrapper);
            return Err(TrainError::NonFinite {
                what: "loss",
                iteration: it,
            });
        }
        let grad = ev.grad.as_ref().expect("gradient");
        if grad.iter().any(|g| !g.is_finite()) {
            artifacts.checkpoint("checkpoint_abort.json", &params, wrapper);
            return Err(TrainError::NonFinite {
                what: "gradient",
                iteration: it,
            });
        }
        let lr = decayed_lr(cfg.adam.lr, it, &cfg.lr_decay);
        adam_step(
            &mut Arc::make_mut(&mut params).flat,
            grad,
            &mut adam_state,
            lr,
            &cfg.adam,
        );
        eval_and_log(&mut metrics, it, &ev, &params)?;
    }
    artifacts.checkpoint("checkpoint_adam.json", &params, wrapper);

    // L-BFGS phase: fresh batch and samples per step, frozen during the
    // line search of that step.
    let mut lbfgs_state = LbfgsState::new(cfg.lbfgs.history);
    for k in 0..cfg.lbfgs.iterations {
        let it = cfg.adam.iterations + k;
        let bidx = draw_batch(&mut batch_rng, set.residual_points.len(), cfg.batch_size);
        let bbidx = draw_batch(&mut batch_rng, set.boundary_points.len(), cfg.batch_size);
        let mut last_eval: Option<LossEval> = None;
        {
            let mut objective = |theta: &[f64], want_grad: bool| {
                let cand = Arc::new(NetworkParams {
                    dims: params.dims.clone(),
                    activation: params.activation,
                    flat: theta.to_vec(),
                });
                let ev = assemble_loss(
                    &problem, &cand, wrapper, &set, &bidx, &bbidx, &espec, cfg.seed, it as u64,
                    want_grad, &mut tape,
                )?;
                let out = (ev.total, ev.grad.clone());
                last_eval = Some(ev);
                Ok(out)
            };
            let mut theta = params.flat.clone();
            let info = lbfgs_step(&mut theta, &mut lbfgs_state, &cfg.lbfgs, &mut objective)?;
            if !info.loss.is_finite() {
                artifacts.checkpoint("checkpoint_abort.json", &params, wrapper);
                return Err(TrainError::NonFinite {
                    what: "loss",
                    iteration: it,
                });
            }
            Arc::make_mut(&mut params).flat = theta;
        }
        let ev = last_eval.expect("objective evaluated at least once");
        eval_and_log(&mut metrics, it, &ev, &params)?;
    }
    artifacts.checkpoint("checkpoint_final.json", &params, wrapper);

    let final_rel_l2 = relative_l2(&params, wrapper, &problem, &grid)?;
    Ok(TrainOutput {
        params,
        wrapper,
        metrics,
        final_rel_l2,
        wall_ms: start.elapsed().as_millis() as u64,
        config: cfg.clone(),
    })
}

/// Atomic file write: temp sibling then rename, so a killed run never
/// leaves a truncated file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
