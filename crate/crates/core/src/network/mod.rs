//! Dense feed-forward surrogate u(x; theta) with Glorot initialization,
//! an optional hard constraint wrapper, and versioned JSON checkpoints.
//!
//! Two evaluation paths exist and agree to machine precision:
//! node-per-operation graphs via [`forward_graph`] (used by the autodiff
//! tests and small problems) and the batched fused path in [`batch`] that
//! the training loop uses.

pub mod batch;

use crate::autodiff::scalar::{fns, Scalar};
use crate::autodiff::tape::{NodeId, ParamBlock, Tape};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Output wrapper enforcing constraints exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConstraintWrapper {
    None,
    /// Multiply by relu(radius^2 - ||x||^2): output and its first spatial
    /// derivatives vanish identically outside the ball.
    HardBall { radius: f64 },
}

/// Flat parameter vector plus layer-shape metadata.
///
/// Layout: for each layer l, the weight matrix (out x in, row-major)
/// followed by the bias vector.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub flat: Vec<f64>,
}

pub fn n_params(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, reproducible per seed.
    /// Weights are drawn layer by layer in row-major order.
    pub fn init_glorot(
        dims: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "need >= 2 positive layer sizes, got {dims:?}"
            )));
        }
        let mut rng = crate::samplers::RngStream::new(seed);
        let mut flat = Vec::with_capacity(n_params(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                flat.push(bound * (2.0 * rng.u01() - 1.0));
            }
            flat.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            flat,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weight offset, bias offset) of layer `l` in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }
}

/// Versioned JSON checkpoint; parameters are serialized as decimal
/// strings with enough digits to round-trip f64 exactly.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    dims: Vec<usize>,
    activation: Activation,
    wrapper: ConstraintWrapper,
    params: Vec<String>,
}

pub fn save_checkpoint(
    params: &NetworkParams,
    wrapper: ConstraintWrapper,
    path: &Path,
) -> Result<(), NetworkError> {
    let file = CheckpointFile {
        version: 1,
        dims: params.dims.clone(),
        activation: params.activation,
        wrapper,
        params: params.flat.iter().map(|v| format!("{v:.17e}")).collect(),
    };
    let body = serde_json::to_string_pretty(&file).expect("checkpoint serialization");
    // atomic: write sibling temp file, then rename
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, ConstraintWrapper), NetworkError> {
    let body = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&body).map_err(|e| NetworkError::Parse(e.to_string()))?;
    if file.version != 1 {
        return Err(NetworkError::Parse(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    if file.params.len() != n_params(&file.dims) {
        return Err(NetworkError::Parse("parameter count mismatch".into()));
    }
    let mut flat = Vec::with_capacity(file.params.len());
    for s in &file.params {
        flat.push(
            s.parse::<f64>()
                .map_err(|e| NetworkError::Parse(format!("bad parameter {s:?}: {e}")))?,
        );
    }
    Ok((
        NetworkParams {
            dims: file.dims,
            activation: file.activation,
            flat,
        },
        file.wrapper,
    ))
}

/// Constraint multiplier m(x) in the scalar ring (carries tangents when
/// the evaluation point is seeded).
pub fn wrapper_factor<S: Scalar>(
    wrapper: ConstraintWrapper,
    point: &[f64],
    seed: Option<&[f64]>,
) -> S {
    match wrapper {
        ConstraintWrapper::None => S::one(),
        ConstraintWrapper::HardBall { radius } => {
            let mut norm_sq = S::zero();
            for (i, &x) in point.iter().enumerate() {
                let xi = S::seeded(x, seed.map_or(0.0, |s| s[i]));
                norm_sq = norm_sq + xi * xi;
            }
            fns::relu(S::from_f64(radius * radius) - norm_sq)
        }
    }
}

/// Node-per-operation forward pass; `x` are already-placed input leaves.
/// Returns the wrapped scalar output.
pub fn forward_graph<S: Scalar>(
    tape: &mut Tape<S>,
    params: &NetworkParams,
    block: &ParamBlock,
    wrapper: ConstraintWrapper,
    x: &[NodeId],
) -> Result<NodeId, NetworkError> {
    if x.len() != params.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    let mut cur: Vec<NodeId> = x.to_vec();
    let n_layers = params.n_layers();
    for l in 0..n_layers {
        let (w_off, b_off) = params.layer_offsets(l);
        let n_in = params.dims[l];
        let n_out = params.dims[l + 1];
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let w_ids: Vec<NodeId> = (0..n_in).map(|k| block.id(w_off + j * n_in + k)).collect();
            let d = tape.dot(&cur, &w_ids);
            let pre = tape.add(d, block.id(b_off + j));
            let out = if l + 1 == n_layers {
                pre // linear output layer
            } else {
                match params.activation {
                    Activation::Tanh => tape.tanh(pre),
                    Activation::Relu => tape.relu(pre),
                }
            };
            next.push(out);
        }
        cur = next;
    }
    let raw = cur[0];
    Ok(match wrapper {
        ConstraintWrapper::None => raw,
        ConstraintWrapper::HardBall { .. } => {
            // the wrapper factor depends only on the input leaves' values
            let vals: Vec<f64> = x.iter().map(|&id| tape.val_of(id).val()).collect();
            let seeds: Vec<f64> = x.iter().map(|&id| tape.val_of(id).d1()).collect();
            let m: S = wrapper_factor(wrapper, &vals, Some(&seeds));
            let mn = tape.constant_ring(m);
            tape.mul(mn, raw)
        }
    })
}

/// Batched fused surrogate over a shared parameter vector: the hot path.
#[derive(Clone)]
pub struct FusedNet {
    pub params: Arc<NetworkParams>,
    pub wrapper: ConstraintWrapper,
}

impl FusedNet {
    pub fn new(params: Arc<NetworkParams>, wrapper: ConstraintWrapper) -> Self {
        Self { params, wrapper }
    }
}

impl<S: Scalar> crate::estimators::Surrogate<S> for FusedNet {
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    fn eval_batch(
        &self,
        tape: &mut Tape<S>,
        points: &[f64],
        n_points: usize,
        seeds: Option<&[f64]>,
    ) -> Vec<NodeId> {
        let raw = batch::eval_batch_on_tape(tape, &self.params, points, n_points, seeds);
        match self.wrapper {
            ConstraintWrapper::None => raw,
            ConstraintWrapper::HardBall { .. } => {
                let dim = self.params.input_dim();
                let mut out = Vec::with_capacity(n_points);
                let mut pt = vec![0.0; dim];
                let mut sd = vec![0.0; dim];
                for (j, &id) in raw.iter().enumerate() {
                    for i in 0..dim {
                        pt[i] = points[i * n_points + j];
                        sd[i] = seeds.map_or(0.0, |s| s[i * n_points + j]);
                    }
                    let m: S = wrapper_factor(self.wrapper, &pt, Some(&sd));
                    if m.val() == 0.0 && m.d1() == 0.0 && m.d2_coeff() == 0.0 {
                        out.push(tape.constant(0.0));
                    } else {
                        let mn = tape.constant_ring(m);
                        out.push(tape.mul(mn, id));
                    }
                }
                out
            }
        }
    }
}
