//! Batched fused network evaluation.
//!
//! One fused tape primitive evaluates the network at B points at once.
//! Tangent-carrying scalars are laid out as coefficient planes (one
//! matrix per ring coefficient), so every linear layer is a plain f64
//! GEMM per plane; the pointwise activation couples the planes with the
//! truncated Taylor rules. The backward pass consumes the reversed-stored
//! adjoints of the B outputs and accumulates the parameter gradient with
//! the same GEMMs, contracting plane c of the adjoint against plane
//! ORDER - c of the activations.

use super::NetworkParams;
use crate::autodiff::scalar::Scalar;
use crate::autodiff::tape::{FusedGroup, NodeId, Tape};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use std::sync::Arc;

struct LayerTrace {
    /// Post-activation planes feeding the next layer (n_l x B), one per
    /// ring coefficient.
    z: Vec<Array2<f64>>,
    /// Pre-activation tangent planes (hidden layers only; empty at
    /// ORDER = 0) needed for the activation's ring derivative.
    pre_tangent: Vec<Array2<f64>>,
}

pub struct BatchTrace {
    params: Arc<NetworkParams>,
    k: usize,
    layers: Vec<LayerTrace>,
}

fn weight_view(params: &NetworkParams, l: usize) -> ArrayView2<'_, f64> {
    let (w_off, b_off) = params.layer_offsets(l);
    ArrayView2::from_shape((params.dims[l + 1], params.dims[l]), &params.flat[w_off..b_off])
        .expect("weight shape")
}

/// Forward pass producing output ring values and the trace needed by the
/// backward pass.
pub fn forward_batch<S: Scalar>(
    params: &Arc<NetworkParams>,
    points: &[f64],
    n_points: usize,
    seeds: Option<&[f64]>,
) -> (Vec<S>, BatchTrace) {
    let k = S::ORDER + 1;
    let dim = params.input_dim();
    assert_eq!(points.len(), dim * n_points, "points layout is (dim, B) row-major");
    if let Some(sd) = seeds {
        assert_eq!(sd.len(), dim * n_points);
    }

    let mut layers = Vec::with_capacity(params.n_layers() + 1);
    let mut z: Vec<Array2<f64>> = Vec::with_capacity(k);
    z.push(ArrayView2::from_shape((dim, n_points), points).unwrap().to_owned());
    if k > 1 {
        z.push(match seeds {
            Some(sd) => ArrayView2::from_shape((dim, n_points), sd).unwrap().to_owned(),
            None => Array2::zeros((dim, n_points)),
        });
    }
    for _ in 2..k {
        z.push(Array2::zeros((dim, n_points)));
    }
    layers.push(LayerTrace {
        z,
        pre_tangent: Vec::new(),
    });

    let n_layers = params.n_layers();
    for l in 0..n_layers {
        let n_out = params.dims[l + 1];
        let w = weight_view(params, l);
        let (w_off, b_off) = params.layer_offsets(l);
        let _ = w_off;
        let bias = &params.flat[b_off..b_off + n_out];

        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(k);
        for c in 0..k {
            let mut out = Array2::zeros((n_out, n_points));
            general_mat_mul(1.0, &w, &layers[l].z[c], 0.0, &mut out);
            if c == 0 {
                for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                    row += bias[j];
                }
            }
            pre.push(out);
        }

        if l + 1 == n_layers {
            // linear output layer
            layers.push(LayerTrace {
                z: pre,
                pre_tangent: Vec::new(),
            });
        } else {
            let mut zk: Vec<Array2<f64>> = Vec::with_capacity(k);
            match params.activation {
                super::Activation::Tanh => {
                    let z0 = pre[0].mapv(f64::tanh);
                    if k >= 2 {
                        // f1 = 1 - z0^2, f2 = -2 z0 f1
                        let mut z1 = pre[1].clone();
                        ndarray::Zip::from(&mut z1).and(&z0).for_each(|t, &v| {
                            *t *= 1.0 - v * v;
                        });
                        if k >= 3 {
                            let mut z2 = Array2::zeros(pre[2].raw_dim());
                            ndarray::Zip::from(&mut z2)
                                .and(&pre[2])
                                .and(&pre[1])
                                .and(&z0)
                                .for_each(|t, &a2, &a1, &v| {
                                    let f1 = 1.0 - v * v;
                                    let f2 = -2.0 * v * f1;
                                    *t = f1 * a2 + 0.5 * f2 * a1 * a1;
                                });
                            zk.push(z0);
                            zk.push(z1);
                            zk.push(z2);
                        } else {
                            zk.push(z0);
                            zk.push(z1);
                        }
                    } else {
                        zk.push(z0);
                    }
                }
                super::Activation::Relu => {
                    let z0 = pre[0].mapv(|v| v.max(0.0));
                    for c in 1..k {
                        let mut zc = pre[c].clone();
                        ndarray::Zip::from(&mut zc).and(&pre[0]).for_each(|t, &v| {
                            if v <= 0.0 {
                                *t = 0.0;
                            }
                        });
                        zk.push(zc);
                    }
                    zk.insert(0, z0);
                }
            }
            let pre_tangent = if k > 1 { pre[1..].to_vec() } else { Vec::new() };
            layers.push(LayerTrace { z: zk, pre_tangent });
        }
    }

    let out_planes = &layers[n_layers].z;
    let outputs: Vec<S> = (0..n_points)
        .map(|j| {
            let v = out_planes[0][[0, j]];
            let d1 = if k > 1 { out_planes[1][[0, j]] } else { 0.0 };
            let d2 = if k > 2 { out_planes[2][[0, j]] } else { 0.0 };
            ring_from_coeffs::<S>(v, d1, d2)
        })
        .collect();

    (
        outputs,
        BatchTrace {
            params: params.clone(),
            k,
            layers,
        },
    )
}

fn ring_from_coeffs<S: Scalar>(v: f64, d1: f64, d2: f64) -> S {
    // build v + d1 e + d2 e^2 from raw coefficients
    let mut s = S::seeded(v, d1);
    if S::ORDER >= 2 && d2 != 0.0 {
        // seeded covers coefficients 0 and 1; inject the e^2 part through
        // the read-slot constructor, which targets coefficient ORDER.
        s = s + S::inject_read_slot(d2);
    }
    s
}

/// Reversed-adjoint coefficient `c` of a ring scalar: c = 0 holds
/// dL/d n_ORDER ... c = ORDER holds dL/d n_0.
fn adjoint_coeff<S: Scalar>(a: &S, c: usize) -> f64 {
    match c {
        0 => a.val(),
        1 => a.d1(),
        2 => a.d2_coeff(),
        _ => unreachable!(),
    }
}

impl<S: Scalar> FusedGroup<S> for BatchTrace {
    fn backward(&self, cotangents: &[S], param_grad: &mut [f64]) {
        let k = self.k;
        let params = &self.params;
        let n_layers = params.n_layers();
        let n_points = self.layers[0].z[0].ncols();
        debug_assert_eq!(cotangents.len(), n_points);

        if cotangents.iter().all(|c| c.is_zero()) {
            return;
        }

        // delta planes at the (width-1) output layer, reversed storage
        let mut delta: Vec<Array2<f64>> = (0..k)
            .map(|c| {
                let mut m = Array2::zeros((1, n_points));
                for (j, ct) in cotangents.iter().enumerate() {
                    m[[0, j]] = adjoint_coeff(ct, c);
                }
                m
            })
            .collect();

        for l in (0..n_layers).rev() {
            // delta currently holds d(pre_l) adjoints (reversed planes).
            let n_in = params.dims[l];
            let n_out = params.dims[l + 1];
            let (w_off, b_off) = params.layer_offsets(l);

            // parameter gradients: dL/dW = sum_c delta_c . z_(K-c)^T,
            // dL/db = row sums of the last delta plane.
            {
                let mut gw =
                    ArrayViewMut2::from_shape((n_out, n_in), &mut param_grad[w_off..b_off])
                        .expect("grad shape");
                for c in 0..k {
                    general_mat_mul(1.0, &delta[c], &self.layers[l].z[k - 1 - c].t(), 1.0, &mut gw);
                }
                let gb = &mut param_grad[b_off..b_off + n_out];
                let last = &delta[k - 1];
                for j in 0..n_out {
                    gb[j] += last.slice(s![j, ..]).sum();
                }
            }

            if l == 0 {
                break; // input gradients are not needed
            }

            // propagate through the linear map: per-plane W^T delta
            let w = weight_view(params, l);
            let mut dz: Vec<Array2<f64>> = Vec::with_capacity(k);
            for c in 0..k {
                let mut out = Array2::zeros((n_in, n_points));
                general_mat_mul(1.0, &w.t(), &delta[c], 0.0, &mut out);
                dz.push(out);
            }

            // through the activation of layer l-1's output: reversed
            // adjoints multiply by the plain ring partial planes.
            let trace = &self.layers[l];
            let z0 = &trace.z[0];
            match params.activation {
                super::Activation::Tanh => {
                    // p0 = f1 = 1 - z0^2, p1 = f2 a1, p2 = f2 a2 + f3 a1^2/2
                    // with f2 = -2 z0 f1, f3 = f1 (6 z0^2 - 2)
                    let mut out: Vec<Array2<f64>> =
                        (0..k).map(|_| Array2::zeros((n_in, n_points))).collect();
                    for j in 0..n_in {
                        for b in 0..n_points {
                            let v = z0[[j, b]];
                            let f1 = 1.0 - v * v;
                            let (p1, p2);
                            if k >= 2 {
                                let a1 = trace.pre_tangent[0][[j, b]];
                                let f2 = -2.0 * v * f1;
                                p1 = f2 * a1;
                                if k >= 3 {
                                    let a2 = trace.pre_tangent[1][[j, b]];
                                    let f3 = f1 * (6.0 * v * v - 2.0);
                                    p2 = f2 * a2 + 0.5 * f3 * a1 * a1;
                                } else {
                                    p2 = 0.0;
                                }
                            } else {
                                p1 = 0.0;
                                p2 = 0.0;
                            }
                            let p = [f1, p1, p2];
                            for c in 0..k {
                                let mut acc = 0.0;
                                for i in 0..=c {
                                    acc += p[i] * dz[c - i][[j, b]];
                                }
                                out[c][[j, b]] = acc;
                            }
                        }
                    }
                    delta = out;
                }
                super::Activation::Relu => {
                    for c in 0..k {
                        ndarray::Zip::from(&mut dz[c]).and(z0).for_each(|t, &v| {
                            if v <= 0.0 {
                                *t = 0.0;
                            }
                        });
                    }
                    delta = dz;
                }
            }
        }
    }
}

/// Evaluate the raw network at a batch of points on the tape, returning
/// one differentiable node per point.
pub fn eval_batch_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    params: &Arc<NetworkParams>,
    points: &[f64],
    n_points: usize,
    seeds: Option<&[f64]>,
) -> Vec<NodeId> {
    let (outputs, trace) = forward_batch::<S>(params, points, n_points, seeds);
    tape.push_group(Box::new(trace), &outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::scalar::{Dual, Dual2};
    use crate::autodiff::tape::grad_params;
    use crate::network::{forward_graph, Activation, ConstraintWrapper};

    fn test_net(act: Activation, seed: u64) -> Arc<NetworkParams> {
        Arc::new(NetworkParams::init_glorot(&[2, 6, 5, 1], act, seed).unwrap())
    }

    fn graph_value_and_grad<S: Scalar>(
        params: &NetworkParams,
        pt: &[f64],
        seed: &[f64],
    ) -> (S, Vec<f64>) {
        let mut t: Tape<S> = Tape::new();
        let block = t.alloc_params(&params.flat);
        let x: Vec<NodeId> = pt
            .iter()
            .zip(seed)
            .map(|(&v, &s)| t.leaf(S::seeded(v, s)))
            .collect();
        let out = forward_graph(&mut t, params, &block, ConstraintWrapper::None, &x).unwrap();
        let v = t.val_of(out);
        let g = grad_params(&mut t, out, &block).unwrap();
        (v, g)
    }

    fn batch_value_and_grad<S: Scalar>(
        params: &Arc<NetworkParams>,
        pt: &[f64],
        seed: &[f64],
    ) -> (S, Vec<f64>) {
        let mut t: Tape<S> = Tape::new();
        let block = t.alloc_params(&params.flat);
        let ids = eval_batch_on_tape(&mut t, params, pt, 1, Some(seed));
        let v = t.val_of(ids[0]);
        let g = grad_params(&mut t, ids[0], &block).unwrap();
        (v, g)
    }

    #[test]
    fn fused_matches_graph_path_for_values_and_gradients() {
        for act in [Activation::Tanh, Activation::Relu] {
            let p = test_net(act, 17);
            let pt = [0.37, -0.81];
            let seed = [0.6, 0.8];

            let (v_g, g_g) = graph_value_and_grad::<Dual2>(&p, &pt, &seed);
            let (v_b, g_b) = batch_value_and_grad::<Dual2>(&p, &pt, &seed);
            assert!((v_g.v - v_b.v).abs() < 1e-13);
            assert!((v_g.d1 - v_b.d1).abs() < 1e-12);
            assert!((v_g.d2 - v_b.d2).abs() < 1e-12);
            for (a, b) in g_g.iter().zip(&g_b) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_batch_columns_are_independent() {
        let p = test_net(Activation::Tanh, 23);
        // two points evaluated as one batch == evaluated separately
        let pts = [0.1, -0.4, 0.9, 0.2]; // layout (dim=2, B=2)
        let mut t: Tape<Dual> = Tape::new();
        let _ = t.alloc_params(&p.flat);
        let ids = eval_batch_on_tape(&mut t, &p, &pts, 2, None);
        let a = t.val_of(ids[0]);
        let b = t.val_of(ids[1]);

        let (a1, _) = batch_value_and_grad::<Dual>(&p, &[0.1, 0.9], &[0.0, 0.0]);
        let (b1, _) = batch_value_and_grad::<Dual>(&p, &[-0.4, 0.2], &[0.0, 0.0]);
        assert!((a.v - a1.v).abs() < 1e-14);
        assert!((b.v - b1.v).abs() < 1e-14);
    }

    #[test]
    fn weighted_combination_gradient_matches_fd() {
        // loss = (sum_j c_j u(p_j))^2, finite differences over theta
        let p = test_net(Activation::Tanh, 31);
        let pts = [0.3, -0.2, 0.7, 0.55]; // (2, B=2)
        let coeffs = [1.3, -0.7];

        let loss_at = |flat: &[f64]| -> f64 {
            let params = Arc::new(NetworkParams {
                dims: p.dims.clone(),
                activation: p.activation,
                flat: flat.to_vec(),
            });
            let mut t: Tape<f64> = Tape::new();
            let _ = t.alloc_params(flat);
            let ids = eval_batch_on_tape(&mut t, &params, &pts, 2, None);
            let s = t.weighted_sum(&[(ids[0], coeffs[0]), (ids[1], coeffs[1])]);
            let l = t.mul(s, s);
            t.value(l).unwrap()
        };

        let mut t: Tape<f64> = Tape::new();
        let block = t.alloc_params(&p.flat);
        let ids = eval_batch_on_tape(&mut t, &p, &pts, 2, None);
        let s = t.weighted_sum(&[(ids[0], coeffs[0]), (ids[1], coeffs[1])]);
        let l = t.mul(s, s);
        let g = grad_params(&mut t, l, &block).unwrap();

        let h = 1e-6;
        let mut rng = crate::samplers::RngStream::new(2);
        for _ in 0..20 {
            let k = (rng.next_u64() % p.flat.len() as u64) as usize;
            let mut up = p.flat.clone();
            let mut dn = p.flat.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
            assert!(
                (g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "component {k}: ad {} vs fd {fd}",
                g[k]
            );
        }
    }
}
