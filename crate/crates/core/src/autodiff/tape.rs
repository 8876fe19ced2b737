//! Append-only computation tape with a cached-partial reverse sweep.
//!
//! Nodes are pushed in evaluation order, so operands always precede their
//! consumers and one backward pass visits each node exactly once. Local
//! partials are computed (in the scalar ring) while the forward value is
//! pushed and cached on the node; the sweep is then a single reverse loop
//! of multiply-accumulates.
//!
//! Derivatives with respect to evaluation-point coordinates are taken in
//! forward mode: seed the relevant leaves with a tangent direction (the
//! scalar type carries the coefficients) and read them back through
//! [`Tape::extract1`] / [`Tape::extract2`], which re-enter the coefficients
//! into the value track. A reverse sweep from any scalar built this way
//! yields gradients of that scalar with respect to leaves and parameters,
//! including through the extraction nodes, so losses containing first and
//! second input derivatives differentiate correctly with respect to
//! parameters.

use super::scalar::Scalar;
use thiserror::Error;

/// Index of a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Contiguous range of parameter leaves at the start of a tape.
#[derive(Clone, Copy, Debug)]
pub struct ParamBlock {
    pub(crate) start: u32,
    pub(crate) len: u32,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.len as usize
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn id(&self, k: usize) -> NodeId {
        debug_assert!(k < self.len as usize);
        NodeId(self.start + k as u32)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("non-finite value at node {node}")]
    NonFiniteValue { node: usize },
    #[error("domain error at node {node}: {what}")]
    Domain { node: usize, what: &'static str },
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    /// tanh, sin, ... with partials cached at push time.
    Unary(u32),
    /// Sum of weights[i] * args[i] with constant real weights.
    WeightedSum { start: u32, len: u32 },
    /// Inner product of two node slices (both differentiable).
    Dot { start: u32, len: u32 },
    /// Re-enter tangent coefficient k of the operand as a value.
    Extract(u32, u8),
    /// Output `col` of fused group `group`.
    GroupOut { group: u32, col: u32 },
    /// Placed before a group's outputs; runs the fused backward once all
    /// output adjoints are known.
    GroupAnchor { group: u32 },
}

struct Node<S> {
    op: Op,
    val: S,
    pa: S,
    pb: S,
}

/// Fused multi-output primitive (a batched network evaluation).
///
/// `backward` receives the reversed-stored adjoints of its outputs and
/// accumulates d(loss)/d(theta_k) into `param_grad`.
pub trait FusedGroup<S: Scalar>: Send {
    fn backward(&self, cotangents: &[S], param_grad: &mut [f64]);
}

struct GroupSlot<S: Scalar> {
    imp: Box<dyn FusedGroup<S>>,
    cotangents: Vec<S>,
}

/// Append-only computation graph over scalars of type `S`.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    args: Vec<u32>,
    weights: Vec<f64>,
    groups: Vec<GroupSlot<S>>,
    adj: Vec<S>,
    param_grad: Vec<f64>,
    params: Option<ParamBlock>,
    poison: Option<TapeError>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            args: Vec::new(),
            weights: Vec::new(),
            groups: Vec::new(),
            adj: Vec::new(),
            param_grad: Vec::new(),
            params: None,
            poison: None,
        }
    }

    /// Reset for reuse, keeping allocated capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.args.clear();
        self.weights.clear();
        self.groups.clear();
        self.adj.clear();
        self.param_grad.clear();
        self.params = None;
        self.poison = None;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    fn push(&mut self, op: Op, val: S, pa: S, pb: S) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        if !val.all_finite() && self.poison.is_none() {
            self.poison = Some(TapeError::NonFiniteValue { node: id.index() });
        }
        self.nodes.push(Node { op, val, pa, pb });
        id
    }

    fn poison_domain(&mut self, what: &'static str) {
        if self.poison.is_none() {
            self.poison = Some(TapeError::Domain {
                node: self.nodes.len(),
                what,
            });
        }
    }

    /// Parameter leaves must be allocated once, before other nodes.
    pub fn alloc_params(&mut self, flat: &[f64]) -> ParamBlock {
        assert!(
            self.params.is_none() && self.nodes.is_empty(),
            "parameters must be the first nodes on the tape"
        );
        let start = self.nodes.len() as u32;
        for &p in flat {
            self.push(Op::Leaf, S::from_f64(p), S::zero(), S::zero());
        }
        let block = ParamBlock {
            start,
            len: flat.len() as u32,
        };
        self.param_grad.clear();
        self.param_grad.resize(flat.len(), 0.0);
        self.params = Some(block);
        block
    }

    pub fn leaf(&mut self, v: S) -> NodeId {
        self.push(Op::Leaf, v, S::zero(), S::zero())
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, S::from_f64(v), S::zero(), S::zero())
    }

    pub fn constant_ring(&mut self, v: S) -> NodeId {
        self.push(Op::Const, v, S::zero(), S::zero())
    }

    #[inline]
    fn v(&self, id: NodeId) -> S {
        self.nodes[id.index()].val
    }

    /// Raw ring value of a node.
    pub fn val_of(&self, id: NodeId) -> S {
        self.v(id)
    }

    /// Primal (e^0) value with poison and finiteness checks: the
    /// "evaluate" entry point.
    pub fn value(&self, id: NodeId) -> Result<f64, TapeError> {
        if let Some(err) = &self.poison {
            return Err(err.clone());
        }
        let v = self.v(id);
        if !v.all_finite() {
            return Err(TapeError::NonFiniteValue { node: id.index() });
        }
        Ok(v.val())
    }

    /// Scan all node values; returns the first non-finite node.
    pub fn check_finite(&self) -> Result<(), TapeError> {
        if let Some(err) = &self.poison {
            return Err(err.clone());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.val.all_finite() {
                return Err(TapeError::NonFiniteValue { node: i });
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.v(a) + self.v(b);
        self.push(Op::Add(a.0, b.0), v, S::zero(), S::zero())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.v(a) - self.v(b);
        self.push(Op::Sub(a.0, b.0), v, S::zero(), S::zero())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.v(a), self.v(b));
        self.push(Op::Mul(a.0, b.0), va * vb, vb, va)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.v(a), self.v(b));
        if vb.val() == 0.0 {
            self.poison_domain("division by zero");
        }
        let rb = vb.recip();
        let v = va * rb;
        self.push(Op::Div(a.0, b.0), v, rb, -(v * rb))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.v(a);
        self.push(Op::Neg(a.0), v, S::zero(), S::zero())
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.weighted_sum(&[(a, c)])
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let cn = self.constant(c);
        self.add(a, cn)
    }

    fn unary(&mut self, a: NodeId, derivs: [f64; 4]) -> NodeId {
        let (v, p) = self.v(a).lift(derivs);
        self.push(Op::Unary(a.0), v, p, S::zero())
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        let t = x.tanh();
        let s = 1.0 - t * t; // sech^2
        self.unary(a, [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)])
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        let (s, c) = x.sin_cos();
        self.unary(a, [s, c, -s, -c])
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        let (s, c) = x.sin_cos();
        self.unary(a, [c, -s, -c, s])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let e = self.v(a).val().exp();
        self.unary(a, [e, e, e, e])
    }

    /// Natural log; non-positive arguments are a hard error (they indicate
    /// a sampler or domain bug and must not propagate as NaN).
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        if x <= 0.0 {
            self.poison_domain("ln of non-positive value");
            return self.unary(a, [f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
        }
        let r = 1.0 / x;
        self.unary(a, [x.ln(), r, -r * r, 2.0 * r * r * r])
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        if x < 0.0 {
            self.poison_domain("sqrt of negative value");
            return self.unary(a, [f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
        }
        let s = x.sqrt();
        let r = 0.5 / s;
        self.unary(a, [s, r, -0.5 * r / x, 0.75 * r / (x * x)])
    }

    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        let x = self.v(a).val();
        let nf = n as f64;
        if n < 3 && x == 0.0 && n != 0 {
            // derivative table would divide by zero for negative powers
            if n < 0 {
                self.poison_domain("powi of zero base with negative exponent");
            }
        }
        let f0 = x.powi(n);
        let f1 = if n == 0 { 0.0 } else { nf * x.powi(n - 1) };
        let f2 = if n <= 1 { 0.0 } else { nf * (nf - 1.0) * x.powi(n - 2) };
        let f3 = if n <= 2 {
            0.0
        } else {
            nf * (nf - 1.0) * (nf - 2.0) * x.powi(n - 3)
        };
        self.unary(a, [f0, f1, f2, f3])
    }

    /// Real power with constant exponent; base must be positive unless the
    /// exponent is a non-negative integer (use [`Tape::powi`] for those).
    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        let x = self.v(a).val();
        if x <= 0.0 {
            self.poison_domain("powf of non-positive base");
            return self.unary(a, [f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
        }
        let f0 = x.powf(p);
        let f1 = p * x.powf(p - 1.0);
        let f2 = p * (p - 1.0) * x.powf(p - 2.0);
        let f3 = p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0);
        self.unary(a, [f0, f1, f2, f3])
    }

    /// max(x, 0) with derivative 0 at the kink and second derivative 0
    /// everywhere; the kink is measure-zero under every sampler here.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let x = self.v(a).val();
        let step = if x > 0.0 { 1.0 } else { 0.0 };
        self.unary(a, [x.max(0.0), step, 0.0, 0.0])
    }

    /// Euclidean norm of a vector of nodes (composite primitive).
    pub fn norm(&mut self, xs: &[NodeId]) -> NodeId {
        let d = self.dot(xs, xs);
        self.sqrt(d)
    }

    /// Sum of `w_i * x_i` with constant real weights: the workhorse of
    /// Monte Carlo averages. One node regardless of term count.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let start = self.args.len() as u32;
        let mut acc = S::zero();
        for &(id, w) in terms {
            self.args.push(id.0);
            self.weights.push(w);
            acc = acc + self.v(id).scale(w);
        }
        self.push(
            Op::WeightedSum {
                start,
                len: terms.len() as u32,
            },
            acc,
            S::zero(),
            S::zero(),
        )
    }

    /// Inner product of two equal-length node slices, both differentiable.
    pub fn dot(&mut self, xs: &[NodeId], ws: &[NodeId]) -> NodeId {
        assert_eq!(xs.len(), ws.len());
        let start = self.args.len() as u32;
        for &x in xs {
            self.args.push(x.0);
        }
        for &w in ws {
            self.args.push(w.0);
        }
        let mut acc = S::zero();
        for k in 0..xs.len() {
            acc = acc + self.v(xs[k]) * self.v(ws[k]);
        }
        self.push(
            Op::Dot {
                start,
                len: xs.len() as u32,
            },
            acc,
            S::zero(),
            S::zero(),
        )
    }

    /// Directional first derivative carried by the operand's tangent,
    /// re-entered as a value. Requires `S::ORDER >= 1`.
    pub fn extract1(&mut self, a: NodeId) -> NodeId {
        assert!(S::ORDER >= 1, "extract1 requires a tangent-carrying scalar");
        let v = S::from_f64(self.v(a).d1());
        self.push(Op::Extract(a.0, 1), v, S::zero(), S::zero())
    }

    /// Second directional derivative (2 times the e^2 coefficient).
    /// Requires `S::ORDER >= 2`.
    pub fn extract2(&mut self, a: NodeId) -> NodeId {
        assert!(S::ORDER >= 2, "extract2 requires a second-order scalar");
        let v = S::from_f64(2.0 * self.v(a).d2_coeff());
        self.push(Op::Extract(a.0, 2), v, S::zero(), S::zero())
    }

    /// Install a fused multi-output primitive. `outputs` are its forward
    /// values; returns one node per output.
    pub fn push_group(&mut self, imp: Box<dyn FusedGroup<S>>, outputs: &[S]) -> Vec<NodeId> {
        assert!(
            self.params.is_some(),
            "fused groups accumulate parameter gradients; allocate params first"
        );
        let g = self.groups.len() as u32;
        self.groups.push(GroupSlot {
            imp,
            cotangents: vec![S::zero(); outputs.len()],
        });
        self.push(Op::GroupAnchor { group: g }, S::zero(), S::zero(), S::zero());
        outputs
            .iter()
            .enumerate()
            .map(|(col, &v)| {
                self.push(
                    Op::GroupOut {
                        group: g,
                        col: col as u32,
                    },
                    v,
                    S::zero(),
                    S::zero(),
                )
            })
            .collect()
    }

    /// Reverse sweep from `root`. Adjoints are stored reversed so the
    /// per-edge update is a plain ring multiply; extraction nodes shift
    /// coefficients (see the scalar module). After this call, gradients
    /// are read with [`Tape::adjoint_of`] / [`Tape::param_gradient`].
    pub fn backward(&mut self, root: NodeId) -> Result<(), TapeError> {
        if let Some(err) = &self.poison {
            return Err(err.clone());
        }
        let n = root.index() + 1;
        self.adj.clear();
        self.adj.resize(self.nodes.len(), S::zero());
        for g in self.param_grad.iter_mut() {
            *g = 0.0;
        }
        for slot in self.groups.iter_mut() {
            for c in slot.cotangents.iter_mut() {
                *c = S::zero();
            }
        }
        self.adj[root.index()] = S::adjoint_seed();

        for i in (0..n).rev() {
            let a = self.adj[i];
            if a.is_zero() && !matches!(self.nodes[i].op, Op::GroupAnchor { .. }) {
                continue;
            }
            match self.nodes[i].op {
                Op::Const | Op::Leaf => {}
                Op::Add(x, y) => {
                    self.adj[x as usize] = self.adj[x as usize] + a;
                    self.adj[y as usize] = self.adj[y as usize] + a;
                }
                Op::Sub(x, y) => {
                    self.adj[x as usize] = self.adj[x as usize] + a;
                    self.adj[y as usize] = self.adj[y as usize] - a;
                }
                Op::Neg(x) => {
                    self.adj[x as usize] = self.adj[x as usize] - a;
                }
                Op::Mul(x, y) | Op::Div(x, y) => {
                    let (pa, pb) = (self.nodes[i].pa, self.nodes[i].pb);
                    self.adj[x as usize] = self.adj[x as usize] + pa * a;
                    self.adj[y as usize] = self.adj[y as usize] + pb * a;
                }
                Op::Unary(x) => {
                    let pa = self.nodes[i].pa;
                    self.adj[x as usize] = self.adj[x as usize] + pa * a;
                }
                Op::WeightedSum { start, len } => {
                    let (s, l) = (start as usize, len as usize);
                    for k in 0..l {
                        let arg = self.args[s + k] as usize;
                        let w = self.weights[s + k];
                        self.adj[arg] = self.adj[arg] + a.scale(w);
                    }
                }
                Op::Dot { start, len } => {
                    let (s, l) = (start as usize, len as usize);
                    for k in 0..l {
                        let x = self.args[s + k] as usize;
                        let w = self.args[s + l + k] as usize;
                        let (vx, vw) = (self.nodes[x].val, self.nodes[w].val);
                        self.adj[x] = self.adj[x] + vw * a;
                        self.adj[w] = self.adj[w] + vx * a;
                    }
                }
                Op::Extract(x, k) => {
                    let contrib = S::extract_pullback(a, k as usize);
                    self.adj[x as usize] = self.adj[x as usize] + contrib;
                }
                Op::GroupOut { group, col } => {
                    self.groups[group as usize].cotangents[col as usize] = a;
                }
                Op::GroupAnchor { group } => {
                    let slot = &mut self.groups[group as usize];
                    slot.imp.backward(&slot.cotangents, &mut self.param_grad);
                }
            }
        }
        Ok(())
    }

    /// Reversed-stored adjoint of a node (valid after [`Tape::backward`]).
    pub fn adjoint_of(&self, id: NodeId) -> S {
        self.adj[id.index()]
    }

    /// d(root primal)/d(leaf primal) for the given leaves.
    pub fn grad_of(&self, ids: &[NodeId]) -> Vec<f64> {
        ids.iter().map(|&id| self.adjoint_of(id).adjoint_read()).collect()
    }

    /// Full parameter gradient: graph-path adjoints plus fused-group
    /// accumulations.
    pub fn param_gradient(&self, block: &ParamBlock) -> Vec<f64> {
        let mut g = Vec::with_capacity(block.len());
        for k in 0..block.len() {
            let id = block.id(k);
            let mut v = self.param_grad[k];
            if !self.adj.is_empty() {
                v += self.adjoint_of(id).adjoint_read();
            }
            g.push(v);
        }
        g
    }
}

/// Gradient of `root` with respect to `inputs` (first derivatives).
pub fn grad_input<S: Scalar>(
    tape: &mut Tape<S>,
    root: NodeId,
    inputs: &[NodeId],
) -> Result<Vec<f64>, TapeError> {
    tape.backward(root)?;
    Ok(tape.grad_of(inputs))
}

/// Second directional derivative v^T H v of `root` with respect to input
/// leaves that were seeded with direction `v`: one forward tangent pushed
/// through a reverse sweep.
pub fn second_directional<S: Scalar>(
    tape: &mut Tape<S>,
    root: NodeId,
    inputs: &[NodeId],
    v: &[f64],
) -> Result<f64, TapeError> {
    assert!(S::ORDER >= 1);
    assert_eq!(inputs.len(), v.len());
    let dir = tape.extract1(root);
    tape.backward(dir)?;
    Ok(inputs
        .iter()
        .zip(v)
        .map(|(&id, &vi)| vi * tape.adjoint_of(id).adjoint_read())
        .sum())
}

/// Gradient of a scalar loss with respect to the parameter block.
pub fn grad_params<S: Scalar>(
    tape: &mut Tape<S>,
    loss: NodeId,
    block: &ParamBlock,
) -> Result<Vec<f64>, TapeError> {
    tape.backward(loss)?;
    Ok(tape.param_gradient(block))
}
