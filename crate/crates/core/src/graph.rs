//! Define-by-run reverse-mode differentiation on f64 tensors.
//!
//! A [`Graph`] is a flat tape of nodes. Every operator method evaluates
//! eagerly — calling `g.sigmoid(x)` computes the value immediately and
//! records the op — so a node's value is always available and a graph is
//! rebuilt from scratch for every training step.
//!
//! Backpropagation is *symbolic*: [`Graph::backward`] and
//! [`Graph::input_gradient`] express each vector-Jacobian product as ordinary
//! graph ops appended to the same tape. Because the op set is closed under
//! its own VJPs, the node returned by `input_gradient` can itself be
//! differentiated — which is exactly what a gradient penalty needs.
//!
//! Ops whose derivative is only piecewise defined (`clamp_min`,
//! `leaky_relu`, the straight-through estimator) backpropagate through a
//! constant mask. That first derivative is fine, but a second pass through
//! the mask would silently drop curvature, so `input_gradient` refuses any
//! path containing them instead of producing wrong numbers.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use std::collections::HashMap;

/// Handle to a node in one specific [`Graph`]. Ids from different graphs
/// must not be mixed; they are plain indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable source (parameter binding or explicit input).
    Leaf,
    /// Non-differentiable source; gradients never flow into it.
    Const,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    ScalarAdd(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Rsqrt(NodeId),
    Recip(NodeId),
    Ln(NodeId),
    ClampMin(NodeId, f64),
    LeakyRelu(NodeId, f64),
    Softmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    ExpandLast(NodeId),
    SumTo(NodeId),
    BroadcastTo(NodeId),
    Concat(Vec<NodeId>),
    SliceLast { input: NodeId, start: usize, len: usize },
    /// Forward value supplied at creation; backward passes gradients through
    /// unchanged. Used for hard categorical choices.
    StraightThrough(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScalarMul(..) => "scalar_mul",
            Op::ScalarAdd(..) => "scalar_add",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Rsqrt(..) => "rsqrt",
            Op::Recip(..) => "recip",
            Op::Ln(..) => "ln",
            Op::ClampMin(..) => "clamp_min",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::ExpandLast(..) => "expand_last",
            Op::SumTo(..) => "sum_to",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::Concat(..) => "concat",
            Op::SliceLast { .. } => "slice",
            Op::StraightThrough(..) => "straight_through",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Const => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::ScalarMul(a, _)
            | Op::ScalarAdd(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Rsqrt(a)
            | Op::Recip(a)
            | Op::Ln(a)
            | Op::ClampMin(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::ExpandLast(a)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::SliceLast { input: a, .. }
            | Op::StraightThrough(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    /// Whether the op's VJP is itself differentiable w.r.t. the op's inputs.
    fn twice_differentiable(&self) -> bool {
        !matches!(
            self,
            Op::ClampMin(..) | Op::LeakyRelu(..) | Op::StraightThrough(..)
        )
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Flat tape of eagerly evaluated nodes plus a per-node gradient store
/// filled by [`Graph::backward`].
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    by_name: HashMap<String, NodeId>,
    param_order: Vec<(String, NodeId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            by_name: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad });
        id
    }

    fn any_needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].needs_grad)
    }

    // ── sources ─────────────────────────────────────────────────────

    /// Differentiable input node.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant node; no gradient is ever propagated into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a named parameter. Binding the same name again returns the
    /// existing node, so a parameter used by several forward passes in one
    /// graph accumulates a single gradient.
    pub fn leaf_named(&mut self, name: &str, value: &Tensor) -> Result<NodeId> {
        if let Some(&id) = self.by_name.get(name) {
            if self.nodes[id.0].value.shape() != value.shape() {
                return Err(Error::BadShape {
                    op: "leaf_named",
                    expected: format!("shape {:?} for '{}'", self.nodes[id.0].value.shape(), name),
                    got: value.shape().to_vec(),
                });
            }
            return Ok(id);
        }
        let id = self.push(Op::Leaf, value.clone(), true);
        self.by_name.insert(name.to_string(), id);
        self.param_order.push((name.to_string(), id));
        Ok(id)
    }

    /// Named parameters in binding order.
    pub fn bound_params(&self) -> &[(String, NodeId)] {
        &self.param_order
    }

    // ── values and gradients ────────────────────────────────────────

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient recorded by the most recent [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn grad_by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).and_then(|&id| self.grad(id))
    }

    // ── operators ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.any_needs_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), v, ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::transpose2(self.value(a))?;
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::Transpose(a), v, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        let ng = self.any_needs_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let ng = self.any_needs_grad(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let ng = self.any_needs_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, ng))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::ScalarMul(a, c), v, ng)
    }

    pub fn scalar_add(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::ScalarAdd(a), v, ng)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scalar_mul(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(tensor::sigmoid_scalar);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Tanh(a), v, ng)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(tensor::softplus_scalar);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Softplus(a), v, ng)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Square(a), v, ng)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Sqrt(a), v, ng)
    }

    pub fn rsqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / x.sqrt());
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Rsqrt(a), v, ng)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::recip);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Recip(a), v, ng)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Ln(a), v, ng)
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(floor));
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::ClampMin(a, floor), v, ng)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::LeakyRelu(a, slope), v, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = tensor::softmax_last(self.value(a));
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Softmax(a), v, ng)
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::Sum(a), v, ng)
    }

    /// Mean of all elements, as a 0-d tensor.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::EmptyBatch("mean"));
        }
        let v = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n as f64);
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::Mean(a), v, ng))
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, a: NodeId) -> NodeId {
        let v = tensor::sum_last(self.value(a));
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::SumLast(a), v, ng)
    }

    /// Append an axis of size `d`, repeating each element along it.
    pub fn expand_last(&mut self, a: NodeId, d: usize) -> NodeId {
        let v = tensor::expand_last(self.value(a), d);
        let ng = self.any_needs_grad(&[a]);
        self.push(Op::ExpandLast(a), v, ng)
    }

    /// Sum down to `shape` (the adjoint of broadcasting `shape` up).
    pub fn sum_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = tensor::sum_to(self.value(a), shape)?;
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::SumTo(a), v, ng))
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = tensor::broadcast_to(self.value(a), shape)?;
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::BroadcastTo(a), v, ng))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat_last(&tensors)?;
        let ng = self.any_needs_grad(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), v, ng))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = tensor::slice_last(self.value(a), start, len)?;
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::SliceLast { input: a, start, len }, v, ng))
    }

    /// Node whose forward value is `value` but whose backward pass copies
    /// gradients straight onto `a`. `value` must match `a`'s shape.
    pub fn straight_through(&mut self, a: NodeId, value: Tensor) -> Result<NodeId> {
        if value.shape() != self.value(a).shape() {
            return Err(Error::ShapeMismatch {
                op: "straight_through",
                lhs: self.value(a).shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        let ng = self.any_needs_grad(&[a]);
        Ok(self.push(Op::StraightThrough(a), value, ng))
    }

    /// Euclidean norm of each row (over the last axis): sqrt(Σ x²).
    pub fn norm_last(&mut self, a: NodeId) -> NodeId {
        let sq = self.square(a);
        let s = self.sum_last(sq);
        self.sqrt(s)
    }

    // ── reachability ────────────────────────────────────────────────

    fn ancestors(&self, of: NodeId) -> Vec<bool> {
        let mut mark = vec![false; of.0 + 1];
        mark[of.0] = true;
        for i in (0..=of.0).rev() {
            if mark[i] {
                for inp in self.nodes[i].op.inputs() {
                    mark[inp.0] = true;
                }
            }
        }
        mark
    }

    fn descendants_within(&self, of: NodeId, upto: NodeId) -> Vec<bool> {
        let mut mark = vec![false; upto.0 + 1];
        mark[of.0] = true;
        for i in of.0..=upto.0 {
            if !mark[i] {
                let hit = self.nodes[i].op.inputs().iter().any(|inp| mark[inp.0]);
                mark[i] = hit;
            }
        }
        mark
    }

    // ── backward ────────────────────────────────────────────────────

    /// Append, for every differentiable ancestor of `output`, a node holding
    /// ∂output/∂ancestor. Returns the adjoint node per ancestor id.
    fn build_adjoints(&mut self, output: NodeId) -> Result<Vec<Option<NodeId>>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(output.0));
        }
        let out_val = self.value(output);
        if out_val.numel() != 1 {
            return Err(Error::NonScalarLoss(out_val.shape().to_vec()));
        }
        let mut adj: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        let seed_shape = out_val.shape().to_vec();
        adj[output.0] = Some(self.constant(Tensor::ones(seed_shape)));

        for i in (0..=output.0).rev() {
            let Some(gbar) = adj[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let this = NodeId(i);
            match op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let bt = self.transpose(b)?;
                        let ga = self.matmul(gbar, bt)?;
                        accumulate(self, &mut adj, a, ga)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let at = self.transpose(a)?;
                        let gb = self.matmul(at, gbar)?;
                        accumulate(self, &mut adj, b, gb)?;
                    }
                }
                Op::Transpose(a) => {
                    let g = self.transpose(gbar)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let sa = self.value(a).shape().to_vec();
                        let g = self.sum_to(gbar, &sa)?;
                        accumulate(self, &mut adj, a, g)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let sb = self.value(b).shape().to_vec();
                        let g = self.sum_to(gbar, &sb)?;
                        accumulate(self, &mut adj, b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let sa = self.value(a).shape().to_vec();
                        let g = self.sum_to(gbar, &sa)?;
                        accumulate(self, &mut adj, a, g)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let sb = self.value(b).shape().to_vec();
                        let g = self.sum_to(gbar, &sb)?;
                        let g = self.neg(g);
                        accumulate(self, &mut adj, b, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    // VJPs reference the original input *nodes* so that a
                    // second differentiation sees the product rule.
                    if self.nodes[a.0].needs_grad {
                        let sa = self.value(a).shape().to_vec();
                        let g = self.mul(gbar, b)?;
                        let g = self.sum_to(g, &sa)?;
                        accumulate(self, &mut adj, a, g)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let sb = self.value(b).shape().to_vec();
                        let g = self.mul(gbar, a)?;
                        let g = self.sum_to(g, &sb)?;
                        accumulate(self, &mut adj, b, g)?;
                    }
                }
                Op::ScalarMul(a, c) => {
                    let g = self.scalar_mul(gbar, c);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::ScalarAdd(a) => {
                    accumulate(self, &mut adj, a, gbar)?;
                }
                Op::Sigmoid(a) => {
                    // σ' = σ(1-σ) = y - y²
                    let y2 = self.square(this);
                    let d = self.sub(this, y2)?;
                    let g = self.mul(gbar, d)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Tanh(a) => {
                    // tanh' = 1 - y²
                    let y2 = self.square(this);
                    let ym = self.scalar_mul(y2, -1.0);
                    let d = self.scalar_add(ym, 1.0);
                    let g = self.mul(gbar, d)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Softplus(a) => {
                    let d = self.sigmoid(a);
                    let g = self.mul(gbar, d)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Square(a) => {
                    let g = self.mul(gbar, a)?;
                    let g = self.scalar_mul(g, 2.0);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Sqrt(a) => {
                    // d√x = 1/(2√x) = ½·y⁻¹
                    let inv = self.recip(this);
                    let g = self.mul(gbar, inv)?;
                    let g = self.scalar_mul(g, 0.5);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Rsqrt(a) => {
                    // d(x^-½) = -½x^-³ᐟ² = -½y³
                    let y2 = self.square(this);
                    let y3 = self.mul(y2, this)?;
                    let g = self.mul(gbar, y3)?;
                    let g = self.scalar_mul(g, -0.5);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Recip(a) => {
                    // d(1/x) = -y²
                    let y2 = self.square(this);
                    let g = self.mul(gbar, y2)?;
                    let g = self.neg(g);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Ln(a) => {
                    let inv = self.recip(a);
                    let g = self.mul(gbar, inv)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::ClampMin(a, floor) => {
                    let mask = self.value(a).map(|x| if x > floor { 1.0 } else { 0.0 });
                    let m = self.constant(mask);
                    let g = self.mul(gbar, m)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                    let m = self.constant(mask);
                    let g = self.mul(gbar, m)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Softmax(a) => {
                    // dx = y ⊙ (ḡ − Σ_last(ḡ ⊙ y))
                    let d = self.value(this).last_dim();
                    let gy = self.mul(gbar, this)?;
                    let s = self.sum_last(gy);
                    let s = self.expand_last(s, d);
                    let diff = self.sub(gbar, s)?;
                    let g = self.mul(this, diff)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Sum(a) => {
                    let sa = self.value(a).shape().to_vec();
                    let g = self.broadcast_to(gbar, &sa)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Mean(a) => {
                    let sa = self.value(a).shape().to_vec();
                    let n = self.value(a).numel() as f64;
                    let g = self.broadcast_to(gbar, &sa)?;
                    let g = self.scalar_mul(g, 1.0 / n);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::SumLast(a) => {
                    let d = self.value(a).last_dim();
                    let g = self.expand_last(gbar, d);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::ExpandLast(a) => {
                    let g = self.sum_last(gbar);
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::SumTo(a) => {
                    let sa = self.value(a).shape().to_vec();
                    let g = self.broadcast_to(gbar, &sa)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::BroadcastTo(a) => {
                    let sa = self.value(a).shape().to_vec();
                    let g = self.sum_to(gbar, &sa)?;
                    accumulate(self, &mut adj, a, g)?;
                }
                Op::Concat(parts) => {
                    let mut start = 0usize;
                    for p in parts {
                        let len = self.value(p).last_dim();
                        if self.nodes[p.0].needs_grad {
                            let g = self.slice_last(gbar, start, len)?;
                            accumulate(self, &mut adj, p, g)?;
                        }
                        start += len;
                    }
                }
                Op::SliceLast { input, start, len } => {
                    // Pad ḡ back to the input's width with zeros.
                    let in_shape = self.value(input).shape().to_vec();
                    let d = *in_shape.last().unwrap();
                    let lead = &in_shape[..in_shape.len() - 1];
                    let mut parts: Vec<NodeId> = Vec::with_capacity(3);
                    if start > 0 {
                        let mut s = lead.to_vec();
                        s.push(start);
                        parts.push(self.constant(Tensor::zeros(s)));
                    }
                    parts.push(gbar);
                    if start + len < d {
                        let mut s = lead.to_vec();
                        s.push(d - start - len);
                        parts.push(self.constant(Tensor::zeros(s)));
                    }
                    let g = self.concat(&parts)?;
                    accumulate(self, &mut adj, input, g)?;
                }
                Op::StraightThrough(a) => {
                    accumulate(self, &mut adj, a, gbar)?;
                }
            }
        }
        Ok(adj)
    }

    /// Reverse pass from a scalar `loss`. Gradients become readable through
    /// [`Graph::grad`] / [`Graph::grad_by_name`] for every differentiable
    /// node that influences the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let adj = self.build_adjoints(loss)?;
        self.grads = vec![None; self.nodes.len()];
        for (i, a) in adj.iter().enumerate() {
            if let Some(aid) = a {
                if self.nodes[i].needs_grad {
                    let g = self.nodes[aid.0].value.clone();
                    if !g.all_finite() {
                        return Err(Error::NonFiniteGrad(format!(
                            "gradient of node {} ({})",
                            i,
                            self.nodes[i].op.name()
                        )));
                    }
                    self.grads[i] = Some(g);
                }
            }
        }
        Ok(())
    }

    /// Gradient of scalar `output` w.r.t. `input`, returned as a graph node
    /// so it can enter further computation and be differentiated again.
    ///
    /// Errors if any op on a path from `input` to `output` lacks a
    /// differentiable VJP, since a later backward pass through the result
    /// would be silently wrong.
    pub fn input_gradient(&mut self, output: NodeId, input: NodeId) -> Result<NodeId> {
        if output.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(output.0));
        }
        if input.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(input.0));
        }
        if !self.nodes[input.0].needs_grad {
            return Err(Error::invalid(
                "input_gradient target is a constant; create it with Graph::input",
            ));
        }
        if input.0 > output.0 {
            let shape = self.value(input).shape().to_vec();
            return Ok(self.constant(Tensor::zeros(shape)));
        }
        let back = self.ancestors(output);
        let fwd = self.descendants_within(input, output);
        for i in input.0..=output.0 {
            if back[i] && fwd[i] && !self.nodes[i].op.twice_differentiable() {
                return Err(Error::NotTwiceDifferentiable {
                    op: self.nodes[i].op.name(),
                });
            }
        }
        let adj = self.build_adjoints(output)?;
        match adj[input.0] {
            Some(id) => Ok(id),
            None => {
                let shape = self.value(input).shape().to_vec();
                Ok(self.constant(Tensor::zeros(shape)))
            }
        }
    }
}

/// Add `contribution` into the running adjoint of `target`.
fn accumulate(
    g: &mut Graph,
    adj: &mut [Option<NodeId>],
    target: NodeId,
    contribution: NodeId,
) -> Result<()> {
    adj[target.0] = Some(match adj[target.0] {
        Some(prev) => g.add(prev, contribution)?,
        None => contribution,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    #[test]
    fn forward_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![0.0, 1.0, -1.0]));
        let s = g.sigmoid(x);
        assert_close(g.value(s).data()[0], 0.5, 1e-15);
        let sm = g.softmax(x);
        let total: f64 = g.value(sm).data().iter().sum();
        assert_close(total, 1.0, 1e-12);
        let c = g.clamp_min(x, 0.5);
        assert_eq!(g.value(c).data(), &[0.5, 1.0, 0.5]);
    }

    #[test]
    fn linear_chain_gradient_is_exact() {
        // loss = sum((x*W^T + b)^2) with integer values: gradients are exact.
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.input(Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap());
        let b = g.input(Tensor::from_vec(vec![4.0]));
        let wt = g.transpose(w).unwrap();
        let y = g.matmul(x, wt).unwrap();
        let y = g.add(y, b).unwrap();
        // y = 3 - 2 + 4 = 5
        assert_eq!(g.value(y).data(), &[5.0]);
        let sq = g.square(y);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        // dL/dw = 2y·x = [10, 20]; dL/db = 2y = [10]
        assert_eq!(g.grad(w).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[10.0]);
    }

    #[test]
    fn bias_gradient_sums_over_batch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.input(Tensor::from_vec(vec![0.0]));
        let y = g.add(x, b).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0]);
    }

    #[test]
    fn mul_broadcast_gradient() {
        // loss = sum(p ⊙ x) with p a (2,1) column against x (2,3).
        let mut g = Graph::new();
        let p = g.input(Tensor::new(vec![2, 1], vec![2.0, 5.0]).unwrap());
        let x = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = g.mul(p, x).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[6.0, 15.0]);
    }

    #[test]
    fn repeated_binding_accumulates_one_gradient() {
        let mut g = Graph::new();
        let t = Tensor::from_vec(vec![2.0]);
        let a = g.leaf_named("w", &t).unwrap();
        let b = g.leaf_named("w", &t).unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap(); // w²
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad_by_name("w").unwrap().data(), &[4.0]); // 2w
    }

    #[test]
    fn input_gradient_is_differentiable() {
        // f(x) = Σ x³ per element; ∂f/∂x = 3x²; s = Σ 3x²; ∂s/∂x = 6x.
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let f = g.sum(x3);
        let dfdx = g.input_gradient(f, x).unwrap();
        assert_eq!(g.value(dfdx).data(), &[3.0, 12.0, 0.75]);
        let s = g.sum(dfdx);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, -12.0, 3.0]);
    }

    #[test]
    fn input_gradient_through_norm() {
        // r = ‖x‖₂ ⇒ ∂r/∂x = x/‖x‖.
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let n = g.norm_last(x);
        let s = g.sum(n);
        let dn = g.input_gradient(s, x).unwrap();
        assert_close(g.value(dn).data()[0], 0.6, 1e-12);
        assert_close(g.value(dn).data()[1], 0.8, 1e-12);
    }

    #[test]
    fn input_gradient_rejects_piecewise_ops() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, -1.0]));
        let y = g.leaky_relu(x, 0.2);
        let s = g.sum(y);
        let err = g.input_gradient(s, x).unwrap_err();
        assert!(matches!(err, Error::NotTwiceDifferentiable { op: "leaky_relu" }));
    }

    #[test]
    fn input_gradient_off_path_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0]));
        let y = g.input(Tensor::from_vec(vec![2.0]));
        let s = g.sum(y);
        let dx = g.input_gradient(s, x).unwrap();
        assert_eq!(g.value(dx).data(), &[0.0]);
    }

    #[test]
    fn piecewise_op_off_path_is_tolerated() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![2.0]));
        let y = g.input(Tensor::from_vec(vec![-3.0]));
        let _side = g.leaky_relu(y, 0.1); // not between x and s
        let sq = g.square(x);
        let s = g.sum(sq);
        let dx = g.input_gradient(s, x).unwrap();
        assert_eq!(g.value(dx).data(), &[4.0]);
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_gradient_matches_jacobian() {
        // Analytic softmax Jacobian: ∂y_i/∂x_j = y_i(δ_ij − y_j).
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![0.3, -0.7, 1.1]));
        let y = g.softmax(x);
        // loss = Σ c ⊙ y picks a linear combination so dL/dx = Jᵀc.
        let c = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let cy = g.mul(c, y).unwrap();
        let loss = g.sum(cy);
        g.backward(loss).unwrap();
        let yv = g.value(y).data().to_vec();
        let cv = [1.0, 2.0, 3.0];
        let dot: f64 = yv.iter().zip(cv).map(|(a, b)| a * b).sum();
        for j in 0..3 {
            let expect = yv[j] * (cv[j] - dot);
            assert_close(g.grad(x).unwrap().data()[j], expect, 1e-12);
        }
    }

    #[test]
    fn concat_slice_gradients_route_correctly() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.input(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let cat = g.concat(&[a, b]).unwrap();
        // keep only column 1 (first column of b)
        let mid = g.slice_last(cat, 1, 1).unwrap();
        let loss = g.sum(mid);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn straight_through_passes_gradient_and_value() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![0.2, 0.5, 0.3]));
        let hard = Tensor::from_vec(vec![0.0, 1.0, 0.0]);
        let st = g.straight_through(x, hard.clone()).unwrap();
        assert_eq!(g.value(st).data(), hard.data());
        let w = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let y = g.mul(st, w).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0, 3.0]);
    }
}
