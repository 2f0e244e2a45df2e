//! Hierarchical mixture of generators: a complete binary gating tree with
//! linear generators at the leaves.
//!
//! The tree is stored as heap-ordered arrays — node `m`'s children are
//! `2m+1` (left) and `2m+2` (right) — so a depth-`d` tree has `2^d − 1`
//! gating nodes followed by `2^d` leaves, and completeness holds by
//! construction. Leaf `j` sits at heap index `2^d − 1 + j`, ordered left to
//! right.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Model, Parameter};
use crate::tensor::Tensor;
use rand::Rng;

/// Soft binary router: σ(v·z + v0) is the probability of the left child.
#[derive(Clone, Debug)]
pub struct GatingNode {
    /// Row vector (1, latent_dim).
    pub v: Parameter,
    /// Scalar bias, shape (1,).
    pub v0: Parameter,
}

impl GatingNode {
    pub fn new<R: Rng>(name: &str, latent_dim: usize, rng: &mut R) -> Self {
        // Std 1/√latent keeps v·z near unit scale so gates start near 0.5
        // and every leaf receives gradient from the first step.
        let std = (1.0 / latent_dim as f64).sqrt();
        GatingNode {
            v: Parameter::new(format!("{name}.v"), Tensor::randn(vec![1, latent_dim], std, rng)),
            v0: Parameter::new(format!("{name}.v0"), Tensor::zeros(vec![1])),
        }
    }

    /// Probability of taking the left child, per sample: shape (n, 1).
    pub fn gate_probability(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        let v = self.v.bind(g)?;
        let v0 = self.v0.bind(g)?;
        let vt = g.transpose(v)?;
        let a = g.matmul(z, vt)?;
        let a = g.add(a, v0)?;
        Ok(g.sigmoid(a))
    }
}

impl Model for GatingNode {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.v);
        f(&self.v0);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.v);
        f(&mut self.v0);
    }
}

/// Affine generator G(z) = W z + w0 placed at a leaf.
#[derive(Clone, Debug)]
pub struct LeafGenerator {
    /// (out_dim, latent_dim).
    pub w: Parameter,
    /// (out_dim,).
    pub w0: Parameter,
}

impl LeafGenerator {
    pub fn new<R: Rng>(name: &str, latent_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / (latent_dim + out_dim) as f64).sqrt();
        LeafGenerator {
            w: Parameter::new(format!("{name}.w"), Tensor::randn(vec![out_dim, latent_dim], std, rng)),
            w0: Parameter::new(format!("{name}.w0"), Tensor::zeros(vec![out_dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        let w = self.w.bind(g)?;
        let w0 = self.w0.bind(g)?;
        let wt = g.transpose(w)?;
        let y = g.matmul(z, wt)?;
        g.add(y, w0)
    }
}

impl Model for LeafGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.w);
        f(&self.w0);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w);
        f(&mut self.w0);
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorTree {
    pub depth: usize,
    pub gates: Vec<GatingNode>,
    pub leaves: Vec<LeafGenerator>,
    pub latent_dim: usize,
    pub out_dim: usize,
}

impl GeneratorTree {
    pub fn new<R: Rng>(
        prefix: &str,
        depth: usize,
        latent_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let n_gates = (1usize << depth) - 1;
        let n_leaves = 1usize << depth;
        let gates = (0..n_gates)
            .map(|m| GatingNode::new(&format!("{prefix}.node{m}"), latent_dim, rng))
            .collect();
        let leaves = (0..n_leaves)
            .map(|j| LeafGenerator::new(&format!("{prefix}.leaf{j}"), latent_dim, out_dim, rng))
            .collect();
        GeneratorTree { depth, gates, leaves, latent_dim, out_dim }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Total node count 2·leaves − 1 (gates plus leaves).
    pub fn node_count(&self) -> usize {
        self.gates.len() + self.leaves.len()
    }

    fn check(&self) -> Result<()> {
        if self.leaves.is_empty() {
            return Err(Error::invalid("generator tree has no leaves"));
        }
        if self.leaves.len() != 1 << self.depth || self.gates.len() + 1 != self.leaves.len() {
            return Err(Error::invalid(format!(
                "tree of depth {} needs {} gates and {} leaves, has {} and {}",
                self.depth,
                (1 << self.depth) - 1,
                1 << self.depth,
                self.gates.len(),
                self.leaves.len()
            )));
        }
        Ok(())
    }

    /// Recursive mixture evaluation: every internal node blends its children
    /// with its gate probability, leaves are affine in z. Output (n, out_dim).
    pub fn forward(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        self.check()?;
        let total = self.node_count();
        let first_leaf = self.gates.len();
        let mut values: Vec<Option<NodeId>> = vec![None; total];
        for m in (0..total).rev() {
            let node = if m >= first_leaf {
                self.leaves[m - first_leaf].forward(g, z)?
            } else {
                let sigma = self.gates[m].gate_probability(g, z)?;
                let left = values[2 * m + 1].expect("heap order fills children first");
                let right = values[2 * m + 2].expect("heap order fills children first");
                let one_minus = one_minus(g, sigma);
                let l = g.mul(sigma, left)?;
                let r = g.mul(one_minus, right)?;
                g.add(l, r)?
            };
            values[m] = Some(node);
        }
        Ok(values[0].unwrap())
    }

    /// Path-product weight of every heap node, root first, each (n, 1). The
    /// root's weight is the constant 1; a child multiplies the parent weight
    /// by its branch's gating factor.
    pub fn node_weights(&self, g: &mut Graph, z: NodeId) -> Result<Vec<NodeId>> {
        self.check()?;
        let n = g.value(z).shape()[0];
        let total = self.node_count();
        let mut weights: Vec<Option<NodeId>> = vec![None; total];
        weights[0] = Some(g.constant(Tensor::ones(vec![n, 1])));
        for m in 0..self.gates.len() {
            let w = weights[m].unwrap();
            let sigma = self.gates[m].gate_probability(g, z)?;
            let one_minus = one_minus(g, sigma);
            weights[2 * m + 1] = Some(g.mul(w, sigma)?);
            weights[2 * m + 2] = Some(g.mul(w, one_minus)?);
        }
        Ok(weights.into_iter().map(Option::unwrap).collect())
    }

    /// Per-leaf mixture responsibilities, shape (n, leaf_count), columns in
    /// left-to-right leaf order. Rows sum to 1 because sibling weights split
    /// their parent's weight.
    pub fn responsibilities(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        let weights = self.node_weights(g, z)?;
        let leaf_weights = &weights[self.gates.len()..];
        g.concat(leaf_weights)
    }

    /// Evaluate leaf `j` alone on the batch, shape (n, out_dim).
    pub fn leaf_forward(&self, g: &mut Graph, j: usize, z: NodeId) -> Result<NodeId> {
        if j >= self.leaves.len() {
            return Err(Error::BadGeneratorIndex { index: j, count: self.leaves.len() });
        }
        self.leaves[j].forward(g, z)
    }
}

fn one_minus(g: &mut Graph, x: NodeId) -> NodeId {
    let n = g.neg(x);
    g.scalar_add(n, 1.0)
}

impl Model for GeneratorTree {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for gate in &self.gates {
            gate.visit_params(f);
        }
        for leaf in &self.leaves {
            leaf.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for gate in &mut self.gates {
            gate.visit_params_mut(f);
        }
        for leaf in &mut self.leaves {
            leaf.visit_params_mut(f);
        }
    }
}
