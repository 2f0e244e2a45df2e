//! Flat mixture of generators: the depth-1 softmax special case of the
//! gating tree. One softmax over K leaves, gate input is the latent alone.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::models::tree::LeafGenerator;
use crate::nn::{Model, Parameter};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct FlatMixture {
    /// (K, latent_dim) gate weights feeding the softmax.
    pub gate_w: Parameter,
    /// (K,) gate bias.
    pub gate_b: Parameter,
    pub leaves: Vec<LeafGenerator>,
    pub latent_dim: usize,
    pub out_dim: usize,
}

impl FlatMixture {
    pub fn new<R: Rng>(
        prefix: &str,
        k: usize,
        latent_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!(
                "a flat mixture needs at least 2 generators, got {k}"
            )));
        }
        let std = (1.0 / latent_dim as f64).sqrt();
        let gate_w = Parameter::new(
            format!("{prefix}.gate.w"),
            Tensor::randn(vec![k, latent_dim], std, rng),
        );
        let gate_b = Parameter::new(format!("{prefix}.gate.b"), Tensor::zeros(vec![k]));
        let leaves = (0..k)
            .map(|j| LeafGenerator::new(&format!("{prefix}.leaf{j}"), latent_dim, out_dim, rng))
            .collect();
        Ok(FlatMixture { gate_w, gate_b, leaves, latent_dim, out_dim })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Softmax mixture weights, shape (n, K). Rows sum to 1.
    pub fn responsibilities(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        let w = self.gate_w.bind(g)?;
        let b = self.gate_b.bind(g)?;
        let wt = g.transpose(w)?;
        let logits = g.matmul(z, wt)?;
        let logits = g.add(logits, b)?;
        Ok(g.softmax(logits))
    }

    /// Convex combination Σ_i softmax_i(gate(z))·G_i(z), shape (n, out_dim).
    pub fn forward(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        if self.leaves.len() < 2 {
            return Err(Error::invalid("flat mixture with fewer than 2 generators"));
        }
        let probs = self.responsibilities(g, z)?;
        let mut acc: Option<NodeId> = None;
        for (j, leaf) in self.leaves.iter().enumerate() {
            let pj = g.slice_last(probs, j, 1)?;
            let xj = leaf.forward(g, z)?;
            let term = g.mul(pj, xj)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.unwrap())
    }

    pub fn leaf_forward(&self, g: &mut Graph, j: usize, z: NodeId) -> Result<NodeId> {
        if j >= self.leaves.len() {
            return Err(Error::BadGeneratorIndex { index: j, count: self.leaves.len() });
        }
        self.leaves[j].forward(g, z)
    }
}

impl Model for FlatMixture {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gate_w);
        f(&self.gate_b);
        for leaf in &self.leaves {
            leaf.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gate_w);
        f(&mut self.gate_b);
        for leaf in &mut self.leaves {
            leaf.visit_params_mut(f);
        }
    }
}
