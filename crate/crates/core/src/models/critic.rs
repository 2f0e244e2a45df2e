//! Critic / discriminator networks and the auxiliary generator classifier.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Model, Parameter};
use rand::Rng;

/// Output head of the critic. Wasserstein critics score samples on an
/// unbounded scale; likelihood discriminators emit probabilities; the
/// multi-class head serves the K+1-way real/which-generator problem, with
/// class 0 reserved for real samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticHead {
    Wasserstein,
    Sigmoid,
    Softmax { classes: usize },
}

impl CriticHead {
    pub fn output_dim(self) -> usize {
        match self {
            CriticHead::Wasserstein | CriticHead::Sigmoid => 1,
            CriticHead::Softmax { classes } => classes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticNet {
    pub mlp: Mlp,
    pub head: CriticHead,
}

impl CriticNet {
    pub fn new<R: Rng>(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        head: CriticHead,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![data_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(head.output_dim());
        CriticNet { mlp: Mlp::new("critic", &sizes, activation, rng), head }
    }

    pub fn data_dim(&self) -> usize {
        self.mlp.layers[0].in_features()
    }

    /// Scores (wasserstein, shape (n,1)), probabilities (sigmoid, (n,1)), or
    /// class probabilities (softmax, (n,classes), rows summing to 1).
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let got = g.value(x).shape().to_vec();
        if got.len() != 2 || got[1] != self.data_dim() {
            return Err(Error::BadShape {
                op: "critic_forward",
                expected: format!("(n, {})", self.data_dim()),
                got,
            });
        }
        let raw = self.mlp.forward(g, x)?;
        Ok(match self.head {
            CriticHead::Wasserstein => raw,
            CriticHead::Sigmoid => g.sigmoid(raw),
            CriticHead::Softmax { .. } => g.softmax(raw),
        })
    }

    /// Whether every op the critic applies admits a second derivative — the
    /// gradient penalty requires this.
    pub fn twice_differentiable(&self) -> bool {
        self.mlp.hidden_activation.twice_differentiable()
    }
}

impl Model for CriticNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.mlp.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.mlp.visit_params_mut(f);
    }
}

/// K-way softmax classifier over fakes, predicting which generator made
/// each sample. Used by the mixture-GAN objective alongside a binary critic.
#[derive(Clone, Debug)]
pub struct AuxClassifier {
    pub mlp: Mlp,
    pub k: usize,
}

impl AuxClassifier {
    pub fn new<R: Rng>(
        data_dim: usize,
        hidden: &[usize],
        k: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![data_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(k);
        AuxClassifier { mlp: Mlp::new("aux", &sizes, activation, rng), k }
    }

    /// Class probabilities (n, K), rows summing to 1.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let raw = self.mlp.forward(g, x)?;
        Ok(g.softmax(raw))
    }
}

impl Model for AuxClassifier {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.mlp.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.mlp.visit_params_mut(f);
    }
}
