//! The shared block B_s that several architectures pass samples through.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Model, Parameter};
use rand::Rng;

/// Shared trailing (or, for the trunk-first bank, leading) network. The 2-D
/// toy setting defaults to `Identity`, keeping the mixture output as the
/// sample; a dense stack is available when the intermediate dimension should
/// differ from the data dimension.
///
/// Parameters live under the `shared.` prefix, which run manifests exclude
/// from the reported parameter count.
#[derive(Clone, Debug)]
pub enum SharedBlock {
    Identity { dim: usize },
    Dense(Mlp),
}

impl SharedBlock {
    pub fn identity(dim: usize) -> Self {
        SharedBlock::Identity { dim }
    }

    pub fn dense<R: Rng>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        SharedBlock::Dense(Mlp::new("shared", &sizes, activation, rng))
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            SharedBlock::Identity { .. } => Ok(x),
            SharedBlock::Dense(mlp) => mlp.forward(g, x),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            SharedBlock::Identity { dim } => *dim,
            SharedBlock::Dense(mlp) => mlp.layers[0].in_features(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            SharedBlock::Identity { dim } => *dim,
            SharedBlock::Dense(mlp) => mlp.out_features(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, SharedBlock::Identity { .. })
    }
}

impl Model for SharedBlock {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        if let SharedBlock::Dense(mlp) = self {
            mlp.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if let SharedBlock::Dense(mlp) = self {
            mlp.visit_params_mut(f);
        }
    }
}
