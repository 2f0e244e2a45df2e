//! Parameters, layers, and the model trait shared by generators and critics.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::Rng;

/// A named trainable tensor. Names are globally unique within a model bundle
/// (enforced by prefixing) and double as optimizer-state keys and
/// checkpoint keys.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter { name: name.into(), value, trainable: true }
    }

    /// Bind into a graph, reusing the node if this name is already bound.
    pub fn bind(&self, g: &mut Graph) -> Result<NodeId> {
        g.leaf_named(&self.name, &self.value)
    }
}

/// Anything with a flat list of parameters.
pub trait Model {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.numel());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }
}

/// Pointwise nonlinearities available to network layers. The critic under a
/// gradient penalty must stay twice differentiable, which rules out
/// `LeakyRelu` there; the training config enforces that.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softplus => g.softplus(x),
            Activation::LeakyRelu => g.leaky_relu(x, 0.2),
        }
    }

    pub fn twice_differentiable(self) -> bool {
        !matches!(self, Activation::LeakyRelu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::LeakyRelu => "leaky-relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        const ALL: [Activation; 5] = [
            Activation::Identity,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::LeakyRelu,
        ];
        ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown activation {s:?} (expected one of identity, tanh, sigmoid, softplus, leaky-relu)"
            ))
        })
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully connected layer computing x·Wᵀ + b for row-major batches.
/// `w` has shape (out, in) and `b` shape (out,).
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    /// Glorot-style init: W ~ N(0, 2/(fan_in+fan_out)), b = 0.
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            w: Parameter::new(format!("{name}.w"), Tensor::randn(vec![fan_out, fan_in], std, rng)),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = self.w.bind(g)?;
        let b = self.b.bind(g)?;
        let wt = g.transpose(w)?;
        let y = g.matmul(x, wt)?;
        g.add(y, b)
    }

    pub fn in_features(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.w.value.shape()[0]
    }
}

impl Model for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Stack of dense layers with a shared hidden activation and a final layer
/// left linear (losses add their own heads on top).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(
        name: &str,
        sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = (0..sizes.len() - 1)
            .map(|i| Dense::new(&format!("{name}.l{i}"), sizes[i], sizes[i + 1], rng))
            .collect();
        Mlp { layers, hidden_activation }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = self.hidden_activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Activations after the first layer's nonlinearity — the feature view
    /// some gating networks condition on.
    pub fn first_layer_features(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = self.layers[0].forward(g, x)?;
        Ok(self.hidden_activation.apply(g, h))
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().unwrap().out_features()
    }
}

impl Model for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }
}
