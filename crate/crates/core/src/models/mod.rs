//! Generator architectures and the bundle type that pairs a generator with
//! its critic (and, where the objective needs one, an auxiliary classifier).
//!
//! Six architectures share one interface:
//! - `hmog`: binary gating tree over linear leaves, blended softly;
//! - `mog`: flat softmax mixture over linear leaves (depth-1 counterpart);
//! - `fc`: a single dense generator, the no-mixture baseline;
//! - `madgan`: shared trunk first, then K dense heads, one picked per sample;
//! - `mgan`: K dense heads first, then a shared block, one picked per sample;
//! - `megan`: K self-contained generators under a learned hard gate.

pub mod bank;
pub mod critic;
pub mod flat;
pub mod shared;
pub mod tree;

pub use bank::{gumbel_noise, MadganGenerator, MeganGating, MeganGenerator, MganGenerator};
pub use critic::{AuxClassifier, CriticHead, CriticNet};
pub use flat::FlatMixture;
pub use shared::SharedBlock;
pub use tree::{GatingNode, GeneratorTree, LeafGenerator};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Model, Parameter};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Hmog,
    Mog,
    Fc,
    Madgan,
    Mgan,
    Megan,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Hmog,
        Architecture::Mog,
        Architecture::Fc,
        Architecture::Madgan,
        Architecture::Mgan,
        Architecture::Megan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Hmog => "hmog",
            Architecture::Mog => "mog",
            Architecture::Fc => "fc",
            Architecture::Madgan => "madgan",
            Architecture::Mgan => "mgan",
            Architecture::Megan => "megan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown architecture {s:?} (expected one of hmog, mog, fc, madgan, mgan, megan)"
                ))
            })
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A generator of any architecture, plus the shared block where the
/// topology includes one.
#[derive(Clone, Debug)]
pub enum GeneratorModel {
    Tree { tree: GeneratorTree, shared: SharedBlock },
    Flat { flat: FlatMixture, shared: SharedBlock },
    Fc { mlp: Mlp, shared: SharedBlock },
    Madgan(MadganGenerator),
    Mgan(MganGenerator),
    Megan(MeganGenerator),
}

impl GeneratorModel {
    /// Number of selectable generators (1 for the blend/baseline models,
    /// where no discrete choice is drawn).
    pub fn generator_count(&self) -> usize {
        match self {
            GeneratorModel::Tree { tree, .. } => tree.leaf_count(),
            GeneratorModel::Flat { flat, .. } => flat.leaf_count(),
            GeneratorModel::Fc { .. } => 1,
            GeneratorModel::Madgan(m) => m.heads_count(),
            GeneratorModel::Mgan(m) => m.heads_count(),
            GeneratorModel::Megan(m) => m.gens_count(),
        }
    }

    fn needs_choice(&self) -> bool {
        matches!(self, GeneratorModel::Madgan(_) | GeneratorModel::Mgan(_))
    }
}

impl Model for GeneratorModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        match self {
            GeneratorModel::Tree { tree, shared } => {
                tree.visit_params(f);
                shared.visit_params(f);
            }
            GeneratorModel::Flat { flat, shared } => {
                flat.visit_params(f);
                shared.visit_params(f);
            }
            GeneratorModel::Fc { mlp, shared } => {
                mlp.visit_params(f);
                shared.visit_params(f);
            }
            GeneratorModel::Madgan(m) => m.visit_params(f),
            GeneratorModel::Mgan(m) => m.visit_params(f),
            GeneratorModel::Megan(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            GeneratorModel::Tree { tree, shared } => {
                tree.visit_params_mut(f);
                shared.visit_params_mut(f);
            }
            GeneratorModel::Flat { flat, shared } => {
                flat.visit_params_mut(f);
                shared.visit_params_mut(f);
            }
            GeneratorModel::Fc { mlp, shared } => {
                mlp.visit_params_mut(f);
                shared.visit_params_mut(f);
            }
            GeneratorModel::Madgan(m) => m.visit_params_mut(f),
            GeneratorModel::Mgan(m) => m.visit_params_mut(f),
            GeneratorModel::Megan(m) => m.visit_params_mut(f),
        }
    }
}

/// One generator forward pass recorded on a graph.
pub struct Generated {
    /// Sample batch node, shape (n, data_dim).
    pub x: NodeId,
    /// 1-based generator index per row, for the bank architectures.
    pub choice: Option<Vec<usize>>,
    /// One-hot selection node (n, K) from the learned gate.
    pub selection: Option<NodeId>,
}

/// A generator forward pass evaluated on a throwaway graph, keeping only
/// concrete values — used for detached fakes in critic updates and for
/// evaluation sampling.
pub struct Sampled {
    pub x: Tensor,
    pub choice: Option<Vec<usize>>,
}

/// Generator + critic (+ auxiliary classifier where the objective uses
/// one), with the latent/data dimensions they were built for.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub gen: GeneratorModel,
    pub critic: CriticNet,
    pub aux: Option<AuxClassifier>,
    pub latent_dim: usize,
    pub data_dim: usize,
}

impl ModelBundle {
    /// Standard-normal latent batch (n, latent_dim).
    pub fn draw_latents<R: Rng>(&self, n: usize, rng: &mut R) -> Tensor {
        Tensor::randn(vec![n, self.latent_dim], 1.0, rng)
    }

    /// Record a generator forward pass for the latent batch at node `z`.
    /// The bank architectures draw one uniform generator index per row from
    /// `rng`; the gated architecture draws its Gumbel noise from it.
    pub fn generate<R: Rng>(&self, g: &mut Graph, z: NodeId, rng: &mut R) -> Result<Generated> {
        let n = g.value(z).shape()[0];
        let choice = if self.gen.needs_choice() {
            let k = self.gen.generator_count();
            Some((0..n).map(|_| rng.random_range(1..=k)).collect::<Vec<_>>())
        } else {
            None
        };
        self.generate_with_choice(g, z, choice, rng)
    }

    /// Same as `generate` but with the bank choices supplied by the caller.
    pub fn generate_with_choice<R: Rng>(
        &self,
        g: &mut Graph,
        z: NodeId,
        choice: Option<Vec<usize>>,
        rng: &mut R,
    ) -> Result<Generated> {
        match &self.gen {
            GeneratorModel::Tree { tree, shared } => {
                let h = tree.forward(g, z)?;
                Ok(Generated { x: shared.forward(g, h)?, choice: None, selection: None })
            }
            GeneratorModel::Flat { flat, shared } => {
                let h = flat.forward(g, z)?;
                Ok(Generated { x: shared.forward(g, h)?, choice: None, selection: None })
            }
            GeneratorModel::Fc { mlp, shared } => {
                let h = mlp.forward(g, z)?;
                Ok(Generated { x: shared.forward(g, h)?, choice: None, selection: None })
            }
            GeneratorModel::Madgan(m) => {
                let c = choice.ok_or_else(|| Error::invalid("this architecture needs per-sample generator choices"))?;
                let x = m.forward(g, z, &c)?;
                Ok(Generated { x, choice: Some(c), selection: None })
            }
            GeneratorModel::Mgan(m) => {
                let c = choice.ok_or_else(|| Error::invalid("this architecture needs per-sample generator choices"))?;
                let x = m.forward(g, z, &c)?;
                Ok(Generated { x, choice: Some(c), selection: None })
            }
            GeneratorModel::Megan(m) => {
                let (x, sel) = m.forward(g, z, rng)?;
                Ok(Generated { x, choice: None, selection: Some(sel) })
            }
        }
    }

    /// Draw n samples on a throwaway graph (no gradients retained).
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Sampled> {
        let latents = self.draw_latents(n, rng);
        self.sample_from_latents(&latents, rng)
    }

    /// Evaluate the generator on given latent rows, throwaway graph.
    pub fn sample_from_latents<R: Rng>(&self, latents: &Tensor, rng: &mut R) -> Result<Sampled> {
        let mut g = Graph::new();
        let z = g.constant(latents.clone());
        let out = self.generate(&mut g, z, rng)?;
        Ok(Sampled { x: g.value(out.x).clone(), choice: out.choice })
    }

    pub fn visit_generator_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.gen.visit_params(f);
        if let Some(aux) = &self.aux {
            aux.visit_params(f);
        }
    }

    /// Everything the generator step updates. Where the objective trains an
    /// auxiliary classifier jointly with the generators, it is part of this
    /// group; the critic step never touches it.
    pub fn visit_generator_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.gen.visit_params_mut(f);
        if let Some(aux) = &mut self.aux {
            aux.visit_params_mut(f);
        }
    }

    pub fn visit_critic_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.critic.visit_params(f);
    }

    pub fn visit_critic_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.critic.visit_params_mut(f);
    }

    pub fn visit_all_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.visit_generator_params(f);
        self.visit_critic_params(f);
    }

    pub fn visit_all_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.visit_generator_params_mut(f);
        self.visit_critic_params_mut(f);
    }

    /// Scalar count over the generator group, shared-block parameters
    /// excluded (their names carry the `shared.` prefix).
    pub fn generator_own_param_count(&self) -> usize {
        let mut count = 0;
        self.gen.visit_params(&mut |p| {
            if !p.name.starts_with("shared.") {
                count += p.value.numel();
            }
        });
        count
    }

    pub fn shared_param_count(&self) -> usize {
        let mut count = 0;
        self.gen.visit_params(&mut |p| {
            if p.name.starts_with("shared.") {
                count += p.value.numel();
            }
        });
        count
    }

    pub fn critic_param_count(&self) -> usize {
        let mut count = 0;
        self.critic.visit_params(&mut |p| count += p.value.numel());
        count
    }

    pub fn tree(&self) -> Option<&GeneratorTree> {
        match &self.gen {
            GeneratorModel::Tree { tree, .. } => Some(tree),
            _ => None,
        }
    }

    pub fn flat(&self) -> Option<&FlatMixture> {
        match &self.gen {
            GeneratorModel::Flat { flat, .. } => Some(flat),
            _ => None,
        }
    }
}

/// Recipe for building a `ModelBundle`. The hidden sizes here are this
/// implementation's defaults, recorded in every run manifest — small dense
/// stacks that train in seconds on 2-D data.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub latent_dim: usize,
    pub data_dim: usize,
    /// Intermediate output width of the leaves/heads that feed the shared
    /// block (hmog, mog, fc, mgan). When it differs from `data_dim` the
    /// shared block is forced dense so it can map h down to the data space;
    /// the architectures whose generators emit data directly ignore it.
    pub h_dim: usize,
    /// Tree depth (hmog); leaf count is 2^depth.
    pub depth: usize,
    /// Generator count K (mog and the bank architectures).
    pub generators: usize,
    /// Hidden widths for dense generators/heads (fc, madgan, mgan, megan).
    pub gen_hidden: Vec<usize>,
    /// Hidden widths for the shared block; empty means identity.
    pub shared_hidden: Vec<usize>,
    /// Hidden widths for the learned gate (megan).
    pub gate_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gen_activation: Activation,
    pub critic_activation: Activation,
    /// None picks the architecture's default head (wasserstein for the
    /// mixture models, K+1-softmax for madgan, sigmoid otherwise).
    pub critic_head: Option<CriticHead>,
    pub gumbel_temperature: f64,
}

impl ModelSpec {
    pub fn new(arch: Architecture, latent_dim: usize, data_dim: usize) -> Self {
        ModelSpec {
            arch,
            latent_dim,
            data_dim,
            h_dim: data_dim,
            depth: 3,
            generators: 8,
            gen_hidden: vec![32],
            shared_hidden: vec![],
            gate_hidden: vec![16],
            critic_hidden: vec![64, 64],
            gen_activation: Activation::Tanh,
            critic_activation: Activation::Tanh,
            critic_head: None,
            gumbel_temperature: 1.0,
        }
    }

    fn default_head(&self) -> CriticHead {
        match self.arch {
            Architecture::Hmog | Architecture::Mog | Architecture::Fc => CriticHead::Wasserstein,
            Architecture::Madgan => CriticHead::Softmax { classes: self.generators + 1 },
            Architecture::Mgan | Architecture::Megan => CriticHead::Sigmoid,
        }
    }

    pub fn build<R: Rng>(&self, rng: &mut R) -> Result<ModelBundle> {
        if self.latent_dim == 0 || self.data_dim == 0 {
            return Err(Error::invalid("latent and data dimensions must be positive"));
        }
        if self.h_dim == 0 {
            return Err(Error::invalid("intermediate width h must be positive"));
        }
        let head = self.critic_head.unwrap_or_else(|| self.default_head());

        // Shared block for the h -> x topologies: identity when the leaves
        // already emit data-space points and no dense stack is configured,
        // otherwise a dense map from the intermediate width to the data
        // space (a single affine layer when no hidden widths are given).
        let out_shared = |rng: &mut R| -> SharedBlock {
            if self.shared_hidden.is_empty() && self.h_dim == self.data_dim {
                SharedBlock::identity(self.data_dim)
            } else {
                SharedBlock::dense(
                    self.h_dim,
                    &self.shared_hidden,
                    self.data_dim,
                    self.gen_activation,
                    rng,
                )
            }
        };
        let sizes_to = |in_dim: usize, out_dim: usize| -> Vec<usize> {
            let mut s = vec![in_dim];
            s.extend_from_slice(&self.gen_hidden);
            s.push(out_dim);
            s
        };

        let gen = match self.arch {
            Architecture::Hmog => GeneratorModel::Tree {
                tree: GeneratorTree::new("gen", self.depth, self.latent_dim, self.h_dim, rng),
                shared: out_shared(rng),
            },
            Architecture::Mog => GeneratorModel::Flat {
                flat: FlatMixture::new("gen", self.generators, self.latent_dim, self.h_dim, rng)?,
                shared: out_shared(rng),
            },
            Architecture::Fc => GeneratorModel::Fc {
                mlp: Mlp::new("gen", &sizes_to(self.latent_dim, self.h_dim), self.gen_activation, rng),
                shared: out_shared(rng),
            },
            Architecture::Madgan => {
                if self.generators == 0 {
                    return Err(Error::invalid("generator count must be at least 1"));
                }
                // Trunk first: identity unless hidden widths are configured,
                // in which case it maps latent -> latent through them.
                let trunk = if self.shared_hidden.is_empty() {
                    SharedBlock::identity(self.latent_dim)
                } else {
                    SharedBlock::dense(
                        self.latent_dim,
                        &self.shared_hidden,
                        self.latent_dim,
                        self.gen_activation,
                        rng,
                    )
                };
                let heads = (0..self.generators)
                    .map(|i| {
                        Mlp::new(
                            &format!("gen.head{i}"),
                            &sizes_to(self.latent_dim, self.data_dim),
                            self.gen_activation,
                            rng,
                        )
                    })
                    .collect();
                GeneratorModel::Madgan(MadganGenerator { trunk, heads })
            }
            Architecture::Mgan => {
                if self.generators == 0 {
                    return Err(Error::invalid("generator count must be at least 1"));
                }
                let heads = (0..self.generators)
                    .map(|i| {
                        Mlp::new(
                            &format!("gen.head{i}"),
                            &sizes_to(self.latent_dim, self.h_dim),
                            self.gen_activation,
                            rng,
                        )
                    })
                    .collect();
                GeneratorModel::Mgan(MganGenerator { heads, shared: out_shared(rng) })
            }
            Architecture::Megan => {
                if self.generators == 0 {
                    return Err(Error::invalid("generator count must be at least 1"));
                }
                if !self.shared_hidden.is_empty() {
                    return Err(Error::invalid(
                        "the gated-bank architecture keeps its generators fully separate; \
                         a shared block cannot be configured for it",
                    ));
                }
                let gens: Vec<Mlp> = (0..self.generators)
                    .map(|i| {
                        Mlp::new(
                            &format!("gen.g{i}"),
                            &sizes_to(self.latent_dim, self.data_dim),
                            self.gen_activation,
                            rng,
                        )
                    })
                    .collect();
                let gate_in = MeganGenerator::gate_input_dim(self.latent_dim, &gens);
                let mut gate_sizes = vec![gate_in];
                gate_sizes.extend_from_slice(&self.gate_hidden);
                gate_sizes.push(self.generators);
                let gating = MeganGating {
                    net: Mlp::new("gen.gate", &gate_sizes, self.gen_activation, rng),
                    temperature: self.gumbel_temperature,
                };
                if gating.temperature <= 0.0 {
                    return Err(Error::invalid(format!(
                        "gumbel temperature must be positive, got {}",
                        gating.temperature
                    )));
                }
                GeneratorModel::Megan(MeganGenerator { gens, gating })
            }
        };

        let critic = CriticNet::new(self.data_dim, &self.critic_hidden, self.critic_activation, head, rng);
        let aux = if self.arch == Architecture::Mgan {
            Some(AuxClassifier::new(
                self.data_dim,
                &self.critic_hidden,
                self.generators,
                self.critic_activation,
                rng,
            ))
        } else {
            None
        };

        Ok(ModelBundle {
            arch: self.arch,
            gen,
            critic,
            aux,
            latent_dim: self.latent_dim,
            data_dim: self.data_dim,
        })
    }
}
