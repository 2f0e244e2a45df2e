//! Multi-generator banks: the three baseline architectures that pick one
//! generator per sample instead of blending them.
//!
//! Selection is expressed with constant one-hot column masks so every head
//! is evaluated on the whole batch and masked; gradients then reach each
//! head exactly at the rows it produced. Generator indices in `choice`
//! vectors are 1-based class codes (class 0 belongs to real samples in the
//! K+1-way discriminator), matching the loss functions.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::models::shared::SharedBlock;
use crate::nn::{Mlp, Model, Parameter};
use crate::tensor::{one_hot, Tensor};
use rand::Rng;

/// Validate 1-based generator choices and return the (n, K) one-hot mask.
fn choice_mask(choice: &[usize], n: usize, k: usize) -> Result<Tensor> {
    if choice.len() != n {
        return Err(Error::invalid(format!(
            "{} generator choices for a batch of {}",
            choice.len(),
            n
        )));
    }
    let mut zero_based = Vec::with_capacity(n);
    for &c in choice {
        if c == 0 || c > k {
            return Err(Error::BadGeneratorIndex { index: c, count: k });
        }
        zero_based.push(c - 1);
    }
    one_hot(&zero_based, k)
}

/// Sum of per-head outputs masked by one-hot selection columns.
fn masked_combine(
    g: &mut Graph,
    mask: &Tensor,
    outputs: &[NodeId],
) -> Result<NodeId> {
    let mask_node = g.constant(mask.clone());
    let mut acc: Option<NodeId> = None;
    for (i, &out) in outputs.iter().enumerate() {
        let col = g.slice_last(mask_node, i, 1)?;
        let term = g.mul(col, out)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::invalid("generator bank is empty"))
}

/// Trunk-first bank: the shared block turns z into an intermediate h, and K
/// heads each map h to a sample. The discriminator for this architecture is
/// the K+1-class softmax critic.
#[derive(Clone, Debug)]
pub struct MadganGenerator {
    pub trunk: SharedBlock,
    pub heads: Vec<Mlp>,
}

impl MadganGenerator {
    pub fn heads_count(&self) -> usize {
        self.heads.len()
    }

    /// `choice[t] ∈ 1..=K` picks the head for row t.
    pub fn forward(&self, g: &mut Graph, z: NodeId, choice: &[usize]) -> Result<NodeId> {
        let n = g.value(z).shape()[0];
        let mask = choice_mask(choice, n, self.heads.len())?;
        let h = self.trunk.forward(g, z)?;
        let outs: Vec<NodeId> = self
            .heads
            .iter()
            .map(|head| head.forward(g, h))
            .collect::<Result<_>>()?;
        masked_combine(g, &mask, &outs)
    }
}

impl Model for MadganGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.trunk.visit_params(f);
        for h in &self.heads {
            h.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.trunk.visit_params_mut(f);
        for h in &mut self.heads {
            h.visit_params_mut(f);
        }
    }
}

/// Heads-first bank: K generators map z to intermediates z_i, the shared
/// block then produces the sample from the selected intermediate. Pairs with
/// a binary discriminator plus the auxiliary K-way classifier.
#[derive(Clone, Debug)]
pub struct MganGenerator {
    pub heads: Vec<Mlp>,
    pub shared: SharedBlock,
}

impl MganGenerator {
    pub fn heads_count(&self) -> usize {
        self.heads.len()
    }

    pub fn forward(&self, g: &mut Graph, z: NodeId, choice: &[usize]) -> Result<NodeId> {
        let n = g.value(z).shape()[0];
        let mask = choice_mask(choice, n, self.heads.len())?;
        let outs: Vec<NodeId> = self
            .heads
            .iter()
            .map(|head| head.forward(g, z))
            .collect::<Result<_>>()?;
        let selected = masked_combine(g, &mask, &outs)?;
        self.shared.forward(g, selected)
    }
}

impl Model for MganGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for h in &self.heads {
            h.visit_params(f);
        }
        self.shared.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for h in &mut self.heads {
            h.visit_params_mut(f);
        }
        self.shared.visit_params_mut(f);
    }
}

/// Learned hard gate over a generator bank. The gate conditions on the
/// latent and on every generator's first-layer activations, samples a
/// category with Gumbel noise, and commits to exactly one generator while
/// the recorded graph keeps the softmax as the backward surrogate.
#[derive(Clone, Debug)]
pub struct MeganGating {
    pub net: Mlp,
    pub temperature: f64,
}

#[derive(Clone, Debug)]
pub struct MeganGenerator {
    pub gens: Vec<Mlp>,
    pub gating: MeganGating,
}

impl MeganGenerator {
    pub fn gens_count(&self) -> usize {
        self.gens.len()
    }

    /// Draw fresh Gumbel noise and run the gated forward pass. Returns the
    /// combined output (n, data_dim) and the one-hot selection (n, K).
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        z: NodeId,
        rng: &mut R,
    ) -> Result<(NodeId, NodeId)> {
        let n = g.value(z).shape()[0];
        let k = self.gens.len();
        let noise = gumbel_noise(n, k, rng);
        self.forward_with_noise(g, z, &noise, true)
    }

    /// Deterministic core given pre-drawn Gumbel noise. With `hard` the
    /// selection is the straight-through one-hot; without it the soft
    /// softmax weights are used directly (the backward surrogate, exposed
    /// for verification).
    pub fn forward_with_noise(
        &self,
        g: &mut Graph,
        z: NodeId,
        noise: &Tensor,
        hard: bool,
    ) -> Result<(NodeId, NodeId)> {
        if self.gating.temperature <= 0.0 {
            return Err(Error::invalid(format!(
                "gumbel temperature must be positive, got {}",
                self.gating.temperature
            )));
        }
        let k = self.gens.len();
        if k == 0 {
            return Err(Error::invalid("generator bank is empty"));
        }

        // Features: z itself plus each generator's first-layer activations.
        let mut gate_parts = vec![z];
        let mut outputs = Vec::with_capacity(k);
        for gen in &self.gens {
            gate_parts.push(gen.first_layer_features(g, z)?);
            outputs.push(gen.forward(g, z)?);
        }
        let gate_in = g.concat(&gate_parts)?;
        let logits = self.gating.net.forward(g, gate_in)?;

        let noise_node = g.constant(noise.clone());
        let noisy = g.add(logits, noise_node)?;
        let noisy = g.scalar_mul(noisy, 1.0 / self.gating.temperature);
        let soft = g.softmax(noisy);

        let selection = if hard {
            let hard_t = row_argmax_one_hot(g.value(noisy));
            g.straight_through(soft, hard_t)?
        } else {
            soft
        };

        let mut acc: Option<NodeId> = None;
        for (i, &out) in outputs.iter().enumerate() {
            let col = g.slice_last(selection, i, 1)?;
            let term = g.mul(col, out)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok((acc.unwrap(), selection))
    }

    /// Width of the gate network's input: latent + Σ first-layer sizes.
    pub fn gate_input_dim(latent_dim: usize, gens: &[Mlp]) -> usize {
        latent_dim + gens.iter().map(|m| m.layers[0].out_features()).sum::<usize>()
    }
}

/// i.i.d. Gumbel(0,1) noise: −ln(−ln u), u ~ Uniform(0,1), with u floored
/// at the smallest positive double so the result is always finite.
pub fn gumbel_noise<R: Rng>(n: usize, k: usize, rng: &mut R) -> Tensor {
    let data = (0..n * k)
        .map(|_| {
            let u: f64 = rng.random();
            let u = u.max(f64::MIN_POSITIVE);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(vec![n, k], data).expect("shape matches data length")
}

/// Exact one-hot of the row-wise argmax; ties go to the lower index.
fn row_argmax_one_hot(t: &Tensor) -> Tensor {
    let k = t.last_dim();
    let n = t.leading();
    let mut data = vec![0.0; n * k];
    for i in 0..n {
        let row = &t.data()[i * k..(i + 1) * k];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        data[i * k + best] = 1.0;
    }
    Tensor::new(vec![n, k], data).expect("shape matches data length")
}

impl Model for MeganGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for gen in &self.gens {
            gen.visit_params(f);
        }
        self.gating.net.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for gen in &mut self.gens {
            gen.visit_params_mut(f);
        }
        self.gating.net.visit_params_mut(f);
    }
}
