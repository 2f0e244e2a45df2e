//! Alternating adversarial training: per step, a configurable number of
//! critic updates on detached fakes, then one generator update through the
//! live graph. Fully deterministic given the seed — all randomness comes
//! from one counter-based stream, and parameters are visited in a fixed
//! order.

use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses;
use crate::models::{Architecture, CriticHead, ModelBundle};
use crate::nn::Parameter;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Objective to train under. The bank architectures have their own modes
/// (their losses need the per-sample generator identity); the mixture
/// models accept the score-gap modes or the plain likelihood loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    WganGp,
    WganClip,
    OriginalGan,
    Madgan,
    Mgan,
    Megan,
}

impl LossMode {
    pub const ALL: [LossMode; 6] = [
        LossMode::WganGp,
        LossMode::WganClip,
        LossMode::OriginalGan,
        LossMode::Madgan,
        LossMode::Mgan,
        LossMode::Megan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::WganGp => "wgan-gp",
            LossMode::WganClip => "wgan-clip",
            LossMode::OriginalGan => "original-gan",
            LossMode::Madgan => "madgan",
            LossMode::Mgan => "mgan",
            LossMode::Megan => "megan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown loss mode {s:?} (expected one of wgan-gp, wgan-clip, original-gan, madgan, mgan, megan)"
            ))
        })
    }

    /// The objective each architecture is trained with unless configured
    /// otherwise.
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::Hmog | Architecture::Mog | Architecture::Fc => LossMode::WganGp,
            Architecture::Madgan => LossMode::Madgan,
            Architecture::Mgan => LossMode::Mgan,
            Architecture::Megan => LossMode::Megan,
        }
    }

    pub fn compatible_with(self, arch: Architecture) -> bool {
        use Architecture as A;
        match self {
            LossMode::WganGp | LossMode::WganClip => {
                matches!(arch, A::Hmog | A::Mog | A::Fc)
            }
            LossMode::OriginalGan => matches!(arch, A::Hmog | A::Mog | A::Fc | A::Megan),
            LossMode::Madgan => arch == A::Madgan,
            LossMode::Mgan => arch == A::Mgan,
            LossMode::Megan => arch == A::Megan,
        }
    }

    /// Critic head this objective scores through. `generators` is the
    /// selectable-generator count K (only the K+1-softmax head uses it).
    pub fn critic_head(self, generators: usize) -> CriticHead {
        match self {
            LossMode::WganGp | LossMode::WganClip => CriticHead::Wasserstein,
            LossMode::Madgan => CriticHead::Softmax { classes: generators + 1 },
            LossMode::OriginalGan | LossMode::Mgan | LossMode::Megan => CriticHead::Sigmoid,
        }
    }

    pub fn default_critic_steps(self) -> usize {
        match self {
            LossMode::WganGp | LossMode::WganClip => 5,
            _ => 1,
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub amsgrad: bool,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Weight of the interpolation gradient penalty (wgan-gp).
    pub gp_lambda: f64,
    /// Elementwise critic weight bound (wgan-clip).
    pub clip_bound: f64,
    pub total_steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss_mode: LossMode) -> Self {
        TrainConfig {
            loss_mode,
            learning_rate: 1e-4,
            adam_betas: (0.5, 0.999),
            adam_eps: 1e-8,
            amsgrad: true,
            batch_size: 128,
            critic_steps: loss_mode.default_critic_steps(),
            gp_lambda: 10.0,
            clip_bound: 0.01,
            total_steps: 0,
            seed: 0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
            amsgrad: self.amsgrad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.critic_steps == 0 {
            return Err(Error::invalid("critic steps per generator step must be at least 1"));
        }
        if !(self.gp_lambda >= 0.0 && self.gp_lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "gradient penalty weight must be non-negative, got {}",
                self.gp_lambda
            )));
        }
        if self.loss_mode == LossMode::WganClip && !(self.clip_bound > 0.0) {
            return Err(Error::invalid(format!(
                "clip bound must be positive, got {}",
                self.clip_bound
            )));
        }
        Ok(())
    }

    /// Validate this config against a concrete model: architecture/loss
    /// compatibility and the critic-head contract of the objective.
    pub fn check_model(&self, bundle: &ModelBundle) -> Result<()> {
        self.validate()?;
        if !self.loss_mode.compatible_with(bundle.arch) {
            return Err(Error::invalid(format!(
                "loss mode {} cannot train the {} architecture",
                self.loss_mode, bundle.arch
            )));
        }
        let k = bundle.gen.generator_count();
        let want = self.loss_mode.critic_head(k);
        if bundle.critic.head != want {
            return Err(Error::invalid(format!(
                "loss mode {} needs a {:?} critic head, model has {:?}",
                self.loss_mode, want, bundle.critic.head
            )));
        }
        if self.loss_mode == LossMode::WganGp
            && self.gp_lambda > 0.0
            && !bundle.critic.twice_differentiable()
        {
            return Err(Error::NotTwiceDifferentiable { op: "critic activation" });
        }
        if self.loss_mode == LossMode::Mgan {
            match &bundle.aux {
                Some(aux) if aux.k == k => {}
                Some(aux) => {
                    return Err(Error::invalid(format!(
                        "auxiliary classifier covers {} generators but the bank has {k}",
                        aux.k
                    )))
                }
                None => {
                    return Err(Error::invalid(
                        "this objective needs an auxiliary classifier in the bundle",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// One training step as logged: the critic loss is the full objective the
/// last critic update minimized (penalty included), and `gp_term` is the
/// weighted penalty portion of it (0 outside wgan-gp).
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp_term: f64,
    pub wall_ms: u64,
}

/// Observers for a training run. `on_snapshot` fires every
/// `snapshot_every` steps and at the final step (0 disables it).
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_step: Option<Box<dyn FnMut(&StepRecord) + 'a>>,
    pub on_snapshot: Option<Box<dyn FnMut(u64, &ModelBundle) -> Result<()> + 'a>>,
    pub snapshot_every: u64,
}

impl<'a> TrainHooks<'a> {
    pub fn none() -> Self {
        Self::default()
    }
}

fn tensor_stats(label: &str, t: &Tensor) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut bad = 0usize;
    for &v in t.data() {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        } else {
            bad += 1;
        }
    }
    let n = t.numel().max(1);
    format!(
        "{label}[min={lo:.4e} max={hi:.4e} mean={:.4e} nonfinite={bad}/{}]",
        sum / n as f64,
        t.numel()
    )
}

struct TrainLoop<'a> {
    bundle: &'a mut ModelBundle,
    data: &'a GaussianMixtureSpec,
    cfg: &'a TrainConfig,
    adam_gen: Adam,
    adam_critic: Adam,
    rng: ChaCha8Rng,
    step: u64,
}

/// Apply gradients from `g` to one parameter group. Parameters absent from
/// the graph's gradient table get a zero gradient (so optimizer state still
/// decays deterministically).
fn apply_grads(
    adam: &mut Adam,
    g: &Graph,
    visit: impl FnOnce(&mut dyn FnMut(&mut Parameter)),
) -> Result<()> {
    adam.begin_step();
    let mut first_err: Option<Error> = None;
    visit(&mut |p: &mut Parameter| {
        if first_err.is_some() {
            return;
        }
        let zero;
        let grad = match g.grad_by_name(&p.name) {
            Some(t) => t,
            None => {
                zero = Tensor::zeros(p.value.shape().to_vec());
                &zero
            }
        };
        if let Err(e) = adam.update(p, grad) {
            first_err = Some(e);
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

impl TrainLoop<'_> {
    fn check_finite(&self, which: &'static str, v: f64, stats: impl FnOnce() -> String) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss { step: self.step, which, stats: stats() })
        }
    }

    /// One critic update on a fresh real batch and detached fakes.
    /// Returns (loss minimized, weighted penalty part).
    fn critic_step(&mut self) -> Result<(f64, f64)> {
        let n = self.cfg.batch_size;
        let real = self.data.sample(n, &mut self.rng)?;
        let fake = self.bundle.sample(n, &mut self.rng)?;

        let mut g = Graph::new();
        let real_node = g.constant(real.clone());
        let fake_node = g.constant(fake.x.clone());
        let d_real = self.bundle.critic.forward(&mut g, real_node)?;
        let d_fake = self.bundle.critic.forward(&mut g, fake_node)?;

        let (loss, gp_term) = match self.cfg.loss_mode {
            LossMode::WganGp => {
                let (base, _) = losses::wasserstein_losses(&mut g, d_real, d_fake)?;
                let gp = losses::gradient_penalty(
                    &mut g,
                    &self.bundle.critic,
                    &real,
                    &fake.x,
                    &mut self.rng,
                )?;
                let weighted = g.scalar_mul(gp, self.cfg.gp_lambda);
                let total = g.add(base, weighted)?;
                (total, g.value(weighted).item())
            }
            LossMode::WganClip => {
                let (base, _) = losses::wasserstein_losses(&mut g, d_real, d_fake)?;
                (base, 0.0)
            }
            LossMode::OriginalGan | LossMode::Megan | LossMode::Mgan => {
                let (base, _) = losses::original_gan_losses(&mut g, d_real, d_fake)?;
                (base, 0.0)
            }
            LossMode::Madgan => {
                let choice = fake
                    .choice
                    .as_deref()
                    .ok_or_else(|| Error::invalid("bank sample carried no generator choices"))?;
                let (base, _) = losses::madgan_losses(&mut g, d_real, d_fake, choice)?;
                (base, 0.0)
            }
        };

        let loss_v = self.check_finite("critic", g.value(loss).item(), || {
            format!("{}; {}", tensor_stats("real", &real), tensor_stats("fake", &fake.x))
        })?;
        g.backward(loss)?;
        apply_grads(&mut self.adam_critic, &g, |f| self.bundle.visit_critic_params_mut(f))?;

        if self.cfg.loss_mode == LossMode::WganClip {
            let b = self.cfg.clip_bound;
            self.bundle.visit_critic_params_mut(&mut |p| {
                for v in p.value.data_mut() {
                    *v = v.clamp(-b, b);
                }
            });
        }
        Ok((loss_v, gp_term))
    }

    /// One generator update through the live graph.
    fn generator_step(&mut self) -> Result<f64> {
        let n = self.cfg.batch_size;
        let latents = self.bundle.draw_latents(n, &mut self.rng);
        let mut g = Graph::new();
        let z = g.constant(latents.clone());
        let out = self.bundle.generate(&mut g, z, &mut self.rng)?;
        let scores = self.bundle.critic.forward(&mut g, out.x)?;

        let loss = match self.cfg.loss_mode {
            LossMode::WganGp | LossMode::WganClip => {
                losses::wasserstein_generator_loss(&mut g, scores)?
            }
            LossMode::OriginalGan | LossMode::Megan => {
                losses::original_gan_generator_loss(&mut g, scores)?
            }
            LossMode::Madgan => losses::madgan_generator_loss(&mut g, scores)?,
            LossMode::Mgan => {
                let choice = out
                    .choice
                    .as_deref()
                    .ok_or_else(|| Error::invalid("bank forward carried no generator choices"))?;
                let aux = self
                    .bundle
                    .aux
                    .as_ref()
                    .ok_or_else(|| Error::invalid("missing auxiliary classifier"))?;
                let c_fake = aux.forward(&mut g, out.x)?;
                let base = losses::original_gan_generator_loss(&mut g, scores)?;
                let class_term = losses::mgan_classification_term(&mut g, c_fake, choice)?;
                g.sub(base, class_term)?
            }
        };

        let fake_value = g.value(out.x).clone();
        let loss_v = self.check_finite("generator", g.value(loss).item(), || {
            format!(
                "{}; {}",
                tensor_stats("latents", &latents),
                tensor_stats("fake", &fake_value)
            )
        })?;
        g.backward(loss)?;
        apply_grads(&mut self.adam_gen, &g, |f| self.bundle.visit_generator_params_mut(f))?;
        Ok(loss_v)
    }
}

/// Run the full alternating loop. Returns one record per generator step.
pub fn train(
    bundle: &mut ModelBundle,
    data: &GaussianMixtureSpec,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<Vec<StepRecord>> {
    cfg.check_model(bundle)?;
    data.validate()?;
    if data.dim() != bundle.data_dim {
        return Err(Error::invalid(format!(
            "mixture spec is {}-dimensional but the model generates {} dimensions",
            data.dim(),
            bundle.data_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut lp = TrainLoop {
        bundle,
        data,
        cfg,
        adam_gen: Adam::new(cfg.adam())?,
        adam_critic: Adam::new(cfg.adam())?,
        rng,
        step: 0,
    };

    let mut log = Vec::with_capacity(cfg.total_steps);
    for step in 1..=cfg.total_steps as u64 {
        lp.step = step;
        let started = Instant::now();
        let mut d_loss = 0.0;
        let mut gp_term = 0.0;
        for _ in 0..cfg.critic_steps {
            (d_loss, gp_term) = lp.critic_step()?;
        }
        let g_loss = lp.generator_step()?;
        let record = StepRecord {
            step,
            d_loss,
            g_loss,
            gp_term,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(cb) = hooks.on_step.as_mut() {
            cb(&record);
        }
        log.push(record);
        let last = step == cfg.total_steps as u64;
        if hooks.snapshot_every > 0 && (step % hooks.snapshot_every == 0 || last) {
            if let Some(cb) = hooks.on_snapshot.as_mut() {
                cb(step, lp.bundle)?;
            }
        }
    }
    Ok(log)
}
