//! Experiment configuration: a TOML file with nested sections. Every field
//! except `architecture` is optional; defaults are filled in at parse time
//! and the fully resolved configuration is echoed into the run directory so
//! a run is always reproducible from its own artifacts. Unknown keys are
//! rejected with the offending key named.

use hmog::data::GaussianMixtureSpec;
use hmog::models::{Architecture, ModelSpec};
use hmog::nn::Activation;
use hmog::train::{LossMode, TrainConfig};
use hmog::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Name accepted in the `mixture` field for the built-in five-mode layout.
pub const BUILTIN_MIXTURE: &str = "five-gaussians";

/// The on-disk schema. All values optional so a minimal file is just
/// `architecture = "hmog"`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub architecture: String,
    /// Tree depth (hmog only); the generator count is 2^depth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Generator count K. For hmog it must equal 2^depth when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generators: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    /// Intermediate width between the per-generator outputs and the shared
    /// block; defaults to the data dimension (making the block an identity
    /// unless hidden widths are configured).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Evaluate metrics every this many generator steps (0 disables the
    /// periodic evaluation; the final step is always evaluated when > 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Either the literal "five-gaussians" or a path to a mixture TOML,
    /// resolved relative to this config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared: Option<SharedSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic: Option<CriticSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SharedSection {
    /// Hidden widths of the shared output block; empty means identity
    /// (or a single affine layer when h-dim differs from the data dim).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GeneratorSection {
    /// Hidden widths of dense generators/heads (fc, madgan, mgan, megan).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GateSection {
    /// Hidden widths of the learned gate (megan).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gumbel_temperature: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CriticSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amsgrad: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
}

/// A fully resolved experiment: every knob concrete, the mixture loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub architecture: Architecture,
    /// Tree depth; only meaningful for hmog.
    pub depth: Option<usize>,
    pub generators: usize,
    pub latent_dim: usize,
    pub h_dim: usize,
    pub shared_hidden: Vec<usize>,
    pub gen_hidden: Vec<usize>,
    pub gen_activation: Activation,
    pub gate_hidden: Vec<usize>,
    pub gumbel_temperature: f64,
    pub critic_hidden: Vec<usize>,
    pub critic_activation: Activation,
    pub train: TrainConfig,
    /// The mixture field as written ("five-gaussians" or a path string).
    pub mixture_source: String,
    pub mixture: GaussianMixtureSpec,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

/// Generator counts whose behavior is routinely exercised; other values
/// work but earn a notice.
const BENCHMARKED_COUNTS: [usize; 4] = [4, 8, 16, 32];

fn bad(path: &str, msg: impl Into<String>) -> Error {
    Error::config(path, msg)
}

/// Read a config file into the schema without resolving defaults yet
/// (so command-line overrides can be applied first).
pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(&path.display().to_string(), format!("cannot read config: {e}")))?;
    toml::from_str(&text).map_err(|e| bad(&path.display().to_string(), e.to_string()))
}

/// Read and resolve a config file in one step. Returns the experiment
/// plus any notices (accepted-but-unusual settings) for the caller to
/// print.
#[cfg(test)]
pub fn parse_config(path: &Path) -> Result<(Experiment, Vec<String>)> {
    let file = load_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(file, base)
}

/// Fill defaults and validate. `base_dir` anchors relative mixture paths.
pub fn resolve(file: FileConfig, base_dir: &Path) -> Result<(Experiment, Vec<String>)> {
    let mut notices = Vec::new();
    let architecture = Architecture::parse(&file.architecture)
        .map_err(|e| bad("architecture", e.to_string()))?;

    // Generator count / tree depth.
    let (depth, generators) = if architecture == Architecture::Hmog {
        let depth = file.depth.unwrap_or(3);
        let k = 1usize
            .checked_shl(depth as u32)
            .filter(|_| depth < 32)
            .ok_or_else(|| bad("depth", format!("depth {depth} is out of range")))?;
        if let Some(g) = file.generators {
            if g != k {
                return Err(bad(
                    "generators",
                    format!("a depth-{depth} tree has 2^{depth} = {k} generators, got {g}"),
                ));
            }
        }
        (Some(depth), k)
    } else if architecture == Architecture::Fc {
        if file.depth.is_some() {
            return Err(bad("depth", "depth only applies to the hmog architecture, not fc"));
        }
        if file.generators.is_some_and(|g| g != 1) {
            notices.push("fc trains a single generator; the generators field is ignored".into());
        }
        (None, 1)
    } else {
        if file.depth.is_some() {
            return Err(bad(
                "depth",
                format!("depth only applies to the hmog architecture, not {architecture}"),
            ));
        }
        let k = file.generators.unwrap_or(8);
        if k == 0 {
            return Err(bad("generators", "generator count must be at least 1"));
        }
        if architecture == Architecture::Mog && k < 2 {
            return Err(bad("generators", "the flat mixture needs at least 2 generators"));
        }
        (None, k)
    };
    if !BENCHMARKED_COUNTS.contains(&generators) && architecture != Architecture::Fc {
        notices.push(format!(
            "generator count {generators} is outside the routinely exercised set {BENCHMARKED_COUNTS:?}"
        ));
    }

    let latent_dim = file.latent_dim.unwrap_or(2);
    if latent_dim == 0 {
        return Err(bad("latent-dim", "latent dimension must be at least 1"));
    }

    // Mixture: builtin name or a path relative to the config file.
    let mixture_source = file.mixture.unwrap_or_else(|| BUILTIN_MIXTURE.to_string());
    let mixture = if mixture_source == BUILTIN_MIXTURE {
        GaussianMixtureSpec::five_gaussians()
    } else {
        let p = Path::new(&mixture_source);
        let full = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        GaussianMixtureSpec::load(&full)
            .map_err(|e| bad("mixture", format!("{e} (from {})", full.display())))?
    };
    let data_dim = mixture.dim();

    let h_dim = file.h_dim.unwrap_or(data_dim);
    if h_dim == 0 {
        return Err(bad("h-dim", "intermediate width must be at least 1"));
    }

    let shared_hidden = file.shared.as_ref().and_then(|s| s.hidden.clone()).unwrap_or_default();
    if architecture == Architecture::Megan && !shared_hidden.is_empty() {
        return Err(bad(
            "shared.hidden",
            "the gated bank keeps its generators fully separate; it cannot take a shared block",
        ));
    }

    let gen_section = file.generator.unwrap_or_default();
    let gen_hidden = gen_section.hidden.unwrap_or_else(|| vec![32]);
    let gen_activation = match &gen_section.activation {
        Some(s) => Activation::parse(s).map_err(|e| bad("generator.activation", e.to_string()))?,
        None => Activation::Tanh,
    };

    let gate_section = file.gate.unwrap_or_default();
    let gate_hidden = gate_section.hidden.unwrap_or_else(|| vec![16]);
    let gumbel_temperature = gate_section.gumbel_temperature.unwrap_or(1.0);
    if !(gumbel_temperature > 0.0 && gumbel_temperature.is_finite()) {
        return Err(bad(
            "gate.gumbel-temperature",
            format!("temperature must be positive and finite, got {gumbel_temperature}"),
        ));
    }

    let critic_section = file.critic.unwrap_or_default();
    let critic_hidden = critic_section.hidden.unwrap_or_else(|| vec![64, 64]);
    let critic_activation = match &critic_section.activation {
        Some(s) => Activation::parse(s).map_err(|e| bad("critic.activation", e.to_string()))?,
        None => Activation::Tanh,
    };

    let train_section = file.train.unwrap_or_default();
    let loss = match &train_section.loss {
        Some(s) => LossMode::parse(s).map_err(|e| bad("train.loss", e.to_string()))?,
        None => LossMode::default_for(architecture),
    };
    if !loss.compatible_with(architecture) {
        return Err(bad(
            "train.loss",
            format!("loss mode {loss} cannot train the {architecture} architecture"),
        ));
    }

    let seed = file.seed.unwrap_or(0);
    let mut train = TrainConfig::new(loss);
    train.seed = seed;
    if let Some(v) = train_section.learning_rate {
        train.learning_rate = v;
    }
    if let Some([b1, b2]) = train_section.betas {
        train.adam_betas = (b1, b2);
    }
    if let Some(v) = train_section.adam_eps {
        train.adam_eps = v;
    }
    if let Some(v) = train_section.amsgrad {
        train.amsgrad = v;
    }
    if let Some(v) = train_section.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = train_section.critic_steps {
        train.critic_steps = v;
    }
    if let Some(v) = train_section.gp_lambda {
        train.gp_lambda = v;
    }
    if let Some(v) = train_section.clip_bound {
        train.clip_bound = v;
    }
    train.total_steps = train_section.total_steps.unwrap_or(20_000);
    train.validate().map_err(|e| bad("train", e.to_string()))?;

    if loss == LossMode::WganGp
        && train.gp_lambda > 0.0
        && !critic_activation.twice_differentiable()
    {
        return Err(bad(
            "critic.activation",
            format!(
                "{critic_activation} is not twice differentiable; the gradient penalty needs a smooth critic (use tanh or softplus, or switch to wgan-clip)"
            ),
        ));
    }

    let output_dir = file
        .output_dir
        .unwrap_or_else(|| PathBuf::from("runs").join(architecture.name()));
    let eval_every = file.eval_every.unwrap_or(1000);

    Ok((
        Experiment {
            architecture,
            depth,
            generators,
            latent_dim,
            h_dim,
            shared_hidden,
            gen_hidden,
            gen_activation,
            gate_hidden,
            gumbel_temperature,
            critic_hidden,
            critic_activation,
            train,
            mixture_source,
            mixture,
            eval_every,
            output_dir,
            seed,
        },
        notices,
    ))
}

impl Experiment {
    /// The model recipe this experiment trains.
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.architecture, self.latent_dim, self.mixture.dim());
        spec.h_dim = self.h_dim;
        if let Some(d) = self.depth {
            spec.depth = d;
        }
        spec.generators = self.generators;
        spec.gen_hidden = self.gen_hidden.clone();
        spec.shared_hidden = self.shared_hidden.clone();
        spec.gate_hidden = self.gate_hidden.clone();
        spec.critic_hidden = self.critic_hidden.clone();
        spec.gen_activation = self.gen_activation;
        spec.critic_activation = self.critic_activation;
        spec.gumbel_temperature = self.gumbel_temperature;
        spec
    }

    /// Echo the resolved settings back into the file schema (every field
    /// concrete), ready to be written next to the run artifacts.
    pub fn to_file_config(&self) -> FileConfig {
        FileConfig {
            architecture: self.architecture.name().to_string(),
            depth: self.depth,
            generators: Some(self.generators),
            latent_dim: Some(self.latent_dim),
            h_dim: Some(self.h_dim),
            seed: Some(self.seed),
            eval_every: Some(self.eval_every),
            output_dir: Some(self.output_dir.clone()),
            mixture: Some(self.mixture_source.clone()),
            shared: Some(SharedSection { hidden: Some(self.shared_hidden.clone()) }),
            generator: Some(GeneratorSection {
                hidden: Some(self.gen_hidden.clone()),
                activation: Some(self.gen_activation.name().to_string()),
            }),
            gate: Some(GateSection {
                hidden: Some(self.gate_hidden.clone()),
                gumbel_temperature: Some(self.gumbel_temperature),
            }),
            critic: Some(CriticSection {
                hidden: Some(self.critic_hidden.clone()),
                activation: Some(self.critic_activation.name().to_string()),
            }),
            train: Some(TrainSection {
                loss: Some(self.train.loss_mode.name().to_string()),
                learning_rate: Some(self.train.learning_rate),
                betas: Some([self.train.adam_betas.0, self.train.adam_betas.1]),
                adam_eps: Some(self.train.adam_eps),
                amsgrad: Some(self.train.amsgrad),
                batch_size: Some(self.train.batch_size),
                critic_steps: Some(self.train.critic_steps),
                gp_lambda: Some(self.train.gp_lambda),
                clip_bound: Some(self.train.clip_bound),
                total_steps: Some(self.train.total_steps),
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.to_file_config())
            .expect("a resolved config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> Result<(Experiment, Vec<String>)> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::config("test", e.to_string()))?;
        resolve(file, Path::new("."))
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let (exp, notices) = parse_str("architecture = \"hmog\"").unwrap();
        assert!(notices.is_empty());
        assert_eq!(exp.architecture, Architecture::Hmog);
        assert_eq!(exp.depth, Some(3));
        assert_eq!(exp.generators, 8);
        assert_eq!(exp.latent_dim, 2);
        assert_eq!(exp.h_dim, 2);
        assert_eq!(exp.seed, 0);
        assert_eq!(exp.eval_every, 1000);
        assert_eq!(exp.train.loss_mode, LossMode::WganGp);
        assert_eq!(exp.train.learning_rate, 1e-4);
        assert_eq!(exp.train.adam_betas, (0.5, 0.999));
        assert_eq!(exp.train.batch_size, 128);
        assert_eq!(exp.train.critic_steps, 5);
        assert_eq!(exp.train.total_steps, 20_000);
        assert_eq!(exp.mixture.n_components(), 5);
        assert_eq!(exp.output_dir, PathBuf::from("runs/hmog"));
    }

    #[test]
    fn depth_resolves_generator_count_and_mismatch_is_rejected() {
        let (exp, _) = parse_str("architecture = \"hmog\"\ndepth = 4").unwrap();
        assert_eq!(exp.generators, 16);

        let err = parse_str("architecture = \"hmog\"\ndepth = 3\ngenerators = 7").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("generators") && msg.contains("2^3 = 8"), "{msg}");
    }

    #[test]
    fn depth_on_a_non_tree_architecture_is_rejected() {
        let err = parse_str("architecture = \"mog\"\ndepth = 3").unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
    }

    #[test]
    fn unusual_generator_counts_earn_a_notice_but_parse() {
        let (exp, notices) = parse_str("architecture = \"mog\"\ngenerators = 5").unwrap();
        assert_eq!(exp.generators, 5);
        assert_eq!(notices.len(), 1);
        assert!(notices[0].contains('5'));

        for k in [4usize, 8, 16, 32] {
            let (_, n) = parse_str(&format!("architecture = \"mog\"\ngenerators = {k}")).unwrap();
            assert!(n.is_empty(), "count {k} should pass silently");
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let err = parse_str("architecture = \"hmog\"\nlerning-rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("lerning-rate"), "{err}");

        let err = parse_str("architecture = \"hmog\"\n[train]\nsteps = 5").unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
    }

    #[test]
    fn incompatible_loss_is_rejected_with_key_path() {
        let err = parse_str("architecture = \"madgan\"\n[train]\nloss = \"wgan-gp\"").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.loss"), "{msg}");
    }

    #[test]
    fn gradient_penalty_refuses_a_kinked_critic() {
        let err = parse_str("architecture = \"hmog\"\n[critic]\nactivation = \"leaky-relu\"")
            .unwrap_err();
        assert!(err.to_string().contains("critic.activation"), "{err}");

        // The same activation is fine under weight clipping.
        let (exp, _) = parse_str(
            "architecture = \"hmog\"\n[critic]\nactivation = \"leaky-relu\"\n[train]\nloss = \"wgan-clip\"",
        )
        .unwrap();
        assert_eq!(exp.critic_activation, Activation::LeakyRelu);
    }

    #[test]
    fn shared_block_on_the_gated_bank_is_rejected() {
        let err = parse_str("architecture = \"megan\"\n[shared]\nhidden = [8]").unwrap_err();
        assert!(err.to_string().contains("shared.hidden"), "{err}");
    }

    #[test]
    fn mixture_paths_resolve_relative_to_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let mix = GaussianMixtureSpec::five_gaussians();
        std::fs::write(dir.path().join("mix.toml"), mix.to_toml_string()).unwrap();
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(&cfg_path, "architecture = \"mog\"\nmixture = \"mix.toml\"").unwrap();

        let (exp, _) = parse_config(&cfg_path).unwrap();
        assert_eq!(exp.mixture.n_components(), 5);
        assert_eq!(exp.mixture_source, "mix.toml");

        let missing = dir.path().join("other.toml");
        std::fs::write(&missing, "architecture = \"mog\"\nmixture = \"nope.toml\"").unwrap();
        let err = parse_config(&missing).unwrap_err();
        assert!(err.to_string().contains("mixture"), "{err}");
    }

    #[test]
    fn resolved_configs_round_trip_through_toml() {
        let src = "architecture = \"megan\"\ngenerators = 4\nseed = 9\n[gate]\nhidden = [12]\ngumbel-temperature = 0.7\n[train]\ntotal-steps = 50";
        let (exp, _) = parse_str(src).unwrap();
        let echoed = exp.to_toml();
        let file: FileConfig = toml::from_str(&echoed).unwrap();
        let (back, notices) = resolve(file, Path::new(".")).unwrap();
        assert!(notices.is_empty(), "echoed config must not re-notice: {notices:?}");
        assert_eq!(back.architecture, exp.architecture);
        assert_eq!(back.generators, 4);
        assert_eq!(back.seed, 9);
        assert_eq!(back.gate_hidden, vec![12]);
        assert_eq!(back.gumbel_temperature, 0.7);
        assert_eq!(back.train.total_steps, 50);
        assert_eq!(back.train.loss_mode, LossMode::Megan);
    }

    #[test]
    fn model_spec_reflects_every_knob() {
        let src = "architecture = \"mgan\"\ngenerators = 4\nh-dim = 6\n[shared]\nhidden = [10]\n[generator]\nhidden = [7]\nactivation = \"softplus\"\n[critic]\nhidden = [9, 9]";
        let (exp, _) = parse_str(src).unwrap();
        let spec = exp.model_spec();
        assert_eq!(spec.generators, 4);
        assert_eq!(spec.h_dim, 6);
        assert_eq!(spec.shared_hidden, vec![10]);
        assert_eq!(spec.gen_hidden, vec![7]);
        assert_eq!(spec.gen_activation, Activation::Softplus);
        assert_eq!(spec.critic_hidden, vec![9, 9]);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let bundle = spec.build(&mut rng).unwrap();
        assert_eq!(bundle.gen.generator_count(), 4);
    }
}
