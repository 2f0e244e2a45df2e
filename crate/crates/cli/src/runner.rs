//! Seeded experiment runs and their on-disk artifacts.
//!
//! A run directory is self-contained: the resolved config, the mixture it
//! trained against, a metrics CSV (one row per evaluation), the per-step
//! training log, the final parameter checkpoint, and sample CSVs that the
//! plotting pass renders. Identical config + seed reproduces identical
//! metrics CSV bytes; only the wall-clock columns of the training log and
//! the manifest timestamps vary between repetitions.

use crate::config::{self, Experiment, FileConfig};
use hmog::checkpoint;
use hmog::data::GaussianMixtureSpec;
use hmog::eval::{evaluate_snapshot, metrics_csv, EvalOptions, MetricReport};
use hmog::interpret;
use hmog::models::{GeneratorModel, ModelBundle};
use hmog::train::{train, StepRecord, TrainHooks};
use hmog::{Error, Graph, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// When set (and the configured output dir is relative), run directories
/// are created under this root instead of the working directory.
pub const OUTPUT_ROOT_ENV: &str = "HMOG_OUTPUT_ROOT";

/// Rows written to samples.csv / real.csv for plotting and inspection.
pub const SAMPLE_ROWS: usize = 2000;

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const MANIFEST: &str = "manifest.toml";
    pub const METRICS: &str = "metrics.csv";
    pub const TRAIN_LOG: &str = "train_log.csv";
    pub const CHECKPOINT: &str = "checkpoint.txt";
    pub const SAMPLES: &str = "samples.csv";
    pub const REAL: &str = "real.csv";
    pub const MIXTURE: &str = "mixture.toml";
    pub const FAILURE: &str = "failure.txt";
}

/// Everything recorded about a finished (or aborted) run.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunManifest {
    pub software: String,
    pub seed: u64,
    pub started_utc: String,
    pub finished_utc: String,
    /// "ok", or "aborted-non-finite" when training hit a non-finite loss.
    pub status: String,
    /// Generator steps actually completed.
    pub generator_steps: usize,
    /// Trainable scalars in the generator itself — the shared output block
    /// and any auxiliary classifier are excluded from this headline count.
    pub parameter_count: usize,
    pub shared_parameter_count: usize,
    pub critic_parameter_count: usize,
    pub config: FileConfig,
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// RNG for a named purpose, independent of the training stream.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The evaluation stream: the same fixed validation draw at every
/// snapshot, so metric curves measure the model, not sampling noise.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 2)
}

/// Apply the output-root override to a configured output directory.
pub fn resolve_output_dir(configured: &Path) -> PathBuf {
    if configured.is_absolute() {
        return configured.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(configured),
        _ => configured.to_path_buf(),
    }
}

fn train_log_csv(rows: &[StepRecord]) -> String {
    let mut out = String::from("step,d_loss,g_loss,gp_term,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{}\n",
            r.step, r.d_loss, r.g_loss, r.gp_term, r.wall_ms
        ));
    }
    out
}

/// Train per the experiment config and write every artifact into the run
/// directory. Returns the directory. A non-finite loss writes a diagnostic
/// dump plus a manifest with status "aborted-non-finite" and re-raises the
/// error so the process can exit with the numerical-failure code.
pub fn run_experiment(exp: &Experiment) -> Result<PathBuf> {
    let dir = resolve_output_dir(&exp.output_dir);
    fs::create_dir_all(&dir)?;
    let started = now_utc();

    fs::write(dir.join(files::CONFIG), exp.to_toml())?;
    fs::write(dir.join(files::MIXTURE), exp.mixture.to_toml_string())?;

    let mut build_rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let mut bundle = exp.model_spec().build(&mut build_rng)?;

    let mut metrics: Vec<(u64, MetricReport)> = Vec::new();
    let mut log_rows: Vec<StepRecord> = Vec::new();
    let outcome = {
        let mut hooks = TrainHooks::none();
        hooks.snapshot_every = exp.eval_every as u64;
        hooks.on_step = Some(Box::new(|r: &StepRecord| log_rows.push(r.clone())));
        let seed = exp.seed;
        let mixture = exp.mixture.clone();
        let metrics_ref = &mut metrics;
        hooks.on_snapshot = Some(Box::new(move |step, b| {
            let mut rng = eval_rng(seed);
            let report = evaluate_snapshot(b, &mixture, &EvalOptions::default(), &mut rng)?;
            metrics_ref.push((step, report));
            Ok(())
        }));
        train(&mut bundle, &exp.mixture, &exp.train, &mut hooks)
    };

    fs::write(dir.join(files::METRICS), metrics_csv(&metrics))?;
    fs::write(dir.join(files::TRAIN_LOG), train_log_csv(&log_rows))?;

    let status = match &outcome {
        Ok(_) => "ok",
        Err(_) => "aborted-non-finite",
    };
    let manifest = RunManifest {
        software: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        seed: exp.seed,
        started_utc: started,
        finished_utc: now_utc(),
        status: status.to_string(),
        generator_steps: log_rows.len(),
        parameter_count: bundle.generator_own_param_count(),
        shared_parameter_count: bundle.shared_param_count(),
        critic_parameter_count: bundle.critic_param_count(),
        config: exp.to_file_config(),
    };
    fs::write(
        dir.join(files::MANIFEST),
        toml::to_string_pretty(&manifest)
            .map_err(|e| Error::invalid(format!("manifest serialization failed: {e}")))?,
    )?;

    match outcome {
        Ok(_) => {
            checkpoint::save(&bundle, &dir.join(files::CHECKPOINT))?;
            emit_samples(&dir, &bundle, &exp.mixture, exp.seed)?;
            crate::plot::emit_plots(&dir)?;
            Ok(dir)
        }
        Err(e) => {
            let mut dump = format!("training aborted: {e}\n\nlast training records:\n");
            for r in log_rows.iter().rev().take(20).collect::<Vec<_>>().into_iter().rev() {
                dump.push_str(&format!(
                    "step {} d_loss {:?} g_loss {:?} gp_term {:?}\n",
                    r.step, r.d_loss, r.g_loss, r.gp_term
                ));
            }
            fs::write(dir.join(files::FAILURE), dump)?;
            Err(e)
        }
    }
}

/// Draw the plotting/inspection samples from the final model and write
/// real.csv (mixture draws) and samples.csv (latents, outputs, and the
/// 0-based index of the generator most responsible for each sample).
fn emit_samples(
    dir: &Path,
    bundle: &ModelBundle,
    mixture: &GaussianMixtureSpec,
    seed: u64,
) -> Result<()> {
    let n = SAMPLE_ROWS;
    let mut rng = stream_rng(seed, 3);
    let real = mixture.sample(n, &mut rng)?;
    let d = real.last_dim();
    let mut out = String::new();
    out.push_str(&(0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = (0..d).map(|j| format!("{:?}", real.at2(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(dir.join(files::REAL), out)?;

    let latents = bundle.draw_latents(n, &mut rng);
    let mut g = Graph::new();
    let z = g.constant(latents.clone());
    let generated = bundle.generate(&mut g, z, &mut rng)?;
    let x = g.value(generated.x).clone();

    let leaf: Vec<usize> = match &bundle.gen {
        GeneratorModel::Tree { tree, .. } => {
            let mut g2 = Graph::new();
            let z2 = g2.constant(latents.clone());
            let resp = tree.responsibilities(&mut g2, z2)?;
            interpret::argmax_rows(g2.value(resp))
        }
        GeneratorModel::Flat { flat, .. } => {
            let mut g2 = Graph::new();
            let z2 = g2.constant(latents.clone());
            let resp = flat.responsibilities(&mut g2, z2)?;
            interpret::argmax_rows(g2.value(resp))
        }
        GeneratorModel::Fc { .. } => vec![0; n],
        GeneratorModel::Madgan(_) | GeneratorModel::Mgan(_) => generated
            .choice
            .as_ref()
            .expect("bank forward always carries choices")
            .iter()
            .map(|&c| c - 1)
            .collect(),
        GeneratorModel::Megan(_) => {
            let sel = generated.selection.expect("gated forward always carries a selection");
            interpret::argmax_rows(g.value(sel))
        }
    };

    let l = latents.last_dim();
    let mut out = String::new();
    let mut header: Vec<String> = (0..l).map(|j| format!("z{j}")).collect();
    header.extend((0..d).map(|j| format!("x{j}")));
    header.push("leaf".to_string());
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..n {
        let mut row: Vec<String> = (0..l).map(|j| format!("{:?}", latents.at2(i, j))).collect();
        row.extend((0..d).map(|j| format!("{:?}", x.at2(i, j))));
        row.push(leaf[i].to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(dir.join(files::SAMPLES), out)?;
    Ok(())
}

/// Rebuild the experiment and its trained model from a run directory.
pub fn load_run(dir: &Path) -> Result<(Experiment, ModelBundle)> {
    let cfg_path = dir.join(files::CONFIG);
    let text = fs::read_to_string(&cfg_path).map_err(|e| {
        Error::config(cfg_path.display().to_string(), format!("cannot read run config: {e}"))
    })?;
    let mut file: FileConfig = toml::from_str(&text)
        .map_err(|e| Error::config(cfg_path.display().to_string(), e.to_string()))?;
    // The run dir carries its own copy of the mixture; prefer it so the
    // directory stays self-contained even if the original path moved.
    let mix_path = dir.join(files::MIXTURE);
    if mix_path.exists() {
        file.mixture = Some(mix_path.display().to_string());
    }
    let (exp, _) = config::resolve(file, dir)?;

    let ckpt = dir.join(files::CHECKPOINT);
    if !ckpt.exists() {
        return Err(Error::Checkpoint(format!(
            "{} has no checkpoint (was the run aborted?)",
            dir.display()
        )));
    }
    let mut build_rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let mut bundle = exp.model_spec().build(&mut build_rng)?;
    checkpoint::load(&mut bundle, &ckpt)?;
    Ok((exp, bundle))
}

/// Re-evaluate a run directory with the standard evaluation settings and
/// the run's own evaluation stream (matching its final metrics row).
pub fn eval_run(dir: &Path) -> Result<MetricReport> {
    let (exp, bundle) = load_run(dir)?;
    let mut rng = eval_rng(exp.seed);
    evaluate_snapshot(&bundle, &exp.mixture, &EvalOptions::default(), &mut rng)
}

/// One row of a parsed metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub frechet: f64,
    pub knn_real: f64,
    pub knn_fake: f64,
    pub knn_overall: f64,
    pub modes_covered: usize,
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = dir.join(files::METRICS);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::invalid(format!(
                "{}:{}: expected 6 fields, got {}",
                path.display(),
                i + 1,
                f.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            f[j].parse().map_err(|e| {
                Error::invalid(format!("{}:{}: bad number {:?}: {e}", path.display(), i + 1, f[j]))
            })
        };
        rows.push(MetricsRow {
            step: f[0]
                .parse()
                .map_err(|e| Error::invalid(format!("{}:{}: bad step: {e}", path.display(), i + 1)))?,
            frechet: num(1)?,
            knn_real: num(2)?,
            knn_fake: num(3)?,
            knn_overall: num(4)?,
            modes_covered: f[5].parse().map_err(|e| {
                Error::invalid(format!("{}:{}: bad mode count: {e}", path.display(), i + 1))
            })?,
        });
    }
    Ok(rows)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(files::MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

/// Final-metrics table across several runs.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    let mut rows: Vec<[String; 7]> = vec![[
        "run".into(),
        "arch".into(),
        "seed".into(),
        "step".into(),
        "frechet".into(),
        "knn-overall".into(),
        "modes".into(),
    ]];
    for dir in dirs {
        let manifest = read_manifest(dir)?;
        let metrics = read_metrics(dir)?;
        let (step, frechet, knn, modes) = match metrics.last() {
            Some(m) => (
                m.step.to_string(),
                format!("{:.4}", m.frechet),
                format!("{:.4}", m.knn_overall),
                m.modes_covered.to_string(),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        rows.push([
            dir.display().to_string(),
            manifest.config.architecture.clone(),
            manifest.seed.to_string(),
            step,
            frechet,
            knn,
            modes,
        ]);
    }
    let mut width = [0usize; 7];
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(width)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// Read real.csv / samples.csv back into tensors for plotting.
pub fn read_real(dir: &Path) -> Result<Tensor> {
    let (cols, data) = read_csv_numeric(&dir.join(files::REAL))?;
    rows_to_tensor(data, cols.len())
}

/// Returns (latents, outputs, most-responsible generator per row).
pub fn read_samples(dir: &Path) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let path = dir.join(files::SAMPLES);
    let (cols, data) = read_csv_numeric(&path)?;
    let zs = cols.iter().take_while(|c| c.starts_with('z')).count();
    let xs = cols[zs..].iter().take_while(|c| c.starts_with('x')).count();
    if zs == 0 || xs == 0 || zs + xs + 1 != cols.len() || cols.last().map(String::as_str) != Some("leaf")
    {
        return Err(Error::invalid(format!(
            "{}: expected columns z*,x*,leaf, got {cols:?}",
            path.display()
        )));
    }
    let mut latents = Vec::new();
    let mut outs = Vec::new();
    let mut leaf = Vec::new();
    for row in &data {
        latents.extend_from_slice(&row[..zs]);
        outs.extend_from_slice(&row[zs..zs + xs]);
        let l = row[zs + xs];
        if l < 0.0 || l.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "{}: leaf column must hold non-negative integers, got {l}",
                path.display()
            )));
        }
        leaf.push(l as usize);
    }
    let n = data.len();
    Ok((
        Tensor::new(vec![n, zs], latents)?,
        Tensor::new(vec![n, xs], outs)?,
        leaf,
    ))
}

fn read_csv_numeric(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut row = Vec::with_capacity(header.len());
        for field in line.split(',') {
            row.push(field.parse::<f64>().map_err(|e| {
                Error::invalid(format!("{}:{}: bad number {field:?}: {e}", path.display(), i + 2))
            })?);
        }
        if row.len() != header.len() {
            return Err(Error::invalid(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                i + 2,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn rows_to_tensor(rows: Vec<Vec<f64>>, cols: usize) -> Result<Tensor> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Tensor::new(vec![n, cols], flat)
}
