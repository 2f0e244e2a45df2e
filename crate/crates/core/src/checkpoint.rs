//! Plain-text parameter checkpoints.
//!
//! Format (one header, then one line per parameter, any order):
//!
//! ```text
//! hmog-params v1
//! gen.leaf0.w 2x2 0.3764189274864623 -0.07468817408370496 ...
//! critic.layer0.bias 64 0.0 0.0 ...
//! ```
//!
//! The shape is the dimensions joined by `x`; values follow in row-major
//! order using Rust's shortest round-trip float formatting, so every f64
//! (including -0.0, subnormals, and infinities) is restored bit-exactly.
//! Loading is strict and atomic: the file must cover the model's parameter
//! set exactly — a missing name, an unknown name, or a shape mismatch
//! fails the load before any value is written.

use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

const HEADER: &str = "hmog-params v1";

/// Render every parameter of the bundle (generators, shared block,
/// auxiliary classifier, critic) in visit order.
pub fn serialize(bundle: &ModelBundle) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    bundle.visit_all_params(&mut |p| {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        write!(out, "{} {}", p.name, dims.join("x")).unwrap();
        for v in p.value.data() {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    });
    out
}

struct Entry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn parse(text: &str) -> Result<HashMap<String, Entry>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected header {HEADER:?}, found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut entries = HashMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let name = fields.next().unwrap().to_string();
        let shape_str = fields.next().ok_or_else(|| {
            Error::Checkpoint(format!("line {}: missing shape for {name}", lineno + 2))
        })?;
        let shape: Vec<usize> = shape_str
            .split('x')
            .map(|d| {
                d.parse().map_err(|_| {
                    Error::Checkpoint(format!("line {}: bad shape {shape_str:?}", lineno + 2))
                })
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::Checkpoint(format!("line {}: bad value {v:?}", lineno + 2))
                })
            })
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::Checkpoint(format!(
                "line {}: {name} declares shape {shape_str} ({numel} values) but carries {}",
                lineno + 2,
                values.len()
            )));
        }
        if entries.insert(name.clone(), Entry { shape, values }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    Ok(entries)
}

/// Load serialized parameters into a bundle built with the same
/// architecture and sizes. Validates the complete parameter set first, so
/// a failed load leaves the bundle untouched.
pub fn deserialize_into(bundle: &mut ModelBundle, text: &str) -> Result<()> {
    let entries = parse(text)?;
    let mut err: Option<Error> = None;
    let mut used = 0usize;
    bundle.visit_all_params(&mut |p| {
        if err.is_some() {
            return;
        }
        match entries.get(&p.name) {
            None => err = Some(Error::Checkpoint(format!("missing parameter {}", p.name))),
            Some(e) if e.shape != p.value.shape() => {
                err = Some(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in the model but {:?} in the checkpoint",
                    p.name,
                    p.value.shape(),
                    e.shape
                )))
            }
            Some(_) => used += 1,
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if used != entries.len() {
        let mut names: Vec<&String> = entries.keys().collect();
        let mut model_names = std::collections::HashSet::new();
        bundle.visit_all_params(&mut |p| {
            model_names.insert(p.name.clone());
        });
        names.retain(|n| !model_names.contains(*n));
        names.sort();
        return Err(Error::Checkpoint(format!(
            "checkpoint carries parameters the model does not have: {}",
            names
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    bundle.visit_all_params_mut(&mut |p| {
        let e = &entries[&p.name];
        p.value = Tensor::new(e.shape.clone(), e.values.clone()).expect("validated above");
    });
    Ok(())
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(bundle))?;
    Ok(())
}

pub fn load(bundle: &mut ModelBundle, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    deserialize_into(bundle, &text)
}
