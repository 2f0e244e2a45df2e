//! Central-difference gradient verification.
//!
//! The reverse-mode engine is checked against the one derivative oracle that
//! needs no calculus: (f(θ+ε) − f(θ−ε)) / 2ε, applied per parameter element.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::Model;

/// Worst observed relative error between reverse-mode and central-difference
/// gradients over every element of every parameter of `model`.
///
/// `build` must construct the loss deterministically from the model's
/// current parameter values (capture any sampled batches by value). The
/// relative error uses |a − d| / max(1e-6, |a| + |d|), so gradients below
/// 1e-6 in magnitude are compared absolutely: at that scale a central
/// difference of an O(1) loss carries ~|f|·ulp/(2ε) ≈ 5e-12 of rounding
/// noise, which would otherwise swamp a true relative comparison.
pub fn grad_check<M: Model>(
    model: &mut M,
    mut build: impl FnMut(&mut Graph, &M) -> Result<NodeId>,
    eps: f64,
) -> Result<f64> {
    // Reverse-mode gradients once, keyed by parameter name.
    let mut g = Graph::new();
    let loss = build(&mut g, model)?;
    g.backward(loss)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |p| {
        let grad = g
            .grad_by_name(&p.name)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; p.value.numel()]);
        analytic.push((p.name.clone(), grad));
    });

    // Finite differences, one element at a time.
    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    let mut worst: f64 = 0.0;
    for (pi, name) in names.iter().enumerate() {
        let numel = analytic[pi].1.len();
        for k in 0..numel {
            let mut eval = |model: &mut M, delta: f64| -> Result<f64> {
                nudge(model, name, k, delta);
                let mut g = Graph::new();
                let out = build(&mut g, model);
                nudge(model, name, k, -delta);
                Ok(g.value(out?).item())
            };
            let plus = eval(model, eps)?;
            let minus = eval(model, -eps)?;
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].1[k];
            let rel = if a.is_finite() && fd.is_finite() {
                (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6)
            } else {
                f64::INFINITY
            };
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn nudge<M: Model>(model: &mut M, name: &str, k: usize, delta: f64) {
    model.visit_params_mut(&mut |p| {
        if p.name == name {
            p.value.data_mut()[k] += delta;
        }
    });
}
