//! Looking inside a trained gating tree: correlation structure of the leaf
//! responsibilities, per-node weighted mean outputs, and the latents each
//! leaf claims most strongly.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{GeneratorTree, SharedBlock};
use crate::tensor::Tensor;
use rand::Rng;

/// Evaluate responsibilities (n × leaves), generated samples (n × out), and
/// every heap node's path weight (each n × 1) in one throwaway graph.
fn tree_eval(
    tree: &GeneratorTree,
    shared: &SharedBlock,
    z: &Tensor,
) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
    let mut g = Graph::new();
    let zin = g.constant(z.clone());
    let resp = tree.responsibilities(&mut g, zin)?;
    let mixed = tree.forward(&mut g, zin)?;
    let out = shared.forward(&mut g, mixed)?;
    let weights = tree.node_weights(&mut g, zin)?;
    let resp_t = g.value(resp).clone();
    let out_t = g.value(out).clone();
    let weight_t = weights.into_iter().map(|w| g.value(w).clone()).collect();
    Ok((resp_t, out_t, weight_t))
}

/// Pearson correlation between every pair of leaf-responsibility columns,
/// evaluated on the given latent batch. A column with zero variance gets a
/// zero row and column except for the unit diagonal.
pub fn gating_correlation(tree: &GeneratorTree, z: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = z.leading();
    if n < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 samples, got {n}"
        )));
    }
    let mut g = Graph::new();
    let zin = g.constant(z.clone());
    let resp = tree.responsibilities(&mut g, zin)?;
    let resp = g.value(resp);
    correlation_of_columns(resp)
}

/// Column-wise Pearson correlation matrix of a (n × k) tensor — the same
/// statistic as `gating_correlation` but over any responsibility matrix
/// (e.g. the flat mixture's softmax gates).
pub fn correlation_of_columns(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = t.leading();
    let k = t.last_dim();
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            mean[j] += t.at2(i, j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Centered cross-products; sq[j] is a column's total squared deviation.
    let mut cross = vec![vec![0.0; k]; k];
    for i in 0..n {
        for a in 0..k {
            let da = t.at2(i, a) - mean[a];
            for b in 0..=a {
                cross[a][b] += da * (t.at2(i, b) - mean[b]);
            }
        }
    }
    let mut corr = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..=a {
            let denom = (cross[a][a] * cross[b][b]).sqrt();
            let c = if a == b {
                1.0
            } else if denom == 0.0 {
                0.0
            } else {
                (cross[a][b] / denom).clamp(-1.0, 1.0)
            };
            corr[a][b] = c;
            corr[b][a] = c;
        }
    }
    Ok(corr)
}

/// Weighted mean of the generated samples under one tree node's path
/// weight. `mean` is absent when the node's total weight over the batch
/// falls below 1e-12 — the node is effectively unused.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeResponse {
    pub total_weight: f64,
    pub mean: Option<Vec<f64>>,
}

/// For every heap node (root first, gates then leaves), the weighted
/// average of the generated samples where sample t carries the node's
/// root-to-node gating product at z_t. The root's weight is identically 1,
/// so its entry is the plain sample mean.
pub fn node_average_response(
    tree: &GeneratorTree,
    shared: &SharedBlock,
    z: &Tensor,
) -> Result<Vec<NodeResponse>> {
    let n = z.leading();
    if n == 0 {
        return Err(Error::EmptyBatch("node_average_response"));
    }
    let (_, out, weights) = tree_eval(tree, shared, z)?;
    let d = out.last_dim();
    let mut responses = Vec::with_capacity(weights.len());
    for w in &weights {
        let mut total = 0.0;
        let mut acc = vec![0.0; d];
        for t in 0..n {
            let wt = w.at2(t, 0);
            total += wt;
            for j in 0..d {
                acc[j] += wt * out.at2(t, j);
            }
        }
        let mean = if total < 1e-12 {
            None
        } else {
            Some(acc.into_iter().map(|s| s / total).collect())
        };
        responses.push(NodeResponse { total_weight: total, mean });
    }
    Ok(responses)
}

/// One latent draw a leaf claims strongly: its position in the draw order,
/// the leaf's responsibility for it, and the generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar {
    pub draw_index: usize,
    pub responsibility: f64,
    pub sample: Vec<f64>,
}

/// Draw `n_draw` latents and return, per leaf, the `top` draws with the
/// highest responsibility for that leaf (descending; exact ties keep the
/// earlier draw first), each paired with its generated sample.
pub fn top_leaf_exemplars<R: Rng>(
    tree: &GeneratorTree,
    shared: &SharedBlock,
    n_draw: usize,
    top: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Exemplar>>> {
    if n_draw < top {
        return Err(Error::invalid(format!(
            "cannot pick top {top} from {n_draw} draws"
        )));
    }
    if n_draw == 0 {
        return Err(Error::EmptyBatch("top_leaf_exemplars"));
    }
    let z = Tensor::randn(vec![n_draw, tree.latent_dim], 1.0, rng);
    let (resp, out, _) = tree_eval(tree, shared, &z)?;
    let d = out.last_dim();
    let mut per_leaf = Vec::with_capacity(tree.leaf_count());
    for leaf in 0..tree.leaf_count() {
        let mut order: Vec<usize> = (0..n_draw).collect();
        order.sort_by(|&a, &b| {
            resp.at2(b, leaf)
                .total_cmp(&resp.at2(a, leaf))
                .then(a.cmp(&b))
        });
        let picks = order[..top]
            .iter()
            .map(|&t| Exemplar {
                draw_index: t,
                responsibility: resp.at2(t, leaf),
                sample: (0..d).map(|j| out.at2(t, j)).collect(),
            })
            .collect();
        per_leaf.push(picks);
    }
    Ok(per_leaf)
}

/// Row-wise argmax (lower column index wins ties) — which leaf or gate
/// column claims each sample.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let n = t.leading();
    let k = t.last_dim();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for j in 1..k {
                if t.at2(i, j) > t.at2(i, best) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Brute-force responsibilities for an arbitrary tree by walking every
    /// root-to-leaf path per sample.
    fn manual_responsibilities(tree: &GeneratorTree, z: &Tensor) -> Vec<Vec<f64>> {
        let n = z.leading();
        let first_leaf = tree.gates.len();
        let mut resp = vec![vec![0.0; tree.leaf_count()]; n];
        for t in 0..n {
            let zrow = z.row(t);
            let mut weights = vec![0.0; tree.node_count()];
            weights[0] = 1.0;
            for (m, gate) in tree.gates.iter().enumerate() {
                let a: f64 = gate
                    .v
                    .value
                    .data()
                    .iter()
                    .zip(zrow)
                    .map(|(v, z)| v * z)
                    .sum::<f64>()
                    + gate.v0.value.data()[0];
                let s = sigmoid(a);
                weights[2 * m + 1] = weights[m] * s;
                weights[2 * m + 2] = weights[m] * (1.0 - s);
            }
            for j in 0..tree.leaf_count() {
                resp[t][j] = weights[first_leaf + j];
            }
        }
        resp
    }

    #[test]
    fn depth_one_leaves_are_perfectly_anticorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = GeneratorTree::new("gen", 1, 2, 2, &mut rng);
        let z = Tensor::randn(vec![50, 2], 1.0, &mut rng);
        let corr = gating_correlation(&tree, &z).unwrap();
        assert_eq!(corr[0][0], 1.0);
        assert_eq!(corr[1][1], 1.0);
        assert!((corr[0][1] + 1.0).abs() < 1e-12, "corr = {}", corr[0][1]);
    }

    #[test]
    fn correlation_is_symmetric_with_unit_diagonal_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = GeneratorTree::new("gen", 3, 2, 2, &mut rng);
        let z = Tensor::randn(vec![200, 2], 1.0, &mut rng);
        let corr = gating_correlation(&tree, &z).unwrap();
        assert_eq!(corr.len(), 8);
        for a in 0..8 {
            assert_eq!(corr[a][a], 1.0);
            for b in 0..8 {
                assert!((corr[a][b] - corr[b][a]).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(&corr[a][b]));
            }
        }
    }

    #[test]
    fn saturated_gate_gives_constant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tree = GeneratorTree::new("gen", 1, 2, 2, &mut rng);
        // Force the gate hard left: σ(0·z + 40) rounds to exactly 1.
        tree.gates[0].v.value = Tensor::zeros(vec![1, 2]);
        tree.gates[0].v0.value = Tensor::new(vec![1], vec![40.0]).unwrap();
        let z = Tensor::randn(vec![20, 2], 1.0, &mut rng);
        let corr = gating_correlation(&tree, &z).unwrap();
        assert_eq!(corr, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn correlation_needs_three_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = GeneratorTree::new("gen", 1, 2, 2, &mut rng);
        let z = Tensor::randn(vec![2, 2], 1.0, &mut rng);
        assert!(gating_correlation(&tree, &z).is_err());
    }

    #[test]
    fn correlation_matches_manual_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = GeneratorTree::new("gen", 2, 2, 2, &mut rng);
        let z = Tensor::randn(vec![60, 2], 1.0, &mut rng);
        let corr = gating_correlation(&tree, &z).unwrap();
        let resp = manual_responsibilities(&tree, &z);
        let n = 60;
        for a in 0..4 {
            for b in 0..4 {
                let ma: f64 = (0..n).map(|t| resp[t][a]).sum::<f64>() / n as f64;
                let mb: f64 = (0..n).map(|t| resp[t][b]).sum::<f64>() / n as f64;
                let num: f64 = (0..n).map(|t| (resp[t][a] - ma) * (resp[t][b] - mb)).sum();
                let da: f64 = (0..n).map(|t| (resp[t][a] - ma).powi(2)).sum();
                let db: f64 = (0..n).map(|t| (resp[t][b] - mb).powi(2)).sum();
                let expect = if a == b { 1.0 } else { num / (da * db).sqrt() };
                assert!(
                    (corr[a][b] - expect).abs() < 1e-10,
                    "({a},{b}): {} vs {expect}",
                    corr[a][b]
                );
            }
        }
    }

    #[test]
    fn root_response_is_the_plain_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = GeneratorTree::new("gen", 3, 2, 2, &mut rng);
        let shared = SharedBlock::identity(2);
        let z = Tensor::randn(vec![100, 2], 1.0, &mut rng);
        let resp = node_average_response(&tree, &shared, &z).unwrap();
        assert_eq!(resp.len(), 15);

        let mut g = Graph::new();
        let zin = g.constant(z.clone());
        let out = tree.forward(&mut g, zin).unwrap();
        let out = g.value(out);
        let mut mean = [0.0; 2];
        for t in 0..100 {
            for j in 0..2 {
                mean[j] += out.at2(t, j) / 100.0;
            }
        }
        assert!((resp[0].total_weight - 100.0).abs() < 1e-9);
        let root = resp[0].mean.as_ref().unwrap();
        for j in 0..2 {
            assert!((root[j] - mean[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn node_responses_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tree = GeneratorTree::new("gen", 3, 2, 2, &mut rng);
        let shared = SharedBlock::dense(2, &[], 2, crate::nn::Activation::Tanh, &mut rng);
        let z = Tensor::randn(vec![40, 2], 1.0, &mut rng);
        let got = node_average_response(&tree, &shared, &z).unwrap();

        // Recompute weights per node and outputs through the same graphs.
        let (_, out, weights) = tree_eval(&tree, &shared, &z).unwrap();
        for (m, w) in weights.iter().enumerate() {
            let total: f64 = (0..40).map(|t| w.at2(t, 0)).sum();
            assert!((got[m].total_weight - total).abs() < 1e-12);
            let mean = got[m].mean.as_ref().expect("random gates leave no node unused");
            for j in 0..2 {
                let acc: f64 = (0..40).map(|t| w.at2(t, 0) * out.at2(t, j)).sum();
                assert!((mean[j] - acc / total).abs() < 1e-12);
            }
            // Cross-check the weight column itself against path products.
            if m >= tree.gates.len() {
                let resp = manual_responsibilities(&tree, &z);
                for t in 0..40 {
                    assert!((w.at2(t, 0) - resp[t][m - tree.gates.len()]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dead_branch_is_reported_unused() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tree = GeneratorTree::new("gen", 1, 2, 2, &mut rng);
        tree.gates[0].v.value = Tensor::zeros(vec![1, 2]);
        tree.gates[0].v0.value = Tensor::new(vec![1], vec![40.0]).unwrap();
        let shared = SharedBlock::identity(2);
        let z = Tensor::randn(vec![30, 2], 1.0, &mut rng);
        let resp = node_average_response(&tree, &shared, &z).unwrap();
        // Heap order: root, left leaf, right leaf. The right branch never
        // receives weight.
        assert!(resp[1].mean.is_some());
        assert_eq!(resp[2].total_weight, 0.0);
        assert_eq!(resp[2].mean, None);
    }

    #[test]
    fn balanced_gate_children_equal_overall_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tree = GeneratorTree::new("gen", 1, 2, 2, &mut rng);
        // σ(0·z + 0) = 0.5 for every sample: both children weight each
        // sample equally, so all three node means coincide.
        tree.gates[0].v.value = Tensor::zeros(vec![1, 2]);
        tree.gates[0].v0.value = Tensor::zeros(vec![1]);
        let shared = SharedBlock::identity(2);
        let z = Tensor::randn(vec![25, 2], 1.0, &mut rng);
        let resp = node_average_response(&tree, &shared, &z).unwrap();
        let root = resp[0].mean.as_ref().unwrap();
        for child in [1, 2] {
            let m = resp[child].mean.as_ref().unwrap();
            for j in 0..2 {
                assert!((m[j] - root[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exemplars_match_exhaustive_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = GeneratorTree::new("gen", 2, 2, 2, &mut rng);
        let shared = SharedBlock::identity(2);

        let mut draw_rng = ChaCha8Rng::seed_from_u64(100);
        let got = top_leaf_exemplars(&tree, &shared, 100, 5, &mut draw_rng).unwrap();

        // Replay the same draw and sort exhaustively.
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(100);
        let z = Tensor::randn(vec![100, 2], 1.0, &mut oracle_rng);
        let resp = manual_responsibilities(&tree, &z);
        assert_eq!(got.len(), 4);
        for leaf in 0..4 {
            let mut idx: Vec<usize> = (0..100).collect();
            idx.sort_by(|&a, &b| resp[b][leaf].total_cmp(&resp[a][leaf]).then(a.cmp(&b)));
            for (rank, ex) in got[leaf].iter().enumerate() {
                assert_eq!(ex.draw_index, idx[rank]);
                assert!((ex.responsibility - resp[ex.draw_index][leaf]).abs() < 1e-12);
                // Sample equals the mixture output for that latent.
                let mut g = Graph::new();
                let zin = g.constant(Tensor::new(vec![1, 2], z.row(ex.draw_index).to_vec()).unwrap());
                let out = tree.forward(&mut g, zin).unwrap();
                let out = g.value(out);
                for j in 0..2 {
                    assert!((ex.sample[j] - out.at2(0, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exemplar_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let tree = GeneratorTree::new("gen", 0, 2, 2, &mut rng);
        let shared = SharedBlock::identity(2);

        // Depth 0: responsibility ≡ 1, ties resolve in draw order.
        let got = top_leaf_exemplars(&tree, &shared, 8, 3, &mut rng).unwrap();
        assert_eq!(got.len(), 1);
        let indices: Vec<usize> = got[0].iter().map(|e| e.draw_index).collect();
        assert_eq!(indices, vec![0, 1, 2]);
        for e in &got[0] {
            assert_eq!(e.responsibility, 1.0);
        }

        // top == n_draw returns everything.
        let all = top_leaf_exemplars(&tree, &shared, 6, 6, &mut rng).unwrap();
        assert_eq!(all[0].len(), 6);

        // top > n_draw is rejected.
        assert!(top_leaf_exemplars(&tree, &shared, 3, 5, &mut rng).is_err());
    }

    #[test]
    fn argmax_rows_prefers_lower_index_on_ties() {
        let t = Tensor::new(
            vec![3, 3],
            vec![0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.2, 0.7],
        )
        .unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0, 2]);
    }
}
