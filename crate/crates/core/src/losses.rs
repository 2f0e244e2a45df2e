//! Adversarial objectives: the classic likelihood losses, the Wasserstein
//! pair, the interpolation gradient penalty, and the bank-specific variants
//! with per-generator classification terms.
//!
//! Every function records nodes on the caller's graph and returns loss
//! node ids; nothing here runs backward. Probability arguments are expected
//! to come from sigmoid/softmax heads; logarithm inputs are floored at
//! `LOG_FLOOR` so a saturated critic yields a large finite loss instead of
//! an infinity.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::models::CriticNet;
use crate::tensor::{one_hot, Tensor};
use rand::Rng;

/// Floor applied inside every `ln` so losses stay finite at f64.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_batch(g: &Graph, id: NodeId, ctx: &'static str) -> Result<usize> {
    let n = g.value(id).leading();
    if g.value(id).numel() == 0 {
        return Err(Error::EmptyBatch(ctx));
    }
    Ok(n)
}

/// mean(ln(max(x, floor)))
fn mean_ln(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let c = g.clamp_min(x, LOG_FLOOR);
    let l = g.ln(c);
    g.mean(l)
}

/// 1 − x as a graph node.
fn one_minus(g: &mut Graph, x: NodeId) -> NodeId {
    let neg = g.scalar_mul(x, -1.0);
    g.scalar_add(neg, 1.0)
}

/// Column of per-row probabilities picked by 1-based class indices out of a
/// (n, classes) probability table. `choice[t] = 0` is rejected: class 0 is
/// the real-data class.
fn picked_class_probs(
    g: &mut Graph,
    probs: NodeId,
    choice: &[usize],
    classes: usize,
) -> Result<NodeId> {
    let n = g.value(probs).leading();
    if choice.len() != n {
        return Err(Error::invalid(format!(
            "{} class choices for a batch of {}",
            choice.len(),
            n
        )));
    }
    for &c in choice {
        if c == 0 || c >= classes {
            return Err(Error::BadClassIndex { index: c, count: classes - 1 });
        }
    }
    let mask = g.constant(one_hot(choice, classes)?);
    let masked = g.mul(mask, probs)?;
    Ok(g.sum_last(masked))
}

/// Generator's half of the saturating likelihood objective:
/// mean(ln(1 − D(fake))), which the generator minimizes.
pub fn original_gan_generator_loss(g: &mut Graph, d_fake: NodeId) -> Result<NodeId> {
    check_batch(g, d_fake, "original_gan_generator_loss")?;
    let flipped = one_minus(g, d_fake);
    mean_ln(g, flipped)
}

/// Binary-discriminator losses on sigmoid outputs:
/// d_loss = −mean(ln D(real)) − mean(ln(1 − D(fake))), minimized by D;
/// g_loss = mean(ln(1 − D(fake))), minimized by G.
pub fn original_gan_losses(
    g: &mut Graph,
    d_real: NodeId,
    d_fake: NodeId,
) -> Result<(NodeId, NodeId)> {
    check_batch(g, d_real, "original_gan_losses")?;
    let real_term = mean_ln(g, d_real)?;
    let g_loss = original_gan_generator_loss(g, d_fake)?;
    let sum = g.add(real_term, g_loss)?;
    let d_loss = g.scalar_mul(sum, -1.0);
    Ok((d_loss, g_loss))
}

/// Generator's half of the Wasserstein objective: −mean(D(fake)).
pub fn wasserstein_generator_loss(g: &mut Graph, d_fake: NodeId) -> Result<NodeId> {
    check_batch(g, d_fake, "wasserstein_generator_loss")?;
    let m = g.mean(d_fake)?;
    Ok(g.scalar_mul(m, -1.0))
}

/// Critic/generator losses on raw scores:
/// critic_loss = −(mean(D(real)) − mean(D(fake))) — the critic maximizes
/// the score gap; gen_loss = −mean(D(fake)).
pub fn wasserstein_losses(
    g: &mut Graph,
    d_real: NodeId,
    d_fake: NodeId,
) -> Result<(NodeId, NodeId)> {
    check_batch(g, d_real, "wasserstein_losses")?;
    check_batch(g, d_fake, "wasserstein_losses")?;
    let mean_real = g.mean(d_real)?;
    let mean_fake = g.mean(d_fake)?;
    let gap = g.sub(mean_real, mean_fake)?;
    let critic_loss = g.scalar_mul(gap, -1.0);
    let gen_loss = g.scalar_mul(mean_fake, -1.0);
    Ok((critic_loss, gen_loss))
}

/// One-Lipschitz penalty at interpolates: mean((‖∇_{x̂} D(x̂)‖₂ − 1)²) with
/// x̂ = ε·real + (1−ε)·fake, ε ~ U(0,1) per sample. The returned node is
/// itself differentiable w.r.t. the critic parameters (the gradient is
/// recorded symbolically), which is what the critic update needs.
pub fn gradient_penalty<R: Rng>(
    g: &mut Graph,
    critic: &CriticNet,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut R,
) -> Result<NodeId> {
    if real.shape() != fake.shape() {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    if real.numel() == 0 {
        return Err(Error::EmptyBatch("gradient_penalty"));
    }
    if !critic.twice_differentiable() {
        return Err(Error::NotTwiceDifferentiable { op: "critic activation" });
    }
    let n = real.leading();
    let d = real.last_dim();
    let mut xhat = vec![0.0; n * d];
    for t in 0..n {
        let eps: f64 = rng.random();
        for j in 0..d {
            let idx = t * d + j;
            xhat[idx] = eps * real.data()[idx] + (1.0 - eps) * fake.data()[idx];
        }
    }
    let xhat_node = g.input(Tensor::new(vec![n, d], xhat)?);
    let scores = critic.forward(g, xhat_node)?;
    // Rows of x̂ are independent, so ∇ of the summed score recovers each
    // per-sample gradient in one backward construction.
    let total = g.sum(scores);
    let grad = g.input_gradient(total, xhat_node)?;
    let norms = g.norm_last(grad);
    let dev = g.scalar_add(norms, -1.0);
    let sq = g.square(dev);
    g.mean(sq)
}

/// K+1-class discriminator losses. `probs_real`/`probs_fake` are softmax
/// rows over classes 0..=K with class 0 = real; `choice[t]` is the 1-based
/// generator that produced fake row t.
/// d_loss = −mean(ln D₀(real)) − mean(ln D_choice(fake));
/// g_loss = mean(ln(1 − D₀(fake))).
pub fn madgan_losses(
    g: &mut Graph,
    probs_real: NodeId,
    probs_fake: NodeId,
    choice: &[usize],
) -> Result<(NodeId, NodeId)> {
    check_batch(g, probs_real, "madgan_losses")?;
    check_batch(g, probs_fake, "madgan_losses")?;
    let classes = g.value(probs_real).last_dim();
    if g.value(probs_fake).last_dim() != classes {
        return Err(Error::ShapeMismatch {
            op: "madgan_losses",
            lhs: g.value(probs_real).shape().to_vec(),
            rhs: g.value(probs_fake).shape().to_vec(),
        });
    }

    let real_col = g.slice_last(probs_real, 0, 1)?;
    let real_term = mean_ln(g, real_col)?;
    let picked = picked_class_probs(g, probs_fake, choice, classes)?;
    let fake_term = mean_ln(g, picked)?;
    let sum = g.add(real_term, fake_term)?;
    let d_loss = g.scalar_mul(sum, -1.0);

    let g_loss = madgan_generator_loss(g, probs_fake)?;
    Ok((d_loss, g_loss))
}

/// Generator's half of the K+1-class objective: mean(ln(1 − D₀(fake))).
pub fn madgan_generator_loss(g: &mut Graph, probs_fake: NodeId) -> Result<NodeId> {
    check_batch(g, probs_fake, "madgan_generator_loss")?;
    let fake_real_col = g.slice_last(probs_fake, 0, 1)?;
    let flipped = one_minus(g, fake_real_col);
    mean_ln(g, flipped)
}

/// Binary-discriminator objective plus a per-generator classification term.
/// `c_fake` holds K-way softmax rows of the auxiliary classifier on the
/// fakes; `choice` is 1-based. Returns (d_loss, g_and_c_loss) where
/// g_and_c_loss = mean(ln(1 − D(fake))) − mean(ln C_choice(fake)) is
/// minimized jointly over generator and classifier parameters.
pub fn mgan_losses(
    g: &mut Graph,
    d_real: NodeId,
    d_fake: NodeId,
    c_fake: NodeId,
    choice: &[usize],
) -> Result<(NodeId, NodeId)> {
    let (d_loss, base_g) = original_gan_losses(g, d_real, d_fake)?;
    let class_term = mgan_classification_term(g, c_fake, choice)?;
    let g_and_c = g.sub(base_g, class_term)?;
    Ok((d_loss, g_and_c))
}

/// mean(ln C_choice(fake)) — subtracted from the generator loss, so that
/// minimizing the total pushes the classifier toward identifying the
/// producing generator.
pub fn mgan_classification_term(
    g: &mut Graph,
    c_fake: NodeId,
    choice: &[usize],
) -> Result<NodeId> {
    check_batch(g, c_fake, "mgan_classification_term")?;
    // Classifier columns are 0-based generator slots; choices are 1-based.
    let k = g.value(c_fake).last_dim();
    let n = g.value(c_fake).leading();
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
    let mask = g.constant(one_hot(&zero_based, k)?);
    let masked = g.mul(mask, c_fake)?;
    let picked = g.sum_last(masked);
    mean_ln(g, picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CriticHead, CriticNet};
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(g: &Graph, id: NodeId) -> f64 {
        g.value(id).item()
    }

    #[test]
    fn uninformed_discriminator_gives_two_ln_two() {
        let mut g = Graph::new();
        let half_r = g.constant(Tensor::full(vec![4, 1], 0.5));
        let half_f = g.constant(Tensor::full(vec![4, 1], 0.5));
        let (d, gl) = original_gan_losses(&mut g, half_r, half_f).unwrap();
        assert!((scalar_of(&g, d) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((scalar_of(&g, gl) + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_approaches_zero() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full(vec![3, 1], 1.0 - 1e-15));
        let f = g.constant(Tensor::full(vec![3, 1], 1e-15));
        let (d, _) = original_gan_losses(&mut g, r, f).unwrap();
        assert!(scalar_of(&g, d).abs() < 1e-9);
    }

    #[test]
    fn likelihood_losses_match_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rv: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let fv: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let mut g = Graph::new();
        let r = g.constant(Tensor::new(vec![16, 1], rv.clone()).unwrap());
        let f = g.constant(Tensor::new(vec![16, 1], fv.clone()).unwrap());
        let (d, gl) = original_gan_losses(&mut g, r, f).unwrap();
        let mean = |it: &mut dyn Iterator<Item = f64>| -> f64 {
            let v: Vec<f64> = it.collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let expect_d = -mean(&mut rv.iter().map(|x| x.max(LOG_FLOOR).ln()))
            - mean(&mut fv.iter().map(|x| (1.0 - x).max(LOG_FLOOR).ln()));
        let expect_g = mean(&mut fv.iter().map(|x| (1.0 - x).max(LOG_FLOOR).ln()));
        assert!((scalar_of(&g, d) - expect_d).abs() < 1e-10);
        assert!((scalar_of(&g, gl) - expect_g).abs() < 1e-10);
    }

    #[test]
    fn score_gap_losses_from_direct_means() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::new(vec![2, 1], vec![2.0, 4.0]).unwrap());
        let f = g.constant(Tensor::new(vec![2, 1], vec![0.5, 1.5]).unwrap());
        let (c, gl) = wasserstein_losses(&mut g, r, f).unwrap();
        assert_eq!(scalar_of(&g, c), -2.0);
        assert_eq!(scalar_of(&g, gl), -1.0);

        let mut g2 = Graph::new();
        let same = g2.constant(Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.5]).unwrap());
        let (c2, _) = wasserstein_losses(&mut g2, same, same).unwrap();
        assert_eq!(scalar_of(&g2, c2), 0.0);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let mut g = Graph::new();
        let empty = g.constant(Tensor::zeros(vec![0, 1]));
        assert!(matches!(
            original_gan_losses(&mut g, empty, empty),
            Err(Error::EmptyBatch(_))
        ));
        assert!(matches!(
            wasserstein_losses(&mut g, empty, empty),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        // D(x) = x·w with w = (1, 0): ∇D ≡ w, ‖w‖ = 1, penalty exactly 0.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut critic = CriticNet::new(2, &[], Activation::Tanh, CriticHead::Wasserstein, &mut rng);
        critic.mlp.layers[0].w.value = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        critic.mlp.layers[0].b.value = Tensor::zeros(vec![1]);
        let real = Tensor::randn(vec![8, 2], 1.0, &mut rng);
        let fake = Tensor::randn(vec![8, 2], 1.0, &mut rng);
        let mut g = Graph::new();
        let p = gradient_penalty(&mut g, &critic, &real, &fake, &mut rng).unwrap();
        assert_eq!(scalar_of(&g, p), 0.0);
    }

    #[test]
    fn zero_critic_has_unit_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut critic = CriticNet::new(2, &[], Activation::Tanh, CriticHead::Wasserstein, &mut rng);
        critic.mlp.layers[0].w.value = Tensor::zeros(vec![1, 2]);
        critic.mlp.layers[0].b.value = Tensor::zeros(vec![1]);
        let real = Tensor::randn(vec![6, 2], 1.0, &mut rng);
        let fake = Tensor::randn(vec![6, 2], 1.0, &mut rng);
        let mut g = Graph::new();
        let p = gradient_penalty(&mut g, &critic, &real, &fake, &mut rng).unwrap();
        assert_eq!(scalar_of(&g, p), 1.0);
    }

    #[test]
    fn penalty_rejects_kinked_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let critic = CriticNet::new(
            2,
            &[8],
            Activation::LeakyRelu,
            CriticHead::Wasserstein,
            &mut rng,
        );
        let x = Tensor::randn(vec![4, 2], 1.0, &mut rng);
        let mut g = Graph::new();
        assert!(matches!(
            gradient_penalty(&mut g, &critic, &x, &x, &mut rng),
            Err(Error::NotTwiceDifferentiable { .. })
        ));
    }

    #[test]
    fn uniform_multiclass_rows_give_four_ln_two() {
        // K=3 generators, 4 classes, every probability 0.25:
        // d_loss = −ln(1/4) − ln(1/4) = 4·ln 2.
        let mut g = Graph::new();
        let pr = g.constant(Tensor::full(vec![5, 4], 0.25));
        let pf = g.constant(Tensor::full(vec![5, 4], 0.25));
        let (d, _) = madgan_losses(&mut g, pr, pf, &[1, 2, 3, 1, 2]).unwrap();
        assert!((scalar_of(&g, d) - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn half_real_prob_on_fakes_gives_minus_ln_two_generator_loss() {
        let mut g = Graph::new();
        let pr = g.constant(Tensor::full(vec![2, 3], 1.0 / 3.0));
        let mut pf_rows = Vec::new();
        pf_rows.extend_from_slice(&[0.5, 0.3, 0.2]);
        pf_rows.extend_from_slice(&[0.5, 0.1, 0.4]);
        let pf = g.constant(Tensor::new(vec![2, 3], pf_rows).unwrap());
        let (_, gl) = madgan_losses(&mut g, pr, pf, &[1, 2]).unwrap();
        assert!((scalar_of(&g, gl) + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn class_zero_choice_is_rejected() {
        let mut g = Graph::new();
        let pr = g.constant(Tensor::full(vec![2, 4], 0.25));
        let pf = g.constant(Tensor::full(vec![2, 4], 0.25));
        assert!(matches!(
            madgan_losses(&mut g, pr, pf, &[0, 1]),
            Err(Error::BadClassIndex { index: 0, .. })
        ));
        assert!(matches!(
            madgan_losses(&mut g, pr, pf, &[1, 4]),
            Err(Error::BadClassIndex { index: 4, count: 3 })
        ));
    }

    #[test]
    fn multiclass_losses_match_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let classes = 4;
        let raw_r = Tensor::randn(vec![n, classes], 1.0, &mut rng);
        let raw_f = Tensor::randn(vec![n, classes], 1.0, &mut rng);
        let choice: Vec<usize> = (0..n).map(|_| rng.random_range(1..classes)).collect();
        let mut g = Graph::new();
        let lr = g.constant(raw_r);
        let lf = g.constant(raw_f);
        let pr = g.softmax(lr);
        let pf = g.softmax(lf);
        let (d, gl) = madgan_losses(&mut g, pr, pf, &choice).unwrap();

        let prv = g.value(pr).clone();
        let pfv = g.value(pf).clone();
        let mut d_expect = 0.0;
        let mut g_expect = 0.0;
        for t in 0..n {
            d_expect -= prv.at2(t, 0).ln() / n as f64;
            d_expect -= pfv.at2(t, choice[t]).ln() / n as f64;
            g_expect += (1.0 - pfv.at2(t, 0)).ln() / n as f64;
        }
        assert!((scalar_of(&g, d) - d_expect).abs() < 1e-10);
        assert!((scalar_of(&g, gl) - g_expect).abs() < 1e-10);
    }

    #[test]
    fn perfect_classifier_adds_nothing() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full(vec![3, 1], 0.5));
        let f = g.constant(Tensor::full(vec![3, 1], 0.5));
        let mut c_rows = vec![0.0; 3 * 4];
        for (t, &c) in [2usize, 1, 4].iter().enumerate() {
            c_rows[t * 4 + (c - 1)] = 1.0;
        }
        let c = g.constant(Tensor::new(vec![3, 4], c_rows).unwrap());
        let (_, gc) = mgan_losses(&mut g, r, f, c, &[2, 1, 4]).unwrap();
        // classification term is ln 1 = 0, leaving just mean ln(1−0.5).
        assert!((scalar_of(&g, gc) + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_classifier_costs_ln_k() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full(vec![2, 1], 0.5));
        let f = g.constant(Tensor::full(vec![2, 1], 0.5));
        let c = g.constant(Tensor::full(vec![2, 4], 0.25));
        let (_, gc) = mgan_losses(&mut g, r, f, c, &[3, 4]).unwrap();
        let expect = -std::f64::consts::LN_2 + (4.0f64).ln();
        assert!((scalar_of(&g, gc) - expect).abs() < 1e-12);
    }
}
