//! Quantitative evaluation: Gaussian fits with the squared Fréchet
//! distance between them, a k-NN leave-one-out two-sample test, mode
//! coverage against the ground-truth mixture, and latent truncation.
//!
//! The Fréchet score here is computed in data space — on a 2-D toy there
//! are no meaningful deep features to embed into, so these numbers live on
//! their own scale and must not be compared against feature-space scores
//! reported for image models.

use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::par;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Symmetric PSD covariance, row-major.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n−1) covariance, symmetrized.
pub fn fit_gaussian(samples: &Tensor) -> Result<GaussianFit> {
    let n = samples.leading();
    let d = samples.last_dim();
    if n < d + 1 {
        return Err(Error::invalid(format!(
            "fitting a {d}-dimensional Gaussian needs at least {} samples, got {n}",
            d + 1
        )));
    }
    let mut mean = vec![0.0; d];
    for t in 0..n {
        for j in 0..d {
            mean[j] += samples.at2(t, j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for t in 0..n {
        for r in 0..d {
            let dr = samples.at2(t, r) - mean[r];
            for s in 0..=r {
                cov[r][s] += dr * (samples.at2(t, s) - mean[s]);
            }
        }
    }
    for r in 0..d {
        for s in 0..=r {
            let v = cov[r][s] / (n as f64 - 1.0);
            cov[r][s] = v;
            cov[s][r] = v;
        }
    }
    Ok(GaussianFit { mean, cov })
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Gauss-Jordan inverse for the small matrices the square-root iteration
/// works with.
fn mat_inverse(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv = vec![vec![0.0; n]; n];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-300 {
            return Err(Error::invalid("singular matrix in square-root iteration"));
        }
        a.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Tr((Σ₁Σ₂)^{1/2}). For d ≤ 2 the eigenvalues of the product come from
/// its trace and determinant in closed form; higher dimensions run a
/// Denman–Beavers square-root iteration (tolerance 1e-10, 100 iterations).
pub fn trace_sqrt_product(cov_a: &[Vec<f64>], cov_b: &[Vec<f64>]) -> Result<f64> {
    let d = cov_a.len();
    if d != cov_b.len() {
        return Err(Error::ShapeMismatch {
            op: "trace_sqrt_product",
            lhs: vec![d, d],
            rhs: vec![cov_b.len(), cov_b.len()],
        });
    }
    match d {
        0 => Ok(0.0),
        1 => Ok((cov_a[0][0] * cov_b[0][0]).max(0.0).sqrt()),
        2 => {
            let m = mat_mul(cov_a, cov_b);
            let trace = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            // PSD·PSD has real non-negative eigenvalues; the discriminant
            // only dips below zero by rounding.
            let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
            let l1 = ((trace + disc) / 2.0).max(0.0);
            let l2 = ((trace - disc) / 2.0).max(0.0);
            Ok(l1.sqrt() + l2.sqrt())
        }
        _ => {
            let m = mat_mul(cov_a, cov_b);
            let mut y = m;
            let mut z = vec![vec![0.0; d]; d];
            for (i, row) in z.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            for _ in 0..100 {
                let y_inv = mat_inverse(&y)?;
                let z_inv = mat_inverse(&z)?;
                let mut y_next = vec![vec![0.0; d]; d];
                let mut z_next = vec![vec![0.0; d]; d];
                let mut delta = 0.0f64;
                let mut scale = 1.0f64;
                for i in 0..d {
                    for j in 0..d {
                        y_next[i][j] = 0.5 * (y[i][j] + z_inv[i][j]);
                        z_next[i][j] = 0.5 * (z[i][j] + y_inv[i][j]);
                        delta = delta.max((y_next[i][j] - y[i][j]).abs());
                        scale = scale.max(y_next[i][j].abs());
                    }
                }
                y = y_next;
                z = z_next;
                if delta <= 1e-10 * scale {
                    return Ok((0..d).map(|i| y[i][i]).sum());
                }
            }
            Err(Error::invalid(
                "matrix square-root iteration did not converge in 100 steps",
            ))
        }
    }
}

/// Squared Fréchet distance between Gaussian fits:
/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2}).
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "frechet_distance",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace_a: f64 = (0..a.dim()).map(|i| a.cov[i][i]).sum();
    let trace_b: f64 = (0..b.dim()).map(|i| b.cov[i][i]).sum();
    let cross = trace_sqrt_product(&a.cov, &b.cov)?;
    let mut trace_term = trace_a + trace_b - 2.0 * cross;
    if trace_term < -1e-8 {
        return Err(Error::NotPsd(format!(
            "covariance trace term is {trace_term:.3e}"
        )));
    }
    if trace_term < 0.0 {
        trace_term = 0.0;
    }
    Ok(mean_term + trace_term)
}

/// One pooled point's k-NN vote. Returns whether the point is classified
/// as real. Distance ties break toward the lower pooled index (achieved by
/// strict comparison on (d², index)); vote ties break toward "real".
fn classify_one(points: &Tensor, n_real: usize, i: usize, k: usize) -> bool {
    let total = points.leading();
    let d = points.last_dim();
    let xi = points.row(i);
    // Running top-k as a sorted small vec of (d², index), largest last.
    let mut top: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for j in 0..total {
        if j == i {
            continue;
        }
        let xj = points.row(j);
        let mut dist = 0.0;
        for c in 0..d {
            let diff = xi[c] - xj[c];
            dist += diff * diff;
        }
        let key = (dist, j);
        if top.len() < k {
            let pos = top.partition_point(|&(dv, ji)| (dv, ji) < key);
            top.insert(pos, key);
        } else if key < *top.last().unwrap() {
            let pos = top.partition_point(|&(dv, ji)| (dv, ji) < key);
            top.insert(pos, key);
            top.pop();
        }
    }
    let real_votes = top.iter().filter(|&&(_, j)| j < n_real).count();
    2 * real_votes >= k
}

/// Leave-one-out k-NN two-sample test on the pooled real+fake sets.
/// Returns (real accuracy, fake accuracy, weighted overall accuracy) — the
/// fraction of each set classified as its own label. 0.5 overall means the
/// sets are indistinguishable to this classifier.
pub fn knn_two_sample(real: &Tensor, fake: &Tensor, k: usize) -> Result<(f64, f64, f64)> {
    knn_impl(real, fake, k, false)
}

/// Sequential twin of `knn_two_sample`, bypassing the parallel dispatch —
/// results are bit-identical; this exists for benchmarking the dispatch.
pub fn knn_two_sample_seq(real: &Tensor, fake: &Tensor, k: usize) -> Result<(f64, f64, f64)> {
    knn_impl(real, fake, k, true)
}

fn knn_impl(real: &Tensor, fake: &Tensor, k: usize, sequential: bool) -> Result<(f64, f64, f64)> {
    let n = real.leading();
    let m = fake.leading();
    if n == 0 || m == 0 {
        return Err(Error::EmptyBatch("knn_two_sample"));
    }
    if real.last_dim() != fake.last_dim() {
        return Err(Error::ShapeMismatch {
            op: "knn_two_sample",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n + m <= k + 1 {
        return Err(Error::invalid(format!(
            "k-NN with k={k} needs more than {} pooled points, got {}",
            k + 1,
            n + m
        )));
    }
    let d = real.last_dim();
    let mut pooled = Vec::with_capacity((n + m) * d);
    pooled.extend_from_slice(real.data());
    pooled.extend_from_slice(fake.data());
    let points = Tensor::new(vec![n + m, d], pooled)?;

    let classified_real: Vec<bool> = if sequential {
        (0..n + m).map(|i| classify_one(&points, n, i, k)).collect()
    } else {
        par::map_indexed(n + m, |i| classify_one(&points, n, i, k))
    };

    let real_hits = classified_real[..n].iter().filter(|&&c| c).count();
    let fake_hits = classified_real[n..].iter().filter(|&&c| !c).count();
    let real_acc = real_hits as f64 / n as f64;
    let fake_acc = fake_hits as f64 / m as f64;
    let overall = (real_hits + fake_hits) as f64 / (n + m) as f64;
    Ok((real_acc, fake_acc, overall))
}

/// Largest eigenvalue of a small symmetric matrix (closed form for d ≤ 2,
/// cyclic Jacobi sweeps above that).
fn largest_eigenvalue(sym: &[Vec<f64>]) -> f64 {
    let d = sym.len();
    match d {
        0 => 0.0,
        1 => sym[0][0],
        2 => {
            let half_tr = (sym[0][0] + sym[1][1]) / 2.0;
            let half_diff = (sym[0][0] - sym[1][1]) / 2.0;
            half_tr + (half_diff * half_diff + sym[0][1] * sym[0][1]).sqrt()
        }
        _ => {
            let mut a: Vec<Vec<f64>> = sym.to_vec();
            for _ in 0..100 {
                let mut off = 0.0f64;
                for p in 0..d {
                    for q in (p + 1)..d {
                        off = off.max(a[p][q].abs());
                    }
                }
                if off < 1e-12 {
                    break;
                }
                for p in 0..d {
                    for q in (p + 1)..d {
                        if a[p][q].abs() < 1e-300 {
                            continue;
                        }
                        let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                        let c = 1.0 / (t * t + 1.0).sqrt();
                        let s = t * c;
                        for i in 0..d {
                            let aip = a[i][p];
                            let aiq = a[i][q];
                            a[i][p] = c * aip - s * aiq;
                            a[i][q] = s * aip + c * aiq;
                        }
                        for i in 0..d {
                            let api = a[p][i];
                            let aqi = a[q][i];
                            a[p][i] = c * api - s * aqi;
                            a[q][i] = s * api + c * aqi;
                        }
                    }
                }
            }
            (0..d).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Assign each sample to its nearest component mean, and count a mode as
/// covered when at least `min_share` of all samples land within
/// `radius_sigmas`·√λ_max(Σ) of its mean. Returns (covered count,
/// assignment histogram).
pub fn mode_coverage(
    fake: &Tensor,
    spec: &GaussianMixtureSpec,
    radius_sigmas: f64,
    min_share: f64,
) -> Result<(usize, Vec<usize>)> {
    if !(radius_sigmas > 0.0) {
        return Err(Error::invalid(format!(
            "coverage radius must be positive, got {radius_sigmas} sigmas"
        )));
    }
    if !(min_share > 0.0 && min_share < 1.0) {
        return Err(Error::invalid(format!(
            "coverage share must lie in (0, 1), got {min_share}"
        )));
    }
    spec.validate()?;
    let d = spec.dim();
    let km = spec.n_components();
    if fake.leading() > 0 && fake.last_dim() != d {
        return Err(Error::ShapeMismatch {
            op: "mode_coverage",
            lhs: fake.shape().to_vec(),
            rhs: vec![d],
        });
    }
    let radii: Vec<f64> = spec
        .components
        .iter()
        .map(|c| radius_sigmas * largest_eigenvalue(&c.cov).max(0.0).sqrt())
        .collect();

    let n = fake.leading();
    let mut hist = vec![0usize; km];
    let mut within = vec![0usize; km];
    for t in 0..n {
        let x = fake.row(t);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in spec.components.iter().enumerate() {
            let dist: f64 = x
                .iter()
                .zip(&c.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best_d {
                best_d = dist;
                best = i;
            }
        }
        hist[best] += 1;
        if best_d.sqrt() <= radii[best] {
            within[best] += 1;
        }
    }
    let threshold = min_share * n as f64;
    let covered = within.iter().filter(|&&c| c as f64 >= threshold && c > 0).count();
    Ok((covered, hist))
}

/// Drop the ⌊drop_fraction·n⌋ rows of largest Euclidean norm (the least
/// likely rows under the standard normal), keeping survivors in input
/// order. Exact norm ties drop the higher row index first.
pub fn truncate_latents(z: &Tensor, drop_fraction: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::invalid(format!(
            "drop fraction must lie in [0, 1), got {drop_fraction}"
        )));
    }
    let n = z.leading();
    let d = z.last_dim();
    let drop = (drop_fraction * n as f64).floor() as usize;
    if drop == 0 {
        return Ok(z.clone());
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norm2 = |i: usize| -> f64 { z.row(i).iter().map(|v| v * v).sum() };
    order.sort_by(|&a, &b| norm2(b).total_cmp(&norm2(a)).then(b.cmp(&a)));
    let mut dropped = vec![false; n];
    for &i in &order[..drop] {
        dropped[i] = true;
    }
    let mut data = Vec::with_capacity((n - drop) * d);
    for i in 0..n {
        if !dropped[i] {
            data.extend_from_slice(z.row(i));
        }
    }
    Tensor::new(vec![n - drop, d], data)
}

/// Everything one evaluation snapshot measures.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frechet: f64,
    pub knn_real: f64,
    pub knn_fake: f64,
    pub knn_overall: f64,
    pub modes_covered: usize,
    pub samples_per_mode: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub n_real: usize,
    pub n_fake: usize,
    /// Fraction of least-likely latents discarded before generating.
    pub truncation: f64,
    pub k: usize,
    pub radius_sigmas: f64,
    pub min_share: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_real: 2000,
            n_fake: 2000,
            truncation: 0.25,
            k: 5,
            radius_sigmas: 3.0,
            min_share: 0.02,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 || self.n_fake == 0 {
            return Err(Error::invalid("evaluation needs non-empty real and fake sets"));
        }
        if !(0.0..1.0).contains(&self.truncation) {
            return Err(Error::invalid(format!(
                "truncation must lie in [0, 1), got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Evaluate a model against the ground truth: draw enough latents that
/// `n_fake` rows survive truncation, generate from the survivors, and run
/// the full metric suite against `n_real` fresh real samples.
pub fn evaluate_snapshot<R: Rng>(
    bundle: &ModelBundle,
    spec: &GaussianMixtureSpec,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<MetricReport> {
    opts.validate()?;
    let pool = (opts.n_fake as f64 / (1.0 - opts.truncation)).ceil() as usize + 8;
    let latents = bundle.draw_latents(pool, rng);
    let kept = truncate_latents(&latents, opts.truncation)?;
    let survivors = kept.leading().min(opts.n_fake);
    if survivors < opts.n_fake {
        return Err(Error::invalid("truncation left too few latents"));
    }
    let use_latents = Tensor::new(
        vec![opts.n_fake, kept.last_dim()],
        kept.data()[..opts.n_fake * kept.last_dim()].to_vec(),
    )?;
    let fake = bundle.sample_from_latents(&use_latents, rng)?.x;
    let real = spec.sample(opts.n_real, rng)?;

    let fit_real = fit_gaussian(&real)?;
    let fit_fake = fit_gaussian(&fake)?;
    let frechet = frechet_distance(&fit_real, &fit_fake)?;
    let (knn_real, knn_fake, knn_overall) = knn_two_sample(&real, &fake, opts.k)?;
    let (modes_covered, samples_per_mode) =
        mode_coverage(&fake, spec, opts.radius_sigmas, opts.min_share)?;
    Ok(MetricReport {
        frechet,
        knn_real,
        knn_fake,
        knn_overall,
        modes_covered,
        samples_per_mode,
    })
}

/// Render metric snapshots as the canonical CSV. Floats use Rust's shortest
/// round-trip formatting, so equal values always produce equal bytes.
pub fn metrics_csv(rows: &[(u64, MetricReport)]) -> String {
    let mut out = String::from("step,frechet,knn_real,knn_fake,knn_overall,modes_covered\n");
    for (step, r) in rows {
        out.push_str(&format!(
            "{step},{:?},{:?},{:?},{:?},{}\n",
            r.frechet, r.knn_real, r.knn_fake, r.knn_overall, r.modes_covered
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fit(mean: &[f64], cov: &[[f64; 2]; 2]) -> GaussianFit {
        GaussianFit {
            mean: mean.to_vec(),
            cov: cov.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn fit_gaussian_small_cases() {
        let two = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        let f = fit_gaussian(&two).unwrap();
        assert_eq!(f.mean, vec![1.0]);
        assert_eq!(f.cov, vec![vec![2.0]]);

        let constant = Tensor::full(vec![5, 2], 3.0);
        let f = fit_gaussian(&constant).unwrap();
        assert_eq!(f.cov, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);

        assert!(fit_gaussian(&Tensor::zeros(vec![2, 3])).is_err());
    }

    #[test]
    fn fit_gaussian_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(vec![5, 2], 1.5, &mut rng);
        let f = fit_gaussian(&x).unwrap();
        let mut mean = [0.0; 2];
        for t in 0..5 {
            for j in 0..2 {
                mean[j] += x.at2(t, j) / 5.0;
            }
        }
        for r in 0..2 {
            for s in 0..2 {
                let mut c = 0.0;
                for t in 0..5 {
                    c += (x.at2(t, r) - mean[r]) * (x.at2(t, s) - mean[s]);
                }
                c /= 4.0;
                assert!((f.cov[r][s] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frechet_closed_forms() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        let a = fit(&[0.0, 0.0], &eye);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);

        let b = fit(&[1.0, 0.0], &eye);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        // diag(4,1) vs I: (4+1) + (1+1) − 2(2+1) = 1.
        let c = fit(&[0.0, 0.0], &[[4.0, 0.0], [0.0, 1.0]]);
        assert!((frechet_distance(&a, &c).unwrap() - 1.0).abs() < 1e-12);

        // Symmetry.
        let d = fit(&[0.3, -0.2], &[[2.0, 0.5], [0.5, 1.0]]);
        let ab = frechet_distance(&c, &d).unwrap();
        let ba = frechet_distance(&d, &c).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn denman_beavers_matches_closed_form_on_block_diagonal() {
        // Embed two independent 2×2 problems in a 4×4 block-diagonal pair:
        // the trace of the square root is the sum of the 2×2 answers.
        let a2 = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
        let b2 = vec![vec![1.5, -0.2], vec![-0.2, 0.7]];
        let c2 = vec![vec![0.9, 0.1], vec![0.1, 1.1]];
        let d2 = vec![vec![1.2, 0.0], vec![0.0, 0.4]];
        let mut a4 = vec![vec![0.0; 4]; 4];
        let mut b4 = vec![vec![0.0; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                a4[i][j] = a2[i][j];
                a4[i + 2][j + 2] = c2[i][j];
                b4[i][j] = b2[i][j];
                b4[i + 2][j + 2] = d2[i][j];
            }
        }
        let expect = trace_sqrt_product(&a2, &b2).unwrap() + trace_sqrt_product(&c2, &d2).unwrap();
        let got = trace_sqrt_product(&a4, &b4).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn separated_clusters_are_perfectly_classified() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut real = Tensor::randn(vec![30, 2], 0.1, &mut rng);
        let mut fake = Tensor::randn(vec![30, 2], 0.1, &mut rng);
        for v in real.data_mut() {
            *v += 100.0;
        }
        for v in fake.data_mut() {
            *v -= 100.0;
        }
        let (r, f, o) = knn_two_sample(&real, &fake, 5).unwrap();
        assert_eq!((r, f, o), (1.0, 1.0, 1.0));
    }

    #[test]
    fn knn_matches_brute_force_on_interleaved_line() {
        // 6 real at x = 0..5, 6 fake at x = 0.5..5.5.
        let real = Tensor::new(vec![6, 1], (0..6).map(|i| i as f64).collect()).unwrap();
        let fake = Tensor::new(vec![6, 1], (0..6).map(|i| i as f64 + 0.5).collect()).unwrap();
        let got = knn_two_sample(&real, &fake, 5).unwrap();
        let oracle = brute_force_knn(&real, &fake, 5);
        assert_eq!(got, oracle);
    }

    #[test]
    fn knn_handles_coincident_points_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real = Tensor::randn(vec![10, 2], 1.0, &mut rng);
        let fake = real.clone();
        let got = knn_two_sample(&real, &fake, 5).unwrap();
        let oracle = brute_force_knn(&real, &fake, 5);
        assert_eq!(got, oracle);
        // Each point's nearest neighbor is its own duplicate from the other
        // set, and the remaining pairs tie-break toward the real index, so
        // every real point sees 2 real / 3 fake votes and every fake point
        // sees 3 real / 2 fake: both sides are classified as the other.
        assert_eq!(got, (0.0, 0.0, 0.0));
    }

    #[test]
    fn parallel_and_sequential_knn_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let real = Tensor::randn(vec![40, 2], 1.0, &mut rng);
        let fake = Tensor::randn(vec![35, 2], 1.2, &mut rng);
        assert_eq!(
            knn_two_sample(&real, &fake, 5).unwrap(),
            knn_two_sample_seq(&real, &fake, 5).unwrap()
        );
    }

    fn brute_force_knn(real: &Tensor, fake: &Tensor, k: usize) -> (f64, f64, f64) {
        let n = real.leading();
        let m = fake.leading();
        let d = real.last_dim();
        let mut all: Vec<Vec<f64>> = Vec::new();
        for t in 0..n {
            all.push(real.row(t).to_vec());
        }
        for t in 0..m {
            all.push(fake.row(t).to_vec());
        }
        let mut real_hits = 0;
        let mut fake_hits = 0;
        for i in 0..n + m {
            let mut dists: Vec<(f64, usize)> = (0..n + m)
                .filter(|&j| j != i)
                .map(|j| {
                    let dist: f64 = (0..d).map(|c| (all[i][c] - all[j][c]).powi(2)).sum();
                    (dist, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let votes = dists[..k].iter().filter(|&&(_, j)| j < n).count();
            let is_real = 2 * votes >= k;
            if i < n && is_real {
                real_hits += 1;
            }
            if i >= n && !is_real {
                fake_hits += 1;
            }
        }
        (
            real_hits as f64 / n as f64,
            fake_hits as f64 / m as f64,
            (real_hits + fake_hits) as f64 / (n + m) as f64,
        )
    }

    #[test]
    fn ground_truth_samples_cover_all_modes() {
        let spec = GaussianMixtureSpec::five_gaussians();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = spec.sample(10_000, &mut rng).unwrap();
        let (covered, hist) = mode_coverage(&x, &spec, 3.0, 0.02).unwrap();
        assert_eq!(covered, 5);
        assert_eq!(hist.iter().sum::<usize>(), 10_000);
    }

    #[test]
    fn collapsed_samples_cover_one_mode() {
        let spec = GaussianMixtureSpec::five_gaussians();
        let x = Tensor::full(vec![200, 2], 0.0);
        let (covered, hist) = mode_coverage(&x, &spec, 3.0, 0.02).unwrap();
        assert_eq!(covered, 1);
        assert_eq!(hist[0], 200);

        let empty = Tensor::zeros(vec![0, 2]);
        let (covered, _) = mode_coverage(&empty, &spec, 3.0, 0.02).unwrap();
        assert_eq!(covered, 0);
    }

    #[test]
    fn truncation_drops_the_largest_norms() {
        let z = Tensor::new(
            vec![8, 2],
            vec![
                0.1, 0.0, // 0: tiny
                5.0, 0.0, // 1: big
                0.0, 0.2, // 2
                0.0, -6.0, // 3: biggest
                1.0, 1.0, // 4
                -0.5, 0.5, // 5
                2.0, 2.0, // 6
                0.3, -0.3, // 7
            ],
        )
        .unwrap();
        let kept = truncate_latents(&z, 0.25).unwrap();
        assert_eq!(kept.shape(), &[6, 2]);
        // Rows 3 (norm 6) and 1 (norm 5) go; survivors keep input order.
        let expect: Vec<f64> = vec![0.1, 0.0, 0.0, 0.2, 1.0, 1.0, -0.5, 0.5, 2.0, 2.0, 0.3, -0.3];
        assert_eq!(kept.data(), &expect[..]);

        let same = truncate_latents(&z, 0.0).unwrap();
        assert_eq!(same.data(), z.data());
    }

    #[test]
    fn truncation_survivor_norms_are_bounded_by_dropped_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::randn(vec![100, 2], 1.0, &mut rng);
        let kept = truncate_latents(&z, 0.37).unwrap();
        assert_eq!(kept.leading(), 100 - 37);
        let norm = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let max_kept = (0..kept.leading()).map(|i| norm(kept.row(i))).fold(0.0, f64::max);
        let mut all: Vec<f64> = (0..100).map(|i| norm(z.row(i))).collect();
        all.sort_by(f64::total_cmp);
        let min_dropped = all[100 - 37];
        assert!(max_kept <= min_dropped);
    }

    #[test]
    fn metrics_csv_round_trips_through_parse() {
        let rows = vec![
            (
                100,
                MetricReport {
                    frechet: 0.12345678901234567,
                    knn_real: 0.55,
                    knn_fake: 0.6000000000000001,
                    knn_overall: 0.575,
                    modes_covered: 5,
                    samples_per_mode: vec![1, 2, 3, 4, 5],
                },
            ),
            (
                200,
                MetricReport {
                    frechet: 3.0,
                    knn_real: 1.0,
                    knn_fake: 0.0,
                    knn_overall: 0.5,
                    modes_covered: 1,
                    samples_per_mode: vec![],
                },
            ),
        ];
        let csv = metrics_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,frechet,knn_real,knn_fake,knn_overall,modes_covered"
        );
        for (row, line) in rows.iter().zip(lines) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0].parse::<u64>().unwrap(), row.0);
            assert_eq!(fields[1].parse::<f64>().unwrap(), row.1.frechet);
            assert_eq!(fields[2].parse::<f64>().unwrap(), row.1.knn_real);
            assert_eq!(fields[3].parse::<f64>().unwrap(), row.1.knn_fake);
            assert_eq!(fields[4].parse::<f64>().unwrap(), row.1.knn_overall);
            assert_eq!(fields[5].parse::<usize>().unwrap(), row.1.modes_covered);
        }
    }

    #[test]
    fn snapshot_evaluation_runs_end_to_end() {
        use crate::models::{Architecture, ModelSpec};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bundle = ModelSpec::new(Architecture::Hmog, 2, 2).build(&mut rng).unwrap();
        let spec = GaussianMixtureSpec::five_gaussians();
        let opts = EvalOptions { n_real: 64, n_fake: 64, ..Default::default() };
        let mut eval_rng = ChaCha8Rng::seed_from_u64(7);
        let report = evaluate_snapshot(&bundle, &spec, &opts, &mut eval_rng).unwrap();
        assert!(report.frechet.is_finite() && report.frechet >= 0.0);
        assert!(report.modes_covered <= 5);
        assert_eq!(report.samples_per_mode.iter().sum::<usize>(), 64);

        // Determinism of the whole snapshot path.
        let mut eval_rng2 = ChaCha8Rng::seed_from_u64(7);
        let again = evaluate_snapshot(&bundle, &spec, &opts, &mut eval_rng2).unwrap();
        assert_eq!(report, again);
    }
}
