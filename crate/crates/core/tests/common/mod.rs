//! Oracles shared by the integration suites. Everything here is written
//! independently of the production code paths it checks: the trace oracle
//! goes through a symmetric eigendecomposition (Jacobi with accumulated
//! rotations), never through the closed-form 2×2 route or the square-root
//! iteration, and the k-NN oracle is a direct quadratic re-statement of
//! the classification rule.

use hmog::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Full eigendecomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = sym.len();
    let mut a = sym.to_vec();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
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
                for row in v.iter_mut() {
                    let vip = row[p];
                    let viq = row[q];
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i][i]).collect(), v)
}

/// Symmetric PSD square root via eigendecomposition.
pub fn sqrtm_psd(sym: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = sym.len();
    let (w, v) = jacobi_eigen(sym);
    let roots: Vec<f64> = w.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += v[i][k] * roots[k] * v[j][k];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Oracle for Tr((Σ₁Σ₂)^{1/2}): the eigenvalues of Σ₁Σ₂ equal those of the
/// symmetric Σ₁^{1/2} Σ₂ Σ₁^{1/2}, so the trace is Σᵢ √λᵢ of that matrix.
pub fn trace_sqrt_product_oracle(cov_a: &[Vec<f64>], cov_b: &[Vec<f64>]) -> f64 {
    let d = cov_a.len();
    let ra = sqrtm_psd(cov_a);
    let mut m = vec![vec![0.0; d]; d];
    // m = ra · cov_b · ra, symmetrized against rounding.
    let mut tmp = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += ra[i][k] * cov_b[k][j];
            }
            tmp[i][j] = s;
        }
    }
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += tmp[i][k] * ra[k][j];
            }
            m[i][j] = s;
        }
    }
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    let (w, _) = jacobi_eigen(&m);
    w.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

/// Random PSD matrix R·Rᵀ (+ `ridge`·I), with N(0,1) entries in R.
pub fn random_psd<R: Rng>(d: usize, ridge: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let r: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..d {
                s += r[i][k] * r[j][k];
            }
            if i == j {
                s += ridge;
            }
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    a
}

/// Rank-one PSD matrix r·rᵀ — exactly singular.
#[allow(dead_code)] // not every test target exercises the singular case
pub fn rank_one_psd<R: Rng>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let r: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    (0..d)
        .map(|i| (0..d).map(|j| r[i] * r[j]).collect())
        .collect()
}

/// Quadratic restatement of the leave-one-out k-NN two-sample test:
/// pooled points, full distance matrix, sort by (squared distance, index),
/// majority vote with ties to "real".
pub fn brute_force_knn(real: &Tensor, fake: &Tensor, k: usize) -> (f64, f64, f64) {
    let n = real.leading();
    let m = fake.leading();
    let d = real.last_dim();
    let mut all: Vec<&[f64]> = Vec::with_capacity(n + m);
    for t in 0..n {
        all.push(real.row(t));
    }
    for t in 0..m {
        all.push(fake.row(t));
    }
    let mut real_hits = 0usize;
    let mut fake_hits = 0usize;
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
        let classified_real = 2 * votes >= k;
        if i < n && classified_real {
            real_hits += 1;
        }
        if i >= n && !classified_real {
            fake_hits += 1;
        }
    }
    (
        real_hits as f64 / n as f64,
        fake_hits as f64 / m as f64,
        (real_hits + fake_hits) as f64 / (n + m) as f64,
    )
}
