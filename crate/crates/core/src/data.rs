//! Ground-truth toy distributions: Gaussian mixtures described in a small
//! TOML spec, sampled via per-component Cholesky factors, plus the
//! standard-normal latent source.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Row-major square covariance, symmetric PSD.
    pub cov: Vec<Vec<f64>>,
    pub weight: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub components: Vec<GaussianComponent>,
}

/// Lower-triangular Cholesky factor tolerating zero pivots, so singular but
/// PSD covariances (e.g. a flat component) remain usable for sampling.
fn cholesky(cov: &[Vec<f64>], ctx: &str) -> Result<Vec<Vec<f64>>> {
    let d = cov.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = cov[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s < -1e-10 {
                    return Err(Error::NotPsd(format!(
                        "{ctx}: pivot {i} is {s:.3e} after elimination"
                    )));
                }
                l[i][j] = s.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = s / l[j][j];
            } else if s.abs() > 1e-10 {
                return Err(Error::NotPsd(format!(
                    "{ctx}: zero pivot {j} with nonzero coupling {s:.3e}"
                )));
            }
        }
    }
    Ok(l)
}

impl GaussianMixtureSpec {
    /// The default five-mode layout: one mode at the origin and four at
    /// (±4, 0), (0, ±4), all with covariance 0.25·I and weight 0.2 — five
    /// well-separated clusters in a plus-sign arrangement.
    pub fn five_gaussians() -> Self {
        let spread = 4.0;
        let components = [(0.0, 0.0), (spread, 0.0), (-spread, 0.0), (0.0, spread), (0.0, -spread)]
            .into_iter()
            .map(|(x, y)| GaussianComponent {
                mean: vec![x, y],
                cov: vec![vec![0.25, 0.0], vec![0.0, 0.25]],
                weight: 0.2,
            })
            .collect();
        GaussianMixtureSpec { components }
    }

    pub fn from_toml_str(s: &str, origin: &str) -> Result<Self> {
        let spec: GaussianMixtureSpec = toml::from_str(s)
            .map_err(|e| Error::config(origin, format!("mixture spec does not parse: {e}")))?;
        spec.validate().map_err(|e| Error::config(origin, e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("mixture specs always serialize")
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("component means must be non-empty"));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::invalid(format!(
                    "component {i} has mean of length {} but component 0 has {d}",
                    c.mean.len()
                )));
            }
            if c.cov.len() != d || c.cov.iter().any(|row| row.len() != d) {
                return Err(Error::invalid(format!("component {i} covariance is not {d}x{d}")));
            }
            for r in 0..d {
                for s in 0..r {
                    if (c.cov[r][s] - c.cov[s][r]).abs() > 1e-12 {
                        return Err(Error::NotPsd(format!(
                            "component {i} covariance is asymmetric at ({r},{s})"
                        )));
                    }
                }
            }
            cholesky(&c.cov, &format!("component {i}"))?;
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "component {i} weight must be non-negative, got {}",
                    c.weight
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("component weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Draw n rows; each picks a component by weight, then a Gaussian draw
    /// through that component's Cholesky factor.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        Ok(self.sample_labeled(n, rng)?.0)
    }

    /// As `sample`, also returning each row's component index.
    pub fn sample_labeled<R: Rng>(&self, n: usize, rng: &mut R) -> Result<(Tensor, Vec<usize>)> {
        if n == 0 {
            return Err(Error::EmptyBatch("sample_mixture"));
        }
        self.validate()?;
        let d = self.dim();
        let factors: Vec<Vec<Vec<f64>>> = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| cholesky(&c.cov, &format!("component {i}")))
            .collect::<Result<_>>()?;

        let mut data = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        for t in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut which = self.components.len() - 1;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    which = i;
                    break;
                }
            }
            labels.push(which);
            let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let comp = &self.components[which];
            let l = &factors[which];
            for r in 0..d {
                let mut x = comp.mean[r];
                for k in 0..=r {
                    x += l[r][k] * eps[k];
                }
                data[t * d + r] = x;
            }
        }
        Ok((Tensor::new(vec![n, d], data)?, labels))
    }
}

/// Latent noise source: i.i.d. standard normal rows.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
pub struct LatentSpec {
    pub dim: usize,
}

impl LatentSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        Ok(LatentSpec { dim })
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::EmptyBatch("sample_latent"));
        }
        Ok(Tensor::randn(vec![n, self.dim], 1.0, rng))
    }
}
