//! Diagonal-covariance Gaussian mixtures: likelihood, EM, MAP adaptation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Gender;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub label: String,
    pub gender: Option<Gender>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    /// log weight + Gaussian normalizer per component
    log_consts: Vec<f64>,
    inv_vars: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn new(
        label: impl Into<String>,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::CorruptModel(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.len().max(v.len()),
                });
            }
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::CorruptModel("non-positive variance".into()));
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::CorruptModel("negative weight".into()));
        }
        let mut model = Self {
            label: label.into(),
            gender: None,
            weights,
            means,
            variances,
            log_consts: Vec::new(),
            inv_vars: Vec::new(),
        };
        model.refresh();
        Ok(model)
    }

    pub fn with_gender(mut self, gender: Gender) -> Self {
        self.gender = Some(gender);
        self
    }

    fn refresh(&mut self) {
        let dim = self.dim() as f64;
        self.inv_vars = self
            .variances
            .iter()
            .map(|v| v.iter().map(|x| 1.0 / x).collect())
            .collect();
        self.log_consts = self
            .weights
            .iter()
            .zip(&self.variances)
            .map(|(w, v)| w.ln() - 0.5 * (dim * LN_2PI + v.iter().map(|x| x.ln()).sum::<f64>()))
            .collect();
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Payload size in bytes when serialized as 32-bit floats.
    pub fn parameter_bytes(&self) -> usize {
        4 * self.n_components() * (1 + 2 * self.dim())
    }

    fn component_logs(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let m = &self.means[k];
            let iv = &self.inv_vars[k];
            let mut q = 0.0;
            for d in 0..x.len() {
                let e = x[d] - m[d];
                q += e * e * iv[d];
            }
            *o = self.log_consts[k] - 0.5 * q;
        }
    }

    /// log p(x) for one observation; caller guarantees the dimension.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        self.component_logs(x, &mut buf);
        log_sum_exp(&buf)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Sum over observations of the mixture log density.
    pub fn log_likelihood(&self, observations: &[Vec<f64>]) -> Result<f64> {
        let mut buf = vec![0.0; self.n_components()];
        let mut total = 0.0;
        for x in observations {
            self.check_dim(x)?;
            self.component_logs(x, &mut buf);
            total += log_sum_exp(&buf);
        }
        Ok(total)
    }

    /// Per-component posteriors of `x`, written into `out`; returns log p(x).
    fn posteriors(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.component_logs(x, out);
        let lse = log_sum_exp(out);
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
        }
        lse
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood improvement below which training stops.
    pub tol: f64,
    /// Variance floor as a share of the global per-dimension variance.
    pub variance_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGmm {
    pub model: GmmModel,
    /// Training log-likelihood before each M-step, then after the last one.
    pub history: Vec<f64>,
}

fn global_stats(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in data {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[idx].clone();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Maximum-likelihood diagonal GMM by EM from a k-means++ start.
pub fn train_em(
    label: impl Into<String>,
    data: &[Vec<f64>],
    n_components: usize,
    seed: u64,
    cfg: &EmConfig,
) -> Result<TrainedGmm> {
    if n_components == 0 || data.len() < 10 * n_components {
        return Err(Error::InsufficientData(format!(
            "{} observations for {} components (need at least {})",
            data.len(),
            n_components,
            10 * n_components
        )));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    if data.iter().all(|x| x == &data[0]) {
        return Err(Error::DegenerateData("all observations are identical".into()));
    }
    let (_, gvar) = global_stats(data);
    let floor: Vec<f64> = gvar
        .iter()
        .map(|v| (cfg.variance_floor * v).max(f64::MIN_POSITIVE.sqrt()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = kmeans_pp(data, n_components, &mut rng);
    let variances = vec![gvar.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect(); n_components];
    let weights = vec![1.0 / n_components as f64; n_components];
    let mut model = GmmModel::new(label, weights, means, variances)?;

    let n = data.len() as f64;
    let mut history = Vec::new();
    let mut post = vec![0.0; n_components];
    for _ in 0..cfg.max_iter {
        let mut occ = vec![0.0; n_components];
        let mut sum_x = vec![vec![0.0; dim]; n_components];
        let mut sum_x2 = vec![vec![0.0; dim]; n_components];
        let mut ll = 0.0;
        for x in data {
            ll += model.posteriors(x, &mut post);
            for k in 0..n_components {
                let g = post[k];
                if g == 0.0 {
                    continue;
                }
                occ[k] += g;
                for d in 0..dim {
                    sum_x[k][d] += g * x[d];
                    sum_x2[k][d] += g * x[d] * x[d];
                }
            }
        }
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) <= cfg.tol * prev.abs());
        history.push(ll);
        if converged {
            return Ok(TrainedGmm { model, history });
        }

        for k in 0..n_components {
            // an empty component keeps its parameters; its weight goes to zero
            if occ[k] > 1e-10 {
                for d in 0..dim {
                    let m = sum_x[k][d] / occ[k];
                    let v = (sum_x2[k][d] / occ[k] - m * m).max(floor[d]);
                    model.means[k][d] = m;
                    model.variances[k][d] = v;
                }
            }
            model.weights[k] = occ[k] / n;
        }
        model.refresh();
    }
    history.push(model.log_likelihood(data)?);
    Ok(TrainedGmm { model, history })
}

/// Means-only MAP adaptation of `background` toward `data`.
pub fn map_adapt(
    background: &GmmModel,
    label: impl Into<String>,
    data: &[Vec<f64>],
    relevance: f64,
) -> Result<GmmModel> {
    let k = background.n_components();
    let dim = background.dim();
    let mut occ = vec![0.0; k];
    let mut sum_x = vec![vec![0.0; dim]; k];
    let mut post = vec![0.0; k];
    for x in data {
        background.check_dim(x)?;
        background.posteriors(x, &mut post);
        for c in 0..k {
            occ[c] += post[c];
            for d in 0..dim {
                sum_x[c][d] += post[c] * x[d];
            }
        }
    }
    let means = (0..k)
        .map(|c| {
            if occ[c] <= 0.0 {
                return background.means[c].clone();
            }
            let alpha = occ[c] / (occ[c] + relevance);
            (0..dim)
                .map(|d| alpha * (sum_x[c][d] / occ[c]) + (1.0 - alpha) * background.means[c][d])
                .collect()
        })
        .collect();
    let mut model = GmmModel::new(
        label,
        background.weights.clone(),
        means,
        background.variances.clone(),
    )?;
    model.gender = background.gender;
    Ok(model)
}

/// Log-density of a single diagonal Gaussian, exposed for oracles.
pub fn gaussian_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_2pi_constant() {
        assert!((LN_2PI - (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
