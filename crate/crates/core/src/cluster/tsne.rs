use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::linalg::sym_eigen_desc;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Reduce to this many principal components first when the input is
    /// wider. Zero disables the reduction.
    pub pca_predim: usize,
    pub rng_seed: u64,
    /// Record the KL divergence every this many iterations.
    pub kl_every: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            pca_predim: 50,
            rng_seed: 42,
            kl_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub layout: Vec<[f64; 2]>,
    /// (iteration, KL(P || Q)) pairs; always includes the end of the
    /// exaggeration phase and the final iteration.
    pub kl_trace: Vec<(usize, f64)>,
}

impl TsneResult {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.iter().find(|(i, _)| *i == iteration).map(|(_, v)| *v)
    }
}

/// Project centred rows onto their leading `dims` principal components using
/// a seeded randomized range finder. Rows are returned unchanged when they
/// are already at most `dims` wide.
pub fn pca_reduce(data: &[Vec<f64>], dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    if dims == 0 || d <= dims {
        return data.to_vec();
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| data[i][j]);
    for j in 0..d {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let width = (dims + 10).min(n).min(d);
    let mut r = rng::seeded(seed);
    let omega = DMatrix::from_fn(d, width, |_, _| StandardNormal.sample(&mut r));
    let xt = x.transpose();
    let mut q = (&x * omega).qr().q();
    for _ in 0..3 {
        let z = (&xt * &q).qr().q();
        q = (&x * z).qr().q();
    }
    let b = q.transpose() * &x;
    let (values, vectors) = sym_eigen_desc(&(&b * b.transpose()));
    let keep = dims.min(width);
    let scores = &q * vectors.columns(0, keep);
    (0..n)
        .map(|i| (0..keep).map(|j| scores[(i, j)] * values[j].max(0.0).sqrt()).collect())
        .collect()
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Symmetrized input affinities with per-point bandwidths matched to the
/// target perplexity.
fn joint_probabilities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        // Shift by the smallest off-diagonal distance to avoid underflow.
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let mut probs = vec![0.0; n];
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += probs[j];
                weighted += (row[j] - dmin) * probs[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        let sum: f64 = probs.iter().sum();
        for j in 0..n {
            p[i * n + j] = probs[j] / sum;
        }
    }
    let denom = 2.0 * n as f64;
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / denom).max(1e-12);
        }
        joint[i * n + i] = 0.0;
    }
    joint
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            z += 2.0 / (1.0 + dist2(&y[i], &y[j]));
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (1.0 / (1.0 + dist2(&y[i], &y[j])) / z).max(1e-12);
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Exact t-SNE to two dimensions.
pub fn tsne(data: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult, ClusterError> {
    let n = data.len();
    if n < 4 {
        return Err(ClusterError::TooFewPoints { min: 4, got: n });
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(ClusterError::InvalidConfig("points must share a positive dimension".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let max = (n as f64 - 1.0) / 3.0;
    if !(cfg.perplexity > 0.0 && cfg.perplexity < max) {
        return Err(ClusterError::PerplexityTooLarge {
            perplexity: cfg.perplexity,
            n,
            max,
        });
    }
    if cfg.iterations == 0 || cfg.learning_rate <= 0.0 || cfg.kl_every == 0 {
        return Err(ClusterError::InvalidConfig(
            "iterations, learning_rate and kl_every must be positive".into(),
        ));
    }

    let x = pca_reduce(data, cfg.pca_predim, cfg.rng_seed);
    let p = joint_probabilities(&squared_distances(&x), n, cfg.perplexity);

    let mut r = rng::derived(cfg.rng_seed, 1);
    let init = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut r), init.sample(&mut r)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_trace = Vec::new();

    for iter in 1..=cfg.iterations {
        let early = iter <= cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                z += 2.0 / (1.0 + dist2(&y[i], &y[j]));
            }
        }
        grad.iter_mut().for_each(|g| *g = [0.0; 2]);
        for i in 0..n {
            for j in (i + 1)..n {
                let num = 1.0 / (1.0 + dist2(&y[i], &y[j]));
                let coeff = 4.0 * (exaggeration * p[i * n + j] - num / z) * num;
                for c in 0..2 {
                    let f = coeff * (y[i][c] - y[j][c]);
                    grad[i][c] += f;
                    grad[j][c] -= f;
                }
            }
        }
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(0.01)
                };
                update[i][c] = momentum * update[i][c] - cfg.learning_rate * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        for c in 0..2 {
            let m = y.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[c] -= m);
        }

        if iter % cfg.kl_every == 0 || iter == cfg.exaggeration_iters || iter == cfg.iterations {
            let kl = kl_divergence(&p, &y);
            log::debug!("t-SNE iteration {iter}: KL = {kl:.6}");
            kl_trace.push((iter, kl));
        }
    }

    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(TsneResult { layout: y, kl_trace })
}
