use std::collections::HashMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia decrease falls to or below this.
    pub tol: f64,
    pub rng_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 3,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            rng_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Labels in `0..k`, numbered by descending cluster size.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub best_restart: usize,
    /// Final inertia of every restart.
    pub restart_inertias: Vec<f64>,
    /// Per-iteration inertia of every restart.
    pub inertia_traces: Vec<Vec<f64>>,
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances of each point to its assigned centroid.
pub fn inertia(data: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter().zip(labels).map(|(x, &l)| sq_dist(x, &centroids[l])).sum()
}

fn plus_plus_seeds(data: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid.
            rng.random_range(0..n)
        };
        centroids.push(data[idx].clone());
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn means(data: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = data[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

fn lloyd(data: &[Vec<f64>], cfg: &ClusterConfig, restart: usize) -> Run {
    let k = cfg.k;
    let mut rng = rng::derived(cfg.rng_seed, restart as u64);
    let mut centroids = plus_plus_seeds(data, k, &mut rng);
    let mut labels = vec![0usize; data.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut dists = vec![0.0; data.len()];
        for (i, x) in data.iter().enumerate() {
            let (j, d) = nearest(x, &centroids);
            labels[i] = j;
            dists[i] = d;
        }
        // Reseed empty clusters with the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..data.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= k leaves a shared cluster");
            log::debug!("restart {restart}: cluster {empty} empty, reseeded with point {far}");
            labels[far] = empty;
            dists[far] = 0.0;
            centroids[empty] = data[far].clone();
        }
        let (new_centroids, _) = means(data, &labels, k);
        centroids = new_centroids;
        let current = inertia(data, &labels, &centroids);
        let previous = trace.last().copied();
        trace.push(current);
        if let Some(prev) = previous {
            if prev - current <= cfg.tol * prev {
                converged = true;
                break;
            }
        }
        if current == 0.0 {
            converged = true;
            break;
        }
    }

    let inertia = *trace.last().expect("at least one iteration");
    Run {
        labels,
        centroids,
        inertia,
        iterations,
        converged,
        trace,
    }
}

/// k-means with k-means++ seeding and independent restarts.
pub fn kmeans(data: &[Vec<f64>], cfg: &ClusterConfig) -> Result<ClusterResult, ClusterError> {
    if cfg.k == 0 || cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(ClusterError::InvalidConfig(
            "k, restarts and max_iter must be at least 1".into(),
        ));
    }
    if data.len() < cfg.k {
        return Err(ClusterError::TooFewPoints {
            min: cfg.k,
            got: data.len(),
        });
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(ClusterError::InvalidConfig("points must share a positive dimension".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }

    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| lloyd(data, cfg, r))
        .collect();
    let best_restart = (0..runs.len())
        .min_by(|&a, &b| runs[a].inertia.total_cmp(&runs[b].inertia).then(a.cmp(&b)))
        .expect("restarts >= 1");
    let restart_inertias = runs.iter().map(|r| r.inertia).collect();
    let inertia_traces = runs.iter().map(|r| r.trace.clone()).collect();
    let best = runs.into_iter().nth(best_restart).expect("index in range");

    // Canonical labels: descending size, ties by first appearance.
    let mut counts = vec![0usize; cfg.k];
    best.labels.iter().for_each(|&l| counts[l] += 1);
    let first: Vec<usize> = (0..cfg.k)
        .map(|j| best.labels.iter().position(|&l| l == j).unwrap_or(usize::MAX))
        .collect();
    let mut order: Vec<usize> = (0..cfg.k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(first[a].cmp(&first[b])));
    let mut relabel = vec![0; cfg.k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }

    Ok(ClusterResult {
        assignments: best.labels.iter().map(|&l| relabel[l]).collect(),
        centroids: order.iter().map(|&old| best.centroids[old].clone()).collect(),
        inertia: best.inertia,
        iterations: best.iterations,
        converged: best.converged,
        best_restart,
        restart_inertias,
        inertia_traces,
    })
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
