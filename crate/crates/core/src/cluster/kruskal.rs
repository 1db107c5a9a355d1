use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::special::chi_square_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwResult {
    pub subscale: String,
    #[serde(rename = "H")]
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub group_sizes: Vec<usize>,
}

/// Kruskal-Wallis H test with mid-ranks and tie correction.
///
/// Empty groups are not allowed. If every observation is equal the statistic
/// is undefined; H = 0 and p = 1 are returned.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KwResult, ClusterError> {
    if groups.len() < 2 {
        return Err(ClusterError::InsufficientData(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(ClusterError::InsufficientData(format!("group {i} is empty")));
    }
    let mut pooled: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, xs)| xs.iter().map(move |&x| (x, g)))
        .collect();
    if pooled.iter().any(|(x, _)| !x.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let n = pooled.len();
    if n < 3 {
        return Err(ClusterError::InsufficientData(format!("need at least 3 observations, got {n}")));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &(_, g) in &pooled[i..=j] {
            rank_sums[g] += mid;
        }
        tie_sum += t * t * t - t;
        i = j + 1;
    }

    let nf = n as f64;
    let df = groups.len() - 1;
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);
    let group_sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    if correction <= 0.0 {
        return Ok(KwResult {
            subscale: String::new(),
            h: 0.0,
            df,
            p: 1.0,
            group_sizes,
        });
    }
    let centre = (nf + 1.0) / 2.0;
    let raw: f64 = rank_sums
        .iter()
        .zip(&group_sizes)
        .map(|(&r, &ni)| {
            let ni = ni as f64;
            ni * (r / ni - centre).powi(2)
        })
        .sum::<f64>()
        * 12.0
        / (nf * (nf + 1.0));
    let h = (raw / correction).max(0.0);
    Ok(KwResult {
        subscale: String::new(),
        h,
        df,
        p: chi_square_sf(h, df as f64),
        group_sizes,
    })
}
