use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{kruskal_wallis, ClusterError, KwResult};
use crate::scale::{Subscale, SubscaleScores};
use crate::special::quantile_sorted;

/// Boxplot summary of one cluster on one subscale. Quartiles are type-7
/// sample quantiles; whiskers reach the most extreme observations within
/// 1.5 IQR of the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub cluster: usize,
    pub subscale: Subscale,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub outliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub boxes: Vec<BoxStats>,
    /// One test per subscale; empty when fewer than two clusters exist.
    pub tests: Vec<KwResult>,
}

pub fn boxplot_stats(values: &[f64]) -> (f64, f64, f64, f64, f64, Vec<f64>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v)).collect();
    let lo = inside.first().copied().unwrap_or(q1);
    let hi = inside.last().copied().unwrap_or(q3);
    let outliers = sorted.into_iter().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect();
    (median, q1, q3, lo, hi, outliers)
}

/// Per-cluster boxplot data and per-subscale Kruskal-Wallis tests.
///
/// `assignments` pairs persona ids with cluster labels in `0..k`; the set of
/// ids must equal the set of scored personas.
pub fn subgroup_summary(
    scores: &[SubscaleScores],
    assignments: &[(u32, usize)],
) -> Result<SubgroupSummary, ClusterError> {
    let by_id: HashMap<u32, usize> = assignments.iter().copied().collect();
    if by_id.len() != assignments.len() {
        return Err(ClusterError::IdMismatch("duplicate persona id in assignments".into()));
    }
    if scores.len() != by_id.len() {
        return Err(ClusterError::IdMismatch(format!(
            "{} scored personas, {} assigned",
            scores.len(),
            by_id.len()
        )));
    }
    if scores.is_empty() {
        return Err(ClusterError::InsufficientData("no personas".into()));
    }
    let k = by_id.values().copied().max().expect("non-empty") + 1;
    let mut members: Vec<Vec<&SubscaleScores>> = vec![Vec::new(); k];
    for s in scores {
        let &c = by_id
            .get(&s.persona_id)
            .ok_or_else(|| ClusterError::IdMismatch(format!("persona {} has no cluster", s.persona_id)))?;
        members[c].push(s);
    }

    let mut boxes = Vec::new();
    let mut tests = Vec::new();
    for sub in Subscale::ALL {
        let groups: Vec<Vec<f64>> = members
            .iter()
            .map(|m| m.iter().map(|s| s.get(sub)).collect())
            .collect();
        for (c, g) in groups.iter().enumerate().filter(|(_, g)| !g.is_empty()) {
            let (median, q1, q3, lo_whisker, hi_whisker, outliers) = boxplot_stats(g);
            boxes.push(BoxStats {
                cluster: c,
                subscale: sub,
                n: g.len(),
                median,
                q1,
                q3,
                lo_whisker,
                hi_whisker,
                outliers,
            });
        }
        let non_empty: Vec<Vec<f64>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        if non_empty.len() >= 2 {
            let mut test = kruskal_wallis(&non_empty)?;
            test.subscale = sub.code().to_string();
            tests.push(test);
        }
    }
    if tests.is_empty() {
        log::warn!("fewer than two non-empty clusters; no subgroup tests run");
    }
    Ok(SubgroupSummary { boxes, tests })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(id: u32, v: f64) -> SubscaleScores {
        SubscaleScores {
            persona_id: id,
            scores: [v; 7],
        }
    }

    #[test]
    fn constant_single_cluster() {
        let s: Vec<_> = (0..5).map(|i| scores(i, 4.25)).collect();
        let a: Vec<_> = (0..5).map(|i| (i, 0)).collect();
        let out = subgroup_summary(&s, &a).unwrap();
        assert_eq!(out.boxes.len(), 7);
        for b in &out.boxes {
            assert_eq!((b.median, b.q1, b.q3), (4.25, 4.25, 4.25));
            assert!(b.outliers.is_empty());
        }
        assert!(out.tests.is_empty());
    }

    #[test]
    fn whiskers_and_outliers() {
        // Type-7 quartiles 2.25 and 4.75, fences -1.5 and 8.5.
        let (median, q1, q3, lo, hi, out) = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 20.0]);
        assert_eq!(median, 3.5);
        assert_eq!((q1, q3), (2.25, 4.75));
        assert_eq!((lo, hi), (1.0, 5.0));
        assert_eq!(out, vec![20.0]);
    }

    #[test]
    fn seven_tests_for_two_clusters() {
        let s: Vec<_> = (0..10).map(|i| scores(i, if i < 5 { 2.0 } else { 6.0 } + f64::from(i) * 0.01)).collect();
        let a: Vec<_> = (0..10).map(|i| (i, usize::from(i >= 5))).collect();
        let out = subgroup_summary(&s, &a).unwrap();
        assert_eq!(out.tests.len(), 7);
        assert_eq!(out.tests[0].subscale, "IMTK");
        assert!(out.tests.iter().all(|t| t.p < 0.05));
        assert_eq!(out.boxes.len(), 14);
    }

    #[test]
    fn id_mismatch() {
        let s = vec![scores(1, 1.0), scores(2, 2.0)];
        assert!(matches!(
            subgroup_summary(&s, &[(1, 0), (3, 1)]),
            Err(ClusterError::IdMismatch(_))
        ));
        assert!(matches!(subgroup_summary(&s, &[(1, 0)]), Err(ClusterError::IdMismatch(_))));
    }
}
