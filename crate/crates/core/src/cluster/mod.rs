//! Embedding clustering, t-SNE layout and subgroup tests.

mod kmeans;
mod kruskal;
mod summary;
mod tsne;

pub use kmeans::{adjusted_rand_index, inertia, kmeans, ClusterConfig, ClusterResult};
pub use kruskal::{kruskal_wallis, KwResult};
pub use summary::{boxplot_stats, subgroup_summary, BoxStats, SubgroupSummary};
pub use tsne::{pca_reduce, tsne, TsneConfig, TsneResult};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("perplexity {perplexity} too large for {n} points (must be below {max})")]
    PerplexityTooLarge { perplexity: f64, n: usize, max: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("persona ids do not match: {0}")]
    IdMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite values")]
    NonFinite,
}
