//! Synthetic-respondent psychometrics.
//!
//! Generates LLM personas, administers the 28-item Academic Motivation Scale
//! to them, and checks the resulting data with parallel analysis, exploratory
//! and confirmatory factor analysis, embedding clustering and Kruskal-Wallis
//! tests. All heavy numerics are deterministic given a seed.

pub mod cluster;
pub mod factor;
pub mod linalg;
pub mod optim;
pub mod persona;
pub mod pipeline;
pub mod rng;
pub mod scale;
pub mod special;
pub mod synth;
pub mod transport;
