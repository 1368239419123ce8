//! Deterministic map-reduce over Monte Carlo paths.
//!
//! Paths are mapped in parallel but collected in path order, and every
//! floating-point total is formed by a fixed pairwise tree. The result is
//! therefore bitwise independent of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Runs `f` for every path index and returns the results in index order.
pub fn map_paths<T, F>(n_paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// Pairwise (tree) summation with a fixed split rule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Mean and standard error of `samples`. The standard error of a sample
    /// mean coincides with its leave-one-out jackknife estimate.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(samples) / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n as f64 - 1.0);
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.stderr
        }
    }
}
