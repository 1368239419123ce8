//! Regime-switching diffusions `dX = b(X, Λ) dt + σ(X, Λ) dW` and their
//! Euler–Maruyama simulation under a coupled pair of chains.

mod brownian;
mod models;
mod simulate;

pub use brownian::{BrownianPath, PathPoint};
pub use models::{BoundedTanh, ModelSpec, SwitchingOu, MODEL_NAMES};
pub use simulate::{
    collect_paths, lemma1_bound, second_moment_guard, simulate_pair, simulate_pair_on, strong_error_curve,
    GuardReport, StrongErrorPoint, TrajectoryPair, MAX_FAILURE_RATE,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skorokhod::SkorokhodError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("state became non-finite at step {step} (t = {time}, regime {regime})")]
    NonFiniteState { step: usize, time: f64, regime: usize },
    #[error("{failed} of {total} paths failed, above the allowed fraction")]
    TooManyFailures { failed: usize, total: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model has {model} regimes but the chain has {chain}")]
    RegimeMismatch { model: usize, chain: usize },
    #[error("unknown model {name:?}; known models: {known}")]
    UnknownModel { name: String, known: String },
    #[error(transparent)]
    Chain(#[from] SkorokhodError),
}

pub type Result<T> = std::result::Result<T, SdeError>;

/// Declared regularity of a coefficient pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    /// One-sided Lipschitz constants `κ_i`.
    pub kappa: Option<Vec<f64>>,
    /// Linear-growth constant `K`.
    pub growth: Option<f64>,
    /// Whether `|b|² ≤ K` and `‖σ‖²_HS ≤ K` hold with the same `K`.
    pub bounded: bool,
}

impl Regularity {
    pub fn none() -> Self {
        Self { kappa: None, growth: None, bounded: false }
    }
}

/// Drift and diffusion of a switching diffusion in `R^d`. Implementations
/// must be pure so that paths can be simulated concurrently.
pub trait SwitchingCoefficients: Send + Sync {
    fn dim(&self) -> usize;
    fn n_regimes(&self) -> usize;
    /// Writes `b(x, i)` into `out` (length `d`).
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]);
    /// Writes `σ(x, i)` row-major into `out` (length `d·d`).
    fn diffusion(&self, x: &[f64], i: usize, out: &mut [f64]);
    fn regularity(&self) -> Regularity;
}

/// Violations found by [`check_regularity`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub samples: usize,
    pub h1_violations: usize,
    pub h2_violations: usize,
    pub bounded_violations: usize,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.h1_violations == 0 && self.h2_violations == 0 && self.bounded_violations == 0
    }
}

/// Spot-checks the declared constants on random points drawn from
/// `N(0, scale²)` per coordinate, with a relative slack of `1e-9`.
pub fn check_regularity<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    samples: usize,
    scale: f64,
    rng: &mut impl Rng,
) -> RegularityReport {
    let d = c.dim();
    let meta = c.regularity();
    let normal = Normal::new(0.0, scale).expect("positive scale");
    let mut report = RegularityReport { samples, ..Default::default() };
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut sy) = (vec![0.0; d * d], vec![0.0; d * d]);
    let slack = |v: f64| 1e-9 * v.abs().max(1.0);
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let y: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let x2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..c.n_regimes() {
            c.drift(&x, i, &mut bx);
            c.drift(&y, i, &mut by);
            c.diffusion(&x, i, &mut sx);
            c.diffusion(&y, i, &mut sy);
            if let Some(kappa) = &meta.kappa {
                let inner: f64 = (0..d).map(|k| (x[k] - y[k]) * (bx[k] - by[k])).sum();
                let hs: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b) * (a - b)).sum();
                let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                let lhs = 2.0 * inner + 2.0 * hs;
                if lhs > kappa[i] * dist2 + slack(lhs) {
                    report.h1_violations += 1;
                }
            }
            let b2: f64 = bx.iter().map(|v| v * v).sum();
            let s2: f64 = sx.iter().map(|v| v * v).sum();
            if let Some(k) = meta.growth {
                let cap = k * (1.0 + x2);
                if b2 > cap + slack(cap) || s2 > cap + slack(cap) {
                    report.h2_violations += 1;
                }
                if meta.bounded && (b2 > k + slack(k) || s2 > k + slack(k)) {
                    report.bounded_violations += 1;
                }
            }
        }
    }
    report
}
