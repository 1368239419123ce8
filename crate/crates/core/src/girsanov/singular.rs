//! Drifts used with the reference-process representation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::sde::{Regularity, SwitchingCoefficients};

use super::{GirsanovError, Result};

/// Default truncation of the logarithmic series.
pub const DEFAULT_K_MAX: usize = 10_000;

/// Cap on `1/|x − k|²` inside each summand, so a summand never exceeds
/// `ln(1 + SINGULAR_CAP)`.
pub const SINGULAR_CAP: f64 = 1e12;

/// Terms within this distance of `x` are summed exactly.
const WINDOW: i64 = 32;

/// `b(x, i) = β_i S(x)^{1/2} − x` with
/// `S(x) = Σ_{k=1}^{k_max} ln(1 + 1/|x − k|²)`, and `σ ≡ 1`.
///
/// Terms more than 32 indices from `x` are summed with the Euler–Maclaurin
/// formula using the antiderivative `u ln(1 + u⁻²) + 2 atan(u)`. The
/// neglected remainder is below `1e-12`.
#[derive(Debug)]
pub struct SingularLogDrift {
    beta: Vec<f64>,
    k_max: usize,
    clamps: AtomicU64,
}

impl Clone for SingularLogDrift {
    fn clone(&self) -> Self {
        Self { beta: self.beta.clone(), k_max: self.k_max, clamps: AtomicU64::new(self.clamp_count()) }
    }
}

fn antiderivative(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * (1.0 / (u * u)).ln_1p() + 2.0 * u.atan()
    }
}

fn term_at(u: f64) -> f64 {
    (1.0 / (u * u)).ln_1p()
}

fn term_slope(u: f64) -> f64 {
    -2.0 / (u * (u * u + 1.0))
}

fn term_third(u: f64) -> f64 {
    let c = u * u * u + u;
    let e = 3.0 * u * u + 1.0;
    12.0 * u / (c * c) - 4.0 * e * e / (c * c * c)
}

impl SingularLogDrift {
    pub fn new(beta: Vec<f64>, k_max: usize) -> Result<Self> {
        if beta.is_empty() {
            return Err(GirsanovError::InvalidArgument("beta needs at least one regime".into()));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(GirsanovError::InvalidArgument("beta must be finite and nonnegative".into()));
        }
        if k_max == 0 {
            return Err(GirsanovError::InvalidArgument("k_max must be at least 1".into()));
        }
        Ok(Self { beta, k_max, clamps: AtomicU64::new(0) })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Number of summands capped so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Upper bound on the omitted terms `k > k_max`, namely `1/(k_max − x)`
    /// for `x < k_max`.
    pub fn tail_bound(&self, x: f64) -> Option<f64> {
        let k = self.k_max as f64;
        (x < k).then(|| 1.0 / (k - x))
    }

    fn exact_term(&self, x: f64, k: i64) -> f64 {
        let u = x - k as f64;
        let inv = 1.0 / (u * u);
        if inv > SINGULAR_CAP {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            SINGULAR_CAP.ln_1p()
        } else {
            inv.ln_1p()
        }
    }

    fn block_sum(&self, x: f64, a: i64, b: i64) -> f64 {
        if b < a {
            return 0.0;
        }
        if b - a < 16 {
            return (a..=b).map(|k| self.exact_term(x, k)).sum();
        }
        let (ua, ub) = (a as f64 - x, b as f64 - x);
        antiderivative(ub) - antiderivative(ua) + 0.5 * (term_at(ua) + term_at(ub)) + (term_slope(ub) - term_slope(ua)) / 12.0
            - (term_third(ub) - term_third(ua)) / 720.0
    }

    /// The truncated series `S(x)`.
    pub fn series(&self, x: f64) -> f64 {
        let k_max = self.k_max as i64;
        let c = x.floor().clamp(-(1i64 << 52) as f64, (1i64 << 52) as f64) as i64;
        let lo = (c - WINDOW).max(1);
        let hi = (c + WINDOW + 1).min(k_max);
        if lo > hi {
            return self.block_sum(x, 1, k_max);
        }
        let window: f64 = (lo..=hi).map(|k| self.exact_term(x, k)).sum();
        window + self.block_sum(x, 1, lo - 1) + self.block_sum(x, hi + 1, k_max)
    }
}

impl SwitchingCoefficients for SingularLogDrift {
    fn dim(&self) -> usize {
        1
    }
    fn n_regimes(&self) -> usize {
        self.beta.len()
    }
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        let b = self.beta[i];
        out[0] = if b == 0.0 { -x[0] } else { b * self.series(x[0]).sqrt() - x[0] };
    }
    fn diffusion(&self, _x: &[f64], _i: usize, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn regularity(&self) -> Regularity {
        Regularity::none()
    }
}

/// `b(x, i) = −x + β_i tanh(x)`, `σ ≡ 1`: a Lipschitz drift whose deviation
/// from the standard OU reference is bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhShiftDrift {
    pub beta: Vec<f64>,
}

impl SwitchingCoefficients for TanhShiftDrift {
    fn dim(&self) -> usize {
        1
    }
    fn n_regimes(&self) -> usize {
        self.beta.len()
    }
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        out[0] = -x[0] + self.beta[i] * x[0].tanh();
    }
    fn diffusion(&self, _x: &[f64], _i: usize, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn regularity(&self) -> Regularity {
        let kappa = self.beta.iter().map(|b| 2.0 * (b.max(0.0) - 1.0)).collect();
        // b² ≤ 2x² + 2β²
        let growth = self.beta.iter().map(|b| 2.0f64.max(2.0 * b * b)).fold(0.0, f64::max);
        Regularity { kappa: Some(kappa), growth: Some(growth), bounded: false }
    }
}
