//! Integrability diagnostics: `μ_0(e^{η|σ^{-1}Z(·, i)|²})` per regime and
//! the normalization and Lipschitz checks on the reference model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GirsanovError, ReferenceModel, Result, ThetaCache};
use crate::parallel::MeanEstimate;
use crate::quadrature::{gauss_kronrod, QuadratureError};
use crate::sde::SwitchingCoefficients;

/// Values above this are reported as divergent.
pub const OVERFLOW_THRESHOLD: f64 = 1e100;

/// Half-widths of the expanding integration domains.
const DOMAINS: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

/// A local power `|x − c|^{−α}` with `α` at or above this is treated as
/// non-integrable.
const EXPONENT_LIMIT: f64 = 0.98;

/// Distances used to probe the local power near a breakpoint. Both lie
/// above the pole cap of the singular drift.
const PROBE: (f64, f64) = (1e-2, 1e-4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovikovOptions {
    /// Candidate singular points for `d = 1`; the integers in the domain
    /// are always included.
    pub breakpoints: Vec<f64>,
    /// Sample count for `d > 1`.
    pub mc_samples: usize,
    pub seed: u64,
    pub rel_tol: f64,
}

impl Default for NovikovOptions {
    fn default() -> Self {
        Self { breakpoints: Vec::new(), mc_samples: 100_000, seed: 0, rel_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum NovikovValue {
    Finite { value: f64, error: f64 },
    Diverged { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovikovReport {
    pub eta: f64,
    pub horizon: f64,
    pub dim: usize,
    pub method: String,
    pub values: Vec<NovikovValue>,
    /// `η > 2Td`.
    pub eta_condition: bool,
}

impl NovikovReport {
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| matches!(v, NovikovValue::Finite { .. }))
    }

    pub fn passed(&self) -> bool {
        self.eta_condition && self.all_finite()
    }

    /// `max_i μ_0(e^{η|σ^{-1}Z(·, i)|²})`, or `None` if any regime diverged.
    pub fn max_value(&self) -> Option<f64> {
        self.values.iter().try_fold(0.0f64, |acc, v| match v {
            NovikovValue::Finite { value, .. } => Some(acc.max(*value)),
            NovikovValue::Diverged { .. } => None,
        })
    }

    /// The first divergence as an error.
    pub fn require_finite(&self) -> Result<()> {
        for (regime, v) in self.values.iter().enumerate() {
            if let NovikovValue::Diverged { reason } = v {
                return Err(GirsanovError::IntegralDiverged { regime, reason: reason.clone() });
            }
        }
        Ok(())
    }
}

/// `log` of the integrand `e^{η|θ|² − V}` in one dimension.
fn log_integrand<M, B>(cache: &mut ThetaCache<M, B>, eta: f64, i: usize, x: f64) -> Result<f64>
where
    M: ReferenceModel + ?Sized,
    B: SwitchingCoefficients + ?Sized,
{
    cache.reset(&[x]);
    let v = cache.m.potential(&[x]);
    let th = cache.get(i, x)?[0];
    Ok(eta * th * th - v)
}

fn check_1d<M, B>(m: &M, b: &B, eta: f64, i: usize, opts: &NovikovOptions) -> Result<NovikovValue>
where
    M: ReferenceModel + ?Sized,
    B: SwitchingCoefficients + ?Sized,
{
    let mut cache = ThetaCache::new(m, b);
    let outer = DOMAINS[DOMAINS.len() - 1];
    let mut bps: Vec<f64> = (-(outer as i64)..=outer as i64).map(|k| k as f64).collect();
    bps.extend(opts.breakpoints.iter().copied().filter(|x| x.abs() < outer));
    bps.sort_by(f64::total_cmp);
    bps.dedup();

    for &c in &bps {
        for side in [-1.0, 1.0] {
            let l1 = log_integrand(&mut cache, eta, i, c + side * PROBE.0)?;
            let l2 = log_integrand(&mut cache, eta, i, c + side * PROBE.1)?;
            if l1.is_finite() && l2.is_finite() {
                let alpha = (l2 - l1) / (PROBE.0 / PROBE.1).ln();
                if alpha >= EXPONENT_LIMIT {
                    return Ok(NovikovValue::Diverged {
                        reason: format!("integrand grows like |x - {c}|^-{alpha:.3} near x = {c}"),
                    });
                }
            }
        }
    }

    let integrand = |x: f64| {
        let mut c = ThetaCache::new(m, b);
        log_integrand(&mut c, eta, i, x).map(f64::exp).unwrap_or(f64::NAN)
    };
    let mut total = 0.0;
    let mut error = 0.0;
    let mut previous: Option<f64> = None;
    let mut last_shell = 0.0;
    for &half in &DOMAINS {
        let within = |a: f64, z: f64, l: f64| a >= -l && z <= l;
        let mut added = 0.0;
        for w in bps.windows(2) {
            let (a, z) = (w[0], w[1]);
            if !within(a, z, half) || previous.is_some_and(|l| within(a, z, l)) {
                continue;
            }
            match gauss_kronrod(integrand, a, z, opts.rel_tol, 1e-300, 4000) {
                Ok(q) => {
                    added += q.value;
                    error += q.error;
                }
                Err(QuadratureError::NonFinite { x }) => {
                    return Ok(NovikovValue::Diverged { reason: format!("non-finite integrand at x = {x}") })
                }
                Err(QuadratureError::NonConvergence { estimate, .. }) => {
                    return Ok(NovikovValue::Diverged {
                        reason: format!("quadrature did not converge on [{a}, {z}] (estimate {estimate:e})"),
                    })
                }
            }
        }
        total += added;
        if !total.is_finite() || total > OVERFLOW_THRESHOLD {
            return Ok(NovikovValue::Diverged { reason: format!("value exceeds {OVERFLOW_THRESHOLD:e} on [-{half}, {half}]") });
        }
        if previous.is_some() && added <= 1e-12 * total {
            return Ok(NovikovValue::Finite { value: total, error });
        }
        previous = Some(half);
        last_shell = added;
    }
    Ok(NovikovValue::Diverged { reason: format!("mass keeps growing up to [-{outer}, {outer}] (last shell {last_shell:e})") })
}

fn check_mc<M, B>(m: &M, b: &B, eta: f64, i: usize, opts: &NovikovOptions) -> Result<NovikovValue>
where
    M: ReferenceModel + ?Sized,
    B: SwitchingCoefficients + ?Sized,
{
    let d = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cache = ThetaCache::new(m, b);
    let mut x = vec![0.0; d];
    let mut vals = Vec::with_capacity(opts.mc_samples);
    for _ in 0..opts.mc_samples {
        if !m.sample_mu0(&mut rng, &mut x) {
            return Err(GirsanovError::InvalidArgument("d > 1 needs a sampler for the reference measure".into()));
        }
        cache.reset(&x);
        let th = cache.get(i, 0.0)?;
        vals.push((eta * th.iter().map(|v| v * v).sum::<f64>()).exp());
    }
    let est = MeanEstimate::from_samples(&vals);
    if !est.mean.is_finite() || est.mean > OVERFLOW_THRESHOLD {
        return Ok(NovikovValue::Diverged { reason: format!("sample mean {} exceeds the overflow threshold", est.mean) });
    }
    Ok(NovikovValue::Finite { value: est.mean, error: est.stderr })
}

/// `μ_0(e^{η|σ^{-1}Z(·, i)|²})` for every regime, with the verdict
/// `η > 2Td`. One-dimensional models use Gauss–Kronrod quadrature on
/// `[−L, L]` for `L = 8, 16, 32, 64` split at integer and user
/// breakpoints; larger dimensions use Monte Carlo from the reference
/// sampler.
pub fn novikov_check<M, B>(m: &M, b: &B, eta: f64, horizon: f64, opts: &NovikovOptions) -> Result<NovikovReport>
where
    M: ReferenceModel + ?Sized,
    B: SwitchingCoefficients + ?Sized,
{
    let d = m.dim();
    if b.dim() != d {
        return Err(GirsanovError::DimensionMismatch { expected: d, found: b.dim() });
    }
    if !(eta > 0.0 && horizon > 0.0) {
        return Err(GirsanovError::InvalidArgument("eta and the horizon must be positive".into()));
    }
    let values = (0..b.n_regimes())
        .map(|i| if d == 1 { check_1d(m, b, eta, i, opts) } else { check_mc(m, b, eta, i, opts) })
        .collect::<Result<Vec<_>>>()?;
    Ok(NovikovReport {
        eta,
        horizon,
        dim: d,
        method: if d == 1 { "quadrature" } else { "monte-carlo" }.into(),
        values,
        eta_condition: eta > 2.0 * horizon * d as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub samples: usize,
    pub lipschitz_violations: usize,
    pub normalization: f64,
    pub normalization_error: f64,
    pub tolerance: f64,
}

impl ReferenceCheck {
    pub fn passed(&self) -> bool {
        self.lipschitz_violations == 0 && (self.normalization - 1.0).abs() <= self.tolerance
    }
}

/// Spot-checks `|Z_0(x) − Z_0(y)| ≤ K_0|x − y|` on `N(0, scale²)` pairs and
/// that `e^{−V}` integrates to one: by quadrature to `1e-6` when `d = 1`,
/// otherwise by importance sampling from `N(0, scale² I)` to four standard
/// errors.
pub fn check_reference<M: ReferenceModel + ?Sized>(m: &M, samples: usize, scale: f64, seed: u64) -> Result<ReferenceCheck> {
    let d = m.dim();
    let normal = Normal::new(0.0, scale).map_err(|e| GirsanovError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k0 = m.lipschitz_constant();
    let (mut zx, mut zy) = (vec![0.0; d], vec![0.0; d]);
    let mut violations = 0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        m.z0(&x, &mut zx);
        m.z0(&y, &mut zy);
        let lhs: f64 = zx.iter().zip(&zy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if lhs > k0 * dist * (1.0 + 1e-9) + 1e-12 {
            violations += 1;
        }
    }
    let (normalization, normalization_error, tolerance) = if d == 1 {
        let mut total = 0.0;
        let mut err = 0.0;
        let f = |x: f64| (-m.potential(&[x])).exp();
        let inner = gauss_kronrod(f, -DOMAINS[0], DOMAINS[0], 1e-12, 1e-300, 2000)?;
        total += inner.value;
        err += inner.error;
        for w in DOMAINS.windows(2) {
            for (a, b) in [(-w[1], -w[0]), (w[0], w[1])] {
                let q = gauss_kronrod(f, a, b, 1e-12, 1e-300, 2000)?;
                total += q.value;
                err += q.error;
            }
        }
        (total, err, 1e-6)
    } else {
        let n = samples.max(1000);
        let norm_const = (2.0 * std::f64::consts::PI * scale * scale).powf(d as f64 / 2.0);
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (-m.potential(&x) + r2 / (2.0 * scale * scale)).exp() * norm_const
            })
            .collect();
        let est = MeanEstimate::from_samples(&vals);
        (est.mean, est.stderr, 4.0 * est.stderr)
    };
    Ok(ReferenceCheck { samples, lipschitz_violations: violations, normalization, normalization_error, tolerance })
}
