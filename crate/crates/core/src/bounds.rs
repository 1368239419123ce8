//! Stability bounds on `E|X_t − X̃_t|²` (hence on `W_2²`) under a
//! perturbation of the switching generator.
//!
//! Every bound has the form
//!
//! ```text
//! (4/ε + 8) K C_2(p)^{1/p} (N² t²)^{1/q} Δ^{1/q} T(t)
//! ```
//!
//! where `Δ` is the ℓ1 size of the perturbation, `N = n_states − 1`,
//! `q = p/(p − 1)` and the time factor `T` is either `Ψ` (linear growth
//! coefficients) or `((1 − e^{−λt})/λ)^{1/p}` with `λ = η_p − εp` (bounded
//! coefficients). `η_p` and `C_2(p)` come from the tilted generator
//! `Q + p diag(κ)` of the unperturbed chain, and `C_2` is certified on a
//! time grid covering `[0, t]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::norm_inf;
use crate::quadrature::{adaptive_simpson, QuadratureError};
use crate::ratematrix::{block_split, c2_estimate, embed_reduced, l1_distance, tilt, C2Certificate, RateMatrix, RateMatrixError};
use crate::sde::Regularity;

pub const DEFAULT_P_GRID: [f64; 4] = [1.5, 2.0, 3.0, 5.0];
pub const DEFAULT_EPS_GRID: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

/// Relative tolerance of the time integrals.
pub const PSI_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("missing regularity metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("coefficients are not declared bounded")]
    NotBounded,
    #[error("initial state {i0} is not in the retained set (states after {m})")]
    InitialStateRemoved { i0: usize, m: usize },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("t = {t} lies beyond the certified horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    RateMatrix(#[from] RateMatrixError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremTag {
    /// Perturbed generator, linear-growth coefficients.
    T1General,
    /// Perturbed generator, bounded coefficients.
    T1Bounded,
    /// Reduced state space, linear-growth coefficients.
    T2General,
    /// Reduced state space, bounded coefficients.
    T2Bounded,
}

impl TheoremTag {
    pub fn is_bounded(self) -> bool {
        matches!(self, Self::T1Bounded | Self::T2Bounded)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::T1General => "t1-general",
            Self::T1Bounded => "t1-bounded",
            Self::T2General => "t2-general",
            Self::T2Bounded => "t2-bounded",
        }
    }
}

/// Evaluation settings shared by all bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Grid size for certifying `C_2`.
    pub c2_grid_points: usize,
    /// Certify `C_2` up to this time instead of `t`; bounds at later `t`
    /// are refused.
    pub c2_horizon: Option<f64>,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { c2_grid_points: 401, c2_horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tag: TheoremTag,
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub t: f64,
    pub kappa: Vec<f64>,
    pub growth: f64,
    pub x0_norm: f64,
    /// `N = n_states − 1`.
    pub n_label: usize,
    pub eta_p: f64,
    pub c2: C2Certificate,
    /// ℓ1 size of the perturbation (or its majorant for reduced spaces).
    pub perturbation: f64,
    /// `(N² t² Δ)^{1/q}`.
    pub perturbation_factor: f64,
    /// `λ = η_p − εp`.
    pub lambda: f64,
    /// Time factor: `Ψ`, or `((1 − e^{−λt})/λ)^{1/p}`.
    pub time_factor: f64,
    /// The bounded time factor used its closed form (`λ > 0`); otherwise
    /// it was integrated numerically.
    pub closed_form: bool,
    pub bound: f64,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "tag",
        "t",
        "p",
        "q",
        "eps",
        "eta_p",
        "c2",
        "c2_horizon",
        "perturbation",
        "lambda",
        "time_factor",
        "closed_form",
        "bound",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.tag.as_str().to_string(),
            self.t.to_string(),
            self.p.to_string(),
            self.q.to_string(),
            self.eps.to_string(),
            self.eta_p.to_string(),
            self.c2.c2.to_string(),
            self.c2.horizon.to_string(),
            self.perturbation.to_string(),
            self.lambda.to_string(),
            self.time_factor.to_string(),
            self.closed_form.to_string(),
            self.bound.to_string(),
        ]
    }
}

fn check_params(t: f64, p: f64, eps: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(BoundsError::InvalidArgument(format!("t must be finite and nonnegative, got {t}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(BoundsError::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BoundsError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// `Ψ = (∫_0^t [1 + (|x_0|² + 2Ks) e^{(2K+1)s}]^p e^{−(η_p − εp)(t − s)} ds)^{1/p}`.
pub fn psi(t: f64, eps: f64, eta_p: f64, k: f64, p: f64, x0_norm: f64) -> Result<f64> {
    check_params(t, p, eps)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let lambda = eta_p - eps * p;
    let x2 = x0_norm * x0_norm;
    let f = |s: f64| {
        let g = 1.0 + (x2 + 2.0 * k * s) * ((2.0 * k + 1.0) * s).exp();
        (p * g.ln() - lambda * (t - s)).exp()
    };
    let q = adaptive_simpson(f, 0.0, t, PSI_REL_TOL, 0.0)?;
    Ok(q.value.powf(1.0 / p))
}

/// `((1 − e^{−λt})/λ)^{1/p}` and whether the closed form was used. For
/// `λ ≤ 0` the integral `∫_0^t e^{−λ(t − s)} ds` is evaluated by
/// quadrature.
pub fn bounded_time_factor(t: f64, lambda: f64, p: f64) -> Result<(f64, bool)> {
    if t == 0.0 {
        return Ok((0.0, lambda > 0.0));
    }
    if lambda > 0.0 {
        return Ok(((-(-lambda * t).exp_m1() / lambda).powf(1.0 / p), true));
    }
    let q = adaptive_simpson(|s| (-lambda * (t - s)).exp(), 0.0, t, PSI_REL_TOL, 0.0)?;
    Ok((q.value.powf(1.0 / p), false))
}

/// Everything a bound needs besides the perturbation.
struct Setup<'a> {
    q: &'a RateMatrix,
    kappa: &'a [f64],
    growth: f64,
    x0_norm: f64,
    t: f64,
    p: f64,
    eps: f64,
    opts: &'a BoundOptions,
}

fn evaluate(tag: TheoremTag, s: &Setup, perturbation: f64) -> Result<BoundReport> {
    check_params(s.t, s.p, s.eps)?;
    if s.kappa.len() != s.q.n_states() {
        return Err(BoundsError::InvalidArgument(format!(
            "{} one-sided Lipschitz constants for {} states",
            s.kappa.len(),
            s.q.n_states()
        )));
    }
    let horizon = s.opts.c2_horizon.unwrap_or(s.t);
    if s.t > horizon {
        return Err(BoundsError::HorizonExceeded { t: s.t, horizon });
    }
    let g = tilt(s.q, s.kappa, s.p)?;
    // a zero-length horizon still needs a nondegenerate grid
    let c2 = c2_estimate(&g, horizon.max(f64::MIN_POSITIVE), s.opts.c2_grid_points)?;
    let eta_p = c2.eta_p;
    let q = s.p / (s.p - 1.0);
    let n_label = s.q.max_label() as f64;
    let perturbation_factor = (n_label * n_label * s.t * s.t * perturbation).powf(1.0 / q);
    let lambda = eta_p - s.eps * s.p;
    let (time_factor, closed_form) = if tag.is_bounded() {
        bounded_time_factor(s.t, lambda, s.p)?
    } else {
        (psi(s.t, s.eps, eta_p, s.growth, s.p, s.x0_norm)?, false)
    };
    let bound = (4.0 / s.eps + 8.0) * s.growth * c2.c2.powf(1.0 / s.p) * perturbation_factor * time_factor;
    Ok(BoundReport {
        tag,
        p: s.p,
        q,
        eps: s.eps,
        t: s.t,
        kappa: s.kappa.to_vec(),
        growth: s.growth,
        x0_norm: s.x0_norm,
        n_label: s.q.max_label(),
        eta_p,
        c2,
        perturbation,
        perturbation_factor,
        lambda,
        time_factor,
        closed_form,
        bound,
    })
}

fn metadata(reg: &Regularity) -> Result<(&[f64], f64)> {
    let kappa = reg.kappa.as_deref().ok_or(BoundsError::MissingMetadata("one-sided Lipschitz constants"))?;
    let growth = reg.growth.ok_or(BoundsError::MissingMetadata("linear-growth constant"))?;
    Ok((kappa, growth))
}

fn norm(x0: &[f64]) -> f64 {
    x0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Bound for linear-growth coefficients under `Q → Q̃`.
pub fn theorem1_bound(
    q: &RateMatrix,
    q_tilde: &RateMatrix,
    reg: &Regularity,
    x0: &[f64],
    t: f64,
    p: f64,
    eps: f64,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let (kappa, growth) = metadata(reg)?;
    let delta = l1_distance(q, q_tilde)?;
    let s = Setup { q, kappa, growth, x0_norm: norm(x0), t, p, eps, opts };
    evaluate(TheoremTag::T1General, &s, delta)
}

/// Bound for bounded coefficients (`|b|² ≤ K`, `‖σ‖² ≤ K`) under `Q → Q̃`.
/// The one-sided Lipschitz constants are still needed for `η_p`.
pub fn theorem1_bound_bounded(
    q: &RateMatrix,
    q_tilde: &RateMatrix,
    reg: &Regularity,
    t: f64,
    p: f64,
    eps: f64,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    if !reg.bounded {
        return Err(BoundsError::NotBounded);
    }
    let (kappa, growth) = metadata(reg)?;
    let delta = l1_distance(q, q_tilde)?;
    let s = Setup { q, kappa, growth, x0_norm: 0.0, t, p, eps, opts };
    evaluate(TheoremTag::T1Bounded, &s, delta)
}

/// `‖B‖_ℓ1 + ‖Q_1 − Q̂‖_ℓ1` for the split after state `m`.
pub fn reduction_majorant(q: &RateMatrix, q_hat: &RateMatrix, m: usize) -> Result<f64> {
    let blocks = block_split(q, m)?;
    if q_hat.n_states() != blocks.q1.nrows() {
        return Err(RateMatrixError::DimensionMismatch { expected: blocks.q1.nrows(), found: q_hat.n_states() }.into());
    }
    Ok(norm_inf(&blocks.b) + norm_inf(&(&blocks.q1 - q_hat.matrix())))
}

/// Bound for the chain restricted to `E = {m+1, …, N}` with generator
/// `q_hat`, started in `E`. It is the perturbed-generator bound for
/// `embed_reduced(q, q_hat, m)` with `Δ` replaced by the majorant
/// [`reduction_majorant`].
#[allow(clippy::too_many_arguments)]
pub fn theorem2_bound(
    q: &RateMatrix,
    q_hat: &RateMatrix,
    m: usize,
    reg: &Regularity,
    x0: &[f64],
    i0: usize,
    t: f64,
    p: f64,
    eps: f64,
    bounded: bool,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let majorant = reduction_majorant(q, q_hat, m)?;
    // validates the embedding as well
    embed_reduced(q, q_hat, m)?;
    if i0 <= m || i0 >= q.n_states() {
        return Err(BoundsError::InitialStateRemoved { i0, m });
    }
    if bounded && !reg.bounded {
        return Err(BoundsError::NotBounded);
    }
    let (kappa, growth) = metadata(reg)?;
    let x0_norm = if bounded { 0.0 } else { norm(x0) };
    let s = Setup { q, kappa, growth, x0_norm, t, p, eps, opts };
    let tag = if bounded { TheoremTag::T2Bounded } else { TheoremTag::T2General };
    evaluate(tag, &s, majorant)
}

/// One cell of a parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: f64,
    pub eps: f64,
    pub bound: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedBound {
    pub best: BoundReport,
    pub table: Vec<GridCell>,
}

/// Minimizes a bound over `p_grid × eps_grid`. Cells are evaluated in
/// parallel; ties go to the lexicographically smallest `(p, ε)`. Cells that
/// fail are kept in the table with their error.
pub fn optimize_parameters<F>(eval: F, p_grid: &[f64], eps_grid: &[f64]) -> Result<OptimizedBound>
where
    F: Fn(f64, f64) -> Result<BoundReport> + Sync,
{
    if p_grid.is_empty() || eps_grid.is_empty() {
        return Err(BoundsError::EmptyGrid);
    }
    let cells: Vec<(f64, f64)> = p_grid.iter().flat_map(|&p| eps_grid.iter().map(move |&e| (p, e))).collect();
    let results: Vec<Result<BoundReport>> = cells.par_iter().map(|&(p, e)| eval(p, e)).collect();
    let mut best: Option<&BoundReport> = None;
    let mut first_error = None;
    let mut table = Vec::with_capacity(cells.len());
    for (&(p, eps), r) in cells.iter().zip(&results) {
        match r {
            Ok(rep) => {
                table.push(GridCell { p, eps, bound: Some(rep.bound), error: None });
                let better = match best {
                    None => true,
                    Some(b) => rep.bound < b.bound || (rep.bound == b.bound && (p, eps) < (b.p, b.eps)),
                };
                if better && rep.bound.is_finite() {
                    best = Some(rep);
                }
            }
            Err(e) => {
                table.push(GridCell { p, eps, bound: None, error: Some(e.to_string()) });
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    match best {
        Some(b) => Ok(OptimizedBound { best: b.clone(), table }),
        None => Err(first_error.unwrap_or(BoundsError::EmptyGrid)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{BoundedTanh, SwitchingCoefficients, SwitchingOu};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rm(rows: &[&[f64]]) -> RateMatrix {
        RateMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn tanh_meta() -> Regularity {
        BoundedTanh::new(vec![0.5, -0.5], vec![1.0, 0.5], vec![0.5, 0.8]).unwrap().regularity()
    }

    fn base() -> RateMatrix {
        rm(&[&[-1.0, 1.0], &[2.0, -2.0]])
    }

    fn perturbed(d: f64) -> RateMatrix {
        rm(&[&[-1.0 - d, 1.0 + d], &[2.0, -2.0]])
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(0.0, 1.0, 0.5, 2.0, 2.0, 1.0).unwrap(), 0.0);
        // K = 0, x0 = 0: the bracket is 1
        for (lambda, p) in [(0.7, 2.0), (3.0, 1.5), (0.01, 4.0)] {
            let eps = 0.3;
            let eta = lambda + eps * p;
            let got = psi(2.0, eps, eta, 0.0, p, 0.0).unwrap();
            let want = ((1.0 - (-lambda * 2.0f64).exp()) / lambda).powf(1.0 / p);
            assert_relative_eq!(got, want, max_relative = 1e-8);
        }
        let mut last = 0.0;
        for k in 1..=20 {
            let v = psi(0.1 * k as f64, 0.5, -0.4, 1.3, 2.5, 0.7).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(psi(1.0, 0.0, 1.0, 1.0, 2.0, 0.0).is_err());
        assert!(psi(1.0, 1.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bounded_time_factor_branches() {
        let (v, closed) = bounded_time_factor(1.5, 0.8, 2.0).unwrap();
        assert!(closed);
        assert_relative_eq!(v, ((1.0 - (-1.2f64).exp()) / 0.8).sqrt(), max_relative = 1e-15);
        // negative λ: quadrature agrees with the analytic value
        let (v, closed) = bounded_time_factor(1.5, -0.8, 2.0).unwrap();
        assert!(!closed);
        assert_relative_eq!(v, (1.2f64.exp_m1() / 0.8).sqrt(), max_relative = 1e-8);
        // λ = 0: the limit t^{1/p}
        let (v, _) = bounded_time_factor(1.5, 0.0, 3.0).unwrap();
        assert_relative_eq!(v, 1.5f64.powf(1.0 / 3.0), max_relative = 1e-10);
        let (v, closed) = bounded_time_factor(1.5, 1e-12, 3.0).unwrap();
        assert!(closed);
        assert_relative_eq!(v, 1.5f64.powf(1.0 / 3.0), max_relative = 1e-9);
    }

    #[test]
    fn zero_perturbation_and_small_t() {
        let o = BoundOptions::default();
        let r = theorem1_bound_bounded(&base(), &base(), &tanh_meta(), 1.0, 2.0, 1.0, &o).unwrap();
        assert_eq!(r.bound, 0.0);
        let ou = SwitchingOu::new(vec![1.0, 2.0], vec![0.5, 0.3], vec![0.4, 0.6]).unwrap().regularity();
        assert_eq!(theorem1_bound(&base(), &base(), &ou, &[1.0], 1.0, 2.0, 1.0, &o).unwrap().bound, 0.0);
        let mut last = f64::INFINITY;
        for t in [1.0, 0.1, 0.01, 0.001] {
            let r = theorem1_bound_bounded(&base(), &perturbed(0.2), &tanh_meta(), t, 2.0, 1.0, &o).unwrap();
            assert!(r.bound < last);
            last = r.bound;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn homogeneity_in_the_perturbation() {
        let o = BoundOptions::default();
        for p in [1.5, 2.0, 5.0] {
            let a = theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh_meta(), 1.0, p, 0.5, &o).unwrap();
            let b = theorem1_bound_bounded(&base(), &perturbed(0.2), &tanh_meta(), 1.0, p, 0.5, &o).unwrap();
            assert_relative_eq!(b.bound / a.bound, 2f64.powf(1.0 / a.q), max_relative = 1e-12);
            assert_eq!(a.q, p / (p - 1.0));
        }
    }

    #[test]
    fn metadata_is_required() {
        let o = BoundOptions::default();
        let none = Regularity::none();
        assert!(matches!(
            theorem1_bound(&base(), &base(), &none, &[0.0], 1.0, 2.0, 1.0, &o),
            Err(BoundsError::MissingMetadata(_))
        ));
        let ou = SwitchingOu::new(vec![1.0, 2.0], vec![0.5, 0.3], vec![]).unwrap().regularity();
        assert_eq!(theorem1_bound_bounded(&base(), &base(), &ou, 1.0, 2.0, 1.0, &o), Err(BoundsError::NotBounded));
        let capped = BoundOptions { c2_horizon: Some(0.5), ..o };
        assert!(matches!(
            theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh_meta(), 1.0, 2.0, 1.0, &capped),
            Err(BoundsError::HorizonExceeded { .. })
        ));
    }

    fn three_state() -> RateMatrix {
        rm(&[&[-2.0, 1.0, 1.0], &[0.5, -1.5, 1.0], &[0.3, 0.7, -1.0]])
    }

    fn three_meta() -> Regularity {
        BoundedTanh::new(vec![0.5, -0.5, 0.2], vec![1.0, 0.5, 0.8], vec![0.5, 0.8, 0.6]).unwrap().regularity()
    }

    #[test]
    fn reduction_examples() {
        let o = BoundOptions::default();
        let q = three_state();
        // keep the off-diagonal rates on E and drop the leakage
        let q_hat = rm(&[&[-1.0, 1.0], &[0.7, -0.7]]);
        let r = theorem2_bound(&q, &q_hat, 0, &three_meta(), &[0.0], 1, 1.0, 2.0, 1.0, true, &o).unwrap();
        // ‖B‖ = 0.5 and ‖Q1 − Q̂‖ = 0.5
        assert_relative_eq!(r.perturbation, 1.0, max_relative = 1e-15);
        assert!(matches!(
            theorem2_bound(&q, &q_hat, 0, &three_meta(), &[0.0], 0, 1.0, 2.0, 1.0, true, &o),
            Err(BoundsError::InitialStateRemoved { .. })
        ));
        assert!(theorem2_bound(&q, &q_hat, 2, &three_meta(), &[0.0], 1, 1.0, 2.0, 1.0, true, &o).is_err());

        // no leakage into the removed state and an exact restriction give zero
        let closed = rm(&[&[-2.0, 1.0, 1.0], &[0.0, -1.0, 1.0], &[0.0, 0.7, -0.7]]);
        let r = theorem2_bound(&closed, &q_hat, 0, &three_meta(), &[0.0], 1, 1.0, 2.0, 1.0, true, &o).unwrap();
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn reduction_is_the_perturbed_bound_on_the_embedding() {
        let o = BoundOptions::default();
        let q = three_state();
        let q_hat = rm(&[&[-1.2, 1.2], &[0.4, -0.4]]);
        for bounded in [true, false] {
            let t2 = theorem2_bound(&q, &q_hat, 0, &three_meta(), &[0.3], 2, 1.0, 2.0, 0.5, bounded, &o).unwrap();
            let emb = embed_reduced(&q, &q_hat, 0).unwrap();
            let t1 = if bounded {
                theorem1_bound_bounded(&q, &emb, &three_meta(), 1.0, 2.0, 0.5, &o).unwrap()
            } else {
                theorem1_bound(&q, &emb, &three_meta(), &[0.3], 1.0, 2.0, 0.5, &o).unwrap()
            };
            let scale = (t2.perturbation / t1.perturbation).powf(1.0 / t1.q);
            assert_relative_eq!(t2.bound, t1.bound * scale, max_relative = 1e-14);
            assert!(t2.perturbation >= t1.perturbation);
        }
    }

    #[test]
    fn optimizer_examples() {
        let o = BoundOptions::default();
        let eval = |p: f64, e: f64| theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh_meta(), 1.0, p, e, &o);
        let single = optimize_parameters(eval, &[2.0], &[1.0]).unwrap();
        assert_eq!(single.best, eval(2.0, 1.0).unwrap());
        assert_eq!(single.table.len(), 1);
        let full = optimize_parameters(eval, &DEFAULT_P_GRID, &DEFAULT_EPS_GRID).unwrap();
        assert_eq!(full.table.len(), 16);
        assert!(full.best.bound < single.best.bound);
        let wider = optimize_parameters(eval, &[1.2, 1.5, 2.0, 3.0, 5.0, 8.0], &[0.05, 0.1, 0.5, 1.0, 2.0]).unwrap();
        assert!(wider.best.bound <= full.best.bound);
        assert_eq!(optimize_parameters(eval, &[], &[1.0]).unwrap_err(), BoundsError::EmptyGrid);
        // failing cells are tabulated
        let with_bad = optimize_parameters(eval, &[0.5, 2.0], &[1.0]).unwrap();
        assert!(with_bad.table[0].error.is_some() && with_bad.best.p == 2.0);
    }

    #[test]
    fn report_serializes() {
        let o = BoundOptions::default();
        let r = theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh_meta(), 1.0, 2.0, 1.0, &o).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_row().len(), BoundReport::CSV_HEADER.len());
        assert!(json.contains("\"tag\":\"t1-bounded\""));
    }

    #[test]
    fn frozen_values() {
        // independent evaluation: dense matrix exponentials on the same grid
        // and adaptive quadrature at 1e-12
        let o = BoundOptions::default();
        let tanh = BoundedTanh::new(vec![0.5, -0.5], vec![-0.5, 1.0], vec![0.5, 0.8]).unwrap().regularity();
        let r = theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh, 1.0, 2.0, 1.0, &o).unwrap();
        assert_relative_eq!(r.eta_p, -1.5615528128088303, max_relative = 1e-12);
        assert_relative_eq!(r.c2.c2, 1.1598478421993526, max_relative = 1e-10);
        assert_relative_eq!(r.bound, 40.30750176961839, max_relative = 1e-8);
        let r = theorem1_bound_bounded(&base(), &perturbed(0.1), &tanh, 0.5, 3.0, 0.5, &o).unwrap();
        assert_relative_eq!(r.bound, 5.9642523863673045, max_relative = 1e-8);

        let q = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        let qt = rm(&[&[-1.2, 1.2], &[1.0, -1.0]]);
        let ou = SwitchingOu::new(vec![1.0, 2.0], vec![0.5, 0.3], vec![0.4, 0.6]).unwrap().regularity();
        let r = theorem1_bound(&q, &qt, &ou, &[1.0], 0.5, 2.0, 0.5, &o).unwrap();
        assert_relative_eq!(r.eta_p, 4.073203773588679, max_relative = 1e-12);
        assert_relative_eq!(r.bound, 2038.7633999044142, max_relative = 1e-7);
    }

    proptest! {
        #[test]
        fn bound_vanishes_with_the_perturbation(d in 1e-8f64..0.5, p in 1.2f64..6.0, eps in 0.05f64..3.0) {
            let o = BoundOptions { c2_grid_points: 101, ..Default::default() };
            let a = theorem1_bound_bounded(&base(), &perturbed(d), &tanh_meta(), 1.0, p, eps, &o).unwrap();
            let b = theorem1_bound_bounded(&base(), &perturbed(d / 16.0), &tanh_meta(), 1.0, p, eps, &o).unwrap();
            prop_assert!(a.bound >= 0.0 && b.bound < a.bound);
            prop_assert!((b.bound / a.bound - 16f64.powf(-1.0 / a.q)).abs() < 1e-10);
        }

        #[test]
        fn reduction_bound_is_monotone_in_leakage(scale in 0.0f64..3.0) {
            let o = BoundOptions { c2_grid_points: 101, ..Default::default() };
            let leak = |s: f64| rm(&[&[-2.0, 1.0, 1.0], &[0.5 * s, -1.0 - 0.5 * s, 1.0], &[0.3 * s, 0.7, -0.7 - 0.3 * s]]);
            let q_hat = rm(&[&[-1.0, 1.0], &[0.7, -0.7]]);
            let a = theorem2_bound(&leak(scale), &q_hat, 0, &three_meta(), &[0.0], 1, 1.0, 2.0, 1.0, true, &o).unwrap();
            let b = theorem2_bound(&leak(scale + 0.5), &q_hat, 0, &three_meta(), &[0.0], 1, 1.0, 2.0, 1.0, true, &o).unwrap();
            // the base generator changes with the leakage, so compare the
            // perturbation factors, which carry the monotone dependence
            prop_assert!(b.perturbation_factor > a.perturbation_factor);
        }
    }
}
