//! Finite-state generators and the algebra built on them.
//!
//! A [`RateMatrix`] is a validated conservative generator. Everything else
//! in this module is a pure function of one or two of them: transition
//! semigroups, invariant measures, spectral rates, tilted generators with
//! their Feynman–Kac functionals, and the block split used when states are
//! removed from the chain.

mod io;

pub use io::{read_csv, RateMatrixSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, EigensolveFailure};

/// Absolute row-sum tolerance for a conservative generator.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Row residuals below this are absorbed into the diagonal.
pub const REPAIR_TOL: f64 = 1e-9;
/// Eigenvalues of modulus below this (relative to the generator's scale)
/// are taken to be the Perron root.
pub const ZERO_EIGEN_TOL: f64 = 1e-9;
/// Safety factor applied to the grid maximum in [`c2_estimate`].
pub const C2_SAFETY: f64 = 1.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateMatrixError {
    #[error("rate matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("rate matrix has no states")]
    Empty,
    #[error("entry ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("negative off-diagonal rate at ({i}, {j})")]
    NegativeRate { i: usize, j: usize },
    #[error("row {row} does not sum to zero (residual {residual})")]
    NonConservative { row: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state {state} out of range for {n_states} states")]
    InvalidState { state: usize, n_states: usize },
    #[error("generator is reducible")]
    Reducible,
    #[error("no eigenvalue near zero (smallest modulus {modulus})")]
    MissingPerronRoot { modulus: f64 },
    #[error(transparent)]
    Eigensolve(#[from] EigensolveFailure),
    #[error("cannot remove {m} + 1 states from a {n_states}-state chain")]
    BadSplitIndex { m: usize, n_states: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, RateMatrixError>;

/// A conservative, totally stable generator on `{0, …, n_states - 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateMatrixSpec", into = "RateMatrixSpec")]
pub struct RateMatrix {
    q: DMatrix<f64>,
}

impl RateMatrix {
    /// Validates a row-major nested array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(RateMatrixError::NotSquare { rows: n, cols: bad.len() });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        validate(&DMatrix::from_row_slice(n, n, &flat))
    }

    /// The generator with all rates zero.
    pub fn zero(n_states: usize) -> Self {
        assert!(n_states > 0, "a chain needs at least one state");
        Self { q: DMatrix::zeros(n_states, n_states) }
    }

    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    /// `N`, the largest state label.
    pub fn max_label(&self) -> usize {
        self.n_states() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    /// Total jump rate `q_i = -q_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.q.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Whether the directed graph `i -> j` for `q_ij > 0` is strongly
    /// connected.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n_states();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let r = if forward { self.q[(i, j)] } else { self.q[(j, i)] };
                    if i != j && r > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    pub(crate) fn check_state(&self, state: usize) -> Result<()> {
        if state < self.n_states() {
            Ok(())
        } else {
            Err(RateMatrixError::InvalidState { state, n_states: self.n_states() })
        }
    }
}

/// Validates a square array as a conservative generator. Row residuals
/// smaller than [`REPAIR_TOL`] are subtracted from the diagonal.
pub fn validate(raw: &DMatrix<f64>) -> Result<RateMatrix> {
    let (rows, cols) = raw.shape();
    if rows != cols {
        return Err(RateMatrixError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(RateMatrixError::Empty);
    }
    let mut q = raw.clone();
    for i in 0..rows {
        for j in 0..cols {
            if !q[(i, j)].is_finite() {
                return Err(RateMatrixError::NonFinite { i, j });
            }
            if i != j && q[(i, j)] < 0.0 {
                return Err(RateMatrixError::NegativeRate { i, j });
            }
        }
    }
    for i in 0..rows {
        let residual: f64 = q.row(i).iter().sum();
        if residual.abs() > ROW_SUM_TOL {
            if residual.abs() >= REPAIR_TOL {
                return Err(RateMatrixError::NonConservative { row: i, residual });
            }
            q[(i, i)] -= residual;
        }
    }
    Ok(RateMatrix { q })
}

fn check_same_size(a: &RateMatrix, b: &RateMatrix) -> Result<()> {
    if a.n_states() == b.n_states() {
        Ok(())
    } else {
        Err(RateMatrixError::DimensionMismatch { expected: a.n_states(), found: b.n_states() })
    }
}

/// `max_i Σ_j |a_ij - b_ij|`.
pub fn l1_distance(a: &RateMatrix, b: &RateMatrix) -> Result<f64> {
    check_same_size(a, b)?;
    Ok(linalg::norm_inf(&(&a.q - &b.q)))
}

/// `e^{tQ}`.
///
/// # Panics
/// If `t` is negative or not finite.
pub fn transition_matrix(q: &RateMatrix, t: f64) -> DMatrix<f64> {
    assert!(t >= 0.0 && t.is_finite(), "transition time must be finite and nonnegative, got {t}");
    linalg::expm(&(&q.q * t))
}

/// The invariant probability vector of an irreducible generator.
pub fn invariant_measure(q: &RateMatrix) -> Result<DVector<f64>> {
    if !q.is_irreducible() {
        return Err(RateMatrixError::Reducible);
    }
    let n = q.n_states();
    // π Q = 0 with the last balance equation replaced by Σ π_i = 1
    let mut a = q.q.transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or(RateMatrixError::Reducible)?;
    let pi = pi.map(|x| x.max(0.0));
    let total = pi.sum();
    Ok(pi / total)
}

/// Exponential rate `τ` of uniform convergence to equilibrium: minus the
/// largest real part over the nonzero spectrum. Infinite for a single
/// state.
pub fn spectral_gap(q: &RateMatrix) -> Result<f64> {
    if !q.is_irreducible() {
        return Err(RateMatrixError::Reducible);
    }
    if q.n_states() == 1 {
        return Ok(f64::INFINITY);
    }
    let ev = linalg::eigenvalues(&q.q)?;
    let (zero_idx, zero) = ev
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("at least two eigenvalues");
    let scale = linalg::norm_inf(&q.q).max(1.0);
    if zero.norm() >= ZERO_EIGEN_TOL * scale {
        return Err(RateMatrixError::MissingPerronRoot { modulus: zero.norm() });
    }
    let max_re = ev
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != zero_idx)
        .map(|(_, z)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(0.0 - max_re)
}

/// `Q_p = Q + p·diag(κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedGenerator {
    pub base: RateMatrix,
    pub kappa: Vec<f64>,
    pub p: f64,
    pub matrix: DMatrix<f64>,
}

pub fn tilt(q: &RateMatrix, kappa: &[f64], p: f64) -> Result<TiltedGenerator> {
    if kappa.len() != q.n_states() {
        return Err(RateMatrixError::DimensionMismatch { expected: q.n_states(), found: kappa.len() });
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(RateMatrixError::InvalidArgument(format!("tilt exponent p must be positive, got {p}")));
    }
    let mut matrix = q.q.clone();
    for (i, &k) in kappa.iter().enumerate() {
        matrix[(i, i)] += p * k;
    }
    Ok(TiltedGenerator { base: q.clone(), kappa: kappa.to_vec(), p, matrix })
}

/// `η_p = -max Re spec(Q_p)`.
pub fn eta(g: &TiltedGenerator) -> Result<f64> {
    let ev = linalg::eigenvalues(&g.matrix)?;
    let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(0.0 - max_re)
}

/// `E_{i0} exp(p ∫_0^t κ(Λ_s) ds)`, evaluated exactly as `(e^{tQ_p} 1)_{i0}`.
pub fn feynman_kac(q: &RateMatrix, kappa: &[f64], p: f64, t: f64, i0: usize) -> Result<f64> {
    q.check_state(i0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(RateMatrixError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let g = tilt(q, kappa, p)?;
    let e = linalg::expm(&(&g.matrix * t));
    Ok(e.row(i0).sum())
}

/// Grid-certified sandwich constants for `e^{η_p t} (e^{tQ_p} 1)_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Certificate {
    /// Upper constant including the safety factor.
    pub c2: f64,
    /// Grid minimum over states and times, no safety factor.
    pub c1: f64,
    /// Last grid time.
    pub horizon: f64,
    pub grid_points: usize,
    pub eta_p: f64,
}

/// Certifies `C_2(p)` on a uniform grid of `[0, t_max]`. Products of one
/// step exponential are renormalized each step, so the ratio is tracked in
/// log space and neither under- nor overflows for long horizons.
pub fn c2_estimate(g: &TiltedGenerator, t_max: f64, grid_points: usize) -> Result<C2Certificate> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(RateMatrixError::InvalidArgument(format!("t_max must be positive, got {t_max}")));
    }
    if grid_points < 2 {
        return Err(RateMatrixError::InvalidArgument("grid_points must be at least 2".into()));
    }
    let eta_p = eta(g)?;
    let h = t_max / (grid_points - 1) as f64;
    let step = linalg::expm(&(&g.matrix * h));
    let n = g.matrix.nrows();
    let mut v = DVector::from_element(n, 1.0);
    let mut log_scale = 0.0;
    let mut log_max = 0.0f64;
    let mut log_min = 0.0f64;
    for k in 1..grid_points {
        v = &step * v;
        let top = v.max();
        let bottom = v.min();
        let t = h * k as f64;
        log_max = log_max.max(eta_p * t + log_scale + top.ln());
        log_min = log_min.min(eta_p * t + log_scale + bottom.ln());
        log_scale += top.ln();
        v /= top;
    }
    Ok(C2Certificate {
        c2: C2_SAFETY * log_max.exp(),
        c1: log_min.exp(),
        horizon: t_max,
        grid_points,
        eta_p,
    })
}

/// Spectral data attached to a tilted generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub eta_p: f64,
    pub tau: f64,
    pub pi: Vec<f64>,
    pub c2: f64,
    pub c2_grid_horizon: f64,
}

pub fn spectral_summary(g: &TiltedGenerator, t_max: f64, grid_points: usize) -> Result<SpectralSummary> {
    let cert = c2_estimate(g, t_max, grid_points)?;
    Ok(SpectralSummary {
        eta_p: cert.eta_p,
        tau: spectral_gap(&g.base)?,
        pi: invariant_measure(&g.base)?.iter().copied().collect(),
        c2: cert.c2,
        c2_grid_horizon: cert.horizon,
    })
}

/// The four blocks of a generator split after state `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub q0: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q1: DMatrix<f64>,
}

impl Blocks {
    pub fn reassemble(&self) -> DMatrix<f64> {
        let top = self.q0.nrows();
        let n = top + self.q1.nrows();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (top, top)).copy_from(&self.q0);
        out.view_mut((0, top), (top, n - top)).copy_from(&self.a);
        out.view_mut((top, 0), (n - top, top)).copy_from(&self.b);
        out.view_mut((top, top), (n - top, n - top)).copy_from(&self.q1);
        out
    }
}

fn check_split(q: &RateMatrix, m: usize) -> Result<usize> {
    let n = q.n_states();
    if m + 1 >= n {
        return Err(RateMatrixError::BadSplitIndex { m, n_states: n });
    }
    Ok(m + 1)
}

/// Splits `q` into `[[Q0, A], [B, Q1]]` with `Q0` covering states `0..=m`.
pub fn block_split(q: &RateMatrix, m: usize) -> Result<Blocks> {
    let top = check_split(q, m)?;
    let n = q.n_states();
    Ok(Blocks {
        q0: q.q.view((0, 0), (top, top)).into_owned(),
        a: q.q.view((0, top), (top, n - top)).into_owned(),
        b: q.q.view((top, 0), (n - top, top)).into_owned(),
        q1: q.q.view((top, top), (n - top, n - top)).into_owned(),
    })
}

/// Extends a generator `q_hat` on `E = {m+1, …}` to the whole state space:
/// rows `0..=m` are copied from `q`, rows in `E` never leave `E`.
pub fn embed_reduced(q: &RateMatrix, q_hat: &RateMatrix, m: usize) -> Result<RateMatrix> {
    let top = check_split(q, m)?;
    let n = q.n_states();
    if q_hat.n_states() != n - top {
        return Err(RateMatrixError::DimensionMismatch { expected: n - top, found: q_hat.n_states() });
    }
    let mut out = q.q.clone();
    out.view_mut((top, 0), (n - top, top)).fill(0.0);
    out.view_mut((top, top), (n - top, n - top)).copy_from(&q_hat.q);
    let embedded = validate(&out);
    assert!(embedded.is_ok(), "embedding of valid generators is conservative");
    embedded
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rm(rows: &[&[f64]]) -> RateMatrix {
        RateMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn validation_examples() {
        assert!(RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).is_ok());
        assert_eq!(
            RateMatrix::from_rows(&[vec![-1.0, 0.5], vec![1.0, -1.0]]),
            Err(RateMatrixError::NonConservative { row: 0, residual: -0.5 })
        );
        assert!(RateMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).is_ok());
        assert_eq!(
            RateMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]),
            Err(RateMatrixError::NegativeRate { i: 0, j: 1 })
        );
    }

    #[test]
    fn small_residuals_are_repaired_on_the_diagonal() {
        let q = RateMatrix::from_rows(&[vec![-1.0, 1.0 + 1e-10], vec![2.0, -2.0]]).unwrap();
        assert!(q.matrix().row(0).sum().abs() <= ROW_SUM_TOL);
        assert_eq!(q.rate(0, 1), 1.0 + 1e-10);
    }

    #[test]
    fn l1_examples() {
        let a = rm(&[&[-1.0, 1.0], &[2.0, -2.0]]);
        let b = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        assert!(matches!(
            l1_distance(&a, &RateMatrix::zero(3)),
            Err(RateMatrixError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transition_matrix_two_state_closed_form() {
        let q = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        assert_eq!(transition_matrix(&q, 0.0), DMatrix::identity(2, 2));
        for t in [0.1, 0.7, 3.0] {
            let p = transition_matrix(&q, t);
            let stay = 0.5 * (1.0 + (-2.0 * t).exp());
            assert!(close(p[(0, 0)], stay, 1e-14) && close(p[(1, 1)], stay, 1e-14));
            assert!(close(p[(0, 1)], 1.0 - stay, 1e-14) && close(p[(1, 0)], 1.0 - stay, 1e-14));
        }
    }

    #[test]
    fn invariant_measure_examples() {
        let sym = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        let pi = invariant_measure(&sym).unwrap();
        assert!(close(pi[0], 0.5, 1e-15) && close(pi[1], 0.5, 1e-15));
        let q = rm(&[&[-1.0, 1.0], &[2.0, -2.0]]);
        let pi = invariant_measure(&q).unwrap();
        assert!(close(pi[0], 2.0 / 3.0, 1e-15) && close(pi[1], 1.0 / 3.0, 1e-15));
        let absorbing = rm(&[&[-1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(invariant_measure(&absorbing), Err(RateMatrixError::Reducible));
    }

    #[test]
    fn spectral_gap_examples() {
        assert!(close(spectral_gap(&rm(&[&[-1.0, 1.0], &[2.0, -2.0]])).unwrap(), 3.0, 1e-12));
        assert!(close(spectral_gap(&rm(&[&[-1.0, 1.0], &[1.0, -1.0]])).unwrap(), 2.0, 1e-12));
        let cyclic = rm(&[&[-1.0, 1.0, 0.0], &[0.0, -1.0, 1.0], &[1.0, 0.0, -1.0]]);
        assert!(close(spectral_gap(&cyclic).unwrap(), 1.5, 1e-10));
        assert_eq!(spectral_gap(&RateMatrix::zero(2)), Err(RateMatrixError::Reducible));
        assert_eq!(spectral_gap(&RateMatrix::zero(1)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn tilt_and_eta_examples() {
        let q = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        let g = tilt(&q, &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(g.matrix, *q.matrix());
        assert!(eta(&g).unwrap().abs() < 1e-12);

        let g = tilt(&q, &[-1.0, -1.0], 1.0).unwrap();
        assert!(close(eta(&g).unwrap(), 1.0, 1e-12));

        let g = tilt(&q, &[0.3, 0.3], 2.5).unwrap();
        assert!(close(eta(&g).unwrap(), -0.75, 1e-12));
        assert_eq!(g.matrix[(1, 1)], q.rate(1, 1) + 2.5 * 0.3);
        assert!(tilt(&q, &[1.0], 1.0).is_err());
    }

    #[test]
    fn feynman_kac_constant_and_zero_kappa() {
        let q = rm(&[&[-1.0, 1.0, 0.0], &[0.5, -1.0, 0.5], &[0.0, 2.0, -2.0]]);
        for t in [0.0, 0.5, 2.0] {
            assert!(close(feynman_kac(&q, &[0.0; 3], 1.5, t, 1).unwrap(), 1.0, 1e-13));
            let c = -0.4;
            let v = feynman_kac(&q, &[c; 3], 2.0, t, 0).unwrap();
            assert!(close(v, (2.0 * c * t).exp(), 1e-13));
        }
    }

    #[test]
    fn c2_examples() {
        let q = rm(&[&[-1.0, 1.0, 0.0], &[0.5, -1.0, 0.5], &[0.0, 2.0, -2.0]]);
        for kappa in [[0.0; 3], [-0.7; 3]] {
            let cert = c2_estimate(&tilt(&q, &kappa, 2.0).unwrap(), 5.0, 201).unwrap();
            assert!(close(cert.c2, C2_SAFETY, 1e-10), "{}", cert.c2);
            assert!(close(cert.c1, 1.0, 1e-10));
        }
    }

    #[test]
    fn c2_grid_max_is_monotone_and_stabilizes() {
        let q = rm(&[&[-1.0, 1.0, 0.0], &[0.5, -1.0, 0.5], &[0.0, 2.0, -2.0]]);
        let g = tilt(&q, &[0.5, -1.0, -0.3], 2.0).unwrap();
        let tau = spectral_gap(&q).unwrap();
        let h = 0.01;
        let mut previous = 0.0;
        let mut values = Vec::new();
        for horizon in [1.0, 2.0, 5.0, 10.0 / tau, 20.0 / tau, 40.0 / tau] {
            let points = (horizon / h).round() as usize + 1;
            let c2 = c2_estimate(&g, horizon, points).unwrap().c2;
            assert!(c2 >= previous * (1.0 - 1e-12));
            previous = c2;
            values.push(c2);
        }
        let last = values[values.len() - 1];
        assert!(close(values[values.len() - 3], last, 1e-3 * last));
    }

    #[test]
    fn c2_survives_long_horizons() {
        let q = rm(&[&[-1.0, 1.0], &[1.0, -1.0]]);
        let g = tilt(&q, &[30.0, -30.0], 5.0).unwrap();
        let cert = c2_estimate(&g, 200.0, 4001).unwrap();
        assert!(cert.c2.is_finite() && cert.c2 >= C2_SAFETY);
    }

    #[test]
    fn block_split_examples() {
        let q = rm(&[&[-1.0, 1.0], &[2.0, -2.0]]);
        let b = block_split(&q, 0).unwrap();
        assert_eq!(b.q0, DMatrix::from_element(1, 1, -1.0));
        assert_eq!(b.a, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(b.b, DMatrix::from_element(1, 1, 2.0));
        assert_eq!(b.q1, DMatrix::from_element(1, 1, -2.0));
        assert_eq!(b.reassemble(), *q.matrix());
        assert_eq!(block_split(&q, 1), Err(RateMatrixError::BadSplitIndex { m: 1, n_states: 2 }));

        let q4 = rm(&[
            &[-3.0, 1.0, 1.0, 1.0],
            &[1.0, -2.0, 0.5, 0.5],
            &[0.2, 0.3, -1.0, 0.5],
            &[1.0, 1.0, 1.0, -3.0],
        ]);
        let b = block_split(&q4, 1).unwrap();
        for block in [&b.q0, &b.a, &b.b, &b.q1] {
            assert_eq!(block.shape(), (2, 2));
        }
        assert_eq!(b.reassemble(), *q4.matrix());
    }

    #[test]
    fn embed_examples() {
        let q = rm(&[&[-1.0, 1.0], &[2.0, -2.0]]);
        let e = embed_reduced(&q, &RateMatrix::zero(1), 0).unwrap();
        assert_eq!(e.rows(), vec![vec![-1.0, 1.0], vec![0.0, 0.0]]);

        let q3 = rm(&[&[-1.0, 0.5, 0.5], &[1.0, -1.5, 0.5], &[0.3, 0.7, -1.0]]);
        let blocks = block_split(&q3, 0).unwrap();
        // Q1 made conservative by absorbing the exits into E^c
        let mut fixed = blocks.q1.clone();
        for i in 0..2 {
            let s: f64 = blocks.q1.row(i).sum();
            fixed[(i, i)] -= s;
        }
        let q_hat = validate(&fixed).unwrap();
        let e = embed_reduced(&q3, &q_hat, 0).unwrap();
        let diff = e.matrix() - q3.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let in_b = i >= 1 && j == 0;
                let on_q1_diagonal = i >= 1 && i == j;
                if !in_b && !on_q1_diagonal {
                    assert_eq!(diff[(i, j)], 0.0);
                }
            }
        }
        let bound = linalg::norm_inf(&blocks.b) + linalg::norm_inf(&(&blocks.q1 - q_hat.matrix()));
        assert!(l1_distance(&q3, &e).unwrap() <= bound + 1e-15);
        assert!(embed_reduced(&q3, &RateMatrix::zero(1), 0).is_err());
    }

    fn generator(n: usize) -> impl Strategy<Value = RateMatrix> {
        prop::collection::vec(0.0f64..3.0, n * n).prop_map(move |v| {
            let mut m = DMatrix::from_row_slice(n, n, &v);
            for i in 0..n {
                m[(i, i)] = 0.0;
                let s: f64 = m.row(i).sum();
                m[(i, i)] = -s;
            }
            validate(&m).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup_property(q in (1usize..5).prop_flat_map(generator), t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
            let lhs = transition_matrix(&q, t1 + t2);
            let rhs = transition_matrix(&q, t1) * transition_matrix(&q, t2);
            prop_assert!((lhs - rhs).abs().max() < 1e-8);
        }

        #[test]
        fn transition_rows_are_distributions(q in (1usize..5).prop_flat_map(generator), t in 0.0f64..5.0) {
            let p = transition_matrix(&q, t);
            for row in p.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&x| x > -1e-12));
            }
        }

        #[test]
        fn feynman_kac_with_zero_kappa_is_one(q in (1usize..5).prop_flat_map(generator), t in 0.0f64..4.0) {
            let n = q.n_states();
            for i in 0..n {
                prop_assert!((feynman_kac(&q, &vec![0.0; n], 1.0, t, i).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn l1_is_a_metric(
            (a, b, c) in (1usize..5).prop_flat_map(|n| (generator(n), generator(n), generator(n)))
        ) {
            let ab = l1_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, l1_distance(&b, &a).unwrap());
            prop_assert!(ab <= l1_distance(&a, &c).unwrap() + l1_distance(&c, &b).unwrap() + 1e-12);
            prop_assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
            if a != b { prop_assert!(ab > 0.0); }
        }

        #[test]
        fn l1_matches_entrywise_oracle((a, b) in (1usize..6).prop_flat_map(|n| (generator(n), generator(n)))) {
            let ra = a.rows();
            let rb = b.rows();
            let mut best = 0.0f64;
            for i in 0..ra.len() {
                let mut s = 0.0;
                for j in 0..ra.len() {
                    s += (ra[i][j] - rb[i][j]).abs();
                }
                best = best.max(s);
            }
            prop_assert_eq!(l1_distance(&a, &b).unwrap(), best);
        }

        #[test]
        fn invariant_measure_is_stationary(q in (2usize..5).prop_flat_map(generator)) {
            prop_assume!(q.is_irreducible());
            let pi = invariant_measure(&q).unwrap();
            prop_assert!((pi.sum() - 1.0).abs() < 1e-10);
            prop_assert!(pi.iter().all(|&x| x >= 0.0));
            let moved = pi.transpose() * transition_matrix(&q, 1.0);
            let gap: f64 = moved.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(gap < 1e-8);
            prop_assert!(spectral_gap(&q).unwrap() > 0.0);
        }

        #[test]
        fn feynman_kac_sandwich_on_grid(
            q in (2usize..4).prop_flat_map(generator),
            raw_kappa in prop::collection::vec(-1.0f64..1.0, 3),
            p in 1.1f64..4.0,
        ) {
            let n = q.n_states();
            let kappa = &raw_kappa[..n];
            let g = tilt(&q, kappa, p).unwrap();
            let cert = c2_estimate(&g, 3.0, 31).unwrap();
            for k in 0..31 {
                let t = 0.1 * k as f64;
                for i0 in 0..n {
                    let fk = feynman_kac(&q, kappa, p, t, i0).unwrap();
                    let scaled = fk * (cert.eta_p * t).exp();
                    prop_assert!(scaled <= cert.c2 * (1.0 + 1e-9));
                    prop_assert!(scaled >= cert.c1 * (1.0 - 1e-9));
                }
            }
        }

        #[test]
        fn decay_to_equilibrium_at_rate_tau(q in (2usize..5).prop_flat_map(generator)) {
            prop_assume!(q.is_irreducible());
            let pi = invariant_measure(&q).unwrap();
            let tau = spectral_gap(&q).unwrap();
            let dist = |t: f64| {
                let p = transition_matrix(&q, t);
                p.row_iter()
                    .map(|r| r.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            };
            // fit c on [0, 2]; further out the envelope must hold up to a
            // polynomial factor from defective eigenvalues
            let c = (0..=20)
                .map(|k| {
                    let t = 0.1 * k as f64;
                    dist(t) * (tau * t).exp()
                })
                .fold(0.0, f64::max);
            for k in 1..=10 {
                let t = 2.0 + k as f64;
                let d = dist(t);
                if d < 1e-12 {
                    break;
                }
                let envelope = c * (-tau * t).exp() * (1.0 + t).powi(q.n_states() as i32 - 1);
                prop_assert!(d <= envelope, "t={} d={} envelope={}", t, d, envelope);
            }
        }
    }
}
