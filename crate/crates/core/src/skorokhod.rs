//! Coupling of two chains through one marked Poisson clock.
//!
//! Every off-diagonal rate `q_ij` owns a half-open interval `Γ_ij` of
//! length `q_ij` on the half line. Intervals are laid out row by row in
//! state order and, inside a row, in ascending target order. A clock event
//! with mark `ξ` moves a chain in state `i` to `ℓ` when `ξ ∈ Γ_iℓ` and
//! leaves it in place otherwise. Two chains with generators `Q` and `Q̃`
//! read the same events through their own partitions, so they agree for as
//! long as the marks fall into the overlap of their intervals.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::linalg;
use crate::quadrature::{adaptive_simpson, QuadratureError};
use crate::ratematrix::{l1_distance, validate, RateMatrix, RateMatrixError};
use crate::rng::{StreamKey, CHAIN_CLOCK, GILLESPIE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkorokhodError {
    #[error(transparent)]
    RateMatrix(#[from] RateMatrixError),
    #[error("clock rate {rate} is below the required {required}")]
    ClockRateTooSmall { rate: f64, required: f64 },
    #[error("time {t} exceeds the path horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("quadrature and exact integral disagree by {gap}")]
    QuadratureMismatch { gap: f64 },
}

pub type Result<T> = std::result::Result<T, SkorokhodError>;

/// The intervals `Γ_ij` of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPartition {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    row_offset: Vec<f64>,
    row_end: Vec<f64>,
}

impl IntervalPartition {
    pub fn n_states(&self) -> usize {
        self.n
    }

    /// `Γ_ij` as `(lo, hi)`, or `None` when empty.
    pub fn interval(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        let k = i * self.n + j;
        (i != j && self.hi[k] > self.lo[k]).then(|| (self.lo[k], self.hi[k]))
    }

    /// Start of row `i`: `Σ_{k<i} q_k`.
    pub fn row_offset(&self, i: usize) -> f64 {
        self.row_offset[i]
    }

    /// End of the mark range used by any row.
    pub fn total_length(&self) -> f64 {
        self.row_end.last().copied().unwrap_or(0.0)
    }
}

pub fn build_partition(q: &RateMatrix) -> IntervalPartition {
    let n = q.n_states();
    let mut lo = vec![0.0; n * n];
    let mut hi = vec![0.0; n * n];
    let mut row_offset = Vec::with_capacity(n);
    let mut row_end = Vec::with_capacity(n);
    let mut cursor = 0.0;
    for i in 0..n {
        row_offset.push(cursor);
        for j in (0..n).filter(|&j| j != i) {
            lo[i * n + j] = cursor;
            cursor += q.rate(i, j);
            hi[i * n + j] = cursor;
        }
        row_end.push(cursor);
    }
    IntervalPartition { n, lo, hi, row_offset, row_end }
}

/// The state reached from `i` by a clock event with mark `z`.
pub fn mark_target(p: &IntervalPartition, i: usize, z: f64) -> usize {
    if z < p.row_offset[i] || z >= p.row_end[i] {
        return i;
    }
    let row = i * p.n;
    (0..p.n)
        .find(|&j| j != i && p.lo[row + j] <= z && z < p.hi[row + j])
        .unwrap_or(i)
}

/// Rate of the shared clock: `n(n-1)·H` with `n` the number of states and
/// `H` the largest exit rate of either generator.
pub fn clock_rate(q: &RateMatrix, q_tilde: &RateMatrix) -> f64 {
    let n = q.n_states() as f64;
    let h = q.max_exit_rate().max(q_tilde.max_exit_rate());
    n * (n - 1.0) * h
}

/// Events `(ζ_k, ξ_k)` of a marked Poisson process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonClock {
    pub rate: f64,
    pub horizon: f64,
    pub events: Vec<(f64, f64)>,
}

/// Streams clock events without storing them.
struct ClockStream<R> {
    rng: R,
    rate: f64,
    horizon: f64,
    now: f64,
}

impl<R: Rng> Iterator for ClockStream<R> {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<(f64, f64)> {
        if self.rate <= 0.0 {
            return None;
        }
        let gap: f64 = Exp1.sample(&mut self.rng);
        self.now += gap / self.rate;
        if self.now > self.horizon {
            self.rate = 0.0;
            return None;
        }
        let mark = self.rng.random::<f64>() * self.rate;
        Some((self.now, mark))
    }
}

fn check_clock_args(rate: f64, horizon: f64) -> Result<()> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(SkorokhodError::InvalidArgument(format!("clock rate must be nonnegative, got {rate}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SkorokhodError::InvalidArgument(format!("horizon must be nonnegative, got {horizon}")));
    }
    Ok(())
}

/// Draws the clock for one path from the chain-clock stream of `key`.
pub fn simulate_clock(rate: f64, horizon: f64, key: StreamKey) -> Result<PoissonClock> {
    check_clock_args(rate, horizon)?;
    let stream = ClockStream { rng: key.rng(CHAIN_CLOCK), rate, horizon, now: 0.0 };
    Ok(PoissonClock { rate, horizon, events: stream.collect() })
}

/// Piecewise-constant pair `(Λ, Λ̃)`. `states[k]` holds on
/// `[times[k], times[k+1])`, the last one up to `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledChainPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub states: Vec<(usize, usize)>,
}

impl CoupledChainPath {
    pub fn initial_state(&self) -> usize {
        self.states[0].0
    }

    /// Value at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> (usize, usize) {
        let k = self.times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }

    /// Jump epochs after time 0.
    pub fn jump_epochs(&self) -> &[f64] {
        &self.times[1..]
    }

    /// One component as a single-chain path.
    pub fn component(&self, tilde: bool) -> ChainPath {
        let mut times = Vec::with_capacity(self.times.len());
        let mut states: Vec<usize> = Vec::with_capacity(self.states.len());
        for (&t, &(a, b)) in self.times.iter().zip(&self.states) {
            let s = if tilde { b } else { a };
            if states.last() != Some(&s) {
                times.push(t);
                states.push(s);
            }
        }
        ChainPath { horizon: self.horizon, times, states }
    }

    pub fn is_synchronous(&self) -> bool {
        self.states.iter().all(|(a, b)| a == b)
    }
}

/// Time spent with `Λ ≠ Λ̃` on `[0, t]`.
pub fn mismatch_occupation(path: &CoupledChainPath, t: f64) -> Result<f64> {
    if t > path.horizon {
        return Err(SkorokhodError::HorizonExceeded { t, horizon: path.horizon });
    }
    let mut total = 0.0;
    for (k, &(a, b)) in path.states.iter().enumerate() {
        let start = path.times[k];
        if start >= t {
            break;
        }
        let end = path.times.get(k + 1).copied().unwrap_or(path.horizon).min(t);
        if a != b {
            total += end - start;
        }
    }
    Ok(total)
}

/// Both partitions plus the clock rate they require.
#[derive(Debug, Clone)]
pub struct Coupler {
    gamma: IntervalPartition,
    gamma_tilde: IntervalPartition,
    required_rate: f64,
}

impl Coupler {
    pub fn new(q: &RateMatrix, q_tilde: &RateMatrix) -> Result<Self> {
        if q.n_states() != q_tilde.n_states() {
            return Err(RateMatrixError::DimensionMismatch { expected: q.n_states(), found: q_tilde.n_states() }.into());
        }
        Ok(Self {
            gamma: build_partition(q),
            gamma_tilde: build_partition(q_tilde),
            required_rate: clock_rate(q, q_tilde),
        })
    }

    pub fn n_states(&self) -> usize {
        self.gamma.n
    }

    pub fn required_rate(&self) -> f64 {
        self.required_rate
    }

    fn check_state(&self, i0: usize) -> Result<()> {
        if i0 < self.n_states() {
            Ok(())
        } else {
            Err(RateMatrixError::InvalidState { state: i0, n_states: self.n_states() }.into())
        }
    }

    fn drive(&self, i0: usize, horizon: f64, events: impl Iterator<Item = (f64, f64)>) -> CoupledChainPath {
        let mut times = vec![0.0];
        let mut states = vec![(i0, i0)];
        let (mut a, mut b) = (i0, i0);
        for (time, mark) in events {
            let na = mark_target(&self.gamma, a, mark);
            let nb = mark_target(&self.gamma_tilde, b, mark);
            if (na, nb) != (a, b) {
                a = na;
                b = nb;
                times.push(time);
                states.push((a, b));
            }
        }
        CoupledChainPath { horizon, times, states }
    }

    /// Runs both chains on a pre-drawn clock.
    pub fn simulate(&self, i0: usize, clock: &PoissonClock) -> Result<CoupledChainPath> {
        self.check_state(i0)?;
        if clock.rate < self.required_rate {
            return Err(SkorokhodError::ClockRateTooSmall { rate: clock.rate, required: self.required_rate });
        }
        Ok(self.drive(i0, clock.horizon, clock.events.iter().copied()))
    }

    /// Draws the clock on the fly at the required rate. Identical to
    /// `simulate(i0, &simulate_clock(required_rate, horizon, key))`.
    pub fn simulate_path(&self, i0: usize, horizon: f64, key: StreamKey) -> Result<CoupledChainPath> {
        self.check_state(i0)?;
        check_clock_args(self.required_rate, horizon)?;
        let stream = ClockStream { rng: key.rng(CHAIN_CLOCK), rate: self.required_rate, horizon, now: 0.0 };
        Ok(self.drive(i0, horizon, stream))
    }
}

pub fn simulate_coupled(
    q: &RateMatrix,
    q_tilde: &RateMatrix,
    i0: usize,
    clock: &PoissonClock,
) -> Result<CoupledChainPath> {
    Coupler::new(q, q_tilde)?.simulate(i0, clock)
}

/// Piecewise-constant path of a single chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub states: Vec<usize>,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }

    /// `∫_0^t f(Λ_s) ds`.
    pub fn integrate(&self, t: f64, f: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (k, &s) in self.states.iter().enumerate() {
            let start = self.times[k];
            if start >= t {
                break;
            }
            let end = self.times.get(k + 1).copied().unwrap_or(self.horizon).min(t);
            total += f(s) * (end - start);
        }
        total
    }
}

/// Plain jump-chain simulation with exponential holding times, used as an
/// oracle independent of the interval construction.
pub fn gillespie(q: &RateMatrix, i0: usize, horizon: f64, key: StreamKey) -> Result<ChainPath> {
    q.check_state(i0)?;
    check_clock_args(0.0, horizon)?;
    let mut rng = key.rng(GILLESPIE);
    let mut times = vec![0.0];
    let mut states = vec![i0];
    let mut now = 0.0;
    let mut state = i0;
    loop {
        let exit = q.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(&mut rng);
        now += hold / exit;
        if now > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * exit;
        let mut next = state;
        for j in (0..q.n_states()).filter(|&j| j != state) {
            next = j;
            if u < q.rate(state, j) {
                break;
            }
            u -= q.rate(state, j);
        }
        state = next;
        times.push(now);
        states.push(state);
    }
    Ok(ChainPath { horizon, times, states })
}

fn overlap(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> f64 {
    match (a, b) {
        (Some((a0, a1)), Some((b0, b1))) => (a1.min(b1) - a0.max(b0)).max(0.0),
        _ => 0.0,
    }
}

/// Generator of the pair `(Λ, Λ̃)` on `S × S`, with `(i, j)` stored at
/// index `i·n + j`. It does not depend on the clock rate once that rate
/// covers both partitions.
pub fn coupling_generator(q: &RateMatrix, q_tilde: &RateMatrix) -> Result<RateMatrix> {
    let c = Coupler::new(q, q_tilde)?;
    let n = c.n_states();
    let (g, gt) = (&c.gamma, &c.gamma_tilde);
    let mut qc = DMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let from = i * n + j;
            for k in 0..n {
                for l in 0..n {
                    if (k, l) == (i, j) {
                        continue;
                    }
                    let rate = match (k == i, l == j) {
                        (false, false) => overlap(g.interval(i, k), gt.interval(j, l)),
                        // first component stays: Γ̃_jl minus the parts that move Λ
                        (true, false) => {
                            let moved: f64 = (0..n).filter(|&k2| k2 != i).map(|k2| overlap(g.interval(i, k2), gt.interval(j, l))).sum();
                            gt.interval(j, l).map_or(0.0, |(a, b)| b - a) - moved
                        }
                        (false, true) => {
                            let moved: f64 = (0..n).filter(|&l2| l2 != j).map(|l2| overlap(g.interval(i, k), gt.interval(j, l2))).sum();
                            g.interval(i, k).map_or(0.0, |(a, b)| b - a) - moved
                        }
                        (true, true) => unreachable!(),
                    };
                    qc[(from, k * n + l)] = rate.max(0.0);
                }
            }
            let out: f64 = qc.row(from).sum();
            qc[(from, from)] = -out;
        }
    }
    Ok(validate(&qc)?)
}

fn pair_size(qc: &RateMatrix) -> usize {
    let n = (qc.n_states() as f64).sqrt().round() as usize;
    assert_eq!(n * n, qc.n_states(), "joint generator must act on S x S");
    n
}

/// `P(Λ_t ≠ Λ̃_t)` from the joint generator, both chains started at `i0`.
pub fn mismatch_probability_exact(qc: &RateMatrix, i0: usize, t: f64) -> f64 {
    let n = pair_size(qc);
    let p = linalg::expm(&(qc.matrix() * t));
    let row = i0 * n + i0;
    (0..n * n).filter(|&c| c / n != c % n).map(|c| p[(row, c)]).sum()
}

/// `∫_0^t P(Λ_s ≠ Λ̃_s) ds` by adaptive Simpson, verified against the
/// closed form from the augmented exponential `exp(t [[Qc, I], [0, 0]])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchIntegral {
    pub quadrature: f64,
    pub exact: f64,
    pub quadrature_error: f64,
}

/// Largest accepted gap between the two evaluations.
pub const MISMATCH_QUADRATURE_TOL: f64 = 1e-6;

pub fn mismatch_integral_exact(qc: &RateMatrix, i0: usize, t: f64) -> Result<MismatchIntegral> {
    let n = pair_size(qc);
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SkorokhodError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let quad = adaptive_simpson(|s| mismatch_probability_exact(qc, i0, s), 0.0, t, 1e-10, 1e-12)?;

    let m = n * n;
    let mut aug = DMatrix::zeros(2 * m, 2 * m);
    aug.view_mut((0, 0), (m, m)).copy_from(&(qc.matrix() * t));
    aug.view_mut((0, m), (m, m)).copy_from(&(DMatrix::<f64>::identity(m, m) * t));
    let e = linalg::expm(&aug);
    let row = i0 * n + i0;
    let exact: f64 = (0..m).filter(|&c| c / n != c % n).map(|c| e[(row, m + c)]).sum();

    let gap = (quad.value - exact).abs();
    if gap >= MISMATCH_QUADRATURE_TOL {
        return Err(SkorokhodError::QuadratureMismatch { gap });
    }
    Ok(MismatchIntegral { quadrature: quad.value, exact, quadrature_error: gap })
}

/// `N² t² ‖Q − Q̃‖_ℓ1` with `N` the largest state label.
pub fn lemma2_bound(q: &RateMatrix, q_tilde: &RateMatrix, t: f64) -> Result<f64> {
    let n = q.max_label() as f64;
    Ok(n * n * t * t * l1_distance(q, q_tilde)?)
}

/// Writes paths as CSV rows `(path_id, time, lambda, lambda_tilde)`, one
/// row per stored epoch.
pub fn write_paths_csv<'a, W: Write>(
    writer: W,
    paths: impl IntoIterator<Item = (u64, &'a CoupledChainPath)>,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["path_id", "time", "lambda", "lambda_tilde"])?;
    for (id, path) in paths {
        for (&t, &(a, b)) in path.times.iter().zip(&path.states) {
            w.serialize((id, t, a, b))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::{map_paths, MeanEstimate};
    use crate::ratematrix::transition_matrix;
    use proptest::prelude::*;

    fn rm(rows: &[&[f64]]) -> RateMatrix {
        RateMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn two_state() -> RateMatrix {
        rm(&[&[-1.0, 1.0], &[2.0, -2.0]])
    }

    #[test]
    fn partition_layout() {
        let p = build_partition(&two_state());
        assert_eq!(p.interval(0, 1), Some((0.0, 1.0)));
        assert_eq!(p.interval(1, 0), Some((1.0, 3.0)));
        assert_eq!(p.interval(0, 0), None);
        assert_eq!(p.total_length(), 3.0);

        let q = rm(&[&[-1.0, 0.0, 1.0], &[0.5, -1.0, 0.5], &[0.0, 2.0, -2.0]]);
        let p = build_partition(&q);
        assert_eq!(p.interval(0, 1), None);
        assert_eq!(p.interval(0, 2), Some((0.0, 1.0)));
        assert_eq!(p.interval(1, 0), Some((1.0, 1.5)));
        assert_eq!(p.interval(1, 2), Some((1.5, 2.0)));
        assert_eq!(p.interval(2, 1), Some((2.0, 4.0)));
        assert_eq!(p.row_offset(2), 2.0);
    }

    #[test]
    fn mark_target_examples() {
        let p = build_partition(&two_state());
        assert_eq!(mark_target(&p, 0, 0.5), 1);
        assert_eq!(mark_target(&p, 0, 2.0), 0);
        assert_eq!(mark_target(&p, 1, 2.0), 0);
        // half-open boundaries
        assert_eq!(mark_target(&p, 0, 1.0), 0);
        assert_eq!(mark_target(&p, 1, 1.0), 0);
        assert_eq!(mark_target(&p, 1, 3.0), 1);
    }

    #[test]
    fn clock_rate_covers_the_partitions() {
        let q = two_state();
        let qt = rm(&[&[-1.5, 1.5], &[1.0, -1.0]]);
        assert_eq!(clock_rate(&q, &qt), 2.0 * 1.0 * 2.0);
        assert!(clock_rate(&q, &qt) >= build_partition(&q).total_length());
    }

    #[test]
    fn clock_is_reproducible_and_well_formed() {
        let key = StreamKey::new(11, 0);
        let a = simulate_clock(3.0, 5.0, key).unwrap();
        let b = simulate_clock(3.0, 5.0, key).unwrap();
        assert_eq!(a, b);
        assert!(a.events.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(a.events.iter().all(|&(t, z)| t <= 5.0 && (0.0..=3.0).contains(&z)));
        assert!(simulate_clock(0.0, 5.0, key).unwrap().events.is_empty());
    }

    #[test]
    fn clock_count_statistics() {
        let (rate, horizon) = (100.0, 100.0);
        let clock = simulate_clock(rate, horizon, StreamKey::new(3, 1)).unwrap();
        let expected = rate * horizon;
        assert!((clock.events.len() as f64 - expected).abs() < 5.0 * expected.sqrt());
        let gaps: Vec<f64> = std::iter::once(clock.events[0].0)
            .chain(clock.events.windows(2).map(|w| w[1].0 - w[0].0))
            .collect();
        let est = MeanEstimate::from_samples(&gaps);
        assert!(est.z_score(1.0 / rate).abs() < 5.0);
    }

    #[test]
    fn clock_rate_guard() {
        let q = two_state();
        let clock = simulate_clock(1.0, 1.0, StreamKey::new(1, 0)).unwrap();
        assert!(matches!(
            simulate_coupled(&q, &q, 0, &clock),
            Err(SkorokhodError::ClockRateTooSmall { .. })
        ));
    }

    #[test]
    fn streamed_and_stored_clocks_agree() {
        let q = two_state();
        let qt = rm(&[&[-1.5, 1.5], &[1.0, -1.0]]);
        let c = Coupler::new(&q, &qt).unwrap();
        for path in 0..20 {
            let key = StreamKey::new(5, path);
            let clock = simulate_clock(c.required_rate(), 3.0, key).unwrap();
            assert_eq!(c.simulate(1, &clock).unwrap(), c.simulate_path(1, 3.0, key).unwrap());
        }
    }

    #[test]
    fn identical_generators_never_split() {
        let q = rm(&[&[-1.0, 0.5, 0.5], &[1.0, -1.5, 0.5], &[0.3, 0.7, -1.0]]);
        let c = Coupler::new(&q, &q).unwrap();
        for path in 0..200 {
            let p = c.simulate_path(0, 4.0, StreamKey::new(9, path)).unwrap();
            assert!(p.is_synchronous());
            assert_eq!(mismatch_occupation(&p, 4.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn mismatch_occupation_counts_interval_lengths() {
        let path = CoupledChainPath {
            horizon: 1.0,
            times: vec![0.0, 0.3, 0.7],
            states: vec![(0, 0), (1, 0), (1, 1)],
        };
        assert!((mismatch_occupation(&path, 1.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((mismatch_occupation(&path, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(mismatch_occupation(&path, 1.5), Err(SkorokhodError::HorizonExceeded { .. })));
        assert_eq!(path.state_at(0.3), (1, 0));
        assert_eq!(path.state_at(0.29), (0, 0));
        assert_eq!(path.component(true).states, vec![0, 1]);
    }

    #[test]
    fn marginal_occupation_matches_semigroup() {
        let q = rm(&[&[-1.0, 0.5, 0.5], &[1.0, -1.5, 0.5], &[0.3, 0.7, -1.0]]);
        let qt = rm(&[&[-1.2, 0.5, 0.7], &[1.0, -1.0, 0.0], &[0.3, 0.9, -1.2]]);
        let c = Coupler::new(&q, &qt).unwrap();
        let n_paths = 20_000;
        let ends = map_paths(n_paths, |k| c.simulate_path(2, 1.0, StreamKey::new(21, k)).unwrap().state_at(1.0));
        for (tilde, gen) in [(false, &q), (true, &qt)] {
            let p = transition_matrix(gen, 1.0);
            for s in 0..3 {
                let hits: Vec<f64> = ends
                    .iter()
                    .map(|&(a, b)| f64::from(u8::from((if tilde { b } else { a }) == s)))
                    .collect();
                let est = MeanEstimate::from_samples(&hits);
                assert!(est.z_score(p[(2, s)]).abs() < 4.0, "state {s}: {est:?} vs {}", p[(2, s)]);
            }
        }
    }

    #[test]
    fn gillespie_matches_semigroup() {
        let q = rm(&[&[-1.0, 0.5, 0.5], &[1.0, -1.5, 0.5], &[0.3, 0.7, -1.0]]);
        let ends = map_paths(20_000, |k| gillespie(&q, 0, 0.8, StreamKey::new(2, k)).unwrap().state_at(0.8));
        let p = transition_matrix(&q, 0.8);
        for s in 0..3 {
            let hits: Vec<f64> = ends.iter().map(|&e| f64::from(u8::from(e == s))).collect();
            assert!(MeanEstimate::from_samples(&hits).z_score(p[(0, s)]).abs() < 4.0);
        }
    }

    #[test]
    fn joint_generator_two_state_overlap() {
        let q = two_state();
        let qt = rm(&[&[-1.5, 1.5], &[1.0, -1.0]]);
        let qc = coupling_generator(&q, &qt).unwrap();
        // (0,0) -> (1,1) at rate |[0,1) ∩ [0,1.5)|
        assert_eq!(qc.rate(0, 3), 1.0);
        assert_eq!(qc.rate(0, 1), 0.5);
        assert_eq!(qc.rate(0, 2), 0.0);
    }

    #[test]
    fn joint_generator_is_closed_on_the_diagonal_for_equal_inputs() {
        let q = rm(&[&[-1.0, 0.5, 0.5], &[1.0, -1.5, 0.5], &[0.3, 0.7, -1.0]]);
        let qc = coupling_generator(&q, &q).unwrap();
        for i in 0..3 {
            for c in 0..9 {
                if c / 3 != c % 3 {
                    assert_eq!(qc.rate(i * 3 + i, c), 0.0);
                }
            }
        }
        for t in [0.0, 0.5, 3.0] {
            assert_eq!(mismatch_probability_exact(&qc, 1, t), 0.0);
        }
    }

    #[test]
    fn mismatch_probability_is_zero_at_time_zero_and_matches_simulation() {
        let q = two_state();
        let qt = rm(&[&[-1.4, 1.4], &[1.7, -1.7]]);
        let qc = coupling_generator(&q, &qt).unwrap();
        assert_eq!(mismatch_probability_exact(&qc, 0, 0.0), 0.0);
        let c = Coupler::new(&q, &qt).unwrap();
        let hits = map_paths(20_000, |k| {
            let p = c.simulate_path(0, 1.0, StreamKey::new(4, k)).unwrap();
            let (a, b) = p.state_at(1.0);
            f64::from(u8::from(a != b))
        });
        let est = MeanEstimate::from_samples(&hits);
        assert!(est.z_score(mismatch_probability_exact(&qc, 0, 1.0)).abs() < 4.0);
    }

    #[test]
    fn mismatch_slope_at_small_times() {
        let q = two_state();
        let qt = rm(&[&[-1.0, 1.0], &[2.3, -2.3]]);
        let qc = coupling_generator(&q, &qt).unwrap();
        let delta = l1_distance(&q, &qt).unwrap();
        let n = 1.0;
        for t in [1e-4, 1e-3, 1e-2] {
            assert!(mismatch_probability_exact(&qc, 1, t) / t <= 2.0 * n * delta + 1e-9);
        }
    }

    #[test]
    fn csv_export() {
        let path = CoupledChainPath { horizon: 1.0, times: vec![0.0, 0.25], states: vec![(0, 0), (1, 0)] };
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, [(7u64, &path)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "path_id,time,lambda,lambda_tilde\n7,0.0,0,0\n7,0.25,1,0\n");
    }

    fn generator(n: usize) -> impl Strategy<Value = RateMatrix> {
        prop::collection::vec(0.0f64..2.0, n * n).prop_map(move |v| {
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
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn partition_invariants(q in (1usize..5).prop_flat_map(generator)) {
            let p = build_partition(&q);
            let n = q.n_states();
            let mut spans = Vec::new();
            for i in 0..n {
                let mut covered = 0.0;
                for j in 0..n {
                    if let Some((a, b)) = p.interval(i, j) {
                        prop_assert!((b - a - q.rate(i, j)).abs() < 1e-12);
                        prop_assert!(a >= p.row_offset(i) - 1e-12);
                        covered += b - a;
                        spans.push((a, b));
                    }
                }
                prop_assert!((covered - q.exit_rate(i)).abs() < 1e-12);
            }
            spans.sort_by(|x, y| x.0.total_cmp(&y.0));
            prop_assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0 + 1e-12));
        }

        #[test]
        fn joint_generator_marginals((q, qt) in (1usize..4).prop_flat_map(|n| (generator(n), generator(n)))) {
            let n = q.n_states();
            let qc = coupling_generator(&q, &qt).unwrap();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if k == i { continue; }
                        let first: f64 = (0..n).map(|l| qc.rate(i * n + j, k * n + l)).sum();
                        prop_assert!((first - q.rate(i, k)).abs() < 1e-12);
                        let second: f64 = (0..n).map(|l| qc.rate(i * n + j, l * n + k)).sum();
                        prop_assert!((second - qt.rate(j, k)).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn lemma2_exact_integral_is_bounded_and_monotone(
            (q, qt) in (2usize..4).prop_flat_map(|n| (generator(n), generator(n))),
            i0 in 0usize..2,
        ) {
            let qc = coupling_generator(&q, &qt).unwrap();
            let mut previous = 0.0;
            for t in [0.25, 0.5, 1.0, 2.0] {
                let integral = mismatch_integral_exact(&qc, i0, t).unwrap();
                prop_assert!(integral.quadrature_error < MISMATCH_QUADRATURE_TOL);
                prop_assert!(integral.exact <= lemma2_bound(&q, &qt, t).unwrap() + 1e-12);
                prop_assert!(integral.exact >= previous - 1e-12);
                previous = integral.exact;
            }
        }

        #[test]
        fn swapping_generators_swaps_components(
            (q, qt) in (2usize..4).prop_flat_map(|n| (generator(n), generator(n))),
            seed in 0u64..1000,
        ) {
            let ab = Coupler::new(&q, &qt).unwrap().simulate_path(0, 2.0, StreamKey::new(seed, 0)).unwrap();
            let ba = Coupler::new(&qt, &q).unwrap().simulate_path(0, 2.0, StreamKey::new(seed, 0)).unwrap();
            let swapped: Vec<_> = ab.states.iter().map(|&(a, b)| (b, a)).collect();
            prop_assert_eq!(&ab.times, &ba.times);
            prop_assert_eq!(swapped, ba.states);
        }
    }
}
