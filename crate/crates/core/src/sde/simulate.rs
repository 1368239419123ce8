//! Euler–Maruyama for the coupled pair `(X, X̃)`.
//!
//! Each grid step `[t_k, t_{k+1}]` is split at the chain jump epochs inside
//! it. On every sub-interval the coefficients are evaluated at the grid
//! value `X_{t_k}` with the exact regime of that sub-interval, and the
//! Brownian increment over the sub-interval comes from the bridge-refined
//! path. State-independent coefficients therefore give the same grid values
//! whether or not steps are split.

use serde::{Deserialize, Serialize};

use super::brownian::{grid_steps, BrownianPath, PathPoint};
use super::{Result, SdeError, SwitchingCoefficients};
use crate::parallel::{map_paths, MeanEstimate};
use crate::ratematrix::RateMatrix;
use crate::rng::StreamKey;
use crate::skorokhod::{gillespie, ChainPath, CoupledChainPath};

/// Largest tolerated fraction of non-finite paths in a Monte Carlo run.
pub const MAX_FAILURE_RATE: f64 = 1e-3;

/// Grid values of `X` and `X̃` (row-major, `times.len() × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub dim: usize,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub chains: CoupledChainPath,
    pub brownian: BrownianPath,
}

impl TrajectoryPair {
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn x_tilde_at(&self, k: usize) -> &[f64] {
        &self.x_tilde[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the grid time closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == self.times.len() || (k > 0 && t - self.times[k - 1] < self.times[k] - t) {
            k.saturating_sub(1).min(self.times.len() - 1)
        } else {
            k
        }
    }

    /// `|X_t − X̃_t|²` at grid node `k`.
    pub fn squared_gap(&self, k: usize) -> f64 {
        self.x_at(k).iter().zip(self.x_tilde_at(k)).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

struct Run {
    times: Vec<f64>,
    x: Vec<f64>,
    x_tilde: Vec<f64>,
}

struct Scratch {
    b: Vec<f64>,
    s: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self { b: vec![0.0; d], s: vec![0.0; d * d] }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    x: &[f64],
    regime: usize,
    h: f64,
    dw: &[f64],
    scratch: &mut Scratch,
    dx: &mut [f64],
) {
    let d = x.len();
    c.drift(x, regime, &mut scratch.b);
    c.diffusion(x, regime, &mut scratch.s);
    for k in 0..d {
        let noise: f64 = (0..d).map(|l| scratch.s[k * d + l] * dw[l]).sum();
        dx[k] += scratch.b[k] * h + noise;
    }
}

/// Runs the scheme on grid nodes that are multiples of `factor` (plus the
/// last node). `pair == false` skips `X̃`.
fn euler<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    chains: &CoupledChainPath,
    x0: &[f64],
    w: &BrownianPath,
    factor: usize,
    split: bool,
    pair: bool,
) -> Result<Run> {
    let d = c.dim();
    let n_steps = w.n_steps();
    let used_grid = |k: usize| k.is_multiple_of(factor) || k == n_steps;
    let n_used = (0..=n_steps).filter(|&k| used_grid(k)).count();
    let mut run = Run {
        times: Vec::with_capacity(n_used),
        x: Vec::with_capacity(n_used * d),
        x_tilde: Vec::with_capacity(if pair { n_used * d } else { 0 }),
    };
    let mut x = x0.to_vec();
    let mut xt = x0.to_vec();
    let mut dx = vec![0.0; d];
    let mut dxt = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut scratch = Scratch::new(d);
    run.times.push(0.0);
    run.x.extend_from_slice(&x);
    if pair {
        run.x_tilde.extend_from_slice(&xt);
    }
    let mut prev = 0usize;
    for p in 1..w.len() {
        let is_node = match w.kinds[p] {
            PathPoint::Grid(k) => used_grid(k),
            PathPoint::Extra => false,
        };
        if !is_node && !(split && w.kinds[p] == PathPoint::Extra) {
            continue;
        }
        let h = w.times[p] - w.times[prev];
        let (wp, wq) = (w.value(p), w.value(prev));
        for l in 0..d {
            dw[l] = wp[l] - wq[l];
        }
        let (regime, regime_tilde) = chains.state_at(w.times[prev]);
        accumulate(c, &x, regime, h, &dw, &mut scratch, &mut dx);
        if pair {
            accumulate(c, &xt, regime_tilde, h, &dw, &mut scratch, &mut dxt);
        }
        prev = p;
        if is_node {
            for l in 0..d {
                x[l] += dx[l];
                dx[l] = 0.0;
                if pair {
                    xt[l] += dxt[l];
                    dxt[l] = 0.0;
                }
            }
            let step = run.times.len();
            if !x.iter().all(|v| v.is_finite()) {
                return Err(SdeError::NonFiniteState { step, time: w.times[p], regime });
            }
            if pair && !xt.iter().all(|v| v.is_finite()) {
                return Err(SdeError::NonFiniteState { step, time: w.times[p], regime: regime_tilde });
            }
            run.times.push(w.times[p]);
            run.x.extend_from_slice(&x);
            if pair {
                run.x_tilde.extend_from_slice(&xt);
            }
        }
    }
    Ok(run)
}

fn check_inputs<C: SwitchingCoefficients + ?Sized>(c: &C, chains: &CoupledChainPath, x0: &[f64]) -> Result<()> {
    if x0.len() != c.dim() {
        return Err(SdeError::InvalidArgument(format!("x0 has length {}, model dimension is {}", x0.len(), c.dim())));
    }
    let top = chains.states.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
    if top >= c.n_regimes() {
        return Err(SdeError::RegimeMismatch { model: c.n_regimes(), chain: top + 1 });
    }
    Ok(())
}

/// Simulates `(X, X̃)` on `[0, chains.horizon]` with step `dt`, sharing one
/// Brownian path drawn from `key`.
pub fn simulate_pair<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    chains: &CoupledChainPath,
    x0: &[f64],
    dt: f64,
    key: StreamKey,
) -> Result<TrajectoryPair> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let w = BrownianPath::sample(key, c.dim(), dt, chains.horizon, chains.jump_epochs());
    simulate_pair_on(c, chains, x0, w, true)
}

/// As [`simulate_pair`] on a given Brownian path. With `split == false`
/// the regime is read at the left grid node for the whole step.
pub fn simulate_pair_on<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    chains: &CoupledChainPath,
    x0: &[f64],
    brownian: BrownianPath,
    split: bool,
) -> Result<TrajectoryPair> {
    check_inputs(c, chains, x0)?;
    let run = euler(c, chains, x0, &brownian, 1, split, true)?;
    Ok(TrajectoryPair {
        dim: c.dim(),
        times: run.times,
        x: run.x,
        x_tilde: run.x_tilde,
        chains: chains.clone(),
        brownian,
    })
}

/// Splits per-path results into successes and a failure count, aborting
/// when non-finite paths exceed [`MAX_FAILURE_RATE`]. Other errors are
/// returned as they are.
pub fn collect_paths<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(SdeError::NonFiniteState { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(SdeError::TooManyFailures { failed, total });
    }
    Ok((ok, failed))
}

/// `(|x0|² + 2Kt) e^{(2K+1)t}`.
pub fn lemma1_bound(x0_norm2: f64, k: f64, t: f64) -> f64 {
    (x0_norm2 + 2.0 * k * t) * ((2.0 * k + 1.0) * t).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub t: f64,
    pub bound: f64,
    pub estimate: MeanEstimate,
    /// Estimate exceeds the bound by more than three standard errors.
    pub flagged: bool,
}

/// Compares a Monte Carlo estimate of `E|X_t|²` from `squared_norms` with
/// the second-moment bound implied by the declared growth constant.
pub fn second_moment_guard<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    squared_norms: &[f64],
    x0: &[f64],
    t: f64,
) -> Result<GuardReport> {
    let k = c
        .regularity()
        .growth
        .ok_or_else(|| SdeError::InvalidArgument("model declares no growth constant".into()))?;
    let x0_norm2: f64 = x0.iter().map(|v| v * v).sum();
    let bound = lemma1_bound(x0_norm2, k, t);
    let estimate = MeanEstimate::from_samples(squared_norms);
    let flagged = estimate.mean - 3.0 * estimate.stderr > bound;
    Ok(GuardReport { t, bound, estimate, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongErrorPoint {
    pub dt: f64,
    pub rms: f64,
    pub stderr: f64,
}

fn as_coupled(path: ChainPath) -> CoupledChainPath {
    CoupledChainPath {
        horizon: path.horizon,
        times: path.times,
        states: path.states.into_iter().map(|s| (s, s)).collect(),
    }
}

/// Root-mean-square gap `|X_T^{dt} − X_T^{ref}|` for each step in `dts`
/// (descending), the last step being the reference. All levels share one
/// chain path and one Brownian path per sample.
#[allow(clippy::too_many_arguments)]
pub fn strong_error_curve<C: SwitchingCoefficients + ?Sized>(
    c: &C,
    q: &RateMatrix,
    i0: usize,
    x0: &[f64],
    horizon: f64,
    dts: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<StrongErrorPoint>> {
    if dts.len() < 2 {
        return Ok(Vec::new());
    }
    if dts.windows(2).any(|w| w[0] <= w[1]) || dts.iter().any(|&h| !(h > 0.0)) {
        return Err(SdeError::InvalidArgument("dts must be positive and strictly descending".into()));
    }
    let finest = *dts.last().unwrap();
    let factors: Vec<usize> = dts[..dts.len() - 1]
        .iter()
        .map(|&h| {
            let f = (h / finest).round();
            if (f * finest - h).abs() > 1e-9 * h {
                Err(SdeError::InvalidArgument(format!("step {h} is not a multiple of the finest step {finest}")))
            } else {
                Ok(f as usize)
            }
        })
        .collect::<Result<_>>()?;
    let n_steps = grid_steps(finest, horizon);
    if factors.iter().any(|f| !n_steps.is_multiple_of(*f)) {
        return Err(SdeError::InvalidArgument("every step must divide the horizon".into()));
    }
    let d = c.dim();
    let results = map_paths(n_paths, |k| -> Result<Vec<f64>> {
        let key = StreamKey::new(seed, k);
        let chain = as_coupled(gillespie(q, i0, horizon, key)?);
        check_inputs(c, &chain, x0)?;
        let w = BrownianPath::sample(key, d, finest, horizon, chain.jump_epochs());
        let reference = euler(c, &chain, x0, &w, 1, true, false)?;
        let end_ref = &reference.x[reference.x.len() - d..];
        factors
            .iter()
            .map(|&f| {
                let run = euler(c, &chain, x0, &w, f, true, false)?;
                let end = &run.x[run.x.len() - d..];
                Ok(end.iter().zip(end_ref).map(|(a, b)| (a - b) * (a - b)).sum())
            })
            .collect()
    });
    let (ok, _) = collect_paths(results)?;
    Ok(dts[..dts.len() - 1]
        .iter()
        .enumerate()
        .map(|(level, &dt)| {
            let sq: Vec<f64> = ok.iter().map(|v| v[level]).collect();
            let est = MeanEstimate::from_samples(&sq);
            let rms = est.mean.sqrt();
            let stderr = if rms > 0.0 { est.stderr / (2.0 * rms) } else { 0.0 };
            StrongErrorPoint { dt, rms, stderr }
        })
        .collect())
}
