//! Brownian paths on a uniform grid refined at extra times by bridge
//! sampling. Grid values come from the `brownian` stream alone, so adding
//! or removing extra points never changes them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{StreamKey, BRIDGE, BROWNIAN};

/// Provenance of a stored point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathPoint {
    /// Grid node `k`, at time `min(k·dt, horizon)`.
    Grid(usize),
    /// A refinement point such as a chain jump epoch.
    Extra,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub kinds: Vec<PathPoint>,
    values: Vec<f64>,
}

/// Number of grid steps covering `[0, horizon]`; the last one may be short.
pub(crate) fn grid_steps(dt: f64, horizon: f64) -> usize {
    if horizon <= 0.0 {
        0
    } else {
        (horizon / dt - 1e-9).ceil().max(1.0) as usize
    }
}

impl BrownianPath {
    /// Samples `W` on the grid of step `dt` over `[0, horizon]` and at the
    /// sorted `extras` inside it.
    pub fn sample(key: StreamKey, dim: usize, dt: f64, horizon: f64, extras: &[f64]) -> Self {
        assert!(dt > 0.0 && horizon >= 0.0, "need dt > 0 and horizon >= 0");
        debug_assert!(extras.windows(2).all(|w| w[0] <= w[1]), "extras must be sorted");
        let n_steps = grid_steps(dt, horizon);
        let grid_time = |k: usize| (k as f64 * dt).min(horizon);

        let mut noise = key.rng(BROWNIAN);
        let mut grid = vec![0.0; (n_steps + 1) * dim];
        for k in 0..n_steps {
            let sd = (grid_time(k + 1) - grid_time(k)).sqrt();
            for c in 0..dim {
                let z: f64 = noise.sample(StandardNormal);
                grid[(k + 1) * dim + c] = grid[k * dim + c] + sd * z;
            }
        }

        let extras: Vec<f64> = extras.iter().copied().filter(|&t| t > 0.0 && t <= horizon).collect();
        let mut bridge = key.rng(BRIDGE);
        let capacity = n_steps + 1 + extras.len();
        let mut times = Vec::with_capacity(capacity);
        let mut kinds = Vec::with_capacity(capacity);
        let mut values = Vec::with_capacity(capacity * dim);
        times.push(0.0);
        kinds.push(PathPoint::Grid(0));
        values.extend_from_slice(&grid[..dim]);
        let mut e = 0;
        for k in 0..n_steps {
            let right_t = grid_time(k + 1);
            let right = &grid[(k + 1) * dim..(k + 2) * dim];
            while e < extras.len() && extras[e] < right_t {
                let s = extras[e];
                let left_t = *times.last().unwrap();
                let base = values.len() - dim;
                let span = right_t - left_t;
                let w = (s - left_t) / span;
                let sd = ((s - left_t) * (right_t - s) / span).max(0.0).sqrt();
                for c in 0..dim {
                    let z: f64 = bridge.sample(StandardNormal);
                    let left = values[base + c];
                    values.push(left + w * (right[c] - left) + sd * z);
                }
                times.push(s);
                kinds.push(PathPoint::Extra);
                e += 1;
            }
            times.push(right_t);
            kinds.push(PathPoint::Grid(k + 1));
            values.extend_from_slice(right);
        }
        // extras at the horizon itself coincide with the last grid node
        Self { dim, dt, horizon, times, kinds, values }
    }

    pub fn n_steps(&self) -> usize {
        grid_steps(self.dt, self.horizon)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `W` at stored point `p`.
    pub fn value(&self, p: usize) -> &[f64] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }

    /// `W` at grid node `k`.
    pub fn grid_value(&self, k: usize) -> &[f64] {
        let p = self
            .kinds
            .iter()
            .position(|&kind| kind == PathPoint::Grid(k))
            .expect("grid node exists");
        self.value(p)
    }
}
