//! Empirical distance estimates between the laws of `X_t` and `X̃_t`.
//!
//! * [`w2_coupled_upper`]: mean squared gap of coupled pairs, an upper
//!   estimate of `W_2²`.
//! * [`w2_exact_1d`]: the empirical `W_2` between two one-dimensional
//!   samples through the quantile coupling.
//! * [`wbl_dictionary_lower`]: the largest mean difference over a fixed
//!   dictionary of test functions, a lower estimate of the bounded
//!   Lipschitz distance.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{pairwise_sum, MeanEstimate};
use crate::rng::splitmix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty sample")]
    EmptySample,
    #[error("empty dictionary")]
    EmptyDictionary,
    #[error("paired samples have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("sample length {len} is not a multiple of the dimension {dim}")]
    BadDimension { len: usize, dim: usize },
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    CoupledUpper,
    Exact1d,
    BlDictionaryLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub kind: DistanceKind,
    /// The value estimates a squared distance.
    pub squared: bool,
}

/// Mean of `|x − x̃|²` over pairs stored row-major with dimension `dim`.
/// Its leave-one-out jackknife error is the usual standard error of a mean.
pub fn w2_coupled_upper(x: &[f64], x_tilde: &[f64], dim: usize) -> Result<DistanceEstimate> {
    if x.len() != x_tilde.len() {
        return Err(MetricsError::LengthMismatch(x.len(), x_tilde.len()));
    }
    if dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(MetricsError::BadDimension { len: x.len(), dim });
    }
    if x.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let gaps: Vec<f64> = x
        .chunks(dim)
        .zip(x_tilde.chunks(dim))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
        .collect();
    let est = MeanEstimate::from_samples(&gaps);
    Ok(DistanceEstimate {
        value: est.mean,
        stderr: est.stderr,
        n_samples: est.n,
        kind: DistanceKind::CoupledUpper,
        squared: true,
    })
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `∫_0^1 (F_a^{-1}(u) − F_b^{-1}(u))² du` for sorted samples of any sizes.
fn quantile_gap2(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
        return pairwise_sum(&sq) / n as f64;
    }
    // merge the breakpoints i/n and j/m
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut terms = Vec::with_capacity(n + m);
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        let g = a[i] - b[j];
        terms.push((next - u) * g * g);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    pairwise_sum(&terms)
}

const JACKKNIFE_GROUPS: usize = 20;
const SALT_B: u64 = 0x5851_F42D_4C95_7F2D;

/// Empirical `W_2` between `a` and `b` on the real line. Unequal sizes are
/// handled exactly by merging quantile breakpoints. The standard error is
/// a delete-a-group jackknife; a sample's group is a hash of its value, so
/// groups behave like a random partition yet do not depend on the sample
/// order.
pub fn w2_exact_1d(a: &[f64], b: &[f64]) -> Result<DistanceEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let value = quantile_gap2(&sa, &sb).sqrt();
    let g = JACKKNIFE_GROUPS.min(sa.len()).min(sb.len());
    let stderr = if g < 2 {
        0.0
    } else {
        let group = |x: f64, salt: u64| (splitmix64(x.to_bits() ^ salt) % g as u64) as usize;
        let leave_out = |v: &[f64], grp: usize, salt: u64| -> Vec<f64> {
            v.iter().copied().filter(|&x| group(x, salt) != grp).collect()
        };
        let reps: Vec<f64> = (0..g)
            .map(|grp| {
                let (ra, rb) = (leave_out(&sa, grp, 0), leave_out(&sb, grp, SALT_B));
                if ra.is_empty() || rb.is_empty() {
                    value
                } else {
                    quantile_gap2(&ra, &rb).sqrt()
                }
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / g as f64;
        let ss: f64 = reps.iter().map(|r| (r - mean) * (r - mean)).sum();
        ((g as f64 - 1.0) / g as f64 * ss).sqrt()
    };
    Ok(DistanceEstimate { value, stderr, n_samples: a.len().min(b.len()), kind: DistanceKind::Exact1d, squared: false })
}

/// A test function with `‖φ‖_Lip + ‖φ‖_∞ ≤ 1`, certified from its
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `h · clamp((x − shift)/width, 0, 1)`.
    Ramp { shift: f64, width: f64, height: f64 },
    /// `h · tanh((x − shift)/scale)`.
    Tanh { shift: f64, scale: f64, height: f64 },
    /// `h · sin(ω x + phase)`.
    Sine { omega: f64, phase: f64, height: f64 },
}

impl TestFunction {
    pub fn ramp(shift: f64, width: f64) -> Self {
        Self::Ramp { shift, width, height: width / (1.0 + width) }
    }

    pub fn tanh(shift: f64, scale: f64) -> Self {
        Self::Tanh { shift, scale, height: scale / (1.0 + scale) }
    }

    pub fn sine(omega: f64, phase: f64) -> Self {
        Self::Sine { omega, phase, height: 1.0 / (1.0 + omega) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Ramp { shift, width, height } => height * ((x - shift) / width).clamp(0.0, 1.0),
            Self::Tanh { shift, scale, height } => height * ((x - shift) / scale).tanh(),
            Self::Sine { omega, phase, height } => height * (omega * x + phase).sin(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Ramp { width, height, .. } => height / width,
            Self::Tanh { scale, height, .. } => height / scale,
            Self::Sine { omega, height, .. } => height * omega,
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Self::Ramp { height, .. } | Self::Tanh { height, .. } | Self::Sine { height, .. } => height.abs(),
        }
    }

    /// `‖φ‖_Lip + ‖φ‖_∞` from the closed forms above.
    pub fn norm(&self) -> f64 {
        self.lipschitz() + self.sup()
    }
}

/// The built-in dictionary: 8 ramps, 8 tanh steps and 16 sines, each with
/// norm exactly 1.
pub fn default_dictionary() -> Vec<TestFunction> {
    let mut d = Vec::with_capacity(32);
    for shift in [-2.0, -1.0, 0.0, 1.0] {
        for width in [0.5, 2.0] {
            d.push(TestFunction::ramp(shift, width));
        }
    }
    for shift in [-1.5, -0.5, 0.5, 1.5] {
        for scale in [0.5, 2.0] {
            d.push(TestFunction::tanh(shift, scale));
        }
    }
    for omega in [0.5, 1.0, 2.0, 4.0] {
        for k in 0..4 {
            d.push(TestFunction::sine(omega, k as f64 * PI / 4.0));
        }
    }
    d
}

/// Mean difference `E φ(a) − E φ(b)` with its standard error.
pub fn mean_difference(phi: &TestFunction, a: &[f64], b: &[f64]) -> (f64, f64) {
    let fa: Vec<f64> = a.iter().map(|&x| phi.eval(x)).collect();
    let fb: Vec<f64> = b.iter().map(|&x| phi.eval(x)).collect();
    let (ea, eb) = (MeanEstimate::from_samples(&fa), MeanEstimate::from_samples(&fb));
    (ea.mean - eb.mean, (ea.stderr * ea.stderr + eb.stderr * eb.stderr).sqrt())
}

/// `max_φ |E φ(a) − E φ(b)|` over the dictionary (closed under `φ ↦ −φ`),
/// reported with the standard error of the maximizing entry.
pub fn wbl_dictionary_lower(a: &[f64], b: &[f64], dictionary: &[TestFunction]) -> Result<DistanceEstimate> {
    if dictionary.is_empty() {
        return Err(MetricsError::EmptyDictionary);
    }
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let (value, stderr) = dictionary
        .iter()
        .map(|phi| {
            let (d, se) = mean_difference(phi, a, b);
            (d.abs(), se)
        })
        .fold((0.0, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best });
    Ok(DistanceEstimate {
        value,
        stderr,
        n_samples: a.len().min(b.len()),
        kind: DistanceKind::BlDictionaryLower,
        squared: false,
    })
}

/// Reads one sample per row; each row holds the coordinates of one point.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<(Vec<f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    let mut dim = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| MetricsError::Csv(format!("not a number: {s:?}"))))
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(MetricsError::BadDimension { len: row.len(), dim: d }),
            _ => {}
        }
        out.extend(row);
    }
    Ok((out, dim.unwrap_or(1)))
}

/// Writes one sample per row.
pub fn write_samples_csv<W: Write>(writer: W, samples: &[f64], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in samples.chunks(dim) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::map_paths;
    use crate::rng::StreamKey;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        map_paths(n, |k| {
            let z: f64 = StreamKey::new(seed, k).rng("test").sample(StandardNormal);
            z + shift
        })
    }

    #[test]
    fn coupled_upper_examples() {
        let x = [0.3, -1.0, 2.0];
        assert_eq!(w2_coupled_upper(&x, &x, 1).unwrap().value, 0.0);
        let e = w2_coupled_upper(&[0.0; 5], &[1.0; 5], 1).unwrap();
        assert_eq!((e.value, e.stderr), (1.0, 0.0));
        assert_eq!(w2_coupled_upper(&[], &[], 1), Err(MetricsError::EmptySample));
        assert!(w2_coupled_upper(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2).is_err());
        // two-dimensional pairs
        let e = w2_coupled_upper(&[0.0, 0.0, 1.0, 1.0], &[3.0, 4.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(e.value, 12.5);
    }

    #[test]
    fn exact_1d_examples() {
        assert_eq!(w2_exact_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(w2_exact_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap().value, 1.0);
        assert_eq!(w2_exact_1d(&[], &[1.0]), Err(MetricsError::EmptySample));
    }

    #[test]
    fn exact_1d_unequal_sizes() {
        // {0, 1} against {0, 0, 1}: the quantile functions differ on (1/2, 2/3)
        let v = w2_exact_1d(&[0.0, 1.0], &[0.0, 0.0, 1.0]).unwrap().value;
        assert!((v - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
        // replicating a sample does not change its law
        let a = [0.4, -1.2, 3.3];
        let b = [1.0, 2.0];
        let b2 = [1.0, 2.0, 1.0, 2.0, 2.0, 1.0];
        assert!((w2_exact_1d(&a, &b).unwrap().value - w2_exact_1d(&a, &b2).unwrap().value).abs() < 1e-14);
    }

    #[test]
    fn gaussian_translation() {
        for m in [0.5, 2.0] {
            let a = normals(1, 100_000, 0.0);
            let b = normals(2, 100_000, m);
            let e = w2_exact_1d(&a, &b).unwrap();
            assert!((e.value - m).abs() < 0.02 * m, "{e:?}");
            assert!(e.stderr > 0.0 && e.stderr < 0.02);
        }
    }

    #[test]
    fn exact_1d_stderr_is_calibrated() {
        // spread of the estimate over independent replicates
        let reps: Vec<(f64, f64)> = (0..40u64)
            .map(|r| {
                let e = w2_exact_1d(&normals(100 + 2 * r, 2000, 0.0), &normals(101 + 2 * r, 2000, 0.3)).unwrap();
                (e.value, e.stderr)
            })
            .collect();
        let mean = reps.iter().map(|r| r.0).sum::<f64>() / 40.0;
        let sd = (reps.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / 39.0).sqrt();
        let se = reps.iter().map(|r| r.1).sum::<f64>() / 40.0;
        assert!(se > 0.5 * sd && se < 2.0 * sd, "jackknife {se} vs spread {sd}");
    }

    #[test]
    fn quantile_coupling_beats_independent_pairing() {
        let a = normals(3, 5000, 0.0);
        let b = normals(4, 5000, 0.7);
        let up = w2_coupled_upper(&a, &b, 1).unwrap();
        let ex = w2_exact_1d(&a, &b).unwrap();
        assert!(ex.value <= up.value.sqrt());
    }

    #[test]
    fn dictionary_is_certified() {
        let d = default_dictionary();
        assert_eq!(d.len(), 32);
        for phi in &d {
            assert!(phi.norm() <= 1.0 + 1e-15, "{phi:?}");
            // numerical Lipschitz and sup checks on a fine grid
            let xs: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 2e-3).collect();
            let sup = xs.iter().map(|&x| phi.eval(x).abs()).fold(0.0, f64::max);
            let lip = xs.windows(2).map(|w| (phi.eval(w[1]) - phi.eval(w[0])).abs() / 2e-3).fold(0.0, f64::max);
            assert!(sup <= phi.sup() + 1e-12 && lip <= phi.lipschitz() + 1e-9);
        }
    }

    #[test]
    fn dictionary_lower_examples() {
        let ramp = [TestFunction::Ramp { shift: 0.0, width: 1.0, height: 0.5 }];
        assert_eq!(ramp[0].norm(), 1.0);
        let e = wbl_dictionary_lower(&[1.0; 4], &[0.0; 4], &ramp).unwrap();
        assert_eq!(e.value, 0.5);
        let a = normals(5, 20_000, 0.0);
        let e = wbl_dictionary_lower(&a, &a, &default_dictionary()).unwrap();
        assert_eq!(e.value, 0.0);
        let b = normals(6, 20_000, 0.0);
        let e = wbl_dictionary_lower(&a, &b, &default_dictionary()).unwrap();
        assert!(e.value < 4.0 * e.stderr.max(1e-3));
        assert_eq!(wbl_dictionary_lower(&a, &b, &[]), Err(MetricsError::EmptyDictionary));
    }

    #[test]
    fn csv_round_trip() {
        let v = vec![1.0, 2.5, -3.0, 4.0];
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &v, 2).unwrap();
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), (v, 2));
    }

    proptest! {
        #[test]
        fn estimates_ignore_sample_order(mut a in prop::collection::vec(-5.0f64..5.0, 2..60), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + 0.3).collect();
            let ex = w2_exact_1d(&a, &b).unwrap();
            let dl = wbl_dictionary_lower(&a, &b, &default_dictionary()).unwrap();
            let n = a.len();
            a.rotate_left((seed as usize) % n);
            let ex2 = w2_exact_1d(&a, &b).unwrap();
            prop_assert_eq!(ex.value, ex2.value);
            prop_assert_eq!(ex.stderr, ex2.stderr);
            let dl2 = wbl_dictionary_lower(&a, &b, &default_dictionary()).unwrap();
            prop_assert!((dl.value - dl2.value).abs() < 1e-12);
        }

        #[test]
        fn nonnegative_and_quantile_optimal(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let up = w2_coupled_upper(&a, &b, 1).unwrap();
            let ex = w2_exact_1d(&a, &b).unwrap();
            prop_assert!(up.value >= 0.0 && ex.value >= 0.0 && ex.stderr >= 0.0);
            prop_assert!(ex.value <= up.value.sqrt() + 1e-12);
        }
    }
}
