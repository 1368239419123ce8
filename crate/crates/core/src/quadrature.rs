//! One-dimensional adaptive quadrature.
//!
//! Two integrators: a recursive adaptive Simpson rule (smooth integrands on
//! short intervals) and a globally adaptive 7/15-point Gauss–Kronrod rule
//! that bisects the interval with the largest error estimate (integrands
//! with interior peaks or integrable endpoint singularities).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: estimate {estimate}, error {error}")]
    NonConvergence { estimate: f64, error: f64 },
    #[error("integrand produced a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

/// Integral value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const SIMPSON_MAX_DEPTH: u32 = 48;

/// Adaptive Simpson with Richardson correction. Converges when the local
/// error estimate of every leaf is below its share of
/// `max(abs_tol, rel_tol * |I|)`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<Quadrature, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let eval = |x: f64| -> Result<f64, QuadratureError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(QuadratureError::NonFinite { x })
        }
    };
    let fa = eval(a)?;
    let fb = eval(b)?;
    let m = 0.5 * (a + b);
    let fm = eval(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);

    // Seed the tolerance from a 9-point composite estimate so that a lucky
    // coarse estimate of zero does not make the relative target vanish.
    let mut coarse = 0.0;
    for k in 0..8 {
        let lo = a + (b - a) * k as f64 / 8.0;
        let hi = a + (b - a) * (k + 1) as f64 / 8.0;
        coarse += (hi - lo) / 6.0 * (eval(lo)? + 4.0 * eval(0.5 * (lo + hi))? + eval(hi)?);
    }
    let tol = abs_tol.max(rel_tol * coarse.abs());

    let mut state = SimpsonState { evaluations: 3 + 24, failed: false, error: 0.0 };
    let value = simpson_recurse(&eval, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH, &mut state)?;
    if state.failed {
        return Err(QuadratureError::NonConvergence { estimate: value, error: state.error });
    }
    Ok(Quadrature { value, error: state.error, evaluations: state.evaluations })
}

struct SimpsonState {
    evaluations: usize,
    failed: bool,
    error: f64,
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<E>(
    eval: &E,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    state: &mut SimpsonState,
) -> Result<f64, QuadratureError>
where
    E: Fn(f64) -> Result<f64, QuadratureError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    state.evaluations += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        state.error += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || m <= a || m >= b {
        state.failed = true;
        state.error += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    let l = simpson_recurse(eval, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, state)?;
    let r = simpson_recurse(eval, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, state)?;
    Ok(l + r)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_segment<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment, QuadratureError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let eval = |x: f64| -> Result<f64, QuadratureError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(QuadratureError::NonFinite { x })
        }
    };
    let fc = eval(c)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = eval(c - h * x)?;
        let f2 = eval(c + h * x)?;
        kronrod += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok(Segment { a, b, value: kronrod * h, error: ((kronrod - gauss) * h).abs() })
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]`.
pub fn gauss_kronrod<F>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<Quadrature, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let first = kronrod_segment(&f, a, b)?;
    let mut value = first.value;
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut evaluations = 15;
    while error > abs_tol.max(rel_tol * value.abs()) {
        if heap.len() >= max_segments {
            return Err(QuadratureError::NonConvergence { estimate: value, error });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(QuadratureError::NonConvergence { estimate: value, error });
        }
        let left = kronrod_segment(&f, worst.a, mid)?;
        let right = kronrod_segment(&f, mid, worst.b)?;
        evaluations += 30;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-add from the segments to shed accumulated cancellation in the
    // running totals.
    let mut segments: Vec<Segment> = heap.into_vec();
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = segments.iter().map(|s| s.value).sum();
    let error = segments.iter().map(|s| s.error).sum();
    Ok(Quadrature { value, error, evaluations })
}
