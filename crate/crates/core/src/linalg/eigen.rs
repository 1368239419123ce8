//! Eigenvalues of small dense non-symmetric matrices: Householder reduction
//! to upper Hessenberg form followed by the Francis double-shift QR
//! iteration in real arithmetic.

use nalgebra::{Complex, DMatrix};
use thiserror::Error;

/// Relative size below which a subdiagonal entry is treated as zero.
pub const DEFLATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("QR iteration did not converge within {iterations} iterations")]
pub struct EigensolveFailure {
    pub iterations: usize,
}

/// Reduces `a` to upper Hessenberg form by Householder similarity
/// transforms. The result has the same spectrum.
pub fn hessenberg(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    for k in 0..n - 2 {
        let alpha: f64 = (k + 1..n).map(|i| h[(i, k)] * h[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // H <- (I - 2vv'/v'v) H
        for j in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(r, vr)| vr * h[(k + 1 + r, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for (r, vr) in v.iter().enumerate() {
                h[(k + 1 + r, j)] -= f * vr;
            }
        }
        // H <- H (I - 2vv'/v'v)
        for i in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(r, vr)| vr * h[(i, k + 1 + r)]).sum();
            let f = 2.0 * dot / vnorm2;
            for (r, vr) in v.iter().enumerate() {
                h[(i, k + 1 + r)] -= f * vr;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = 0.0;
        }
    }
    h
}

/// All eigenvalues of a real square matrix, in no particular order.
/// Complex eigenvalues come in conjugate pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, EigensolveFailure> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.nrows();
    let mut h = hessenberg(a);
    hqr(&mut h, 100 * n.max(1))
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroyed).
fn hqr(a: &mut DMatrix<f64>, max_iterations: usize) -> Result<Vec<Complex<f64>>, EigensolveFailure> {
    let n = a.nrows();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut total_iterations = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // look for a single small subdiagonal element
            let mut l = nu;
            while l >= 1 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= DEFLATION_TOL * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nu, nu)];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[(nu - 1, nu - 1)];
                let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
                if l + 1 == nu {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        let z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if total_iterations >= max_iterations {
                        return Err(EigensolveFailure { iterations: total_iterations });
                    }
                    if its == 10 || its == 20 {
                        // exceptional shift
                        t += x;
                        for i in 0..=nu {
                            a[(i, i)] -= x;
                        }
                        let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_iterations += 1;
                    let (mut p, mut q, mut r);
                    let mut m = nu - 2;
                    loop {
                        let z = a[(m, m)];
                        let rr = x - z;
                        let ss = y - z;
                        p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                        q = a[(m + 1, m + 1)] - z - rr - ss;
                        r = a[(m + 2, m + 1)];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nu {
                        a[(i, i - 2)] = 0.0;
                        if i != m + 2 {
                            a[(i, i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nu {
                        if k != m {
                            p = a[(k, k - 1)];
                            q = a[(k + 1, k - 1)];
                            r = 0.0;
                            if k + 1 != nu {
                                r = a[(k + 2, k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[(k, k - 1)] = -a[(k, k - 1)];
                                }
                            } else {
                                a[(k, k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                                if k + 1 != nu {
                                    pp += r * a[(k + 2, j)];
                                    a[(k + 2, j)] -= pp * z;
                                }
                                a[(k + 1, j)] -= pp * y;
                                a[(k, j)] -= pp * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for i in l..=mmin {
                                let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                                if k + 1 != nu {
                                    pp += z * a[(i, k + 2)];
                                    a[(i, k + 2)] -= pp * r;
                                }
                                a[(i, k + 1)] -= pp * q;
                                a[(i, k)] -= pp;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 1 || (l as isize) >= nn - 1 {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    fn assert_spectra_close(a: Vec<Complex<f64>>, b: Vec<Complex<f64>>, tol: f64) {
        let (a, b) = (sorted(a), sorted(b));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn hessenberg_has_zero_below_subdiagonal_and_keeps_trace() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7);
        let h = hessenberg(&a);
        for i in 0..5 {
            for j in 0..5 {
                if i > j + 1 {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
        assert!((h.trace() - a.trace()).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_generator() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let ev = eigenvalues(&q).unwrap();
        assert_spectra_close(ev, vec![Complex::new(-3.0, 0.0), Complex::new(0.0, 0.0)], 1e-12);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&a).unwrap();
        assert_spectra_close(ev, vec![Complex::new(0.0, 1.0), Complex::new(0.0, -1.0)], 1e-12);
    }

    #[test]
    fn cyclic_three_state() {
        let q = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0]);
        let s = 3f64.sqrt() / 2.0;
        let expect = vec![Complex::new(0.0, 0.0), Complex::new(-1.5, s), Complex::new(-1.5, -s)];
        assert_spectra_close(eigenvalues(&q).unwrap(), expect, 1e-10);
    }

    #[test]
    fn agrees_with_schur_based_solver_on_pseudo_random_matrices() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for n in 1..=7 {
            for _ in 0..5 {
                let a = DMatrix::from_fn(n, n, |_, _| next());
                let ours = eigenvalues(&a).unwrap();
                let theirs: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
                assert_spectra_close(ours, theirs, 1e-8);
            }
        }
    }

    #[test]
    fn zero_and_empty_matrices() {
        let ev = eigenvalues(&DMatrix::<f64>::zeros(3, 3)).unwrap();
        assert!(ev.iter().all(|z| z.norm() == 0.0));
        assert!(eigenvalues(&DMatrix::<f64>::zeros(0, 0)).unwrap().is_empty());
    }
}
