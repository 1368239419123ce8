//! Strong convergence of the Euler scheme under switching.

use regime_perturb::ratematrix::RateMatrix;
use regime_perturb::sde::{strong_error_curve, SwitchingOu};
use regime_perturb::stats::loglog_slope;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = SwitchingOu::new(vec![1.0, 2.0], vec![0.5, 0.3], vec![0.4, 0.6])?;
    let q = RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let dts: Vec<f64> = (6..=10).chain([13]).map(|k| 2f64.powi(-k)).collect();
    let curve = strong_error_curve(&model, &q, 0, &[1.0], 1.0, &dts, 2000, 7)?;
    for p in &curve {
        println!("dt = {:.6}: rms error {:.6} ± {:.6}", p.dt, p.rms, p.stderr);
    }
    let pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.dt, p.rms)).collect();
    println!("fitted order: {:.3}", loglog_slope(&pts).unwrap_or(f64::NAN));
    Ok(())
}
