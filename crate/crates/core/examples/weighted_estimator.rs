//! Reweighting an OU reference process to a switching drift.

use regime_perturb::girsanov::{weighted_expectation, weighted_pairs, GaussianReference, TanhShiftDrift, WeightedRun};
use regime_perturb::metrics::default_dictionary;
use regime_perturb::ratematrix::RateMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]])?;
    let drift = TanhShiftDrift { beta: vec![0.5, -0.3] };
    let run = WeightedRun { q: &q, q_tilde: &q, i0: 0, x0: &[0.5], horizon: 1.0, dt: 0.01, n_paths: 20_000, seed: 1 };
    let pairs = weighted_pairs(&GaussianReference::standard(), &drift, &run)?;
    let w = weighted_expectation(&pairs.pairs, false, |_| 1.0);
    println!("E[w] = {:.4} ± {:.4}", w.mean, w.stderr);
    for phi in default_dictionary().iter().step_by(8) {
        let e = weighted_expectation(&pairs.pairs, false, |y| phi.eval(y[0]));
        println!("{phi:?}: E phi(X_1) = {:.5} ± {:.5}", e.mean, e.stderr);
    }
    Ok(())
}
