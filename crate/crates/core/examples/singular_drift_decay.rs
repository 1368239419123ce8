//! Integrability check and weight-difference decay for a drift with
//! logarithmic singularities at the integers.

use nalgebra::DMatrix;
use regime_perturb::girsanov::{
    novikov_check, theorem3_decay_experiment, DecayExperiment, GaussianReference, NovikovOptions, SingularLogDrift,
    DEFAULT_K_MAX,
};
use regime_perturb::ratematrix::RateMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let drift = SingularLogDrift::new(vec![0.2, 0.4], DEFAULT_K_MAX)?;
    let reference = GaussianReference::standard();
    let check = novikov_check(&reference, &drift, 2.5, 1.0, &NovikovOptions::default())?;
    println!("integrability: passed = {}, largest value = {:?}", check.passed(), check.max_value());

    let exp = DecayExperiment {
        q: RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?,
        direction: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]),
        deltas: vec![0.4, 0.2, 0.1, 0.05],
        i0: 0,
        x0: vec![0.5],
        horizon: 1.0,
        dt: 0.01,
        n_paths: 5000,
        seed: 8,
        eta: 2.5,
        gamma: 2.0,
        novikov: NovikovOptions::default(),
    };
    let rep = theorem3_decay_experiment(&reference, &drift, &exp)?;
    for r in &rep.rows {
        println!("delta = {}: E|w - w~| = {:.5} ± {:.5}", r.delta, r.estimate, r.stderr);
    }
    println!("fitted exponent {:?}, monotone {}", rep.fitted_exponent, rep.monotone);
    Ok(())
}
