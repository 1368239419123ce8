//! The stability bound for a perturbed generator, minimized over (p, ε).

use regime_perturb::bounds::{optimize_parameters, theorem1_bound_bounded, BoundOptions, DEFAULT_EPS_GRID, DEFAULT_P_GRID};
use regime_perturb::ratematrix::RateMatrix;
use regime_perturb::sde::{BoundedTanh, SwitchingCoefficients};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = BoundedTanh::new(vec![0.5, -0.5], vec![1.0, 0.5], vec![0.5, 0.8])?.regularity();
    let q = RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]])?;
    let opts = BoundOptions::default();
    for delta in [0.4, 0.1, 0.025] {
        let qt = RateMatrix::from_rows(&[vec![-1.0 - delta / 2.0, 1.0 + delta / 2.0], vec![2.0, -2.0]])?;
        let best = optimize_parameters(
            |p, e| theorem1_bound_bounded(&q, &qt, &reg, 1.0, p, e, &opts),
            &DEFAULT_P_GRID,
            &DEFAULT_EPS_GRID,
        )?;
        let b = &best.best;
        println!("|Q - Q~| = {delta}: bound {:.4} at p = {}, eps = {} (eta_p = {:.4})", b.bound, b.p, b.eps, b.eta_p);
    }
    Ok(())
}
