//! Bound for removing a state from the chain.

use regime_perturb::bounds::{reduction_majorant, theorem2_bound, BoundOptions};
use regime_perturb::experiment::conservative_restriction;
use regime_perturb::ratematrix::{embed_reduced, RateMatrix};
use regime_perturb::sde::{BoundedTanh, SwitchingCoefficients};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = RateMatrix::from_rows(&[vec![-2.0, 1.0, 1.0], vec![0.5, -1.5, 1.0], vec![0.3, 0.7, -1.0]])?;
    let reg = BoundedTanh::new(vec![0.5, -0.5, 0.2], vec![1.0, 0.5, 0.8], vec![0.5, 0.8, 0.6])?.regularity();
    let q_hat = conservative_restriction(&q, 0)?;
    println!("reduced generator on states 1..=2:\n{}", q_hat.matrix());
    println!("embedded:\n{}", embed_reduced(&q, &q_hat, 0)?.matrix());
    println!("majorant |B| + |Q1 - Q^| = {}", reduction_majorant(&q, &q_hat, 0)?);
    for t in [0.5, 1.0, 2.0] {
        let r = theorem2_bound(&q, &q_hat, 0, &reg, &[0.5], 1, t, 2.0, 1.0, true, &BoundOptions::default())?;
        println!("t = {t}: bound {:.4}", r.bound);
    }
    Ok(())
}
