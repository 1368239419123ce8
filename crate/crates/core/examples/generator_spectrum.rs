//! Spectral data of a generator and of its tilted version.

use regime_perturb::ratematrix::{
    c2_estimate, invariant_measure, spectral_gap, tilt, transition_matrix, RateMatrix,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = RateMatrix::from_rows(&[vec![-2.0, 1.0, 1.0], vec![0.5, -1.5, 1.0], vec![0.3, 0.7, -1.0]])?;
    println!("invariant measure: {:?}", invariant_measure(&q)?.as_slice());
    println!("spectral gap: {:.6}", spectral_gap(&q)?);
    println!("P(1) =\n{}", transition_matrix(&q, 1.0));

    let kappa = [-1.0, 0.5, -0.2];
    for p in [1.5, 2.0, 3.0] {
        let g = tilt(&q, &kappa, p)?;
        let cert = c2_estimate(&g, 5.0, 401)?;
        println!("p = {p}: eta_p = {:.6}, C2 = {:.6}, C1 = {:.6}", cert.eta_p, cert.c2, cert.c1);
    }
    Ok(())
}
