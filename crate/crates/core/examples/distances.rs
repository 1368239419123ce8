//! Empirical distance estimates between two samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regime_perturb::metrics::{default_dictionary, w2_exact_1d, wbl_dictionary_lower};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<f64> = Normal::new(0.0, 1.0)?.sample_iter(&mut rng).take(50_000).collect();
    let b: Vec<f64> = Normal::new(0.3, 1.0)?.sample_iter(&mut rng).take(50_000).collect();
    let w2 = w2_exact_1d(&a, &b)?;
    println!("W2 ≈ {:.4} ± {:.4} (exact 0.3)", w2.value, w2.stderr);
    let bl = wbl_dictionary_lower(&a, &b, &default_dictionary())?;
    println!("bounded Lipschitz lower estimate {:.4} ± {:.4}", bl.value, bl.stderr);
    Ok(())
}
