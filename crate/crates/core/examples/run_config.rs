//! Runs a bundled experiment config and writes its outputs.
//!
//! `cargo run --example run_config -- configs/lemma2.toml out/lemma2`

use std::path::PathBuf;

use regime_perturb::experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| here.join("configs/lemma2.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("regime-perturb-lemma2"));

    let report = experiment::validate_config(&config)?;
    for d in &report.defaults {
        println!("default {} = {}", d.field, d.value);
    }
    let run = experiment::run(&config, None, &out)?;
    println!("{}", String::from_utf8(run.table.to_csv()?)?);
    println!("verdict: {} ({})", run.manifest.verdict.summary, out.display());
    Ok(())
}
