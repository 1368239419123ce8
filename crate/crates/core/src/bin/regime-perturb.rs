use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regime_perturb::experiment::{self, ExperimentError, Manifest, MANIFEST_NAME};

#[derive(Parser)]
#[command(name = "regime-perturb", version, about = "Perturbation experiments for regime-switching diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and list the defaults it relies on.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment.
    Run(Common),
    /// Run one experiment for several consecutive seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        replicates: u64,
    },
    /// Summarize the manifests under a directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn set_threads(n: Option<usize>) -> Result<(), String> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn line(dir: &Path, m: &Manifest) -> String {
    let status = if m.verdict.passed { "PASS" } else { "FAIL" };
    format!("{status} {} {} seed={}: {}", dir.display(), m.kind, m.seed, m.verdict.summary)
}

fn manifests(root: &Path) -> Result<Vec<(PathBuf, Manifest)>, ExperimentError> {
    let mut dirs = vec![root.to_path_buf()];
    if let Ok(entries) = std::fs::read_dir(root) {
        let mut subs: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        subs.sort();
        dirs.extend(subs);
    }
    let mut found = Vec::new();
    for d in dirs {
        if d.join(MANIFEST_NAME).is_file() {
            let m = experiment::read_manifest(&d)?;
            found.push((d, m));
        }
    }
    Ok(found)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, String> = (|| match cli.command {
        Command::Validate { config } => {
            let report = experiment::validate_config(&config).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            Ok(true)
        }
        Command::Run(c) => {
            set_threads(c.threads)?;
            let out = experiment::run(&c.config, c.seed, &c.out).map_err(|e| e.to_string())?;
            println!("{}", line(&c.out, &out.manifest));
            Ok(out.manifest.verdict.passed)
        }
        Command::Sweep { common: c, replicates } => {
            set_threads(c.threads)?;
            let (cfg, _) = experiment::load(&c.config).map_err(|e| e.to_string())?;
            let base = c.seed.unwrap_or(cfg.seed);
            let mut all = true;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["seed", "passed", "summary"]).map_err(|e| e.to_string())?;
            for r in 0..replicates {
                let seed = base.wrapping_add(r);
                let dir = c.out.join(format!("seed-{seed}"));
                let out = experiment::run(&c.config, Some(seed), &dir).map_err(|e| e.to_string())?;
                println!("{}", line(&dir, &out.manifest));
                all &= out.manifest.verdict.passed;
                w.write_record([seed.to_string(), out.manifest.verdict.passed.to_string(), out.manifest.verdict.summary])
                    .map_err(|e| e.to_string())?;
            }
            let bytes = w.into_inner().map_err(|e| e.to_string())?;
            std::fs::write(c.out.join("sweep.csv"), bytes).map_err(|e| e.to_string())?;
            Ok(all)
        }
        Command::Report { out } => {
            let found = manifests(&out).map_err(|e| e.to_string())?;
            if found.is_empty() {
                return Err(format!("no {MANIFEST_NAME} under {}", out.display()));
            }
            for (d, m) in &found {
                println!("{}", line(d, m));
            }
            Ok(found.iter().all(|(_, m)| m.verdict.passed))
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
