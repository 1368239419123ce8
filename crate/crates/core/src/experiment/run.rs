use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{load, AppliedDefault, ExperimentConfig, ExperimentKind, MANIFEST_NAME};
use super::{ExperimentError, Result};
use crate::bounds::{optimize_parameters, theorem1_bound, theorem1_bound_bounded, theorem2_bound, BoundOptions, BoundReport};
use crate::girsanov::{theorem3_decay_experiment, DecayExperiment, GaussianReference, NovikovOptions};
use crate::parallel::{map_paths, MeanEstimate};
use crate::ratematrix::{c2_estimate, embed_reduced, feynman_kac, l1_distance, tilt, validate, RateMatrix};
use crate::rng::{StreamKey, BRIDGE, BROWNIAN, CHAIN_CLOCK, GILLESPIE};
use crate::sde::{collect_paths, simulate_pair, SdeError, SwitchingCoefficients};
use crate::skorokhod::{
    clock_rate, coupling_generator, gillespie, lemma2_bound, mismatch_integral_exact, mismatch_occupation, Coupler,
};

/// A CSV table held as formatted strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| ExperimentError::Csv(e.into_error().into()))
    }

    /// Column values parsed as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub package: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    /// Stream labels hashed with the seed.
    pub streams: Vec<String>,
    pub config: Value,
    pub defaults: Vec<AppliedDefault>,
    pub derived: Value,
    pub verdict: Verdict,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub table: Table,
    pub manifest: Manifest,
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn module_err(kind: ExperimentKind) -> impl Fn(&dyn std::fmt::Display) -> ExperimentError {
    move |e| ExperimentError::Module { experiment: kind.name(), message: e.to_string() }
}

/// `Q + δ D` for a unit-norm direction `D`.
fn perturb(q: &RateMatrix, d: &DMatrix<f64>, delta: f64) -> std::result::Result<RateMatrix, String> {
    validate(&(q.matrix() + d * delta)).map_err(|e| format!("perturbation scale {delta}: {e}"))
}

/// Per-time estimates of `E|X_t − X̃_t|²` from one coupled run.
fn coupled_gaps(
    c: &dyn SwitchingCoefficients,
    q: &RateMatrix,
    qt: &RateMatrix,
    cfg: &ExperimentConfig,
) -> std::result::Result<(Vec<MeanEstimate>, usize), SdeError> {
    let coupler = Coupler::new(q, qt)?;
    let results = map_paths(cfg.n_paths, |k| -> std::result::Result<Vec<f64>, SdeError> {
        let key = StreamKey::new(cfg.seed, k);
        let chains = coupler.simulate_path(cfg.i0, cfg.horizon, key)?;
        let pair = simulate_pair(c, &chains, &cfg.x0, cfg.dt, key)?;
        Ok(cfg.times.iter().map(|&t| pair.squared_gap(pair.index_of(t))).collect())
    });
    let (gaps, failed) = collect_paths(results)?;
    let per_time = (0..cfg.times.len())
        .map(|j| MeanEstimate::from_samples(&gaps.iter().map(|g| g[j]).collect::<Vec<_>>()))
        .collect();
    Ok((per_time, failed))
}

fn summary(table: &Table, violations: usize, what: &str) -> Verdict {
    if violations == 0 {
        Verdict { passed: true, summary: format!("{what} holds") }
    } else {
        Verdict { passed: false, summary: format!("{what} violated on {violations} of {} rows", table.rows.len()) }
    }
}

struct Outcome {
    table: Table,
    derived: Value,
    verdict: Verdict,
}

fn domination_table(extra: &[&str]) -> Table {
    let mut h = vec!["t", "delta_norm"];
    h.extend_from_slice(extra);
    h.extend_from_slice(&["w2_sq_upper", "stderr", "bound", "p", "eps", "eta_p", "c2", "holds"]);
    Table::new(&h)
}

fn domination_row(t: f64, delta: f64, extra: &[f64], est: &MeanEstimate, b: &BoundReport) -> (Vec<String>, bool) {
    let holds = b.bound >= est.mean + 3.0 * est.stderr;
    let mut row = vec![fmt(t), fmt(delta)];
    row.extend(extra.iter().map(|v| fmt(*v)));
    row.extend([
        fmt(est.mean),
        fmt(est.stderr),
        fmt(b.bound),
        fmt(b.p),
        fmt(b.eps),
        fmt(b.eta_p),
        fmt(b.c2.c2),
        holds.to_string(),
    ]);
    (row, holds)
}

fn theorem1_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind;
    let err = module_err(kind);
    let c = cfg.model.as_ref().expect("resolved config has a model").build().map_err(|e| err(&e))?;
    let reg = c.regularity();
    let d = cfg.direction_matrix();
    let opts = BoundOptions { c2_grid_points: cfg.c2_grid_points, c2_horizon: None };
    let mut table = domination_table(&[]);
    let mut violations = 0;
    let mut derived_rows = Vec::new();
    let mut clock_rates = Vec::new();
    let mut failed_total = 0;
    for &delta in &cfg.scales {
        let qt = perturb(&cfg.q, &d, delta).map_err(|e| err(&e))?;
        let dn = l1_distance(&cfg.q, &qt).map_err(|e| err(&e))?;
        clock_rates.push(clock_rate(&cfg.q, &qt));
        let (est, failed) = coupled_gaps(c.as_ref(), &cfg.q, &qt, cfg).map_err(|e| err(&e))?;
        failed_total += failed;
        for (j, &t) in cfg.times.iter().enumerate() {
            let eval = |p, e| {
                if reg.bounded {
                    theorem1_bound_bounded(&cfg.q, &qt, &reg, t, p, e, &opts)
                } else {
                    theorem1_bound(&cfg.q, &qt, &reg, &cfg.x0, t, p, e, &opts)
                }
            };
            let best = optimize_parameters(eval, &cfg.p_grid, &cfg.eps_grid).map_err(|e| err(&e))?;
            let (row, holds) = domination_row(t, dn, &[], &est[j], &best.best);
            violations += usize::from(!holds);
            table.push(row);
            derived_rows.push(best.best);
        }
    }
    let verdict = summary(&table, violations, "bound");
    let derived = json!({
        "n_label": cfg.q.max_label(),
        "clock_rates": clock_rates,
        "failed_paths": failed_total,
        "bounds": derived_rows,
    });
    Ok(Outcome { table, derived, verdict })
}

fn theorem2_reduction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind;
    let err = module_err(kind);
    let red = cfg.reduction.as_ref().expect("resolved config has a reduction");
    let c = cfg.model.as_ref().expect("resolved config has a model").build().map_err(|e| err(&e))?;
    let reg = c.regularity();
    let d = cfg.direction_matrix();
    let opts = BoundOptions { c2_grid_points: cfg.c2_grid_points, c2_horizon: None };
    let mut table = domination_table(&["majorant"]);
    let mut violations = 0;
    let mut derived_rows = Vec::new();
    let mut clock_rates = Vec::new();
    let mut failed_total = 0;
    for &delta in &cfg.scales {
        let q_hat = perturb(&red.q_hat, &d, delta).map_err(|e| err(&e))?;
        let dn = l1_distance(&red.q_hat, &q_hat).map_err(|e| err(&e))?;
        let qt = embed_reduced(&cfg.q, &q_hat, red.m).map_err(|e| err(&e))?;
        clock_rates.push(clock_rate(&cfg.q, &qt));
        let (est, failed) = coupled_gaps(c.as_ref(), &cfg.q, &qt, cfg).map_err(|e| err(&e))?;
        failed_total += failed;
        for (j, &t) in cfg.times.iter().enumerate() {
            let eval = |p, e| theorem2_bound(&cfg.q, &q_hat, red.m, &reg, &cfg.x0, cfg.i0, t, p, e, reg.bounded, &opts);
            let best = optimize_parameters(eval, &cfg.p_grid, &cfg.eps_grid).map_err(|e| err(&e))?;
            let (row, holds) = domination_row(t, dn, &[best.best.perturbation], &est[j], &best.best);
            violations += usize::from(!holds);
            table.push(row);
            derived_rows.push(best.best);
        }
    }
    let verdict = summary(&table, violations, "bound");
    let derived = json!({
        "n_label": cfg.q.max_label(),
        "clock_rates": clock_rates,
        "failed_paths": failed_total,
        "bounds": derived_rows,
    });
    Ok(Outcome { table, derived, verdict })
}

fn lemma2_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind;
    let err = module_err(kind);
    let d = cfg.direction_matrix();
    let mut table = Table::new(&[
        "t",
        "delta_norm",
        "empirical_integral",
        "stderr",
        "exact_ode_integral",
        "quadrature_error",
        "bound",
        "holds",
    ]);
    let mut violations = 0;
    let mut clock_rates = Vec::new();
    for &delta in &cfg.scales {
        let qt = perturb(&cfg.q, &d, delta).map_err(|e| err(&e))?;
        let dn = l1_distance(&cfg.q, &qt).map_err(|e| err(&e))?;
        clock_rates.push(clock_rate(&cfg.q, &qt));
        let coupler = Coupler::new(&cfg.q, &qt).map_err(|e| err(&e))?;
        let qc = coupling_generator(&cfg.q, &qt).map_err(|e| err(&e))?;
        let samples = map_paths(cfg.n_paths, |k| {
            let path = coupler.simulate_path(cfg.i0, cfg.horizon, StreamKey::new(cfg.seed, k))?;
            cfg.times.iter().map(|&t| mismatch_occupation(&path, t)).collect::<std::result::Result<Vec<_>, _>>()
        });
        let samples: Vec<Vec<f64>> = samples.into_iter().collect::<std::result::Result<_, _>>().map_err(|e| err(&e))?;
        for (j, &t) in cfg.times.iter().enumerate() {
            let mc = MeanEstimate::from_samples(&samples.iter().map(|s| s[j]).collect::<Vec<_>>());
            let exact = mismatch_integral_exact(&qc, cfg.i0, t).map_err(|e| err(&e))?;
            let bound = lemma2_bound(&cfg.q, &qt, t).map_err(|e| err(&e))?;
            let holds = mc.mean <= bound && exact.exact <= bound;
            violations += usize::from(!holds);
            table.push(vec![
                fmt(t),
                fmt(dn),
                fmt(mc.mean),
                fmt(mc.stderr),
                fmt(exact.exact),
                fmt(exact.quadrature_error),
                fmt(bound),
                holds.to_string(),
            ]);
        }
    }
    let verdict = summary(&table, violations, "bound");
    let derived = json!({ "n_label": cfg.q.max_label(), "clock_rates": clock_rates });
    Ok(Outcome { table, derived, verdict })
}

fn girsanov_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind;
    let err = module_err(kind);
    let g = cfg.girsanov.as_ref().expect("resolved config has girsanov settings");
    let c = cfg.model.as_ref().expect("resolved config has a model").build().map_err(|e| err(&e))?;
    let reference = GaussianReference::standard();
    let exp = DecayExperiment {
        q: cfg.q.clone(),
        direction: cfg.direction_matrix(),
        deltas: cfg.scales.clone(),
        i0: cfg.i0,
        x0: cfg.x0.clone(),
        horizon: cfg.horizon,
        dt: cfg.dt,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        eta: g.eta,
        gamma: g.gamma,
        novikov: NovikovOptions { seed: cfg.seed, ..NovikovOptions::default() },
    };
    let rep = theorem3_decay_experiment(&reference, c.as_ref(), &exp).map_err(|e| err(&e))?;
    let mut table = Table::new(&["delta_norm", "estimate", "stderr"]);
    for r in &rep.rows {
        table.push(vec![fmt(r.delta), fmt(r.estimate), fmt(r.stderr)]);
    }
    let passed = rep.consistent();
    let verdict = Verdict {
        passed,
        summary: if passed {
            format!("decay consistent: fitted exponent {:.4}", rep.fitted_exponent.unwrap_or(f64::NAN))
        } else if !rep.monotone {
            "decay inconsistent: estimates not monotone within two standard errors".into()
        } else {
            "decay inconsistent: no positive fitted exponent".into()
        },
    };
    let derived = json!({
        "n_label": cfg.q.max_label(),
        "novikov": rep.novikov,
        "p0": rep.p0,
        "q0": rep.q0,
        "gamma": rep.gamma,
        "envelope_constant": rep.envelope_constant,
        "fitted_exponent": rep.fitted_exponent,
        "fitted_constant": rep.fitted_constant,
        "monotone": rep.monotone,
    });
    Ok(Outcome { table, derived, verdict })
}

fn feynman_kac_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind;
    let err = module_err(kind);
    let kappa = cfg.kappa.as_ref().expect("resolved config has kappa");
    let integrals = map_paths(cfg.n_paths, |k| {
        let path = gillespie(&cfg.q, cfg.i0, cfg.horizon, StreamKey::new(cfg.seed, k))?;
        Ok(cfg.times.iter().map(|&t| path.integrate(t, |i| kappa[i])).collect::<Vec<f64>>())
    });
    let integrals: Vec<Vec<f64>> =
        integrals.into_iter().collect::<std::result::Result<_, crate::skorokhod::SkorokhodError>>().map_err(|e| err(&e))?;
    let mut table = Table::new(&["t", "p", "exact", "mc", "stderr", "z", "upper", "holds"]);
    let mut violations = 0;
    let mut certificates = Vec::new();
    for &p in &cfg.p_grid {
        let g = tilt(&cfg.q, kappa, p).map_err(|e| err(&e))?;
        let cert = c2_estimate(&g, cfg.horizon, cfg.c2_grid_points).map_err(|e| err(&e))?;
        for (j, &t) in cfg.times.iter().enumerate() {
            let exact = feynman_kac(&cfg.q, kappa, p, t, cfg.i0).map_err(|e| err(&e))?;
            let mc = MeanEstimate::from_samples(&integrals.iter().map(|s| (p * s[j]).exp()).collect::<Vec<_>>());
            let z = mc.z_score(exact);
            let upper = cert.c2 * (-cert.eta_p * t).exp();
            let holds = z <= 3.0 && exact <= upper;
            violations += usize::from(!holds);
            table.push(vec![
                fmt(t),
                fmt(p),
                fmt(exact),
                fmt(mc.mean),
                fmt(mc.stderr),
                fmt(z),
                fmt(upper),
                holds.to_string(),
            ]);
        }
        certificates.push(cert);
    }
    let verdict = summary(&table, violations, "Feynman-Kac agreement");
    let derived = json!({ "n_label": cfg.q.max_label(), "certificates": certificates });
    Ok(Outcome { table, derived, verdict })
}

/// Runs a resolved experiment in memory.
pub fn execute(cfg: &ExperimentConfig, defaults: &[AppliedDefault]) -> Result<RunOutput> {
    let out = match cfg.kind {
        ExperimentKind::Theorem1Sweep => theorem1_sweep(cfg)?,
        ExperimentKind::Theorem2Reduction => theorem2_reduction(cfg)?,
        ExperimentKind::Lemma2Check => lemma2_check(cfg)?,
        ExperimentKind::GirsanovSweep => girsanov_sweep(cfg)?,
        ExperimentKind::FeynmanKacCheck => feynman_kac_check(cfg)?,
    };
    let manifest = Manifest {
        schema: cfg.schema,
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind.name().to_string(),
        seed: cfg.seed,
        streams: [CHAIN_CLOCK, BROWNIAN, BRIDGE, GILLESPIE].iter().map(|s| s.to_string()).collect(),
        config: serde_json::to_value(cfg)?,
        defaults: defaults.to_vec(),
        derived: out.derived,
        verdict: out.verdict,
        outputs: vec![cfg.csv_name.clone(), MANIFEST_NAME.to_string()],
    };
    Ok(RunOutput { table: out.table, manifest })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

/// Writes the table and the manifest into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(&out.manifest.outputs[0]);
    std::fs::write(&csv_path, out.table.to_csv()?).map_err(io_err(&csv_path))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&out.manifest)?;
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(vec![csv_path, manifest_path])
}

/// Loads, runs and writes one experiment. `seed` overrides the config.
pub fn run(config: &Path, seed: Option<u64>, out_dir: &Path) -> Result<RunOutput> {
    let (mut cfg, mut defaults) = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
        defaults.retain(|d| d.field != "seed");
    }
    let out = execute(&cfg, &defaults)?;
    write_outputs(out_dir, &out)?;
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}
