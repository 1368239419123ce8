//! Experiment configuration: a TOML file with a versioned `schema` field.
//!
//! ```toml
//! schema = 1
//! kind = "theorem1-sweep"
//! seed = 7
//! n_paths = 20000
//! horizon = 2.0
//! dt = 0.01
//! times = [0.5, 1.0, 2.0]
//!
//! [q]
//! n_states = 2
//! entries = [-1.0, 1.0, 2.0, -2.0]
//!
//! [model]
//! name = "bounded-tanh"
//! m = [0.5, -0.5]
//! a = [1.0, 0.5]
//! s = [0.5, 0.8]
//!
//! [perturbation]
//! scales = [0.4, 0.2, 0.1, 0.05]
//! ```
//!
//! A generator is either an inline `{ n_states, entries }` table or the path
//! of a CSV file, relative to the config file.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ExperimentError, Result};
use crate::bounds::{DEFAULT_EPS_GRID, DEFAULT_P_GRID};
use crate::girsanov::DEFAULT_K_MAX;
use crate::linalg::norm_inf;
use crate::ratematrix::{block_split, read_csv, validate, RateMatrix, RateMatrixSpec};
use crate::sde::{ModelSpec, MODEL_NAMES};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N_PATHS: usize = 100_000;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_SCALES: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const DEFAULT_C2_GRID_POINTS: usize = 401;
pub const DEFAULT_ETA: f64 = 2.5;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const MANIFEST_NAME: &str = "manifest.json";

pub const KIND_NAMES: [&str; 5] =
    ["theorem1-sweep", "theorem2-reduction", "lemma2-check", "girsanov-sweep", "feynman-kac-check"];
pub const REFERENCE_NAMES: [&str; 1] = ["standard-ou"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Theorem1Sweep,
    Theorem2Reduction,
    Lemma2Check,
    GirsanovSweep,
    FeynmanKacCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Theorem1Sweep => KIND_NAMES[0],
            Self::Theorem2Reduction => KIND_NAMES[1],
            Self::Lemma2Check => KIND_NAMES[2],
            Self::GirsanovSweep => KIND_NAMES[3],
            Self::FeynmanKacCheck => KIND_NAMES[4],
        }
    }

    fn parse(s: &str) -> Option<Self> {
        KIND_NAMES.iter().position(|k| *k == s).map(|i| {
            [
                Self::Theorem1Sweep,
                Self::Theorem2Reduction,
                Self::Lemma2Check,
                Self::GirsanovSweep,
                Self::FeynmanKacCheck,
            ][i]
        })
    }

    fn needs_model(self) -> bool {
        !matches!(self, Self::Lemma2Check)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum MatrixSource {
    Inline(RateMatrixSpec),
    File(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    direction: Option<MatrixEntries>,
    scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixEntries {
    n_states: usize,
    entries: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    p_grid: Option<Vec<f64>>,
    eps_grid: Option<Vec<f64>>,
    c2_grid_points: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReduction {
    m: usize,
    q_hat: Option<MatrixSource>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGirsanov {
    reference: Option<String>,
    eta: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeynmanKac {
    kappa: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: Option<u32>,
    kind: Option<String>,
    seed: Option<u64>,
    n_paths: Option<usize>,
    i0: Option<usize>,
    x0: Option<Vec<f64>>,
    horizon: Option<f64>,
    dt: Option<f64>,
    times: Option<Vec<f64>>,
    q: Option<MatrixSource>,
    model: Option<toml::Table>,
    perturbation: Option<RawPerturbation>,
    bounds: Option<RawBounds>,
    reduction: Option<RawReduction>,
    girsanov: Option<RawGirsanov>,
    feynman_kac: Option<RawFeynmanKac>,
    output: Option<RawOutput>,
}

/// Reduced state space for `theorem2-reduction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionConfig {
    /// States `0..=m` are removed.
    pub m: usize,
    pub q_hat: RateMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovConfig {
    pub reference: String,
    pub eta: f64,
    pub gamma: f64,
}

/// A fully resolved experiment: every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_paths: usize,
    pub i0: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub q: RateMatrix,
    pub model: Option<ModelSpec>,
    /// Perturbation direction (rows), normalized to unit ℓ1 norm.
    pub direction: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub c2_grid_points: usize,
    pub reduction: Option<ReductionConfig>,
    pub girsanov: Option<GirsanovConfig>,
    pub kappa: Option<Vec<f64>>,
    pub csv_name: String,
}

impl ExperimentConfig {
    pub fn direction_matrix(&self) -> DMatrix<f64> {
        let n = self.direction.len();
        DMatrix::from_row_iterator(n, n, self.direction.iter().flatten().copied())
    }
}

/// A default filled in during resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedDefault {
    pub field: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub path: String,
    pub kind: ExperimentKind,
    pub defaults: Vec<AppliedDefault>,
}

struct Resolver<'a> {
    path: &'a Path,
    defaults: Vec<AppliedDefault>,
}

impl Resolver<'_> {
    fn invalid(&self, message: impl Into<String>) -> ExperimentError {
        ExperimentError::ConfigInvalid { path: self.path.display().to_string(), message: message.into() }
    }

    fn or_default<T: Serialize>(&mut self, field: &str, v: Option<T>, default: impl FnOnce() -> T) -> T {
        v.unwrap_or_else(|| {
            let d = default();
            self.defaults.push(AppliedDefault { field: field.into(), value: json!(d) });
            d
        })
    }

    fn matrix(&self, field: &str, src: MatrixSource) -> Result<RateMatrix> {
        match src {
            MatrixSource::Inline(spec) => {
                RateMatrix::try_from(spec).map_err(|e| self.invalid(format!("{field}: {e}")))
            }
            MatrixSource::File(rel) => {
                let base = self.path.parent().unwrap_or(Path::new("."));
                let full: PathBuf = base.join(&rel);
                read_csv(&full).map_err(|e| self.invalid(format!("{field}: {}: {e}", full.display())))
            }
        }
    }
}

/// Closest names to `name` among `known`, best first.
pub fn suggestions(name: &str, known: &[&str]) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = known.iter().map(|k| (strsim::jaro_winkler(name, k), *k)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, k)| k.to_string()).collect()
}

fn unknown(what: &str, name: &str, known: &[&str]) -> String {
    format!("unknown {what} {name:?}; did you mean one of: {}", suggestions(name, known).join(", "))
}

fn is_grid_time(t: f64, dt: f64) -> bool {
    let r = t / dt;
    (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

fn check_positive(r: &Resolver, field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(r.invalid(format!("{field} must be positive and finite, got {v}")))
    }
}

fn default_direction(n: usize, first: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    if first + 1 < n {
        d[(first, first)] = -1.0;
        d[(first, first + 1)] = 1.0;
    }
    d
}

/// Off-diagonal rates of `Q1` kept, leakage into removed states dropped.
pub fn conservative_restriction(q: &RateMatrix, m: usize) -> std::result::Result<RateMatrix, crate::ratematrix::RateMatrixError> {
    let mut q1 = block_split(q, m)?.q1;
    for i in 0..q1.nrows() {
        let off: f64 = (0..q1.ncols()).filter(|&j| j != i).map(|j| q1[(i, j)]).sum();
        q1[(i, i)] = -off;
    }
    validate(&q1)
}

fn parse_text(text: &str, path: &Path) -> Result<RawConfig> {
    toml::from_str(text)
        .map_err(|e| ExperimentError::ConfigInvalid { path: path.display().to_string(), message: e.message().to_string() })
}

/// Resolves config text; `path` locates relative matrix files and labels
/// errors.
pub fn resolve_str(text: &str, path: &Path) -> Result<(ExperimentConfig, Vec<AppliedDefault>)> {
    let raw = parse_text(text, path)?;
    let mut r = Resolver { path, defaults: Vec::new() };

    let schema = raw.schema.ok_or_else(|| r.invalid("missing `schema` (expected 1)"))?;
    if schema != SCHEMA_VERSION {
        return Err(r.invalid(format!("unsupported schema {schema}, expected {SCHEMA_VERSION}")));
    }
    let kind_name = raw.kind.ok_or_else(|| r.invalid("missing `kind`"))?;
    let kind = ExperimentKind::parse(&kind_name).ok_or_else(|| r.invalid(unknown("experiment kind", &kind_name, &KIND_NAMES)))?;

    let q = match raw.q {
        Some(src) => r.matrix("q", src)?,
        None => return Err(r.invalid("missing generator `q`")),
    };
    let n = q.n_states();

    let model = match raw.model {
        Some(table) => {
            let name = table.get("name").and_then(|v| v.as_str()).ok_or_else(|| r.invalid("model: missing `name`"))?;
            if !MODEL_NAMES.contains(&name) {
                return Err(r.invalid(unknown("model", name, &MODEL_NAMES)));
            }
            let spec: ModelSpec = table.try_into().map_err(|e: toml::de::Error| r.invalid(format!("model: {}", e.message())))?;
            spec.build().map_err(|e| r.invalid(format!("model: {e}")))?;
            if spec.n_regimes() != n {
                return Err(r.invalid(format!("model has {} regimes, generator has {n} states", spec.n_regimes())));
            }
            if let ModelSpec::SingularLog { k_max, .. } = &spec {
                if *k_max == DEFAULT_K_MAX {
                    r.defaults.push(AppliedDefault { field: "model.k_max".into(), value: json!(DEFAULT_K_MAX) });
                }
            }
            Some(spec)
        }
        None if kind.needs_model() => return Err(r.invalid(format!("{} needs a `model` table", kind.name()))),
        None => None,
    };
    let dim = model.as_ref().map_or(1, |m| m.build().map(|c| c.dim()).unwrap_or(1));

    let seed = r.or_default("seed", raw.seed, || 0);
    let n_paths = r.or_default("n_paths", raw.n_paths, || DEFAULT_N_PATHS);
    if n_paths == 0 {
        return Err(r.invalid("n_paths must be at least 1"));
    }
    let dt = r.or_default("dt", raw.dt, || DEFAULT_DT);
    check_positive(&r, "dt", dt)?;
    let horizon = match (raw.horizon, &raw.times) {
        (Some(h), _) => h,
        (None, Some(ts)) if !ts.is_empty() => r.or_default("horizon", None, || ts.iter().copied().fold(0.0, f64::max)),
        _ => r.or_default("horizon", None, || DEFAULT_HORIZON),
    };
    check_positive(&r, "horizon", horizon)?;
    let times = r.or_default("times", raw.times, || vec![horizon]);
    if times.is_empty() {
        return Err(r.invalid("times must not be empty"));
    }
    for &t in &times {
        if !(t > 0.0 && t <= horizon) {
            return Err(r.invalid(format!("time {t} lies outside (0, horizon = {horizon}]")));
        }
        if !is_grid_time(t, dt) {
            return Err(r.invalid(format!("time {t} is not a multiple of dt = {dt}")));
        }
    }
    if !is_grid_time(horizon, dt) {
        return Err(r.invalid(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }

    let reduction = match (kind, raw.reduction) {
        (ExperimentKind::Theorem2Reduction, Some(red)) => {
            if red.m + 1 >= n {
                return Err(r.invalid(format!("reduction.m = {} leaves no states out of {n}", red.m)));
            }
            let q_hat = match red.q_hat {
                Some(src) => r.matrix("reduction.q_hat", src)?,
                None => {
                    let qh = conservative_restriction(&q, red.m).map_err(|e| r.invalid(format!("reduction: {e}")))?;
                    r.defaults.push(AppliedDefault { field: "reduction.q_hat".into(), value: json!(qh.rows()) });
                    qh
                }
            };
            if q_hat.n_states() != n - red.m - 1 {
                return Err(r.invalid(format!("reduction.q_hat must have {} states", n - red.m - 1)));
            }
            Some(ReductionConfig { m: red.m, q_hat })
        }
        (ExperimentKind::Theorem2Reduction, None) => return Err(r.invalid("theorem2-reduction needs a `reduction` table")),
        (_, Some(_)) => return Err(r.invalid("`reduction` is only used by theorem2-reduction")),
        (_, None) => None,
    };

    let first = reduction.as_ref().map_or(0, |red| red.m + 1);
    let i0 = r.or_default("i0", raw.i0, || first);
    if i0 >= n {
        return Err(r.invalid(format!("i0 = {i0} is not a state of a {n}-state generator")));
    }
    if let Some(red) = &reduction {
        if i0 <= red.m {
            return Err(r.invalid(format!("i0 = {i0} is a removed state (reduction.m = {})", red.m)));
        }
    }
    let x0 = r.or_default("x0", raw.x0, || vec![0.0; dim]);
    if x0.len() != dim {
        return Err(r.invalid(format!("x0 has length {}, the model dimension is {dim}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(r.invalid("x0 must be finite"));
    }

    let pert = raw.perturbation.unwrap_or_default();
    let direction_dim = reduction.as_ref().map_or(n, |red| red.q_hat.n_states());
    let direction = match pert.direction {
        Some(d) => {
            if d.n_states != direction_dim || d.entries.len() != direction_dim * direction_dim {
                return Err(r.invalid(format!("perturbation.direction must be {direction_dim}×{direction_dim}")));
            }
            let m = DMatrix::from_row_slice(direction_dim, direction_dim, &d.entries);
            if m.row_iter().any(|row| row.sum().abs() > 1e-12) {
                return Err(r.invalid("perturbation.direction must have zero row sums"));
            }
            m
        }
        None => {
            let d = default_direction(direction_dim, 0);
            r.defaults.push(AppliedDefault {
                field: "perturbation.direction".into(),
                value: json!({ "n_states": direction_dim, "entries": d.transpose().iter().collect::<Vec<_>>() }),
            });
            d
        }
    };
    let dn = norm_inf(&direction);
    if !(dn > 0.0) {
        return Err(r.invalid("perturbation.direction must be nonzero"));
    }
    let direction: Vec<Vec<f64>> = (direction / dn).row_iter().map(|r| r.iter().copied().collect()).collect();
    let scales = r.or_default("perturbation.scales", pert.scales, || DEFAULT_SCALES.to_vec());
    if scales.is_empty() || scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(r.invalid("perturbation.scales must be nonempty, finite and nonnegative"));
    }

    let b = raw.bounds.unwrap_or_default();
    let p_grid = r.or_default("bounds.p_grid", b.p_grid, || DEFAULT_P_GRID.to_vec());
    let eps_grid = r.or_default("bounds.eps_grid", b.eps_grid, || DEFAULT_EPS_GRID.to_vec());
    let c2_grid_points = r.or_default("bounds.c2_grid_points", b.c2_grid_points, || DEFAULT_C2_GRID_POINTS);
    if p_grid.is_empty() || p_grid.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
        return Err(r.invalid("bounds.p_grid must be nonempty with every p > 1"));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(r.invalid("bounds.eps_grid must be nonempty and positive"));
    }
    if c2_grid_points < 2 {
        return Err(r.invalid("bounds.c2_grid_points must be at least 2"));
    }

    let girsanov = match (kind, raw.girsanov) {
        (ExperimentKind::GirsanovSweep, g) => {
            let g = g.unwrap_or_default();
            let reference = r.or_default("girsanov.reference", g.reference, || REFERENCE_NAMES[0].to_string());
            if !REFERENCE_NAMES.contains(&reference.as_str()) {
                return Err(r.invalid(unknown("reference model", &reference, &REFERENCE_NAMES)));
            }
            let eta = r.or_default("girsanov.eta", g.eta, || DEFAULT_ETA);
            let gamma = r.or_default("girsanov.gamma", g.gamma, || DEFAULT_GAMMA);
            check_positive(&r, "girsanov.eta", eta)?;
            if !(gamma > 1.0 && gamma.is_finite()) {
                return Err(r.invalid(format!("girsanov.gamma must exceed 1, got {gamma}")));
            }
            if dim != 1 {
                return Err(r.invalid("girsanov-sweep supports one-dimensional models"));
            }
            Some(GirsanovConfig { reference, eta, gamma })
        }
        (_, Some(_)) => return Err(r.invalid("`girsanov` is only used by girsanov-sweep")),
        (_, None) => None,
    };

    let kappa = match (kind, raw.feynman_kac) {
        (ExperimentKind::FeynmanKacCheck, fk) => {
            let explicit = fk.and_then(|f| f.kappa);
            let kappa = match explicit {
                Some(k) => k,
                None => {
                    let reg = model.as_ref().and_then(|m| m.build().ok()).map(|c| c.regularity());
                    let k = reg
                        .and_then(|g| g.kappa)
                        .ok_or_else(|| r.invalid("feynman_kac.kappa is required: the model declares no constants"))?;
                    r.defaults.push(AppliedDefault { field: "feynman_kac.kappa".into(), value: json!(k) });
                    k
                }
            };
            if kappa.len() != n || kappa.iter().any(|k| !k.is_finite()) {
                return Err(r.invalid(format!("feynman_kac.kappa needs {n} finite entries")));
            }
            Some(kappa)
        }
        (_, Some(_)) => return Err(r.invalid("`feynman_kac` is only used by feynman-kac-check")),
        (_, None) => None,
    };

    let csv_name = r.or_default("output.csv", raw.output.and_then(|o| o.csv), || format!("{}.csv", kind.name()));
    if csv_name.is_empty() || csv_name == MANIFEST_NAME || csv_name.contains(['/', '\\']) {
        return Err(r.invalid(format!("output.csv must be a plain file name other than {MANIFEST_NAME}")));
    }

    let cfg = ExperimentConfig {
        schema,
        kind,
        seed,
        n_paths,
        i0,
        x0,
        horizon,
        dt,
        times,
        q,
        model,
        direction,
        scales,
        p_grid,
        eps_grid,
        c2_grid_points,
        reduction,
        girsanov,
        kappa,
        csv_name,
    };
    Ok((cfg, r.defaults))
}

pub fn load(path: &Path) -> Result<(ExperimentConfig, Vec<AppliedDefault>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::ConfigInvalid { path: path.display().to_string(), message: e.to_string() })?;
    resolve_str(&text, path)
}

/// Checks a config file and lists the defaults it relies on. Never runs a
/// simulation.
pub fn validate_config(path: &Path) -> Result<ValidationReport> {
    let (cfg, defaults) = load(path)?;
    Ok(ValidationReport { path: path.display().to_string(), kind: cfg.kind, defaults })
}
