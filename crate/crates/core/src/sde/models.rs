//! Built-in one-dimensional models, selectable by name.

use serde::{Deserialize, Serialize};

use super::{Regularity, SdeError, SwitchingCoefficients};
use crate::girsanov::SingularLogDrift;

/// Names accepted in configs.
pub const MODEL_NAMES: [&str; 3] = ["switching-ou", "bounded-tanh", "singular-log"];

/// `b(x, i) = -a_i x`, `σ(x, i) = s_i + r_i x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingOu {
    pub a: Vec<f64>,
    pub s: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
}

impl SwitchingOu {
    pub fn new(a: Vec<f64>, s: Vec<f64>, r: Vec<f64>) -> Result<Self, SdeError> {
        let m = Self { a, s, r };
        m.check()?;
        Ok(m)
    }

    fn r(&self, i: usize) -> f64 {
        self.r.get(i).copied().unwrap_or(0.0)
    }

    fn check(&self) -> Result<(), SdeError> {
        let n = self.a.len();
        if n == 0 || self.s.len() != n || !(self.r.is_empty() || self.r.len() == n) {
            return Err(SdeError::InvalidArgument(
                "switching-ou needs equal-length a, s (and optional r) with at least one regime".into(),
            ));
        }
        Ok(())
    }
}

impl SwitchingCoefficients for SwitchingOu {
    fn dim(&self) -> usize {
        1
    }
    fn n_regimes(&self) -> usize {
        self.a.len()
    }
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        out[0] = -self.a[i] * x[0];
    }
    fn diffusion(&self, x: &[f64], i: usize, out: &mut [f64]) {
        out[0] = self.s[i] + self.r(i) * x[0];
    }
    fn regularity(&self) -> Regularity {
        let n = self.n_regimes();
        let kappa = (0..n).map(|i| 2.0 * self.r(i) * self.r(i) - 2.0 * self.a[i]).collect();
        // (s + r x)² ≤ (s² + r²)(1 + x²) by Cauchy–Schwarz
        let growth = (0..n)
            .map(|i| (self.a[i] * self.a[i]).max(self.s[i] * self.s[i] + self.r(i) * self.r(i)))
            .fold(0.0, f64::max);
        Regularity { kappa: Some(kappa), growth: Some(growth), bounded: false }
    }
}

/// `b(x, i) = m_i - a_i tanh(x)`, `σ(x, i) = s_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedTanh {
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub s: Vec<f64>,
}

impl BoundedTanh {
    pub fn new(m: Vec<f64>, a: Vec<f64>, s: Vec<f64>) -> Result<Self, SdeError> {
        let n = m.len();
        if n == 0 || a.len() != n || s.len() != n {
            return Err(SdeError::InvalidArgument(
                "bounded-tanh needs equal-length m, a, s with at least one regime".into(),
            ));
        }
        Ok(Self { m, a, s })
    }
}

impl SwitchingCoefficients for BoundedTanh {
    fn dim(&self) -> usize {
        1
    }
    fn n_regimes(&self) -> usize {
        self.m.len()
    }
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        out[0] = self.m[i] - self.a[i] * x[0].tanh();
    }
    fn diffusion(&self, _x: &[f64], i: usize, out: &mut [f64]) {
        out[0] = self.s[i];
    }
    fn regularity(&self) -> Regularity {
        let n = self.n_regimes();
        // tanh is increasing with slope at most 1
        let kappa = (0..n).map(|i| (-2.0 * self.a[i]).max(0.0)).collect();
        let growth = (0..n)
            .map(|i| {
                let b = self.m[i].abs() + self.a[i].abs();
                (b * b).max(self.s[i] * self.s[i])
            })
            .fold(0.0, f64::max);
        Regularity { kappa: Some(kappa), growth: Some(growth), bounded: true }
    }
}

/// Config-level model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    SwitchingOu {
        a: Vec<f64>,
        s: Vec<f64>,
        #[serde(default)]
        r: Vec<f64>,
    },
    BoundedTanh {
        m: Vec<f64>,
        a: Vec<f64>,
        s: Vec<f64>,
    },
    SingularLog {
        beta: Vec<f64>,
        #[serde(default = "default_k_max")]
        k_max: usize,
    },
}

fn default_k_max() -> usize {
    crate::girsanov::DEFAULT_K_MAX
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SwitchingOu { .. } => MODEL_NAMES[0],
            Self::BoundedTanh { .. } => MODEL_NAMES[1],
            Self::SingularLog { .. } => MODEL_NAMES[2],
        }
    }

    pub fn n_regimes(&self) -> usize {
        match self {
            Self::SwitchingOu { a, .. } => a.len(),
            Self::BoundedTanh { m, .. } => m.len(),
            Self::SingularLog { beta, .. } => beta.len(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn SwitchingCoefficients>, SdeError> {
        Ok(match self {
            Self::SwitchingOu { a, s, r } => Box::new(SwitchingOu::new(a.clone(), s.clone(), r.clone())?),
            Self::BoundedTanh { m, a, s } => Box::new(BoundedTanh::new(m.clone(), a.clone(), s.clone())?),
            Self::SingularLog { beta, k_max } => Box::new(
                SingularLogDrift::new(beta.clone(), *k_max).map_err(|e| SdeError::InvalidArgument(e.to_string()))?,
            ),
        })
    }
}
