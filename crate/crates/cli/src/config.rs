//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use odefilt::inverse::{Method, SolverConfig, MAX_STEP, MIN_STEP};
use odefilt::linearization::JacobianVariant;
use odefilt::problems::{self, Benchmark};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// How the diffusion scale of the prior is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SigmaDifMode {
    Fixed {
        value: f64,
    },
    /// Global quasi maximum-likelihood estimate from a solve at `theta0`.
    Calibrate,
}

impl Default for SigmaDifMode {
    fn default() -> Self {
        SigmaDifMode::Fixed { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub method: String,
    pub step: f64,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the synthetic dataset; independent of the solver seed.
    #[serde(default)]
    pub data_seed: u64,
    /// Forced-acceptance burn-in; the benchmark default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_force_accept: Option<usize>,
    #[serde(default = "default_leapfrog")]
    pub leapfrog_steps: usize,
    #[serde(default)]
    pub newton_damping: f64,
    #[serde(default = "default_true")]
    pub hastings: bool,
    #[serde(default)]
    pub measurement_var: f64,
    /// Forward-solve step; the benchmark default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_step: Option<f64>,
    /// Initial parameter; the benchmark default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "default_jacobian")]
    pub jacobian: String,
    #[serde(default)]
    pub sigma_dif: SigmaDifMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_leapfrog() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_jacobian() -> String {
    JacobianVariant::default().as_str().to_string()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: "lv".into(),
            method: "nwt".into(),
            step: 1.0,
            budget: 100,
            seed: 0,
            data_seed: 0,
            burn_in_force_accept: None,
            leapfrog_steps: default_leapfrog(),
            newton_damping: 0.0,
            hastings: true,
            measurement_var: 0.0,
            solver_step: None,
            theta0: None,
            jacobian: default_jacobian(),
            sigma_dif: SigmaDifMode::default(),
            output: None,
        }
    }
}

/// A configuration with every default resolved against its benchmark.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub benchmark: Benchmark,
    pub solver: SolverConfig,
    pub variant: JacobianVariant,
    pub solver_step: f64,
    pub theta0: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// Checks every field and fills in benchmark defaults. No solve happens here.
    pub fn resolve(&self) -> Result<ResolvedExperiment, CliError> {
        let usage = |msg: String| CliError::Usage(msg);
        let benchmark = problems::by_name(&self.benchmark).map_err(|e| usage(e.to_string()))?;
        let method: Method = self
            .method
            .parse()
            .map_err(|e: odefilt::Error| usage(e.to_string()))?;
        let variant: JacobianVariant = self
            .jacobian
            .parse()
            .map_err(|e: odefilt::Error| usage(e.to_string()))?;
        if !(MIN_STEP..=MAX_STEP).contains(&self.step) {
            return Err(usage(format!(
                "step must lie in [{MIN_STEP:e}, {MAX_STEP}], got {}",
                self.step
            )));
        }
        if !(self.measurement_var >= 0.0 && self.measurement_var.is_finite()) {
            return Err(usage(format!(
                "measurement_var must be >= 0, got {}",
                self.measurement_var
            )));
        }
        if let SigmaDifMode::Fixed { value } = self.sigma_dif {
            if !(value > 0.0 && value.is_finite()) {
                return Err(usage(format!("sigma_dif must be positive, got {value}")));
            }
        }
        let solver_step = self.solver_step.unwrap_or(benchmark.step);
        if !(solver_step > 0.0) {
            return Err(usage(format!(
                "solver_step must be positive, got {solver_step}"
            )));
        }
        let theta0 = self
            .theta0
            .clone()
            .unwrap_or_else(|| benchmark.theta0.clone());
        if theta0.len() != benchmark.n_params() || theta0.iter().any(|v| !v.is_finite()) {
            return Err(usage(format!(
                "theta0 must hold {} finite values for benchmark '{}'",
                benchmark.n_params(),
                self.benchmark
            )));
        }
        let solver = SolverConfig {
            method,
            step: self.step,
            budget: self.budget,
            seed: self.seed,
            chain: 0,
            burn_in_force_accept: self.burn_in_force_accept.unwrap_or(benchmark.burn_in),
            leapfrog_steps: self.leapfrog_steps,
            newton_damping: self.newton_damping,
            hastings: self.hastings,
        };
        solver.validate().map_err(|e| usage(e.to_string()))?;
        Ok(ResolvedExperiment {
            benchmark,
            solver,
            variant,
            solver_step,
            theta0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in_from_a_minimal_file() {
        let cfg = ExperimentConfig::from_toml(
            "benchmark = \"pst\"\nmethod = \"plmc\"\nstep = 0.01\nbudget = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.sigma_dif, SigmaDifMode::Fixed { value: 1.0 });
        let r = cfg.resolve().unwrap();
        assert_eq!(r.solver.burn_in_force_accept, 100);
        assert_eq!(r.solver_step, 0.05);
        assert_eq!(r.variant, JacobianVariant::DriftCorrected);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(ExperimentConfig::from_toml("benchmark = \"lv\"\nfoo = 1\n").is_err());
        let bad = ExperimentConfig {
            step: 2.0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad.resolve(), Err(CliError::Usage(_))));
        let bad = ExperimentConfig {
            theta0: Some(vec![1.0]),
            ..ExperimentConfig::default()
        };
        assert!(bad.resolve().is_err());
    }
}
