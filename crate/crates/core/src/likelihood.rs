//! Gaussian likelihood of the data under the filtering distribution, and its
//! gradient and Hessian estimates.
//!
//! `P` is diagonal and shared by all state dimensions, so with diagonal
//! measurement noise the covariance `P + noise` is diagonal too. Its inverse is
//! stored once as a vector of weights and reused for every `θ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{filter_solve, FilterOutput, ProblemSpec};
use crate::kernels::{KernelConfig, TimeGrid};
use crate::linearization::{
    jacobian_estimate, kernel_prefactor, JacobianEstimate, JacobianVariant, KernelPrefactor,
};

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// One variance for every observation.
    Scalar(f64),
    /// One variance per stacked observation (length `M·d`).
    Diagonal(Vec<f64>),
}

/// Noisy observations of the solution at grid-aligned times.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    z: DVector<f64>,
    noise: NoiseModel,
}

impl Dataset {
    /// `z` is stacked dimension-major: entry `dim·M + i` observes dimension `dim` at `times[i]`.
    pub fn new(times: Vec<f64>, z: DVector<f64>, noise: NoiseModel) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::contract("dataset needs at least one time"));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain(
                "data times must be nonnegative and strictly increasing",
            ));
        }
        if z.is_empty() || !z.len().is_multiple_of(times.len()) {
            return Err(Error::contract(format!(
                "{} observations do not stack over {} times",
                z.len(),
                times.len()
            )));
        }
        match &noise {
            NoiseModel::Scalar(v) if !(*v > 0.0 && v.is_finite()) => {
                return Err(Error::domain(format!(
                    "noise variance must be positive, got {v}"
                )));
            }
            NoiseModel::Diagonal(v) => {
                if v.len() != z.len() {
                    return Err(Error::contract(format!(
                        "{} noise entries for {} observations",
                        v.len(),
                        z.len()
                    )));
                }
                if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(Error::domain("noise variances must be positive"));
                }
            }
            _ => {}
        }
        Ok(Self { times, z, noise })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn observations(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.z.len() / self.times.len()
    }

    /// Noise variance of stacked observation `row`.
    pub fn noise_at(&self, row: usize) -> f64 {
        match &self.noise {
            NoiseModel::Scalar(v) => *v,
            NoiseModel::Diagonal(v) => v[row],
        }
    }
}

/// Everything about the likelihood that does not depend on `θ`.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    spec: ProblemSpec,
    dataset: Dataset,
    prefactor: KernelPrefactor,
    /// Diagonal of `(P + noise)⁻¹`, stacked like the observations.
    weights: DVector<f64>,
    variant: JacobianVariant,
}

impl LikelihoodModel {
    pub fn new(
        spec: ProblemSpec,
        dataset: Dataset,
        step: f64,
        r: f64,
        cfg: KernelConfig,
    ) -> Result<Self> {
        if dataset.dim() != spec.dim() {
            return Err(Error::contract(format!(
                "dataset has dimension {} but the problem has {}",
                dataset.dim(),
                spec.dim()
            )));
        }
        let grid = TimeGrid::aligned(step, spec.horizon(), dataset.times())?;
        let prefactor = kernel_prefactor(&grid, r, &cfg)?;
        let m = dataset.n_times();
        let weights = DVector::from_fn(dataset.observations().len(), |row, _| {
            1.0 / (prefactor.variances[row % m] + dataset.noise_at(row))
        });
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::LinearAlgebra(
                "P + noise is not positive definite".into(),
            ));
        }
        Ok(Self {
            spec,
            dataset,
            prefactor,
            weights,
            variant: JacobianVariant::default(),
        })
    }

    pub fn with_variant(mut self, variant: JacobianVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn prefactor(&self) -> &KernelPrefactor {
        &self.prefactor
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.prefactor.grid
    }

    pub fn cfg(&self) -> &KernelConfig {
        &self.prefactor.cfg
    }

    pub fn measurement_var(&self) -> f64 {
        self.prefactor.measurement_var
    }

    pub fn variant(&self) -> JacobianVariant {
        self.variant
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    /// Forward solve on the model's grid.
    pub fn solve(&self, theta: &[f64]) -> Result<FilterOutput> {
        filter_solve(
            &self.spec,
            theta,
            self.grid(),
            self.measurement_var(),
            self.cfg(),
        )
    }

    pub fn jacobian(&self, out: &FilterOutput) -> Result<JacobianEstimate> {
        jacobian_estimate(&self.prefactor, out, self.variant)
    }

    fn check_output(&self, out: &FilterOutput) -> Result<()> {
        if out.grid != *self.grid() || out.dim() != self.dataset.dim() {
            return Err(Error::contract(
                "filter output does not belong to this likelihood model",
            ));
        }
        Ok(())
    }

    /// `z − m_θ` at the data times.
    pub fn residual(&self, out: &FilterOutput) -> Result<DVector<f64>> {
        self.check_output(out)?;
        Ok(self.dataset.observations() - out.data_means())
    }
}

fn half_weighted_square(residual: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    let e = 0.5
        * residual
            .iter()
            .zip(weights.iter())
            .map(|(r, w)| r * r * w)
            .sum::<f64>();
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

/// `½ (z − m_θ)ᵀ (P + noise)⁻¹ (z − m_θ)`; non-finite means give `+∞`.
pub fn neg_log_likelihood(model: &LikelihoodModel, out: &FilterOutput) -> Result<f64> {
    let r = model.residual(out)?;
    Ok(half_weighted_square(&r, model.weights()))
}

/// `½ (z − m_θ)ᵀ noise⁻¹ (z − m_θ)`, i.e. the filter's uncertainty is ignored.
pub fn unaware_neg_log_likelihood(dataset: &Dataset, out: &FilterOutput) -> Result<f64> {
    let m = out.data_means();
    if m.len() != dataset.observations().len() || out.grid.n_data() != dataset.n_times() {
        return Err(Error::contract("filter output does not match the dataset"));
    }
    let w = DVector::from_fn(m.len(), |row, _| 1.0 / dataset.noise_at(row));
    Ok(half_weighted_square(&(dataset.observations() - m), &w))
}

fn check_jacobian(model: &LikelihoodModel, j: &DMatrix<f64>) -> Result<()> {
    if j.nrows() != model.weights.len() {
        return Err(Error::contract(format!(
            "Jacobian has {} rows, expected {}",
            j.nrows(),
            model.weights.len()
        )));
    }
    Ok(())
}

/// `−Jᵀ (P + noise)⁻¹ (z − m_θ)`.
pub fn gradient_estimate(
    model: &LikelihoodModel,
    out: &FilterOutput,
    j: &JacobianEstimate,
) -> Result<DVector<f64>> {
    check_jacobian(model, &j.j)?;
    let r = model.residual(out)?;
    Ok(-(j.j.transpose() * r.component_mul(model.weights())))
}

/// `Jᵀ (P + noise)⁻¹ J`.
pub fn hessian_estimate(model: &LikelihoodModel, j: &JacobianEstimate) -> Result<DMatrix<f64>> {
    check_jacobian(model, &j.j)?;
    let mut weighted = j.j.clone();
    for (mut row, w) in weighted.row_iter_mut().zip(model.weights().iter()) {
        row *= *w;
    }
    let h = j.j.transpose() * weighted;
    Ok((&h + h.transpose()) * 0.5)
}

/// Gaussian prior `N(μ, V)` on the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mu: DVector<f64>,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mu: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() != mu.len() || v.ncols() != mu.len() {
            return Err(Error::contract("prior covariance must be n × n"));
        }
        if (&v - v.transpose()).amax() > 1e-12 * v.amax().max(1.0) {
            return Err(Error::contract("prior covariance must be symmetric"));
        }
        let chol = v
            .clone()
            .cholesky()
            .ok_or_else(|| Error::contract("prior covariance must be positive definite"))?;
        let v_inv = chol.inverse();
        Ok(Self { mu, v, v_inv })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    /// `½ (θ − μ)ᵀ V⁻¹ (θ − μ)`.
    pub fn energy(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.mu;
        0.5 * d.dot(&(&self.v_inv * &d))
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.mu.len() != n {
            return Err(Error::contract(format!(
                "prior has dimension {} but there are {n} parameters",
                self.mu.len()
            )));
        }
        Ok(())
    }
}

/// Gradient estimate of the negative log-posterior: `ĝ + V⁻¹(θ − μ)`.
pub fn bayesian_gradient(
    model: &LikelihoodModel,
    out: &FilterOutput,
    j: &JacobianEstimate,
    prior: &GaussianPrior,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    prior.check(theta.len())?;
    let g = gradient_estimate(model, out, j)?;
    prior.check(g.len())?;
    Ok(g + prior.precision() * (theta - prior.mean()))
}

/// Hessian estimate of the negative log-posterior: `Ĥ + V⁻¹`.
pub fn bayesian_hessian(
    model: &LikelihoodModel,
    j: &JacobianEstimate,
    prior: &GaussianPrior,
) -> Result<DMatrix<f64>> {
    let h = hessian_estimate(model, j)?;
    prior.check(h.nrows())?;
    Ok(h + prior.precision())
}

/// Design `[1 J]` for the joint parameter `[x0; θ]`: column `dim` is one on the
/// rows of state dimension `dim`.
pub fn extended_design(j: &DMatrix<f64>, n_times: usize) -> Result<DMatrix<f64>> {
    if n_times == 0 || !j.nrows().is_multiple_of(n_times) {
        return Err(Error::contract(format!(
            "{} rows do not stack over {n_times} times",
            j.nrows()
        )));
    }
    let d = j.nrows() / n_times;
    let mut out = DMatrix::zeros(j.nrows(), d + j.ncols());
    for row in 0..j.nrows() {
        out[(row, row / n_times)] = 1.0;
    }
    out.view_mut((0, d), (j.nrows(), j.ncols())).copy_from(j);
    Ok(out)
}
