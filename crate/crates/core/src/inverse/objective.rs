//! Targets for the optimizers and samplers: an energy `E(θ)` together with
//! gradient and Hessian estimates.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::FilterOutput;
use crate::likelihood::{
    gradient_estimate, hessian_estimate, neg_log_likelihood, GaussianPrior, LikelihoodModel,
};
use crate::linearization::JacobianEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub e: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Evaluation {
    /// Sentinel for a divergent forward solve: `E = +∞`, zero gradient, identity Hessian.
    pub fn diverged(n: usize) -> Self {
        Self {
            e: f64::INFINITY,
            grad: DVector::zeros(n),
            hess: DMatrix::identity(n, n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e.is_finite()
    }
}

pub trait Objective: Sync {
    fn n_params(&self) -> usize;

    /// Divergence is reported through [`Evaluation::diverged`], not as an error.
    fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation>;
}

/// Negative log-likelihood (or log-posterior) of an ODE model, one forward
/// solve per evaluation.
pub struct LikelihoodObjective<'a> {
    model: &'a LikelihoodModel,
    prior: Option<GaussianPrior>,
    solves: AtomicUsize,
}

impl<'a> LikelihoodObjective<'a> {
    pub fn new(model: &'a LikelihoodModel) -> Self {
        Self {
            model,
            prior: None,
            solves: AtomicUsize::new(0),
        }
    }

    pub fn with_prior(mut self, prior: GaussianPrior) -> Result<Self> {
        if prior.mean().len() != self.model.n_params() {
            return Err(Error::contract(
                "prior dimension does not match the parameters",
            ));
        }
        self.prior = Some(prior);
        Ok(self)
    }

    pub fn model(&self) -> &LikelihoodModel {
        self.model
    }

    /// Number of forward solves performed so far.
    pub fn forward_solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    fn evaluation_at(&self, theta: &DVector<f64>, out: &FilterOutput) -> Result<Evaluation> {
        let n = theta.len();
        let e = neg_log_likelihood(self.model, out)?;
        if !e.is_finite() {
            return Ok(Evaluation::diverged(n));
        }
        let j: JacobianEstimate = match self.model.jacobian(out) {
            Ok(j) => j,
            Err(Error::Contract(_)) => return Ok(Evaluation::diverged(n)),
            Err(other) => return Err(other),
        };
        let mut eval = Evaluation {
            e,
            grad: gradient_estimate(self.model, out, &j)?,
            hess: hessian_estimate(self.model, &j)?,
        };
        if let Some(prior) = &self.prior {
            eval.e += prior.energy(theta);
            eval.grad += prior.precision() * (theta - prior.mean());
            eval.hess += prior.precision();
        }
        Ok(eval)
    }
}

impl Objective for LikelihoodObjective<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation> {
        if theta.len() != self.n_params() {
            return Err(Error::contract(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.n_params()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Ok(Evaluation::diverged(theta.len()));
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        match self.model.solve(theta.as_slice()) {
            Ok(out) => self.evaluation_at(theta, &out),
            Err(e) if e.is_divergence() => Ok(Evaluation::diverged(theta.len())),
            Err(e) => Err(e),
        }
    }
}

/// `½ (z − c − Jθ)ᵀ W (z − c − Jθ)` with diagonal `W`: the likelihood with the
/// Jacobian frozen, for which the estimators are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    offset: DVector<f64>,
    j: DMatrix<f64>,
    z: DVector<f64>,
    weights: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(
        offset: DVector<f64>,
        j: DMatrix<f64>,
        z: DVector<f64>,
        weights: DVector<f64>,
    ) -> Result<Self> {
        let m = j.nrows();
        if offset.len() != m || z.len() != m || weights.len() != m {
            return Err(Error::contract("quadratic objective shapes do not conform"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::domain("weights must be positive"));
        }
        Ok(Self {
            offset,
            j,
            z,
            weights,
        })
    }

    /// Linearization of `model` at the solve `out`, with Jacobian `j` held fixed.
    pub fn frozen(
        model: &LikelihoodModel,
        out: &FilterOutput,
        j: &JacobianEstimate,
    ) -> Result<Self> {
        let offset = out.data_means() - &j.j * &out.theta;
        Self::new(
            offset,
            j.j.clone(),
            model.dataset().observations().clone(),
            model.weights().clone(),
        )
    }

    /// `E(θ) = ½ θᵀ precision θ`, a centred Gaussian target.
    pub fn centred_gaussian(precision_diag: &[f64]) -> Result<Self> {
        let n = precision_diag.len();
        Self::new(
            DVector::zeros(n),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DVector::from_column_slice(precision_diag),
        )
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn energy(&self, theta: &DVector<f64>) -> f64 {
        let r = &self.z - &self.offset - &self.j * theta;
        0.5 * r
            .iter()
            .zip(self.weights.iter())
            .map(|(r, w)| r * r * w)
            .sum::<f64>()
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let mut wj = self.j.clone();
        for (mut row, w) in wj.row_iter_mut().zip(self.weights.iter()) {
            row *= *w;
        }
        self.j.transpose() * wj
    }

    /// Minimizer, which is also the mean of the Gaussian `exp(−E)`.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let rhs = self.j.transpose() * (&self.z - &self.offset).component_mul(&self.weights);
        self.hessian()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| {
                Error::LinearAlgebra("quadratic objective is not strictly convex".into())
            })
    }

    /// Covariance of the Gaussian `exp(−E)`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.hessian()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| {
                Error::LinearAlgebra("quadratic objective is not strictly convex".into())
            })
    }
}

impl Objective for QuadraticObjective {
    fn n_params(&self) -> usize {
        self.j.ncols()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation> {
        if theta.len() != self.n_params() {
            return Err(Error::contract(
                "theta length does not match the quadratic objective",
            ));
        }
        let r = &self.z - &self.offset - &self.j * theta;
        let e = 0.5
            * r.iter()
                .zip(self.weights.iter())
                .map(|(r, w)| r * r * w)
                .sum::<f64>();
        if !e.is_finite() {
            return Ok(Evaluation::diverged(theta.len()));
        }
        Ok(Evaluation {
            e,
            grad: -(self.j.transpose() * r.component_mul(&self.weights)),
            hess: self.hessian(),
        })
    }
}
