//! Single iterations of the optimizers and samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::objective::{Evaluation, Objective};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: DVector<f64>,
    pub eval: Evaluation,
}

impl ChainState {
    pub fn at<O: Objective + ?Sized>(obj: &O, theta: DVector<f64>) -> Result<Self> {
        let eval = obj.evaluate(&theta)?;
        Ok(Self { theta, eval })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    Accepted,
    Rejected,
    /// Accepted unconditionally during burn-in.
    Forced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: ChainState,
    /// `None` for methods without an accept/reject decision.
    pub acceptance: Option<Acceptance>,
    pub proposal_e: Option<f64>,
    /// The Hessian had to be regularized to be factorized.
    pub ridge_applied: bool,
}

impl StepOutcome {
    fn moved(state: ChainState, ridge_applied: bool) -> Self {
        Self {
            state,
            acceptance: None,
            proposal_e: None,
            ridge_applied,
        }
    }

    fn decided(
        current: &ChainState,
        proposal: ChainState,
        acceptance: Acceptance,
        ridge: bool,
    ) -> Self {
        let proposal_e = Some(proposal.eval.e);
        let state = if acceptance == Acceptance::Rejected {
            current.clone()
        } else {
            proposal
        };
        Self {
            state,
            acceptance: Some(acceptance),
            proposal_e,
            ridge_applied: ridge,
        }
    }
}

/// Cholesky factor of `hess + damping·I`. If that fails, a ridge starting at
/// `1e-10·trace/n` is added and grown until it succeeds.
pub fn regularized_cholesky(hess: &DMatrix<f64>, damping: f64) -> (Cholesky<f64, Dyn>, bool) {
    let n = hess.nrows();
    let shifted = |extra: f64| hess + DMatrix::identity(n, n) * (damping + extra);
    if hess.iter().all(|v| v.is_finite()) {
        if let Some(c) = shifted(0.0).cholesky() {
            return (c, false);
        }
        let trace = hess.trace();
        let mut ridge = if trace > 0.0 {
            1e-10 * trace / n as f64
        } else {
            1e-10
        };
        for _ in 0..40 {
            if let Some(c) = shifted(ridge).cholesky() {
                return (c, true);
            }
            ridge *= 10.0;
        }
    }
    let identity = DMatrix::identity(n, n)
        .cholesky()
        .expect("identity is positive definite");
    (identity, true)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn metropolis<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Random search: one step of length `rho` in a uniformly random direction,
/// kept only if it lowers `E`.
pub fn step_rs<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    state: &ChainState,
    rng: &mut R,
    rho: f64,
) -> Result<StepOutcome> {
    let n = state.theta.len();
    let mut u = standard_normal(rng, n);
    let norm = u.norm();
    if norm > 0.0 {
        u /= norm;
    }
    let proposal = ChainState::at(obj, &state.theta + u * rho)?;
    let acceptance = if proposal.eval.e < state.eval.e {
        Acceptance::Accepted
    } else {
        Acceptance::Rejected
    };
    Ok(StepOutcome::decided(state, proposal, acceptance, false))
}

/// `θ − ρ·ĝ`.
pub fn step_gd<O: Objective + ?Sized>(
    obj: &O,
    state: &ChainState,
    rho: f64,
) -> Result<StepOutcome> {
    let next = &state.theta - &state.eval.grad * rho;
    Ok(StepOutcome::moved(ChainState::at(obj, next)?, false))
}

/// `θ − ρ·(Ĥ + damping·I)⁻¹ ĝ`.
pub fn step_newton<O: Objective + ?Sized>(
    obj: &O,
    state: &ChainState,
    rho: f64,
    damping: f64,
) -> Result<StepOutcome> {
    let (chol, ridge) = regularized_cholesky(&state.eval.hess, damping);
    let next = &state.theta - chol.solve(&state.eval.grad) * rho;
    Ok(StepOutcome::moved(ChainState::at(obj, next)?, ridge))
}

/// Random-walk Metropolis with an isotropic `N(0, ρ²I)` increment.
pub fn step_rwm<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    state: &ChainState,
    rng: &mut R,
    rho: f64,
) -> Result<StepOutcome> {
    let xi = standard_normal(rng, state.theta.len());
    let proposal = ChainState::at(obj, &state.theta + xi * rho)?;
    let acceptance = if proposal.eval.is_finite() && metropolis(rng, state.eval.e - proposal.eval.e)
    {
        Acceptance::Accepted
    } else {
        Acceptance::Rejected
    };
    Ok(StepOutcome::decided(state, proposal, acceptance, false))
}

/// Langevin proposal preconditioned by `Ĥ` at the source point.
struct LangevinKernel {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ridge: bool,
}

impl LangevinKernel {
    fn at(state: &ChainState, rho: f64) -> Self {
        let (chol, ridge) = regularized_cholesky(&state.eval.hess, 0.0);
        let mean = &state.theta - chol.solve(&state.eval.grad) * rho;
        Self { mean, chol, ridge }
    }

    /// `mean + ξ` with `ξ ∼ N(0, 2ρ Ĥ⁻¹)`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, rho: f64) -> DVector<f64> {
        let xi = standard_normal(rng, self.mean.len());
        let scaled = self
            .chol
            .l()
            .tr_solve_lower_triangular(&xi)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + scaled * (2.0 * rho).sqrt()
    }

    /// Log density of the proposal at `x`, up to a constant shared by all kernels.
    fn log_density(&self, x: &DVector<f64>, rho: f64) -> f64 {
        let l = self.chol.l();
        let quad = (l.transpose() * (x - &self.mean)).norm_squared();
        let half_logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
        -quad / (4.0 * rho) + half_logdet
    }
}

/// Preconditioned Langevin Monte Carlo.
///
/// With `hastings` the acceptance ratio includes the proposal asymmetry;
/// without it only the energy difference enters. `force` accepts any finite proposal.
pub fn step_plmc<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    state: &ChainState,
    rng: &mut R,
    rho: f64,
    hastings: bool,
    force: bool,
) -> Result<StepOutcome> {
    let forward = LangevinKernel::at(state, rho);
    let proposal = ChainState::at(obj, forward.sample(rng, rho))?;
    let mut ridge = forward.ridge;
    let acceptance = if !proposal.eval.is_finite() {
        Acceptance::Rejected
    } else if force {
        Acceptance::Forced
    } else {
        let mut log_ratio = state.eval.e - proposal.eval.e;
        if hastings && rho > 0.0 {
            let backward = LangevinKernel::at(&proposal, rho);
            ridge |= backward.ridge;
            log_ratio +=
                backward.log_density(&state.theta, rho) - forward.log_density(&proposal.theta, rho);
        }
        if metropolis(rng, log_ratio) {
            Acceptance::Accepted
        } else {
            Acceptance::Rejected
        }
    };
    Ok(StepOutcome::decided(state, proposal, acceptance, ridge))
}

/// Result of a leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub end: ChainState,
    pub momentum: DVector<f64>,
}

/// `steps` leapfrog steps of size `rho` for `H(θ, p) = E(θ) + ½ pᵀ M⁻¹ p`, where
/// `mass` is the Cholesky factor of `M`. Returns `None` if any position diverges.
pub fn leapfrog<O: Objective + ?Sized>(
    obj: &O,
    start: &ChainState,
    momentum: &DVector<f64>,
    mass: &Cholesky<f64, Dyn>,
    rho: f64,
    steps: usize,
) -> Result<Option<Trajectory>> {
    let mut p = momentum - &start.eval.grad * (0.5 * rho);
    let mut current = start.clone();
    for s in 0..steps {
        let theta = &current.theta + mass.solve(&p) * rho;
        current = ChainState::at(obj, theta)?;
        if !current.eval.is_finite() {
            return Ok(None);
        }
        let kick = if s + 1 == steps { 0.5 * rho } else { rho };
        p -= &current.eval.grad * kick;
    }
    Ok(Some(Trajectory {
        end: current,
        momentum: p,
    }))
}

/// `½ pᵀ M⁻¹ p`.
pub fn kinetic_energy(mass: &Cholesky<f64, Dyn>, momentum: &DVector<f64>) -> f64 {
    let half = mass
        .l()
        .solve_lower_triangular(momentum)
        .expect("Cholesky factor has a positive diagonal");
    0.5 * half.norm_squared()
}

/// Hamiltonian Monte Carlo with mass matrix `Ĥ` taken at the start of the trajectory.
pub fn step_phmc<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    state: &ChainState,
    rng: &mut R,
    rho: f64,
    leapfrog_steps: usize,
    hastings: bool,
    force: bool,
) -> Result<StepOutcome> {
    let (mass, ridge) = regularized_cholesky(&state.eval.hess, 0.0);
    let p0 = mass.l() * standard_normal(rng, state.theta.len());
    let trajectory = leapfrog(obj, state, &p0, &mass, rho, leapfrog_steps)?;
    let Some(traj) = trajectory else {
        let diverged = ChainState {
            theta: state.theta.clone(),
            eval: Evaluation::diverged(state.theta.len()),
        };
        return Ok(StepOutcome::decided(
            state,
            diverged,
            Acceptance::Rejected,
            ridge,
        ));
    };
    let acceptance = if force {
        Acceptance::Forced
    } else {
        let mut log_ratio = state.eval.e - traj.end.eval.e;
        if hastings {
            log_ratio += kinetic_energy(&mass, &p0) - kinetic_energy(&mass, &traj.momentum);
        }
        if metropolis(rng, log_ratio) {
            Acceptance::Accepted
        } else {
            Acceptance::Rejected
        }
    };
    Ok(StepOutcome::decided(state, traj.end, acceptance, ridge))
}
