//! Optimizers and samplers driven by the likelihood estimators.
//!
//! Every method follows the same loop: evaluate the current candidate (one
//! forward solve yields `E`, `ĝ` and `Ĥ`), then update or propose.

mod objective;
mod steps;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use objective::{Evaluation, LikelihoodObjective, Objective, QuadraticObjective};
pub use steps::{
    kinetic_energy, leapfrog, regularized_cholesky, step_gd, step_newton, step_phmc, step_plmc,
    step_rs, step_rwm, Acceptance, ChainState, StepOutcome, Trajectory,
};

/// More consecutive `+∞` energies than this abort a run.
pub const MAX_CONSECUTIVE_DIVERGENT: usize = 50;

pub const MIN_STEP: f64 = 1e-16;
pub const MAX_STEP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Fixed step-size random search.
    Rs,
    /// Gradient descent.
    Gd,
    /// Newton's method with the Hessian estimate.
    Nwt,
    /// Random-walk Metropolis.
    Rwm,
    /// Preconditioned Langevin Monte Carlo.
    Plmc,
    /// Preconditioned Hamiltonian Monte Carlo.
    Phmc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Rs,
        Method::Gd,
        Method::Nwt,
        Method::Rwm,
        Method::Plmc,
        Method::Phmc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Rs => "rs",
            Method::Gd => "gd",
            Method::Nwt => "nwt",
            Method::Rwm => "rwm",
            Method::Plmc => "plmc",
            Method::Phmc => "phmc",
        }
    }

    pub fn is_sampler(&self) -> bool {
        matches!(self, Method::Rwm | Method::Plmc | Method::Phmc)
    }

    /// Whether the method makes accept/reject decisions.
    pub fn has_acceptance(&self) -> bool {
        self.is_sampler() || *self == Method::Rs
    }

    fn forces_burn_in(&self) -> bool {
        matches!(self, Method::Plmc | Method::Phmc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Step length (RS), learning rate (GD), step factor (NWT), proposal width
    /// (RWM, PLMC) or leapfrog step (PHMC).
    pub step: f64,
    /// Number of iterations or samples after the initial state.
    pub budget: usize,
    pub seed: u64,
    /// Index of an independent chain sharing `seed`.
    pub chain: u64,
    /// PLMC/PHMC accept this many initial proposals unconditionally.
    pub burn_in_force_accept: usize,
    pub leapfrog_steps: usize,
    pub newton_damping: f64,
    /// Include the proposal asymmetry (PLMC) or kinetic energy (PHMC) in the acceptance ratio.
    pub hastings: bool,
}

impl SolverConfig {
    pub fn new(method: Method, step: f64, budget: usize) -> Self {
        Self {
            method,
            step,
            budget,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_STEP..=MAX_STEP).contains(&self.step) {
            return Err(Error::Domain(format!(
                "step {} outside [{MIN_STEP:e}, {MAX_STEP}]",
                self.step
            )));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Domain("leapfrog_steps must be positive".into()));
        }
        if !(self.newton_damping >= 0.0 && self.newton_damping.is_finite()) {
            return Err(Error::Domain("newton_damping must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Nwt,
            step: 1.0,
            budget: 100,
            seed: 0,
            chain: 0,
            burn_in_force_accept: 0,
            leapfrog_steps: 5,
            newton_damping: 0.0,
            hastings: true,
        }
    }
}

/// Random stream of chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub index: usize,
    pub theta: DVector<f64>,
    pub e: f64,
    pub rel_err: Option<f64>,
    pub acceptance: Option<Acceptance>,
    pub proposal_e: Option<f64>,
    /// Milliseconds since the start of the run.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    Completed,
    /// Stopped after too many consecutive divergent evaluations.
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub method: Method,
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    /// Iterations whose Hessian needed a ridge to be factorized.
    pub ridge_bumps: usize,
}

impl Trace {
    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("a trace always holds the initial state")
    }

    pub fn final_e(&self) -> f64 {
        self.last().e
    }

    pub fn is_aborted(&self) -> bool {
        self.status == TraceStatus::Aborted
    }

    /// Fraction of decisions that accepted the proposal (forced ones included).
    pub fn acceptance_rate(&self) -> Option<f64> {
        let decided: Vec<_> = self.records.iter().filter_map(|r| r.acceptance).collect();
        if decided.is_empty() {
            return None;
        }
        let taken = decided
            .iter()
            .filter(|a| **a != Acceptance::Rejected)
            .count();
        Some(taken as f64 / decided.len() as f64)
    }

    /// Bitwise equality of everything except wall-clock times.
    pub fn same_path(&self, other: &Trace) -> bool {
        let bits = |v: f64| v.to_bits();
        self.method == other.method
            && self.status == other.status
            && self.ridge_bumps == other.ridge_bumps
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.index == b.index
                    && a.theta.len() == b.theta.len()
                    && a.theta
                        .iter()
                        .zip(b.theta.iter())
                        .all(|(x, y)| bits(*x) == bits(*y))
                    && bits(a.e) == bits(b.e)
                    && a.rel_err.map(bits) == b.rel_err.map(bits)
                    && a.acceptance == b.acceptance
                    && a.proposal_e.map(bits) == b.proposal_e.map(bits)
            })
    }
}

/// `‖θ − θ*‖ / ‖θ*‖`, or the absolute error when `θ* = 0`.
pub fn relative_error(theta: &DVector<f64>, theta_star: &[f64]) -> f64 {
    let star = DVector::from_column_slice(theta_star);
    let err = (theta - &star).norm();
    let scale = star.norm();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Runs `config.method` from `theta0` for `config.budget` iterations.
///
/// Persistent divergence ends the run early with [`TraceStatus::Aborted`]; the
/// partial trace is still returned.
pub fn run<O: Objective + ?Sized>(
    obj: &O,
    config: &SolverConfig,
    theta0: &[f64],
    theta_star: Option<&[f64]>,
) -> Result<Trace> {
    config.validate()?;
    let n = obj.n_params();
    if theta0.len() != n || theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("theta0 must be {n} finite values")));
    }
    if theta_star.is_some_and(|s| s.len() != n) {
        return Err(Error::Contract("theta_star has the wrong length".into()));
    }
    let clock = Instant::now();
    let mut rng = chain_rng(config.seed, config.chain);
    let rel = |theta: &DVector<f64>| theta_star.map(|s| relative_error(theta, s));

    let mut state = ChainState::at(obj, DVector::from_column_slice(theta0))?;
    let mut records = Vec::with_capacity(config.budget + 1);
    records.push(TraceRecord {
        index: 0,
        theta: state.theta.clone(),
        e: state.eval.e,
        rel_err: rel(&state.theta),
        acceptance: None,
        proposal_e: None,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    });
    let mut consecutive = usize::from(!state.eval.is_finite());
    let mut status = TraceStatus::Completed;
    let mut ridge_bumps = 0;
    let rho = config.step;

    for index in 1..=config.budget {
        let force = config.method.forces_burn_in() && index <= config.burn_in_force_accept;
        let outcome = match config.method {
            Method::Rs => step_rs(obj, &state, &mut rng, rho)?,
            Method::Gd => step_gd(obj, &state, rho)?,
            Method::Nwt => step_newton(obj, &state, rho, config.newton_damping)?,
            Method::Rwm => step_rwm(obj, &state, &mut rng, rho)?,
            Method::Plmc => step_plmc(obj, &state, &mut rng, rho, config.hastings, force)?,
            Method::Phmc => step_phmc(
                obj,
                &state,
                &mut rng,
                rho,
                config.leapfrog_steps,
                config.hastings,
                force,
            )?,
        };
        ridge_bumps += usize::from(outcome.ridge_applied);
        let newest = outcome.proposal_e.unwrap_or(outcome.state.eval.e);
        consecutive = if newest.is_finite() {
            0
        } else {
            consecutive + 1
        };
        state = outcome.state;
        records.push(TraceRecord {
            index,
            theta: state.theta.clone(),
            e: state.eval.e,
            rel_err: rel(&state.theta),
            acceptance: outcome.acceptance,
            proposal_e: outcome.proposal_e,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if consecutive > MAX_CONSECUTIVE_DIVERGENT {
            status = TraceStatus::Aborted;
            break;
        }
    }

    Ok(Trace {
        method: config.method,
        records,
        status,
        ridge_bumps,
    })
}

/// `{1e-16, 1e-15, …, 1}`.
pub fn decade_steps() -> Vec<f64> {
    (-16..=0).map(|k| 10f64.powi(k)).collect()
}

/// `{1, 2, 5} × 10^k` within `[1e-16, 1]`.
pub fn one_two_five_steps() -> Vec<f64> {
    let mut steps: Vec<f64> = (-16..0)
        .flat_map(|k| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(k)))
        .collect();
    steps.push(1.0);
    steps
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub step: f64,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub entries: Vec<SweepEntry>,
    /// Entry with the lowest final energy.
    pub best: usize,
}

impl Sweep {
    pub fn best_entry(&self) -> &SweepEntry {
        &self.entries[self.best]
    }
}

/// Runs `base` once per step size (in parallel) and picks the lowest final `E`.
pub fn sweep_steps<O: Objective + ?Sized>(
    obj: &O,
    base: &SolverConfig,
    theta0: &[f64],
    theta_star: Option<&[f64]>,
    steps: &[f64],
) -> Result<Sweep> {
    if steps.is_empty() {
        return Err(Error::Contract("sweep needs at least one step size".into()));
    }
    let results: Vec<Result<Trace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = steps
            .iter()
            .map(|&step| {
                let config = SolverConfig {
                    step,
                    ..base.clone()
                };
                scope.spawn(move || run(obj, &config, theta0, theta_star))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut entries = Vec::with_capacity(steps.len());
    for (&step, trace) in steps.iter().zip(results) {
        entries.push(SweepEntry {
            step,
            trace: trace?,
        });
    }
    let key = |e: &SweepEntry| {
        let v = e.trace.final_e();
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let best = (0..entries.len())
        .min_by(|&a, &b| key(&entries[a]).total_cmp(&key(&entries[b])))
        .expect("nonempty");
    Ok(Sweep { entries, best })
}
