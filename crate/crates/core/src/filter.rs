//! Gaussian ODE filter with a once-integrated Brownian motion prior.
//!
//! Each state dimension carries an independent `(x, ẋ)` Kalman filter; all of
//! them share the transition model and the measurement variance. At step `i`
//! the filter predicts, evaluates the vector field at the predicted position
//! and conditions the derivative coordinate on that evaluation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, TimeGrid};

/// Floor applied to the measurement variance wherever it enters an inversion.
pub const R_FLOOR: f64 = 1e-12;

pub(crate) fn effective_r(r: f64) -> f64 {
    r.max(R_FLOOR)
}

/// A vector field that is linear in its parameters: `f(x, θ) = Σ_j θ_j f_j(x)`.
pub trait VectorFieldBasis: Send + Sync {
    fn dim(&self) -> usize;

    fn n_params(&self) -> usize;

    /// Writes `f_j(x)` into column `j` of `out` (shape `dim × n_params`).
    fn eval(&self, x: &[f64], out: &mut DMatrix<f64>);

    /// State Jacobian `∂f_j/∂x` at `x` (shape `dim × dim`).
    fn jacobian(&self, x: &[f64], j: usize) -> DMatrix<f64>;

    /// Full field coded directly, independent of the basis split.
    ///
    /// Used to check the basis decomposition. The default sums the basis, which
    /// makes the check vacuous; benchmark systems override it.
    fn reference_field(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut b = DMatrix::zeros(self.dim(), self.n_params());
        self.eval(x, &mut b);
        (b * DVector::from_column_slice(theta)).as_slice().to_vec()
    }
}

type FieldFn = dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64], usize) -> DMatrix<f64> + Send + Sync;

/// Basis built from closures; handy for small synthetic problems.
pub struct FnBasis {
    dim: usize,
    n_params: usize,
    field: Box<FieldFn>,
    jacobian: Box<JacFn>,
}

impl FnBasis {
    /// `field(x, j)` returns `f_j(x)`; `jacobian(x, j)` returns `∂f_j/∂x`.
    pub fn new(
        dim: usize,
        n_params: usize,
        field: impl Fn(&[f64], usize) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], usize) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            n_params,
            field: Box::new(field),
            jacobian: Box::new(jacobian),
        }
    }
}

impl VectorFieldBasis for FnBasis {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.n_params
    }

    fn eval(&self, x: &[f64], out: &mut DMatrix<f64>) {
        for j in 0..self.n_params {
            let col = (self.field)(x, j);
            out.column_mut(j).copy_from_slice(&col);
        }
    }

    fn jacobian(&self, x: &[f64], j: usize) -> DMatrix<f64> {
        (self.jacobian)(x, j)
    }
}

/// An ODE `ẋ = Σ_j θ_j f_j(x)`, `x(0) = x0`, on `[0, horizon]`.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    x0: DVector<f64>,
    horizon: f64,
    basis: Arc<dyn VectorFieldBasis>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("n_params", &self.n_params())
            .field("x0", &self.x0.as_slice())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        x0: Vec<f64>,
        horizon: f64,
        basis: Arc<dyn VectorFieldBasis>,
    ) -> Result<Self> {
        if x0.len() != basis.dim() {
            return Err(Error::contract(format!(
                "x0 has length {} but the basis has dimension {}",
                x0.len(),
                basis.dim()
            )));
        }
        if basis.dim() == 0 || basis.n_params() == 0 {
            return Err(Error::contract(
                "dimension and parameter count must be positive",
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            name: name.into(),
            x0: DVector::from_vec(x0),
            horizon,
            basis,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_params(&self) -> usize {
        self.basis.n_params()
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn basis(&self) -> &dyn VectorFieldBasis {
        self.basis.as_ref()
    }

    /// All basis fields at `x` as a `dim × n_params` matrix.
    pub fn basis_at(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.n_params());
        self.basis.eval(x, &mut out);
        out
    }

    /// `f(x, θ)` through the basis decomposition.
    pub fn field(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        self.basis_at(x) * DVector::from_column_slice(theta)
    }

    /// Same problem with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.x0.as_slice().to_vec(),
            horizon,
            self.basis.clone(),
        )
    }

    /// Largest relative deviation between the basis sum and the directly coded field
    /// over the given `(x, θ)` pairs.
    pub fn basis_reconstruction_error(&self, points: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        points
            .iter()
            .map(|(x, th)| {
                let via_basis = self.field(x, th);
                let direct = DVector::from_vec(self.basis.reference_field(x, th));
                (via_basis - &direct).amax() / direct.amax().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative deviation between the coded basis Jacobians and central
    /// differences of the basis fields at the given points.
    pub fn basis_jacobian_error(&self, points: &[Vec<f64>]) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for x in points {
            for j in 0..self.n_params() {
                let coded = self.basis.jacobian(x, j);
                let mut fd = DMatrix::zeros(d, d);
                for c in 0..d {
                    let delta = 1e-6 * x[c].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += delta;
                    xm[c] -= delta;
                    let fp = self.basis_at(&xp).column(j).into_owned();
                    let fm = self.basis_at(&xm).column(j).into_owned();
                    fd.set_column(c, &((fp - fm) / (2.0 * delta)));
                }
                let scale = coded.amax().max(1.0);
                worst = worst.max((coded - fd).amax() / scale);
            }
        }
        worst
    }
}

/// Discrete-time transition of the `(x, ẋ)` pair over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    pub a: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub h: f64,
}

/// Exact discretization of the once-integrated Brownian motion prior.
pub fn discretize_prior(h: f64, cfg: &KernelConfig) -> Result<TransitionModel> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {h}")));
    }
    let s = cfg.scale();
    Ok(TransitionModel {
        a: Matrix2::new(1.0, h, 0.0, 1.0),
        q: s * Matrix2::new(h.powi(3) / 3.0, h * h / 2.0, h * h / 2.0, h),
        h,
    })
}

/// Mean and covariance of `(x, ẋ)` for one state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianState {
    /// Known position and derivative: zero covariance.
    pub fn known(position: f64, derivative: f64) -> Self {
        Self {
            mean: Vector2::new(position, derivative),
            cov: Matrix2::zeros(),
        }
    }

    pub fn position(&self) -> f64 {
        self.mean[0]
    }

    pub fn derivative(&self) -> f64 {
        self.mean[1]
    }
}

impl TransitionModel {
    pub fn predict(&self, state: &GaussianState) -> GaussianState {
        GaussianState {
            mean: self.a * state.mean,
            cov: self.a * state.cov * self.a.transpose() + self.q,
        }
    }
}

/// Result of conditioning on a derivative observation.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeUpdate {
    pub state: GaussianState,
    pub innovation: f64,
    pub innovation_var: f64,
}

/// Kalman update for an observation `y` of the derivative coordinate with noise `r`.
/// The covariance uses the Joseph form.
pub fn update_derivative(pred: &GaussianState, y: f64, r: f64) -> DerivativeUpdate {
    let s = pred.cov[(1, 1)] + r;
    let gain = Vector2::new(pred.cov[(0, 1)], pred.cov[(1, 1)]) / s;
    let innovation = y - pred.mean[1];
    let mean = pred.mean + gain * innovation;
    let i_kh = Matrix2::new(1.0, -gain[0], 0.0, 1.0 - gain[1]);
    let cov = i_kh * pred.cov * i_kh.transpose() + gain * gain.transpose() * r;
    DerivativeUpdate {
        state: GaussianState { mean, cov },
        innovation,
        innovation_var: s,
    }
}

/// Everything a forward solve produces.
///
/// Per-dimension quantities are stored dimension-major: row `dim * N + (i - 1)`
/// of `y_factor` belongs to grid point `i` of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub grid: TimeGrid,
    pub theta: DVector<f64>,
    pub measurement_var: f64,
    /// `dim × (N + 1)` filtering means of the position, column `i` at `t = i·h`.
    pub filter_means: DMatrix<f64>,
    /// `dim × N` predictive means of the position, column `i - 1` at `t = i·h`.
    pub predictive_means: DMatrix<f64>,
    /// Position variances at the grid points, shared by all dimensions.
    pub filter_variances: Vec<f64>,
    /// Evaluation factor `f_j(m⁻(ih)) − f_j(x0)`, shape `(N·dim) × n`.
    pub y_factor: DMatrix<f64>,
    /// Basis fields at the initial value, `dim × n`.
    pub basis_x0: DMatrix<f64>,
    /// `dim × N` innovations `y_i − ẋ⁻_i`.
    pub innovations: DMatrix<f64>,
    /// Innovation variances per step, shared by all dimensions.
    pub innovation_vars: Vec<f64>,
}

impl FilterOutput {
    pub fn dim(&self) -> usize {
        self.filter_means.nrows()
    }

    /// Filtering means at the data times, stacked dimension-major (length `M·dim`).
    pub fn data_means(&self) -> DVector<f64> {
        let idx = self.grid.data_indices();
        let m = idx.len();
        DVector::from_fn(m * self.dim(), |row, _| {
            let (dim, r) = (row / m, row % m);
            self.filter_means[(dim, idx[r])]
        })
    }

    /// Position variances at the data times (length `M`).
    pub fn data_variances(&self) -> Vec<f64> {
        self.grid
            .data_indices()
            .iter()
            .map(|&l| self.filter_variances[l])
            .collect()
    }

    /// Block of `y_factor` belonging to state dimension `dim` (shape `N × n`).
    pub fn y_block(&self, dim: usize) -> DMatrix<f64> {
        let n = self.grid.n_steps();
        self.y_factor.rows(dim * n, n).into_owned()
    }
}

/// Runs the Gaussian ODE filter for parameter `theta`.
pub fn filter_solve(
    spec: &ProblemSpec,
    theta: &[f64],
    grid: &TimeGrid,
    r: f64,
    cfg: &KernelConfig,
) -> Result<FilterOutput> {
    let d = spec.dim();
    let n_params = spec.n_params();
    if theta.len() != n_params {
        return Err(Error::contract(format!(
            "theta has length {} but the problem has {} parameters",
            theta.len(),
            n_params
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("theta must be finite"));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::domain(format!(
            "measurement variance must be >= 0, got {r}"
        )));
    }
    if (grid.horizon() - spec.horizon()).abs() > 1e-9 * spec.horizon().max(1.0) {
        return Err(Error::contract(format!(
            "grid horizon {} does not match problem horizon {}",
            grid.horizon(),
            spec.horizon()
        )));
    }

    let n = grid.n_steps();
    let transition = discretize_prior(grid.step(), cfg)?;
    let r_eff = effective_r(r);
    let th = DVector::from_column_slice(theta);

    let f0 = spec.basis_at(spec.x0().as_slice());
    let v0 = &f0 * &th;
    let mut states: Vec<GaussianState> = (0..d)
        .map(|i| GaussianState::known(spec.x0()[i], v0[i]))
        .collect();

    let mut filter_means = DMatrix::zeros(d, n + 1);
    filter_means.set_column(0, spec.x0());
    let mut predictive_means = DMatrix::zeros(d, n);
    let mut filter_variances = Vec::with_capacity(n + 1);
    filter_variances.push(0.0);
    let mut y_factor = DMatrix::zeros(n * d, n_params);
    let mut innovations = DMatrix::zeros(d, n);
    let mut innovation_vars = Vec::with_capacity(n);

    let mut basis = DMatrix::zeros(d, n_params);
    let mut pred_pos = vec![0.0; d];
    for i in 1..=n {
        let preds: Vec<GaussianState> = states.iter().map(|s| transition.predict(s)).collect();
        for (p, s) in pred_pos.iter_mut().zip(&preds) {
            *p = s.position();
        }
        spec.basis().eval(&pred_pos, &mut basis);
        let y = &basis * &th;
        if y.iter().chain(pred_pos.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: i,
                time: grid.time(i),
            });
        }
        for dim in 0..d {
            let upd = update_derivative(&preds[dim], y[dim], r_eff);
            states[dim] = upd.state;
            filter_means[(dim, i)] = upd.state.position();
            predictive_means[(dim, i - 1)] = pred_pos[dim];
            innovations[(dim, i - 1)] = upd.innovation;
            for j in 0..n_params {
                y_factor[(dim * n + i - 1, j)] = basis[(dim, j)] - f0[(dim, j)];
            }
            if dim == 0 {
                filter_variances.push(upd.state.cov[(0, 0)]);
                innovation_vars.push(upd.innovation_var);
            }
        }
        if states.iter().any(|s| !s.mean.iter().all(|v| v.is_finite())) {
            return Err(Error::Diverged {
                step: i,
                time: grid.time(i),
            });
        }
    }

    Ok(FilterOutput {
        grid: grid.clone(),
        theta: th,
        measurement_var: r,
        filter_means,
        predictive_means,
        filter_variances,
        y_factor,
        basis_x0: f0,
        innovations,
        innovation_vars,
    })
}

/// Global quasi maximum-likelihood estimate of `σ_dif²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCalibration {
    pub sigma_dif_sq: f64,
}

impl SigmaCalibration {
    /// All innovations vanished; the estimate carries no information.
    pub fn is_degenerate(&self) -> bool {
        self.sigma_dif_sq <= 0.0
    }

    /// `σ̂_dif`, or `floor` when the estimate is degenerate.
    pub fn sigma_dif_or(&self, floor: f64) -> f64 {
        if self.is_degenerate() {
            floor
        } else {
            self.sigma_dif_sq.sqrt()
        }
    }
}

/// `σ̂² = (1 / (N·d)) Σ_i Σ_dim r_i² / S_i` from a solve run with `σ_dif = 1`.
pub fn calibrate_sigma_dif(output: &FilterOutput) -> Result<SigmaCalibration> {
    let d = output.dim();
    let n = output.innovation_vars.len();
    if n == 0 {
        return Err(Error::Calibration("no filter steps".into()));
    }
    let mut acc = 0.0;
    for (i, &s) in output.innovation_vars.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::Calibration(format!(
                "innovation variance {s} at step {} is not positive",
                i + 1
            )));
        }
        for dim in 0..d {
            let r = output.innovations[(dim, i)];
            acc += r * r / s;
        }
    }
    let sigma_dif_sq = acc / (n * d) as f64;
    if !sigma_dif_sq.is_finite() {
        return Err(Error::Calibration("non-finite estimate".into()));
    }
    Ok(SigmaCalibration { sigma_dif_sq })
}
