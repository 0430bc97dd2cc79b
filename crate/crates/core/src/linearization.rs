//! Kernel prefactor `K`, Jacobian estimator `J`, GP-form filtering variances and
//! the finite-difference oracles that check them.
//!
//! With a known initial value the filter's prior mean drifts as `x0 + t·f(x0, θ)`,
//! so the filtering mean at data time `t_i` is
//!
//! ```text
//! m_θ(t_i) = x0 + t_i·f(x0, θ) + κ_i · Y θ
//! ```
//!
//! where `κ_i` is row `i` of `K`. [`JacobianVariant::Literal`] keeps only `K·Y`;
//! [`JacobianVariant::DriftCorrected`] adds the `t_i·f_j(x0)` columns and is the
//! default because it reproduces the filter exactly for frozen `Y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{effective_r, filter_solve, FilterOutput, ProblemSpec};
use crate::kernels::{ddk_unchecked, k_unchecked, kd_unchecked, KernelConfig, TimeGrid};

/// Default relative step for central differences in parameter space.
pub const DEFAULT_FD_DELTA: f64 = 1e-6;

/// `K` together with the GP-form posterior variances at the data times.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPrefactor {
    /// `M × N`; row `i` is zero beyond column `l_i`.
    pub k: DMatrix<f64>,
    /// `P(t_i)` for each data time.
    pub variances: Vec<f64>,
    pub grid: TimeGrid,
    pub measurement_var: f64,
    pub cfg: KernelConfig,
}

impl KernelPrefactor {
    pub fn n_data(&self) -> usize {
        self.k.nrows()
    }

    /// Applies `K` to each dimension block of a stacked `(N·d) × c` matrix,
    /// giving a stacked `(M·d) × c` matrix.
    pub fn apply(&self, stacked: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.grid.n_steps();
        let m = self.n_data();
        if !stacked.nrows().is_multiple_of(n) || stacked.nrows() == 0 {
            return Err(Error::contract(format!(
                "stacked matrix has {} rows, not a multiple of N = {n}",
                stacked.nrows()
            )));
        }
        let d = stacked.nrows() / n;
        let mut out = DMatrix::zeros(m * d, stacked.ncols());
        for dim in 0..d {
            let block = &self.k * stacked.rows(dim * n, n);
            out.rows_mut(dim * m, m).copy_from(&block);
        }
        Ok(out)
    }
}

/// Builds `K` (and the filtering variances) for the data times of `grid`.
///
/// One Cholesky factorization of the largest Gram matrix serves every row,
/// since the factor of a leading principal block is the leading block of the factor.
pub fn kernel_prefactor(grid: &TimeGrid, r: f64, cfg: &KernelConfig) -> Result<KernelPrefactor> {
    if grid.n_data() == 0 {
        return Err(Error::contract(
            "kernel prefactor needs at least one data time",
        ));
    }
    if !(r >= 0.0) {
        return Err(Error::domain(format!(
            "measurement variance must be >= 0, got {r}"
        )));
    }
    let s = cfg.scale();
    let r_eff = effective_r(r);
    let idx = grid.data_indices();
    let l_max = *idx.last().expect("nonempty");
    let times: Vec<f64> = (1..=l_max).map(|j| grid.time(j)).collect();

    let gram = DMatrix::from_fn(l_max, l_max, |a, b| {
        ddk_unchecked(times[a], times[b], s) + if a == b { r_eff } else { 0.0 }
    });
    let chol = gram.cholesky().ok_or_else(|| {
        Error::LinearAlgebra("derivative Gram matrix is not positive definite".into())
    })?;
    let lower = chol.l();

    let mut k = DMatrix::zeros(idx.len(), grid.n_steps());
    let mut variances = Vec::with_capacity(idx.len());
    for (row, &l) in idx.iter().enumerate() {
        let t = grid.time(l);
        let cross = DVector::from_fn(l, |j, _| kd_unchecked(t, times[j], s));
        let lv = lower.view((0, 0), (l, l));
        let half = lv
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
        let kappa = lv
            .tr_solve_lower_triangular(&half)
            .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
        k.view_mut((row, 0), (1, l)).copy_from(&kappa.transpose());
        // kdᵀ G⁻¹ kd = ‖L⁻¹ kd‖²
        variances.push(k_unchecked(t, t, s) - half.norm_squared());
    }

    Ok(KernelPrefactor {
        k,
        variances,
        grid: grid.clone(),
        measurement_var: r,
        cfg: *cfg,
    })
}

/// GP-form posterior variances `P(t_i)` of the solution at the data times.
pub fn filtering_variance(grid: &TimeGrid, r: f64, cfg: &KernelConfig) -> Result<Vec<f64>> {
    Ok(kernel_prefactor(grid, r, cfg)?.variances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianVariant {
    /// `J = K·Y`.
    Literal,
    /// `J = D + K·Y` with `D_{(i,dim),j} = t_i·[f_j(x0)]_dim`.
    #[default]
    DriftCorrected,
}

impl JacobianVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            JacobianVariant::Literal => "literal",
            JacobianVariant::DriftCorrected => "drift",
        }
    }
}

impl std::str::FromStr for JacobianVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(JacobianVariant::Literal),
            "drift" | "drift_corrected" => Ok(JacobianVariant::DriftCorrected),
            other => Err(Error::domain(format!("unknown Jacobian variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    /// `(M·d) × n`, stacked dimension-major.
    pub j: DMatrix<f64>,
    pub variant: JacobianVariant,
    pub theta_used: DVector<f64>,
}

fn drift_block(prefactor: &KernelPrefactor, basis_x0: &DMatrix<f64>) -> DMatrix<f64> {
    let times = prefactor.grid.data_times();
    let m = times.len();
    let d = basis_x0.nrows();
    DMatrix::from_fn(m * d, basis_x0.ncols(), |row, j| {
        let (dim, i) = (row / m, row % m);
        times[i] * basis_x0[(dim, j)]
    })
}

fn check_same_grid(prefactor: &KernelPrefactor, out: &FilterOutput) -> Result<()> {
    if prefactor.grid != out.grid {
        return Err(Error::contract(
            "prefactor and filter output use different grids",
        ));
    }
    Ok(())
}

/// Jacobian estimator of `θ ↦ m_θ` at the data times.
pub fn jacobian_estimate(
    prefactor: &KernelPrefactor,
    out: &FilterOutput,
    variant: JacobianVariant,
) -> Result<JacobianEstimate> {
    check_same_grid(prefactor, out)?;
    let mut j = prefactor.apply(&out.y_factor)?;
    if variant == JacobianVariant::DriftCorrected {
        j += drift_block(prefactor, &out.basis_x0);
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("Jacobian estimate is not finite"));
    }
    Ok(JacobianEstimate {
        j,
        variant,
        theta_used: out.theta.clone(),
    })
}

/// Filtering means at the data times rebuilt in GP form from `K`, `Y` and `θ`.
pub fn gp_form_means(
    prefactor: &KernelPrefactor,
    out: &FilterOutput,
    variant: JacobianVariant,
) -> Result<DVector<f64>> {
    check_same_grid(prefactor, out)?;
    let m = prefactor.n_data();
    let d = out.dim();
    let x0 = out.filter_means.column(0);
    let yt = DMatrix::from_column_slice(
        out.y_factor.nrows(),
        1,
        (&out.y_factor * &out.theta).as_slice(),
    );
    let kyt = prefactor.apply(&yt)?;
    let mut means = DVector::from_fn(m * d, |row, _| x0[row / m] + kyt[(row, 0)]);
    if variant == JacobianVariant::DriftCorrected {
        means += drift_block(prefactor, &out.basis_x0) * &out.theta;
    }
    Ok(means)
}

fn fd_step(delta: f64, theta_k: f64) -> f64 {
    delta * theta_k.abs().max(1.0)
}

/// Central-difference Jacobian of the filtering means at the data times.
pub fn true_jacobian_fd(
    spec: &ProblemSpec,
    theta: &[f64],
    grid: &TimeGrid,
    r: f64,
    cfg: &KernelConfig,
    delta: f64,
) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!(
            "finite-difference step must be positive, got {delta}"
        )));
    }
    let n = theta.len();
    let rows = grid.n_data() * spec.dim();
    let mut jac = DMatrix::zeros(rows, n);
    for k in 0..n {
        let (plus, minus, step) = perturbed_solves(spec, theta, grid, r, cfg, delta, k)?;
        let col = (plus.data_means() - minus.data_means()) / (2.0 * step);
        jac.set_column(k, &col);
    }
    Ok(jac)
}

fn perturbed_solves(
    spec: &ProblemSpec,
    theta: &[f64],
    grid: &TimeGrid,
    r: f64,
    cfg: &KernelConfig,
    delta: f64,
    k: usize,
) -> Result<(FilterOutput, FilterOutput, f64)> {
    let step = fd_step(delta, theta[k]);
    let mut tp = theta.to_vec();
    let mut tm = theta.to_vec();
    tp[k] += step;
    tm[k] -= step;
    let oracle = |e: Error| Error::Oracle(format!("perturbed solve for parameter {k} failed: {e}"));
    let plus = filter_solve(spec, &tp, grid, r, cfg).map_err(oracle)?;
    let minus = filter_solve(spec, &tm, grid, r, cfg).map_err(oracle)?;
    Ok((plus, minus, step))
}

/// Sensitivity term and its per-step building blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityDecomposition {
    /// `(N·d) × n`; entry `((dim, j), k) = Σ_l θ_l · λ_kl(jh)[dim]`.
    pub s: DMatrix<f64>,
    /// `n × n` matrices `[λ_kl]`, indexed by `(j - 1)·d + dim`, where
    /// `λ_kl(jh) = ∂f_l/∂x(m⁻(jh)) · ∂m⁻(jh)/∂θ_k`.
    pub lambda: Vec<DMatrix<f64>>,
}

/// Assembles `S` with parameter sensitivities of the predictive means taken by
/// central differences.
pub fn sensitivity_fd(
    spec: &ProblemSpec,
    theta: &[f64],
    grid: &TimeGrid,
    r: f64,
    cfg: &KernelConfig,
    delta: f64,
) -> Result<SensitivityDecomposition> {
    let n_params = spec.n_params();
    let d = spec.dim();
    let n = grid.n_steps();
    let base = filter_solve(spec, theta, grid, r, cfg)?;

    // dpred[k] is d × N: ∂m⁻/∂θ_k at every grid step.
    let mut dpred = Vec::with_capacity(n_params);
    for k in 0..n_params {
        let (plus, minus, step) = perturbed_solves(spec, theta, grid, r, cfg, delta, k)?;
        dpred.push((plus.predictive_means - minus.predictive_means) / (2.0 * step));
    }

    let mut lambda = Vec::with_capacity(n * d);
    let mut s = DMatrix::zeros(n * d, n_params);
    for j in 0..n {
        let x = base.predictive_means.column(j).into_owned();
        let jacs: Vec<DMatrix<f64>> = (0..n_params)
            .map(|l| spec.basis().jacobian(x.as_slice(), l))
            .collect();
        // per_dim[dim][(k, l)]
        let mut per_dim = vec![DMatrix::zeros(n_params, n_params); d];
        for k in 0..n_params {
            let sens = dpred[k].column(j);
            for (l, jac) in jacs.iter().enumerate() {
                let v = jac * sens;
                for dim in 0..d {
                    per_dim[dim][(k, l)] = v[dim];
                }
            }
        }
        for (dim, lam) in per_dim.into_iter().enumerate() {
            let row = &lam * &base.theta;
            for k in 0..n_params {
                s[(dim * n + j, k)] = row[k];
            }
            lambda.push(lam);
        }
    }
    // reorder lambda from (j, dim) push order: already (j - 1)·d + dim
    Ok(SensitivityDecomposition { s, lambda })
}

/// `‖a − b‖_F / ‖a‖_F`.
pub fn relative_frobenius(reference: &DMatrix<f64>, other: &DMatrix<f64>) -> f64 {
    let denom = reference.norm();
    let num = (reference - other).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}
