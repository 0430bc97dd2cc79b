//! Once-integrated Brownian motion kernel and its derivative kernels.
//!
//! The prior models the solution `x` as integrated Brownian motion, so the
//! derivative `ẋ` is a Wiener process. With `s = σ_dif²`:
//!
//! * `ddk(t, u) = s · min(t, u)`: covariance of `ẋ(t)` and `ẋ(u)`,
//! * `k(t, u)   = s · (min³/3 + |t − u| · min²/2)`: covariance of `x(t)` and `x(u)`,
//! * `kd(t, u)`: covariance of `x(t)` and `ẋ(u)`; `dk(t, u) = kd(u, t)`.

use crate::error::{Error, Result};

/// Scale of the Brownian derivative process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    sigma_dif: f64,
}

impl KernelConfig {
    pub fn new(sigma_dif: f64) -> Result<Self> {
        if !(sigma_dif.is_finite() && sigma_dif > 0.0) {
            return Err(Error::domain(format!(
                "sigma_dif must be positive and finite, got {sigma_dif}"
            )));
        }
        Ok(Self { sigma_dif })
    }

    pub fn sigma_dif(&self) -> f64 {
        self.sigma_dif
    }

    /// `σ_dif²`, the factor every kernel is proportional to.
    pub fn scale(&self) -> f64 {
        self.sigma_dif * self.sigma_dif
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { sigma_dif: 1.0 }
    }
}

/// Equidistant grid `{0, h, …, N·h}` together with the grid indices of the data times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    step: f64,
    n_steps: usize,
    data_indices: Vec<usize>,
}

impl TimeGrid {
    pub fn new(step: f64, n_steps: usize, data_indices: Vec<usize>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::domain(format!("step must be positive, got {step}")));
        }
        if n_steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        if data_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("data indices must be strictly increasing"));
        }
        if let Some(&bad) = data_indices.iter().find(|&&l| l == 0 || l > n_steps) {
            return Err(Error::domain(format!(
                "data index {bad} outside [1, {n_steps}]"
            )));
        }
        Ok(Self {
            step,
            n_steps,
            data_indices,
        })
    }

    /// Builds the grid for horizon `horizon` and aligns each data time to a grid index.
    ///
    /// Fails if `horizon` or any data time is not an integer multiple of `step`
    /// (relative tolerance `1e-9`).
    pub fn aligned(step: f64, horizon: f64, data_times: &[f64]) -> Result<Self> {
        let n_steps = grid_index(step, horizon)?;
        let data_indices = data_times
            .iter()
            .map(|&t| grid_index(step, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(step, n_steps, data_indices)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.step
    }

    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    pub fn n_data(&self) -> usize {
        self.data_indices.len()
    }

    /// Time of grid point `i`, computed from the integer index.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn data_times(&self) -> Vec<f64> {
        self.data_indices.iter().map(|&l| self.time(l)).collect()
    }

    /// Same data times on a grid with step `h / 2`.
    pub fn halved(&self) -> Self {
        Self {
            step: self.step / 2.0,
            n_steps: self.n_steps * 2,
            data_indices: self.data_indices.iter().map(|l| 2 * l).collect(),
        }
    }

    /// Same grid with the data indices replaced.
    pub fn with_data_indices(&self, data_indices: Vec<usize>) -> Result<Self> {
        Self::new(self.step, self.n_steps, data_indices)
    }
}

fn grid_index(step: f64, t: f64) -> Result<usize> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("time {t} is not a valid grid time")));
    }
    let idx = (t / step).round();
    if (idx * step - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::domain(format!(
            "time {t} is not aligned with step {step}"
        )));
    }
    Ok(idx as usize)
}

fn check_times(t: f64, t2: f64) -> Result<()> {
    if t < 0.0 || t2 < 0.0 || t.is_nan() || t2.is_nan() {
        return Err(Error::domain(format!(
            "kernel times must be nonnegative, got ({t}, {t2})"
        )));
    }
    Ok(())
}

/// Brownian motion kernel, the covariance of the derivative process.
pub fn ddk(t: f64, t2: f64, cfg: &KernelConfig) -> Result<f64> {
    check_times(t, t2)?;
    Ok(cfg.scale() * t.min(t2))
}

/// Integrated Brownian motion kernel.
pub fn k(t: f64, t2: f64, cfg: &KernelConfig) -> Result<f64> {
    check_times(t, t2)?;
    let m = t.min(t2);
    Ok(cfg.scale() * (m * m * m / 3.0 + (t - t2).abs() * m * m / 2.0))
}

/// Cross-covariance between the solution at `t` and its derivative at `t2`,
/// i.e. `∂k(t, t2)/∂t2`.
pub fn kd(t: f64, t2: f64, cfg: &KernelConfig) -> Result<f64> {
    check_times(t, t2)?;
    let v = if t <= t2 {
        t * t / 2.0
    } else {
        t * t2 - t2 * t2 / 2.0
    };
    Ok(cfg.scale() * v)
}

/// `∂k(t, t2)/∂t`, equal to `kd(t2, t)`.
pub fn dk(t: f64, t2: f64, cfg: &KernelConfig) -> Result<f64> {
    kd(t2, t, cfg)
}

// Unchecked variants for hot loops where times come from a validated grid.
#[inline]
pub(crate) fn ddk_unchecked(t: f64, t2: f64, scale: f64) -> f64 {
    scale * t.min(t2)
}

#[inline]
pub(crate) fn kd_unchecked(t: f64, t2: f64, scale: f64) -> f64 {
    if t <= t2 {
        scale * t * t / 2.0
    } else {
        scale * (t * t2 - t2 * t2 / 2.0)
    }
}

#[inline]
pub(crate) fn k_unchecked(t: f64, t2: f64, scale: f64) -> f64 {
    let m = t.min(t2);
    scale * (m * m * m / 3.0 + (t - t2).abs() * m * m / 2.0)
}
