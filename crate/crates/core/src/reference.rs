//! High-accuracy reference solutions by adaptive Dormand–Prince 5(4).
//!
//! Used to generate synthetic data and as an accuracy oracle for the filter.
//! Never used inside the inverse solvers.

use crate::error::{Error, Result};
use crate::filter::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

const MAX_STEPS: usize = 5_000_000;

// Autonomous systems only, so the stage nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the autonomous system `ẋ = rhs(x)` from `t = 0` and returns the
/// state at each of the (nondecreasing, nonnegative) `times`.
pub fn integrate<F>(rhs: F, x0: &[f64], times: &[f64], tol: Tolerance) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Oracle(
            "output times must be nonnegative and sorted".into(),
        ));
    }
    let d = x0.len();
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut h = 1e-3;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut stage = vec![0.0; d];
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;

    k[0] = rhs(&x);
    for &target in times {
        while t < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Oracle(format!("step budget exhausted at t = {t}")));
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };

            for s in 1..7 {
                for i in 0..d {
                    let mut acc = x[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += step * A[s][j] * kj[i];
                    }
                    stage[i] = acc;
                }
                k[s] = rhs(&stage);
            }

            let mut err_sq = 0.0;
            let mut x_new = vec![0.0; d];
            for i in 0..d {
                let mut hi = x[i];
                let mut lo = x[i];
                for s in 0..7 {
                    hi += step * B5[s] * k[s][i];
                    lo += step * B4[s] * k[s][i];
                }
                x_new[i] = hi;
                let sc = tol.atol + tol.rtol * x[i].abs().max(hi.abs());
                err_sq += ((hi - lo) / sc).powi(2);
            }
            let err = (err_sq / d as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Oracle(format!("non-finite state near t = {t}")));
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                x = x_new;
                // FSAL: the last stage is the derivative at the new point.
                k[0] = k[6].clone();
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 && last {
                // keep the pre-clip step size for the next interval
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
            if h < 1e-14 * t.max(1.0) {
                return Err(Error::Oracle(format!("step size underflow at t = {t}")));
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Reference solution of `spec` with parameter `theta` at `times`.
pub fn solve(
    spec: &ProblemSpec,
    theta: &[f64],
    times: &[f64],
    tol: Tolerance,
) -> Result<Vec<Vec<f64>>> {
    integrate(
        |x| spec.field(x, theta).as_slice().to_vec(),
        spec.x0().as_slice(),
        times,
        tol,
    )
}
