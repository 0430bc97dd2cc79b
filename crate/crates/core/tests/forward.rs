use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use odefilt::filter::{calibrate_sigma_dif, filter_solve};
use odefilt::inverse::{LikelihoodObjective, Objective};
use odefilt::kernels::{k, KernelConfig, TimeGrid};
use odefilt::likelihood::{
    bayesian_gradient, bayesian_hessian, gradient_estimate, hessian_estimate, GaussianPrior,
    LikelihoodModel,
};
use odefilt::linearization::{
    gp_form_means, jacobian_estimate, kernel_prefactor, true_jacobian_fd, JacobianVariant,
    DEFAULT_FD_DELTA,
};
use odefilt::problems::{self, Benchmark};
use odefilt::reference::{self, Tolerance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_for(b: &Benchmark, step: f64) -> TimeGrid {
    TimeGrid::aligned(step, b.spec.horizon(), &b.data_times).unwrap()
}

fn model(b: &Benchmark) -> LikelihoodModel {
    let data = problems::generate_data(b, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    LikelihoodModel::new(b.spec.clone(), data, b.step, 0.0, KernelConfig::default()).unwrap()
}

fn max_error_against_reference(b: &Benchmark, grid: &TimeGrid) -> f64 {
    let out = filter_solve(&b.spec, &b.theta_star, grid, 0.0, &KernelConfig::default()).unwrap();
    let truth =
        reference::solve(&b.spec, &b.theta_star, &b.data_times, Tolerance::default()).unwrap();
    let means = out.data_means();
    let m = b.data_times.len();
    truth
        .iter()
        .enumerate()
        .flat_map(|(i, x)| x.iter().enumerate().map(move |(dim, v)| (dim * m + i, *v)))
        .map(|(row, v)| (means[row] - v).abs())
        .fold(0.0, f64::max)
}

#[test]
fn logistic_filter_converges_to_reference_as_step_halves() {
    let b = problems::logistic();
    let mut grid = grid_for(&b, 0.1);
    let mut errors = Vec::new();
    for _ in 0..4 {
        errors.push(max_error_against_reference(&b, &grid));
        grid = grid.halved();
    }
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "errors {errors:?}");
    }
    assert!(errors[3] < 1e-3, "errors {errors:?}");
}

#[test]
fn guiy_filter_tracks_reference_at_default_step() {
    let b = problems::guiy();
    let err = max_error_against_reference(&b, &grid_for(&b, b.step));
    assert!(err < 0.1, "max error {err}");
}

#[test]
fn pst_filter_tracks_reference_at_default_step() {
    let b = problems::pst_linearized();
    let err = max_error_against_reference(&b, &grid_for(&b, b.step));
    assert!(err < 0.05, "max error {err}");
}

#[test]
fn calibrated_diffusion_scale_is_positive_on_logistic() {
    let b = problems::logistic();
    let out = filter_solve(
        &b.spec,
        &b.theta_star,
        &grid_for(&b, 0.1),
        0.0,
        &KernelConfig::default(),
    )
    .unwrap();
    let cal = calibrate_sigma_dif(&out).unwrap();
    assert!(!cal.is_degenerate());
    assert!(cal.sigma_dif_or(1.0) > 0.0);
}

#[test]
fn calibration_is_degenerate_for_a_constant_field() {
    let b = problems::constant_rate();
    let out = filter_solve(
        &b.spec,
        &b.theta_star,
        &grid_for(&b, 0.1),
        0.0,
        &KernelConfig::default(),
    )
    .unwrap();
    let cal = calibrate_sigma_dif(&out).unwrap();
    assert!(cal.is_degenerate());
    assert_eq!(cal.sigma_dif_or(0.5), 0.5);
}

#[test]
fn drift_corrected_jacobian_is_exact_for_constant_field() {
    let b = problems::constant_rate();
    let cfg = KernelConfig::default();
    let grid = grid_for(&b, 0.1);
    let out = filter_solve(&b.spec, &b.theta_star, &grid, 0.0, &cfg).unwrap();
    let pre = kernel_prefactor(&grid, 0.0, &cfg).unwrap();
    let fd = true_jacobian_fd(&b.spec, &b.theta_star, &grid, 0.0, &cfg, DEFAULT_FD_DELTA).unwrap();
    let drift = jacobian_estimate(&pre, &out, JacobianVariant::DriftCorrected).unwrap();
    let literal = jacobian_estimate(&pre, &out, JacobianVariant::Literal).unwrap();
    assert_relative_eq!(drift.j, fd, epsilon = 1e-8);
    assert_eq!(literal.j, DMatrix::zeros(fd.nrows(), fd.ncols()));
}

#[test]
fn posterior_gradient_and_hessian_add_prior_terms() {
    let b = problems::logistic();
    let m = model(&b);
    let out = m.solve(&b.theta0).unwrap();
    let j = m.jacobian(&out).unwrap();
    let theta = DVector::from_vec(b.theta0.clone());
    let prior = GaussianPrior::new(
        DVector::from_vec(vec![3.0, 3.0]),
        DMatrix::from_diagonal_element(2, 2, 0.25),
    )
    .unwrap();
    let g = bayesian_gradient(&m, &out, &j, &prior, &theta).unwrap();
    let h = bayesian_hessian(&m, &j, &prior).unwrap();
    let g0 = gradient_estimate(&m, &out, &j).unwrap();
    let h0 = hessian_estimate(&m, &j).unwrap();
    assert_relative_eq!(g - g0, DVector::from_vec(vec![-4.0, 4.0]), epsilon = 1e-9);
    assert_relative_eq!(
        h - h0,
        DMatrix::from_diagonal_element(2, 2, 4.0),
        epsilon = 1e-9
    );

    let obj = LikelihoodObjective::new(&m)
        .with_prior(prior.clone())
        .unwrap();
    let eval = obj.evaluate(&theta).unwrap();
    let plain = LikelihoodObjective::new(&m).evaluate(&theta).unwrap();
    assert_relative_eq!(eval.e - plain.e, prior.energy(&theta), epsilon = 1e-9);
}

#[test]
fn newton_direction_is_invariant_to_diffusion_scale_without_noise() {
    // Scaling σ_dif² rescales P and hence every weight by the same factor
    // when the data noise is negligible.
    let b = problems::logistic();
    let z = problems::generate_observations(&b, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let direction = |sigma: f64| {
        let data = odefilt::likelihood::Dataset::new(
            b.data_times.clone(),
            z.clone(),
            odefilt::likelihood::NoiseModel::Scalar(1e-14),
        )
        .unwrap();
        let m = LikelihoodModel::new(
            b.spec.clone(),
            data,
            b.step,
            0.0,
            KernelConfig::new(sigma).unwrap(),
        )
        .unwrap();
        let eval = LikelihoodObjective::new(&m)
            .evaluate(&DVector::from_vec(b.theta0.clone()))
            .unwrap();
        eval.hess.lu().solve(&eval.grad).unwrap()
    };
    assert_relative_eq!(direction(1.0), direction(3.0), max_relative = 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn variances_and_prefactor_do_not_depend_on_theta(a in 0.5f64..5.0, c in 0.5f64..5.0) {
        let b = problems::logistic();
        let cfg = KernelConfig::default();
        let grid = grid_for(&b, 0.1);
        let base = filter_solve(&b.spec, &b.theta_star, &grid, 1e-6, &cfg).unwrap();
        let out = filter_solve(&b.spec, &[a, c], &grid, 1e-6, &cfg).unwrap();
        prop_assert_eq!(&base.filter_variances, &out.filter_variances);
        prop_assert_eq!(&base.innovation_vars, &out.innovation_vars);
    }

    #[test]
    fn gp_form_reproduces_filter_means(a in 0.5f64..5.0, c in 0.5f64..5.0, log_r in -10f64..-2.0) {
        let b = problems::logistic();
        let cfg = KernelConfig::default();
        let r = 10f64.powf(log_r);
        let grid = grid_for(&b, 0.1);
        let out = filter_solve(&b.spec, &[a, c], &grid, r, &cfg).unwrap();
        let pre = kernel_prefactor(&grid, r, &cfg).unwrap();
        let gp = gp_form_means(&pre, &out, JacobianVariant::DriftCorrected).unwrap();
        let kalman = out.data_means();
        prop_assert!((&gp - &kalman).norm() <= 1e-8 * kalman.norm().max(1.0));
        for (p, q) in pre.variances.iter().zip(out.data_variances()) {
            prop_assert!((p - q).abs() <= 1e-8 * q.abs().max(1e-12));
        }
    }

    #[test]
    fn filtering_variance_is_between_zero_and_prior(step_index in 0usize..3, log_r in -12f64..0.0) {
        let b = problems::logistic();
        let step = [0.1, 0.05, 0.025][step_index];
        let cfg = KernelConfig::default();
        let grid = grid_for(&b, step);
        let pre = kernel_prefactor(&grid, 10f64.powf(log_r), &cfg).unwrap();
        for (p, t) in pre.variances.iter().zip(grid.data_times()) {
            prop_assert!(*p >= -1e-12);
            prop_assert!(*p <= k(t, t, &cfg).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn prefactor_rows_vanish_beyond_their_data_index(step_index in 0usize..3) {
        let b = problems::logistic();
        let step = [0.1, 0.05, 0.025][step_index];
        let grid = grid_for(&b, step);
        let pre = kernel_prefactor(&grid, 0.0, &KernelConfig::default()).unwrap();
        for (row, &l) in grid.data_indices().iter().enumerate() {
            for col in l..grid.n_steps() {
                prop_assert_eq!(pre.k[(row, col)], 0.0);
            }
        }
    }

    #[test]
    fn hessian_estimate_is_positive_semidefinite(a in 1.0f64..5.0, c in 1.0f64..5.0) {
        let b = problems::logistic();
        let m = model(&b);
        let out = m.solve(&[a, c]).unwrap();
        let j = m.jacobian(&out).unwrap();
        let h = hessian_estimate(&m, &j).unwrap();
        prop_assert!((&h - h.transpose()).norm() <= 1e-12 * h.norm());
        let min_eig = h.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-9 * h.norm());
    }
}
