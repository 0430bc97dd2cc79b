//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! `cargo test -p odefilt-cli --test acceptance`; pass criterion numbers as
//! arguments after `--` to run a subset.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use odefilt::filter::filter_solve;
use odefilt::inverse::{
    decade_steps, one_two_five_steps, run, sweep_steps, LikelihoodObjective, Method, Objective,
    QuadraticObjective, SolverConfig, Sweep,
};
use odefilt::kernels::{ddk, k, kd, KernelConfig, TimeGrid};
use odefilt::likelihood::LikelihoodModel;
use odefilt::linearization::{
    gp_form_means, jacobian_estimate, kernel_prefactor, relative_frobenius, sensitivity_fd,
    true_jacobian_fd, JacobianVariant, DEFAULT_FD_DELTA,
};
use odefilt::problems::{self, Benchmark};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model_for(b: &Benchmark, step: f64, r: f64) -> Result<LikelihoodModel, String> {
    let data =
        problems::generate_data(b, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    LikelihoodModel::new(b.spec.clone(), data, step, r, KernelConfig::default())
        .map_err(|e| e.to_string())
}

fn min_rel_err(sweep: &Sweep) -> f64 {
    sweep
        .best_entry()
        .trace
        .records
        .iter()
        .filter_map(|r| r.rel_err)
        .fold(f64::INFINITY, f64::min)
}

fn first_below(sweep: &Sweep, tol: f64) -> Option<usize> {
    sweep
        .best_entry()
        .trace
        .records
        .iter()
        .find(|r| r.rel_err.is_some_and(|e| e < tol))
        .map(|r| r.index)
}

fn kernel_suite() -> Verdict {
    let cfg = KernelConfig::default();
    let scaled = KernelConfig::new(2.0).map_err(|e| e.to_string())?;
    let mut fails = Vec::new();
    let closed = [
        ("k(1,1)", k(1.0, 1.0, &cfg), 1.0 / 3.0),
        ("k(1,2)", k(1.0, 2.0, &cfg), 1.0 / 3.0 + 0.5),
        ("kd(1,1)", kd(1.0, 1.0, &cfg), 0.5),
        ("kd(2,1)", kd(2.0, 1.0, &cfg), 1.5),
        ("ddk(1,2)", ddk(1.0, 2.0, &cfg), 1.0),
        ("ddk(1,2) scaled", ddk(1.0, 2.0, &scaled), 4.0),
        ("k(0,t)", k(0.0, 3.0, &cfg), 0.0),
    ];
    for (name, got, want) in closed {
        match got {
            Ok(v) if (v - want).abs() <= 1e-14 * want.abs().max(1.0) => {}
            other => fails.push(format!("{name} = {other:?}, expected {want}")),
        }
    }
    if k(-1.0, 1.0, &cfg).is_ok() {
        fails.push("negative time accepted".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let times: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..5.0)).collect();
    let eps = 1e-6;
    for &t in &times {
        for &u in &times {
            let kk = k(t, u, &cfg).unwrap();
            if (kk - k(u, t, &cfg).unwrap()).abs() > 1e-14 * kk.abs().max(1.0) {
                fails.push(format!("k not symmetric at ({t}, {u})"));
            }
            let fd = (k(t, u + eps, &cfg).unwrap() - k(t, u - eps, &cfg).unwrap()) / (2.0 * eps);
            if (fd - kd(t, u, &cfg).unwrap()).abs() > 1e-6 * fd.abs().max(1.0) {
                fails.push(format!("kd is not the derivative of k at ({t}, {u})"));
            }
            if (t - u).abs() > 10.0 * eps {
                let fd =
                    (kd(t + eps, u, &cfg).unwrap() - kd(t - eps, u, &cfg).unwrap()) / (2.0 * eps);
                if (fd - ddk(t, u, &cfg).unwrap()).abs() > 1e-6 * fd.abs().max(1.0) {
                    fails.push(format!("ddk is not the derivative of kd at ({t}, {u})"));
                }
            }
        }
    }
    for kernel in [k, ddk] {
        let gram = DMatrix::from_fn(times.len(), times.len(), |a, b| {
            kernel(times[a], times[b], &cfg).unwrap()
        });
        let min_eig = gram.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * gram.norm() {
            fails.push(format!("Gram matrix has eigenvalue {min_eig:e}"));
        }
    }
    check(
        fails.is_empty(),
        if fails.is_empty() {
            "all kernel checks hold".into()
        } else {
            fails.join("; ")
        },
    )
}

fn kalman_gp_equivalence() -> Verdict {
    let b = problems::logistic();
    let r = 1e-10;
    let grid =
        TimeGrid::aligned(0.1, b.spec.horizon(), &b.data_times).map_err(|e| e.to_string())?;
    let cfg = KernelConfig::default();
    let out = filter_solve(&b.spec, &b.theta_star, &grid, r, &cfg).map_err(|e| e.to_string())?;
    let pre = kernel_prefactor(&grid, r, &cfg).map_err(|e| e.to_string())?;
    let variant = JacobianVariant::default();
    let gp = gp_form_means(&pre, &out, variant).map_err(|e| e.to_string())?;
    let kalman = out.data_means();
    let mean_err = (&gp - &kalman).norm() / kalman.norm();
    let var_err = pre
        .variances
        .iter()
        .zip(out.data_variances())
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    check(
        grid.n_steps() == 30 && mean_err <= 1e-8 && var_err <= 1e-8,
        format!(
            "N = {}, variant {}, mean rel err {mean_err:.2e}, variance rel err {var_err:.2e}",
            grid.n_steps(),
            variant.as_str()
        ),
    )
}

fn identity_residual(b: &Benchmark, step: f64) -> Result<f64, String> {
    let cfg = KernelConfig::default();
    let r = 0.0;
    let grid =
        TimeGrid::aligned(step, b.spec.horizon(), &b.data_times).map_err(|e| e.to_string())?;
    let out = filter_solve(&b.spec, &b.theta_star, &grid, r, &cfg).map_err(|e| e.to_string())?;
    let pre = kernel_prefactor(&grid, r, &cfg).map_err(|e| e.to_string())?;
    let j = jacobian_estimate(&pre, &out, JacobianVariant::default()).map_err(|e| e.to_string())?;
    let sens = sensitivity_fd(&b.spec, &b.theta_star, &grid, r, &cfg, DEFAULT_FD_DELTA)
        .map_err(|e| e.to_string())?;
    let ks = pre.apply(&sens.s).map_err(|e| e.to_string())?;
    let dm = true_jacobian_fd(&b.spec, &b.theta_star, &grid, r, &cfg, DEFAULT_FD_DELTA)
        .map_err(|e| e.to_string())?;
    Ok(relative_frobenius(&dm, &(j.j + ks)))
}

fn sensitivity_identity() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in [problems::logistic(), problems::lotka_volterra()] {
        match identity_residual(&b, 0.1) {
            Ok(res) => {
                ok &= res <= 1e-3;
                parts.push(format!("{} residual {res:.2e}", b.label));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{}: {e}", b.label));
            }
        }
    }
    check(ok, parts.join(", "))
}

fn frozen_quadratic() -> Verdict {
    let b = problems::logistic();
    let model = model_for(&b, b.step, 0.0)?;
    let out = model.solve(&b.theta0).map_err(|e| e.to_string())?;
    let j = model.jacobian(&out).map_err(|e| e.to_string())?;
    let quad = QuadraticObjective::frozen(&model, &out, &j).map_err(|e| e.to_string())?;
    let theta = DVector::from_vec(b.theta0.clone());
    let eval = quad.evaluate(&theta).map_err(|e| e.to_string())?;
    let n = theta.len();
    let h = 1e-4;
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    for a in 0..n {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[a] += h;
        tm[a] -= h;
        fd_grad[a] = (quad.energy(&tp) - quad.energy(&tm)) / (2.0 * h);
        for c in 0..n {
            let e = |da: f64, dc: f64| {
                let mut t = theta.clone();
                t[a] += da;
                t[c] += dc;
                quad.energy(&t)
            };
            fd_hess[(a, c)] = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
        }
    }
    let grad_err = (&eval.grad - &fd_grad).norm() / fd_grad.norm();
    let hess_err = (&eval.hess - &fd_hess).norm() / fd_hess.norm();

    let trace = run(
        &quad,
        &SolverConfig::new(Method::Nwt, 1.0, 1),
        theta.as_slice(),
        None,
    )
    .map_err(|e| e.to_string())?;
    let minimizer = quad.minimizer().map_err(|e| e.to_string())?;
    let newton_err = (&trace.last().theta - &minimizer).norm() / minimizer.norm();
    check(
        grad_err <= 1e-6 && hess_err <= 1e-6 && newton_err <= 1e-10,
        format!("gradient rel err {grad_err:.2e}, Hessian rel err {hess_err:.2e}, one Newton step off by {newton_err:.2e}"),
    )
}

fn lv_optimization() -> Verdict {
    let b = problems::lotka_volterra();
    let model = model_for(&b, b.step, 0.0)?;
    let obj = LikelihoodObjective::new(&model);
    let star = Some(b.theta_star.as_slice());
    let nwt = sweep_steps(
        &obj,
        &SolverConfig::new(Method::Nwt, 1.0, 100),
        &b.theta0,
        star,
        &one_two_five_steps(),
    )
    .map_err(|e| e.to_string())?;
    let hit = first_below(&nwt, 1e-3);
    let best_rel = min_rel_err(&nwt);
    let gd = sweep_steps(
        &obj,
        &SolverConfig::new(Method::Gd, 1.0, 100),
        &b.theta0,
        star,
        &decade_steps(),
    )
    .map_err(|e| e.to_string())?;
    let rs = sweep_steps(
        &obj,
        &SolverConfig::new(Method::Rs, 1.0, 100),
        &b.theta0,
        star,
        &decade_steps(),
    )
    .map_err(|e| e.to_string())?;
    let (gd_e, rs_e) = (
        gd.best_entry().trace.final_e(),
        rs.best_entry().trace.final_e(),
    );
    check(
        hit.is_some() && gd_e < rs_e,
        format!(
            "NWT first rel_err < 1e-3 at {hit:?} (best step {:e}, min rel_err {best_rel:.3e}); final E GD {gd_e:.4e} vs RS {rs_e:.4e}",
            nwt.best_entry().step
        ),
    )
}

fn pst_optimization() -> Verdict {
    let b = problems::pst_linearized();
    let model = model_for(&b, b.step, 0.0)?;
    let obj = LikelihoodObjective::new(&model);
    let sweep = sweep_steps(
        &obj,
        &SolverConfig::new(Method::Nwt, 1.0, 200),
        &b.theta0,
        Some(&b.theta_star),
        &one_two_five_steps(),
    )
    .map_err(|e| e.to_string())?;
    let target = [0.07, 0.60, 0.05, 0.30, 0.02];
    let theta = &sweep.best_entry().trace.last().theta;
    let rounded: Vec<f64> = theta.iter().map(|v| (v * 100.0).round() / 100.0).collect();
    let ok = rounded
        .iter()
        .zip(target)
        .all(|(a, b)| (a - b).abs() < 1e-9);
    let shown: Vec<String> = theta.iter().map(|v| format!("{v:.4}")).collect();
    check(
        ok,
        format!(
            "best step {:e}, θ = ({})",
            sweep.best_entry().step,
            shown.join(", ")
        ),
    )
}

fn guiy_optimization() -> Verdict {
    let b = problems::guiy();
    let model = model_for(&b, b.step, 0.0)?;
    let obj = LikelihoodObjective::new(&model);
    let sweep = sweep_steps(
        &obj,
        &SolverConfig::new(Method::Nwt, 1.0, 25),
        &b.theta0,
        Some(&b.theta_star),
        &one_two_five_steps(),
    )
    .map_err(|e| e.to_string())?;
    let hit = sweep
        .best_entry()
        .trace
        .records
        .iter()
        .find(|r| r.rel_err.is_some_and(|e| e <= 1e-2))
        .map(|r| r.index);
    let best_rel = min_rel_err(&sweep);
    check(
        hit.is_some_and(|i| i <= 25),
        format!(
            "best step {:e}, first rel_err <= 1e-2 at {hit:?}, min rel_err {best_rel:.3e}",
            sweep.best_entry().step
        ),
    )
}

fn sampler_ordering() -> Verdict {
    let b = problems::lotka_volterra();
    let model = model_for(&b, b.step, 0.0)?;
    let obj = LikelihoodObjective::new(&model);
    let mut means = Vec::new();
    for method in [Method::Rwm, Method::Plmc, Method::Phmc] {
        let mut base = SolverConfig::new(method, 1.0, 250);
        if method != Method::Rwm {
            base.burn_in_force_accept = b.burn_in;
        }
        let sweep = sweep_steps(&obj, &base, &b.theta0, Some(&b.theta_star), &decade_steps())
            .map_err(|e| e.to_string())?;
        let records = &sweep.best_entry().trace.records;
        let tail: Vec<f64> = records.iter().rev().take(100).map(|r| r.e).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        means.push((method, mean, sweep.best_entry().step));
    }
    let rwm = means[0].1;
    let ok = means[1].1 < rwm && means[2].1 < rwm;
    let shown: Vec<String> = means
        .iter()
        .map(|(m, e, s)| format!("{m} {e:.4e} (step {s:e})"))
        .collect();
    check(ok, format!("mean E of last 100: {}", shown.join(", ")))
}

fn theta_independence() -> Verdict {
    let b = problems::logistic();
    let cfg = KernelConfig::default();
    let r = 1e-4;
    let grid =
        TimeGrid::aligned(b.step, b.spec.horizon(), &b.data_times).map_err(|e| e.to_string())?;
    let reference_k = kernel_prefactor(&grid, r, &cfg).map_err(|e| e.to_string())?;
    let reference =
        filter_solve(&b.spec, &b.theta_star, &grid, r, &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let theta = [rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)];
        let out = filter_solve(&b.spec, &theta, &grid, r, &cfg).map_err(|e| e.to_string())?;
        let pre = kernel_prefactor(&grid, r, &cfg).map_err(|e| e.to_string())?;
        let same_p = out
            .filter_variances
            .iter()
            .zip(&reference.filter_variances)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let same_k = pre
            .k
            .iter()
            .zip(reference_k.k.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
            && pre
                .variances
                .iter()
                .zip(&reference_k.variances)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_p && same_k) {
            return Err(format!(
                "trial {trial} at θ = {theta:?}: P equal {same_p}, K equal {same_k}"
            ));
        }
    }
    Ok("P and K bitwise identical across 10 random θ".into())
}

fn jacobian_convergence() -> Verdict {
    let b = problems::logistic();
    let cfg = KernelConfig::default();
    let r = 0.0;
    let mut grid =
        TimeGrid::aligned(0.1, b.spec.horizon(), &b.data_times).map_err(|e| e.to_string())?;
    let mut gaps = Vec::new();
    for _ in 0..4 {
        let out =
            filter_solve(&b.spec, &b.theta_star, &grid, r, &cfg).map_err(|e| e.to_string())?;
        let pre = kernel_prefactor(&grid, r, &cfg).map_err(|e| e.to_string())?;
        let j =
            jacobian_estimate(&pre, &out, JacobianVariant::default()).map_err(|e| e.to_string())?;
        let dm = true_jacobian_fd(&b.spec, &b.theta_star, &grid, r, &cfg, DEFAULT_FD_DELTA)
            .map_err(|e| e.to_string())?;
        gaps.push((dm - j.j).norm());
        grid = grid.halved();
    }
    let ok = gaps.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    check(
        ok,
        format!("gap at h = 0.1, 0.05, 0.025, 0.0125: {}", shown.join(", ")),
    )
}

fn determinism() -> Verdict {
    let dir = std::env::temp_dir().join(format!("odefilt-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for (method, step) in [("nwt", "0.5"), ("plmc", "0.01"), ("phmc", "0.01")] {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let path = dir.join(format!("{method}_{run}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_odefilt"))
                .args([
                    "infer",
                    "--benchmark",
                    "logistic",
                    "--method",
                    method,
                    "--step",
                    step,
                ])
                .args(["--budget", "20", "--seed", "3", "--output"])
                .arg(&path)
                .stderr(std::process::Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{method} run exited with {status}"));
            }
            bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        let same = bytes[0] == bytes[1];
        ok &= same;
        details.push(format!(
            "{method} {}",
            if same { "identical" } else { "differs" }
        ));
    }
    let _ = std::fs::remove_dir_all(&dir);
    check(ok, details.join(", "))
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 11] = [
        (1, "kernel suite", Duration::from_secs(1), kernel_suite),
        (
            2,
            "Kalman and GP forms agree",
            Duration::from_secs(5),
            kalman_gp_equivalence,
        ),
        (
            3,
            "sensitivity identity",
            Duration::from_secs(30),
            sensitivity_identity,
        ),
        (
            4,
            "frozen quadratic estimators",
            Duration::from_secs(5),
            frozen_quadratic,
        ),
        (
            5,
            "LV optimization",
            Duration::from_secs(300),
            lv_optimization,
        ),
        (
            6,
            "PST optimization",
            Duration::from_secs(900),
            pst_optimization,
        ),
        (
            7,
            "GUiY optimization",
            Duration::from_secs(900),
            guiy_optimization,
        ),
        (
            8,
            "sampler ordering",
            Duration::from_secs(600),
            sampler_ordering,
        ),
        (
            9,
            "θ-independence of P and K",
            Duration::from_secs(5),
            theta_independence,
        ),
        (
            10,
            "Jacobian convergence in h",
            Duration::from_secs(60),
            jacobian_convergence,
        ),
        (11, "determinism", Duration::from_secs(120), determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = f();
        let elapsed = start.elapsed();
        let (mut pass, detail) = match verdict {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let mut timing = format!("{:.2}s", elapsed.as_secs_f64());
        if elapsed > limit {
            pass = false;
            timing.push_str(&format!(" > limit {}s", limit.as_secs()));
        }
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id}: {} {name} [{timing}] {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
