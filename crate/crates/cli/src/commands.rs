//! Implementations of the subcommands. Each writes its table to `out` and
//! reports failures as [`CliError`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use odefilt::filter::{calibrate_sigma_dif, filter_solve};
use odefilt::inverse::{
    decade_steps, one_two_five_steps, run, sweep_steps, LikelihoodObjective, Trace, TraceStatus,
};
use odefilt::kernels::{KernelConfig, TimeGrid};
use odefilt::likelihood::{neg_log_likelihood, unaware_neg_log_likelihood, LikelihoodModel};
use odefilt::linearization::{
    jacobian_estimate, kernel_prefactor, relative_frobenius, sensitivity_fd, true_jacobian_fd,
    JacobianVariant,
};
use odefilt::problems::{self, Benchmark};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, ResolvedExperiment, SigmaDifMode};
use crate::error::CliError;
use crate::output::{fmt_float, write_trace, SURFACE_HEADER};

/// Environment variable naming the default directory for trace files.
pub const OUT_DIR_ENV: &str = "ODEFILT_OUT_DIR";

pub fn default_output(name: &str) -> PathBuf {
    let dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
    dir.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Opens `path`, or stdout when absent.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn kernel(sigma_dif: f64) -> Result<KernelConfig, CliError> {
    KernelConfig::new(sigma_dif).map_err(|e| CliError::Usage(e.to_string()))
}

/// Diffusion scale for `mode`, calibrating at `theta` when requested.
pub fn resolve_sigma_dif(
    benchmark: &Benchmark,
    theta: &[f64],
    solver_step: f64,
    measurement_var: f64,
    mode: SigmaDifMode,
) -> Result<f64, CliError> {
    match mode {
        SigmaDifMode::Fixed { value } => Ok(value),
        SigmaDifMode::Calibrate => {
            let grid =
                TimeGrid::aligned(solver_step, benchmark.spec.horizon(), &benchmark.data_times)?;
            let out = filter_solve(
                &benchmark.spec,
                theta,
                &grid,
                measurement_var,
                &KernelConfig::default(),
            )?;
            Ok(calibrate_sigma_dif(&out)?.sigma_dif_or(1.0))
        }
    }
}

/// Synthetic data for the benchmark and the likelihood built on it.
pub fn build_model(
    benchmark: &Benchmark,
    data_seed: u64,
    solver_step: f64,
    measurement_var: f64,
    sigma_dif: f64,
    variant: JacobianVariant,
) -> Result<LikelihoodModel, CliError> {
    let data = problems::generate_data(benchmark, &mut ChaCha8Rng::seed_from_u64(data_seed))?;
    let model = LikelihoodModel::new(
        benchmark.spec.clone(),
        data,
        solver_step,
        measurement_var,
        kernel(sigma_dif)?,
    )?;
    Ok(model.with_variant(variant))
}

fn model_for(
    cfg: &ExperimentConfig,
    r: &ResolvedExperiment,
) -> Result<(LikelihoodModel, f64), CliError> {
    let sigma = resolve_sigma_dif(
        &r.benchmark,
        &r.theta0,
        r.solver_step,
        cfg.measurement_var,
        cfg.sigma_dif,
    )?;
    let model = build_model(
        &r.benchmark,
        cfg.data_seed,
        r.solver_step,
        cfg.measurement_var,
        sigma,
        r.variant,
    )?;
    Ok((model, sigma))
}

pub struct SolveRequest<'a> {
    pub benchmark: &'a str,
    pub theta: Option<Vec<f64>>,
    pub solver_step: Option<f64>,
    pub measurement_var: f64,
    pub sigma_dif: SigmaDifMode,
}

/// Forward solve table: `t, mean_0 … mean_{d−1}, var`, one row per grid point.
pub fn solve<W: Write>(req: &SolveRequest<'_>, out: W) -> Result<(), CliError> {
    let b = problems::by_name(req.benchmark).map_err(|e| CliError::Usage(e.to_string()))?;
    let theta = req.theta.clone().unwrap_or_else(|| b.theta_star.clone());
    if theta.len() != b.n_params() {
        return Err(CliError::Usage(format!(
            "theta must hold {} values",
            b.n_params()
        )));
    }
    let h = req.solver_step.unwrap_or(b.step);
    let sigma = resolve_sigma_dif(&b, &theta, h, req.measurement_var, req.sigma_dif)?;
    let grid = TimeGrid::aligned(h, b.spec.horizon(), &b.data_times)?;
    let sol = filter_solve(&b.spec, &theta, &grid, req.measurement_var, &kernel(sigma)?)?;
    let d = b.spec.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    header.push("var".into());
    w.write_record(&header)?;
    for i in 0..=grid.n_steps() {
        let mut row = vec![fmt_float(grid.time(i))];
        row.extend((0..d).map(|k| fmt_float(sol.filter_means[(k, i)])));
        row.push(fmt_float(sol.filter_variances[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub struct InferOptions {
    pub chains: usize,
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct ChainReport {
    pub path: PathBuf,
    pub trace: Trace,
}

fn chain_path(base: &Path, chain: usize, chains: usize) -> PathBuf {
    if chains <= 1 {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
    let ext = base
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    base.with_file_name(format!("{stem}_chain{chain}.{ext}"))
}

/// Runs the configured method and writes one trace CSV per chain.
///
/// An aborted run still writes its partial trace and then returns a numerical error.
pub fn infer(cfg: &ExperimentConfig, opts: &InferOptions) -> Result<Vec<ChainReport>, CliError> {
    let resolved = cfg.resolve()?;
    if opts.chains == 0 {
        return Err(CliError::Usage("chains must be at least 1".into()));
    }
    let (model, sigma) = model_for(cfg, &resolved)?;
    let objective = LikelihoodObjective::new(&model);
    let base = cfg.output.clone().unwrap_or_else(|| {
        default_output(&format!(
            "{}_{}_seed{}.csv",
            cfg.benchmark,
            resolved.solver.method.as_str(),
            cfg.seed
        ))
    });

    let traces: Vec<Result<Trace, odefilt::Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..opts.chains)
            .map(|chain| {
                let mut solver = resolved.solver.clone();
                solver.chain = chain as u64;
                let objective = &objective;
                let theta0 = &resolved.theta0;
                let star = &resolved.benchmark.theta_star;
                scope.spawn(move || run(objective, &solver, theta0, Some(star)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain panicked"))
            .collect()
    });

    let mut reports = Vec::with_capacity(opts.chains);
    for (chain, trace) in traces.into_iter().enumerate() {
        let trace = trace?;
        let path = chain_path(&base, chain, opts.chains);
        write_trace(create(&path)?, &trace, opts.timing)?;
        let last = trace.last();
        eprintln!(
            "benchmark={} method={} chain={chain} iterations={} final_E={} final_rel_err={} status={} sigma_dif={} ridge_bumps={} output={}",
            cfg.benchmark,
            trace.method,
            trace.records.len() - 1,
            fmt_float(last.e),
            last.rel_err.map(fmt_float).unwrap_or_default(),
            if trace.status == TraceStatus::Aborted { "aborted" } else { "completed" },
            fmt_float(sigma),
            trace.ridge_bumps,
            path.display()
        );
        reports.push(ChainReport { path, trace });
    }
    if reports.iter().any(|r| r.trace.is_aborted()) {
        return Err(CliError::Numerical(format!(
            "run aborted after more than {} consecutive divergent evaluations; partial trace written",
            odefilt::inverse::MAX_CONSECUTIVE_DIVERGENT
        )));
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepGrid {
    Decade,
    OneTwoFive,
}

impl StepGrid {
    pub fn steps(&self) -> Vec<f64> {
        match self {
            StepGrid::Decade => decade_steps(),
            StepGrid::OneTwoFive => one_two_five_steps(),
        }
    }
}

/// Step-size sweep: summary `step,final_E,final_rel_err,min_rel_err,status,best`
/// to `out`, and optionally the best trace.
pub fn sweep<W: Write>(
    cfg: &ExperimentConfig,
    grid: StepGrid,
    out: W,
    best_trace: Option<&Path>,
) -> Result<(), CliError> {
    let resolved = cfg.resolve()?;
    let (model, _) = model_for(cfg, &resolved)?;
    let objective = LikelihoodObjective::new(&model);
    let result = sweep_steps(
        &objective,
        &resolved.solver,
        &resolved.theta0,
        Some(&resolved.benchmark.theta_star),
        &grid.steps(),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "final_E",
        "final_rel_err",
        "min_rel_err",
        "status",
        "best",
    ])?;
    for (i, e) in result.entries.iter().enumerate() {
        let last = e.trace.last();
        let min_rel = e
            .trace
            .records
            .iter()
            .filter_map(|r| r.rel_err)
            .fold(f64::INFINITY, f64::min);
        w.write_record([
            fmt_float(e.step),
            fmt_float(last.e),
            last.rel_err.map(fmt_float).unwrap_or_default(),
            fmt_float(min_rel),
            if e.trace.is_aborted() {
                "aborted"
            } else {
                "completed"
            }
            .to_string(),
            u8::from(i == result.best).to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(path) = best_trace {
        write_trace(create(path)?, &result.best_entry().trace, false)?;
    }
    Ok(())
}

/// Inclusive linear grid `lo:hi:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl std::str::FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, count] = parts[..] else {
            return Err(format!("expected lo:hi:count, got '{s}'"));
        };
        let lo: f64 = lo.parse().map_err(|e| format!("bad lower bound: {e}"))?;
        let hi: f64 = hi.parse().map_err(|e| format!("bad upper bound: {e}"))?;
        let count: usize = count.parse().map_err(|e| format!("bad count: {e}"))?;
        if count == 0 || !(lo.is_finite() && hi.is_finite()) || (count == 1 && lo != hi) {
            return Err(format!("degenerate range '{s}'"));
        }
        Ok(Self { lo, hi, count })
    }
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

pub struct SurfaceRequest {
    pub benchmark: String,
    pub base_theta: Option<Vec<f64>>,
    pub a: usize,
    pub b: usize,
    pub a_range: Range,
    pub b_range: Range,
    pub solver_step: Option<f64>,
    pub measurement_var: f64,
    pub sigma_dif: f64,
    pub data_seed: u64,
}

/// Aware and unaware energies on a rectangular `(θ_a, θ_b)` grid, `θ_a` outer.
pub fn surface<W: Write>(req: &SurfaceRequest, out: W) -> Result<(), CliError> {
    let b = problems::by_name(&req.benchmark).map_err(|e| CliError::Usage(e.to_string()))?;
    let n = b.n_params();
    if req.a >= n || req.b >= n || req.a == req.b {
        return Err(CliError::Usage(format!(
            "parameter indices must be distinct and below {n}"
        )));
    }
    let base = req
        .base_theta
        .clone()
        .unwrap_or_else(|| b.theta_star.clone());
    if base.len() != n {
        return Err(CliError::Usage(format!("theta must hold {n} values")));
    }
    let h = req.solver_step.unwrap_or(b.step);
    let model = build_model(
        &b,
        req.data_seed,
        h,
        req.measurement_var,
        req.sigma_dif,
        JacobianVariant::default(),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_HEADER)?;
    for va in req.a_range.values() {
        for vb in req.b_range.values() {
            let mut theta = base.clone();
            theta[req.a] = va;
            theta[req.b] = vb;
            let (aware, unaware) = match model.solve(&theta) {
                Ok(sol) => (
                    neg_log_likelihood(&model, &sol)?,
                    unaware_neg_log_likelihood(model.dataset(), &sol)?,
                ),
                Err(e) if e.is_divergence() => (f64::INFINITY, f64::INFINITY),
                Err(e) => return Err(e.into()),
            };
            w.write_record([
                fmt_float(va),
                fmt_float(vb),
                fmt_float(aware),
                fmt_float(unaware),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct JacobianCheckRequest {
    pub benchmark: String,
    pub theta: Option<Vec<f64>>,
    pub solver_step: Option<f64>,
    pub halvings: usize,
    pub measurement_var: f64,
    pub sigma_dif: f64,
    pub delta: f64,
    pub variant: JacobianVariant,
}

struct Gaps {
    identity_literal: f64,
    identity_drift: f64,
    bare_literal: f64,
    bare_drift: f64,
    selected_abs: f64,
}

fn jacobian_gaps(
    b: &Benchmark,
    theta: &[f64],
    grid: &TimeGrid,
    r: f64,
    cfg: &KernelConfig,
    delta: f64,
    variant: JacobianVariant,
) -> Result<Gaps, odefilt::Error> {
    let out = filter_solve(&b.spec, theta, grid, r, cfg)?;
    let pre = kernel_prefactor(grid, r, cfg)?;
    let dm = true_jacobian_fd(&b.spec, theta, grid, r, cfg, delta)?;
    let ks = pre.apply(&sensitivity_fd(&b.spec, theta, grid, r, cfg, delta)?.s)?;
    let lit = jacobian_estimate(&pre, &out, JacobianVariant::Literal)?.j;
    let drift = jacobian_estimate(&pre, &out, JacobianVariant::DriftCorrected)?.j;
    let selected: &DMatrix<f64> = if variant == JacobianVariant::Literal {
        &lit
    } else {
        &drift
    };
    Ok(Gaps {
        identity_literal: relative_frobenius(&dm, &(&lit + &ks)),
        identity_drift: relative_frobenius(&dm, &(&drift + &ks)),
        bare_literal: relative_frobenius(&dm, &lit),
        bare_drift: relative_frobenius(&dm, &drift),
        selected_abs: (&dm - selected).norm(),
    })
}

fn csv_safe(e: &odefilt::Error) -> String {
    e.to_string().replace(',', ";")
}

/// Report with two CSV sections separated by a blank line:
/// `variant,identity_residual,jacobian_gap` and `h,jacobian_gap_abs,ratio`.
///
/// Returns whether every entry could be computed.
pub fn jacobian_check<W: Write>(req: &JacobianCheckRequest, mut out: W) -> Result<bool, CliError> {
    let b = problems::by_name(&req.benchmark).map_err(|e| CliError::Usage(e.to_string()))?;
    let theta = req.theta.clone().unwrap_or_else(|| b.theta_star.clone());
    if theta.len() != b.n_params() {
        return Err(CliError::Usage(format!(
            "theta must hold {} values",
            b.n_params()
        )));
    }
    if !(req.delta > 0.0) {
        return Err(CliError::Usage("delta must be positive".into()));
    }
    let cfg = kernel(req.sigma_dif)?;
    let h = req.solver_step.unwrap_or(b.step);
    let grid = TimeGrid::aligned(h, b.spec.horizon(), &b.data_times)?;
    let mut complete = true;

    writeln!(out, "variant,identity_residual,jacobian_gap")?;
    match jacobian_gaps(
        &b,
        &theta,
        &grid,
        req.measurement_var,
        &cfg,
        req.delta,
        req.variant,
    ) {
        Ok(g) => {
            writeln!(
                out,
                "literal,{},{}",
                fmt_float(g.identity_literal),
                fmt_float(g.bare_literal)
            )?;
            writeln!(
                out,
                "drift,{},{}",
                fmt_float(g.identity_drift),
                fmt_float(g.bare_drift)
            )?;
        }
        Err(e) => {
            complete = false;
            let e = csv_safe(&e);
            writeln!(out, "literal,error: {e},error: {e}")?;
            writeln!(out, "drift,error: {e},error: {e}")?;
        }
    }
    writeln!(out, "selected,{},", req.variant.as_str())?;
    writeln!(out)?;

    writeln!(out, "h,jacobian_gap_abs,ratio")?;
    let mut g = grid;
    let mut previous: Option<f64> = None;
    for _ in 0..=req.halvings {
        match jacobian_gaps(
            &b,
            &theta,
            &g,
            req.measurement_var,
            &cfg,
            req.delta,
            req.variant,
        ) {
            Ok(gaps) => {
                let ratio = previous
                    .map(|p| fmt_float(gaps.selected_abs / p))
                    .unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{ratio}",
                    fmt_float(g.step()),
                    fmt_float(gaps.selected_abs)
                )?;
                previous = Some(gaps.selected_abs);
            }
            Err(e) => {
                complete = false;
                previous = None;
                let e = csv_safe(&e);
                writeln!(out, "{},error: {e},", fmt_float(g.step()))?;
            }
        }
        g = g.halved();
    }
    out.flush()?;
    Ok(complete)
}
