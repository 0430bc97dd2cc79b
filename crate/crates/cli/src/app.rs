//! Command-line surface.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odefilt::linearization::JacobianVariant;

use crate::commands::{
    self, InferOptions, JacobianCheckRequest, Range, SolveRequest, StepGrid, SurfaceRequest,
};
use crate::config::{ExperimentConfig, SigmaDifMode};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "odefilt",
    version,
    about = "ODE parameter inference with Gaussian ODE filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward solve: writes `t, mean_*, var` for every grid point.
    Solve(SolveArgs),
    /// Runs an optimizer or sampler and writes its trace.
    Infer(InferArgs),
    /// Compares the Jacobian estimators with finite differences.
    JacobianCheck(JacobianArgs),
    /// Step-size sweeps and likelihood surfaces.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Debug, Subcommand)]
enum SweepCommand {
    /// Reruns an experiment for every step size on a grid.
    Steps(SweepStepsArgs),
    /// Aware and unaware energies on a two-parameter grid.
    Surface(SurfaceArgs),
}

#[derive(Debug, Args)]
struct SigmaArgs {
    /// Diffusion scale of the prior.
    #[arg(long, default_value_t = 1.0)]
    sigma_dif: f64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    benchmark: String,
    /// Parameter, comma separated; the true parameter by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    solver_step: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    measurement_var: f64,
    #[arg(long, conflicts_with = "calibrate_sigma")]
    sigma_dif: Option<f64>,
    /// Estimate the diffusion scale from the solve itself.
    #[arg(long)]
    calibrate_sigma: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Experiment settings: a TOML file, optionally overridden field by field.
#[derive(Debug, Args, Default)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    leapfrog_steps: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// Drop the proposal correction from the acceptance ratio.
    #[arg(long)]
    no_hastings: bool,
    #[arg(long)]
    measurement_var: Option<f64>,
    #[arg(long)]
    solver_step: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// `drift` or `literal`.
    #[arg(long)]
    jacobian: Option<String>,
    #[arg(long, conflicts_with = "calibrate_sigma")]
    sigma_dif: Option<f64>,
    #[arg(long)]
    calibrate_sigma: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ExperimentArgs {
    fn to_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.benchmark {
            c.benchmark = v.clone();
        }
        if let Some(v) = &self.method {
            c.method = v.clone();
        }
        if let Some(v) = self.step {
            c.step = v;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.data_seed {
            c.data_seed = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in_force_accept = Some(v);
        }
        if let Some(v) = self.leapfrog_steps {
            c.leapfrog_steps = v;
        }
        if let Some(v) = self.damping {
            c.newton_damping = v;
        }
        if self.no_hastings {
            c.hastings = false;
        }
        if let Some(v) = self.measurement_var {
            c.measurement_var = v;
        }
        if let Some(v) = self.solver_step {
            c.solver_step = Some(v);
        }
        if let Some(v) = &self.theta0 {
            c.theta0 = Some(v.clone());
        }
        if let Some(v) = &self.jacobian {
            c.jacobian = v.clone();
        }
        if let Some(v) = self.sigma_dif {
            c.sigma_dif = SigmaDifMode::Fixed { value: v };
        }
        if self.calibrate_sigma {
            c.sigma_dif = SigmaDifMode::Calibrate;
        }
        if let Some(v) = &self.output {
            c.output = Some(v.clone());
        }
        c.resolve()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Independent chains run in parallel, each with its own file.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Fill the `wall_ms` column (makes the output nondeterministic).
    #[arg(long)]
    timing: bool,
    /// Print the merged configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GridArg {
    Decade,
    #[value(name = "125")]
    OneTwoFive,
}

#[derive(Debug, Args)]
struct SweepStepsArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_enum, default_value = "decade")]
    grid: GridArg,
    /// Where to write the trace of the best step size.
    #[arg(long)]
    best_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    #[arg(long)]
    benchmark: String,
    /// Values of the remaining parameters; the true parameter by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Index of the parameter on the first axis.
    #[arg(long)]
    a: usize,
    /// Index of the parameter on the second axis.
    #[arg(long)]
    b: usize,
    /// `lo:hi:count`.
    #[arg(long, allow_hyphen_values = true)]
    a_range: Range,
    #[arg(long, allow_hyphen_values = true)]
    b_range: Range,
    #[arg(long)]
    solver_step: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    measurement_var: f64,
    #[command(flatten)]
    sigma: SigmaArgs,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct JacobianArgs {
    #[arg(long)]
    benchmark: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    solver_step: Option<f64>,
    /// Number of times the step is halved for the convergence table.
    #[arg(long, default_value_t = 3)]
    halvings: usize,
    #[arg(long, default_value_t = 0.0)]
    measurement_var: f64,
    #[command(flatten)]
    sigma: SigmaArgs,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = odefilt::linearization::DEFAULT_FD_DELTA)]
    delta: f64,
    /// `drift` or `literal`.
    #[arg(long, default_value = "drift")]
    jacobian: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => {
            let sigma_dif = if a.calibrate_sigma {
                SigmaDifMode::Calibrate
            } else {
                SigmaDifMode::Fixed {
                    value: a.sigma_dif.unwrap_or(1.0),
                }
            };
            let req = SolveRequest {
                benchmark: &a.benchmark,
                theta: a.theta,
                solver_step: a.solver_step,
                measurement_var: a.measurement_var,
                sigma_dif,
            };
            commands::solve(&req, commands::sink(a.output.as_deref())?)
        }
        Command::Infer(a) => {
            let cfg = a.experiment.to_config()?;
            if a.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let opts = InferOptions {
                chains: a.chains,
                timing: a.timing,
            };
            commands::infer(&cfg, &opts).map(|_| ())
        }
        Command::JacobianCheck(a) => {
            let variant: JacobianVariant = a
                .jacobian
                .parse()
                .map_err(|e: odefilt::Error| CliError::Usage(e.to_string()))?;
            let req = JacobianCheckRequest {
                benchmark: a.benchmark,
                theta: a.theta,
                solver_step: a.solver_step,
                halvings: a.halvings,
                measurement_var: a.measurement_var,
                sigma_dif: a.sigma.sigma_dif,
                delta: a.delta,
                variant,
            };
            let complete = commands::jacobian_check(&req, commands::sink(a.output.as_deref())?)?;
            if complete {
                Ok(())
            } else {
                Err(CliError::Numerical(
                    "some finite-difference entries failed".into(),
                ))
            }
        }
        Command::Sweep(SweepCommand::Steps(a)) => {
            let mut cfg = a.experiment.to_config()?;
            let summary = cfg.output.take();
            let grid = match a.grid {
                GridArg::Decade => StepGrid::Decade,
                GridArg::OneTwoFive => StepGrid::OneTwoFive,
            };
            commands::sweep(
                &cfg,
                grid,
                commands::sink(summary.as_deref())?,
                a.best_trace.as_deref(),
            )
        }
        Command::Sweep(SweepCommand::Surface(a)) => {
            let req = SurfaceRequest {
                benchmark: a.benchmark,
                base_theta: a.theta,
                a: a.a,
                b: a.b,
                a_range: a.a_range,
                b_range: a.b_range,
                solver_step: a.solver_step,
                measurement_var: a.measurement_var,
                sigma_dif: a.sigma.sigma_dif,
                data_seed: a.data_seed,
            };
            commands::surface(&req, commands::sink(a.output.as_deref())?)
        }
    }
}

/// Parses `args` and runs the subcommand. Exit codes: 0 success, 1 usage, 2 numerical failure.
pub fn run_cli<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
