//! `herglotz`: solve, verify and study Herglotz variational problems.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use herglotz_core::applications::{
    alpha_sweep, classical_reference, cross_check_residuals, oscillator_problem, OscillatorParams, SweepTable,
};
use herglotz_core::herglotz::{
    check_partials, el_residual, evaluate_trajectory, transversality_residual, ResidualNorms,
};
use herglotz_core::noether::{
    invariance_defect, noether_residual, random_probe, variational_identity, TransformationFamily,
};
use herglotz_core::solver::{refine_and_verify, solve_direct, stationarity_probe};
use herglotz_core::{FractionalOrder, GridFunction, HerglotzProblem, Order, SolveOptions, SolveResult};
use serde::Serialize;

use crate::config::{
    order_from, output_path, parse_list, read_grid_function, read_json, KernelJson, ProblemJson, SolverArgs,
    FLAG_FIELDS,
};
use crate::error::{CliError, CliResult};
use crate::report::{
    norms, to_json, transversality, write_csv, write_text, Meta, NormKind, Norms, OperatorSummary, ProblemSummary,
    Transversality, Verification,
};

pub const DEFAULT_NODES: usize = 201;

#[derive(Debug, Parser)]
#[command(
    name = "herglotz",
    version,
    about = "Herglotz variational problems with generalized fractional derivatives"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a problem file by direct transcription
    Solve(SolveArgs),
    /// Check the Euler–Lagrange and transversality residuals of a given trajectory
    Verify(VerifyArgs),
    /// Check invariance and the Noether identity along a trajectory
    Noether(NoetherArgs),
    /// The damped oscillator with memory, optionally swept over α
    Oscillator(OscillatorArgs),
    /// Solve on N, 2N−1 and 4N−3 nodes and report observed convergence
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Directory for outputs whose path is not given explicitly
    #[arg(long, env = "HERGLOTZ_OUT_DIR", default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,
    /// JSON report [default: <out-dir>/<command>.json]
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
    /// Exit with status 4 when the checked residual norm exceeds this
    #[arg(long, value_name = "TOL")]
    fail_above: Option<f64>,
    /// Residual norm compared with --fail-above
    #[arg(long, value_enum, default_value_t)]
    norm: NormKind,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Problem file (JSON)
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Grid nodes
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    /// Solution CSV [default: <out-dir>/solution.csv]
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// Seed of the random states used to check the Lagrangian's partials
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Perturb every decision variable
    #[default]
    All,
    /// Perturb only free right-endpoint values
    Endpoints,
    /// Skip the stationarity probe
    Off,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Problem file (JSON)
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Trajectory CSV to check
    #[arg(long, value_name = "CSV")]
    solution: PathBuf,
    /// Seed of the random states used to check the Lagrangian's partials
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which variables the first-order stationarity probe perturbs
    #[arg(long, value_enum, default_value_t)]
    probe: ProbeMode,
    /// Size of the probe perturbation [default: 10·fd_step]
    #[arg(long, value_name = "DELTA")]
    probe_delta: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct NoetherArgs {
    /// Problem file (JSON)
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Trajectory CSV along which the identity is checked
    #[arg(long, value_name = "CSV")]
    solution: PathBuf,
    /// ξ: `translation`, `scaling` (ξ = x) or a CSV table of ξ(t)
    #[arg(long, value_name = "GENERATOR")]
    generator: String,
    /// Direction of a translation [default: all ones]
    #[arg(long, value_name = "D1,D2,...", allow_hyphen_values = true)]
    direction: Option<String>,
    /// Step of the central difference in s that estimates the invariance defect
    #[arg(long, default_value_t = 1e-4)]
    s_step: f64,
    /// Random trajectory/generator pairs for the variational identity
    #[arg(long, default_value_t = 4)]
    probes: usize,
    /// Seed of those random pairs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("order").required(true).args(["alpha", "classical", "sweep"])))]
struct OscillatorArgs {
    /// Mass m > 0
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    /// Elasticity k ≥ 0
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Coupling λ0 of z in the Lagrangian; the damping rate
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    lambda0: f64,
    /// Order α ∈ (0, 1)
    #[arg(long)]
    alpha: Option<f64>,
    /// Classical (α → 1) oscillator
    #[arg(long)]
    classical: bool,
    /// Solve for each of these orders and compare with the classical solution
    #[arg(long, value_name = "A1,A2,...")]
    sweep: Option<String>,
    /// Kernel of K^{1−α}: caputo, power-law[:ALPHA], exponential:RATE[,SCALE] or table:PATH [default: caputo]
    #[arg(long, value_name = "SPEC")]
    kernel: Option<KernelJson>,
    /// Grid nodes
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    /// Right end of the interval [0, b]
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// x(0)
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    x0: f64,
    /// x(b); free when omitted
    #[arg(long, allow_hyphen_values = true)]
    xb: Option<f64>,
    /// z(0)
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    z0: f64,
    /// Solution CSV of a single solve [default: <out-dir>/oscillator.csv]
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// Worker threads for a sweep [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    /// Problem file (JSON)
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Nodes of the coarsest grid
    #[arg(long, default_value_t = 101)]
    nodes: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

/// Report destination and the `--fail-above` check.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub out_dir: PathBuf,
    pub report: PathBuf,
    pub fail_above: Option<f64>,
    pub norm: NormKind,
}

impl Outputs {
    fn new(args: OutputArgs, command: &str) -> CliResult<Self> {
        if let Some(t) = args.fail_above {
            if !(t >= 0.0) {
                return Err(CliError::domain(
                    "--fail-above",
                    format!("must be non-negative, got {t}"),
                ));
            }
        }
        Ok(Self {
            report: output_path(args.report.as_deref(), &args.out_dir, &format!("{command}.json")),
            out_dir: args.out_dir,
            fail_above: args.fail_above,
            norm: args.norm,
        })
    }

    fn verification(&self, what: &str, list: &[ResidualNorms]) -> Verification {
        let value = list.iter().map(|n| self.norm.pick(n)).fold(0.0, f64::max);
        let norm = serde_json::to_value(self.norm).expect("norm kind serializes");
        let norm = norm.as_str().unwrap_or_default();
        Verification::new(format!("{what}.{norm}"), value, self.fail_above)
    }
}

/// A problem file with everything derived from it.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub path: PathBuf,
    pub file: ProblemJson,
    pub problem: HerglotzProblem,
    pub options: SolveOptions,
}

impl LoadedProblem {
    fn load(path: &Path, solver: &SolverArgs) -> CliResult<Self> {
        let file: ProblemJson = read_json(path)?;
        let problem = file.build()?;
        let options = solver.resolve(&file.solver)?;
        Ok(Self {
            path: path.to_owned(),
            file,
            problem,
            options,
        })
    }

    fn summary(&self) -> ProblemSummary {
        ProblemSummary::new(&self.file, &self.problem)
    }
}

#[derive(Debug, Clone)]
pub enum OscillatorMode {
    Single { out: PathBuf },
    Sweep { alphas: Vec<f64> },
}

/// A validated `herglotz` invocation.
#[derive(Debug, Clone)]
pub enum RunConfig {
    Solve {
        problem: LoadedProblem,
        nodes: usize,
        out: PathBuf,
        seed: u64,
        output: Outputs,
    },
    Verify {
        problem: LoadedProblem,
        solution_path: PathBuf,
        solution: GridFunction,
        seed: u64,
        probe: ProbeMode,
        probe_delta: f64,
        output: Outputs,
    },
    Noether {
        problem: LoadedProblem,
        solution_path: PathBuf,
        solution: GridFunction,
        generator: TransformationFamily,
        s_step: f64,
        probes: usize,
        seed: u64,
        output: Outputs,
    },
    Oscillator {
        params: OscillatorParams,
        mode: OscillatorMode,
        nodes: usize,
        options: SolveOptions,
        jobs: Option<usize>,
        output: Outputs,
    },
    Convergence {
        problem: LoadedProblem,
        nodes: usize,
        output: Outputs,
    },
}

pub fn parse_config<I, T>(args: I) -> CliResult<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args)?.command {
        Command::Solve(a) => Ok(RunConfig::Solve {
            problem: LoadedProblem::load(&a.config, &a.solver)?,
            nodes: a.nodes,
            out: output_path(a.out.as_deref(), &a.output.out_dir, "solution.csv"),
            seed: a.seed,
            output: Outputs::new(a.output, "solve")?,
        }),
        Command::Verify(a) => {
            let problem = LoadedProblem::load(&a.config, &SolverArgs::default())?;
            let probe_delta = a.probe_delta.unwrap_or(10.0 * problem.options.fd_step);
            if !(probe_delta > 0.0) {
                return Err(CliError::domain("--probe-delta", "must be positive"));
            }
            Ok(RunConfig::Verify {
                problem,
                solution: read_grid_function(&a.solution)?,
                solution_path: a.solution,
                seed: a.seed,
                probe: a.probe,
                probe_delta,
                output: Outputs::new(a.output, "verify")?,
            })
        }
        Command::Noether(a) => {
            let problem = LoadedProblem::load(&a.config, &SolverArgs::default())?;
            let dim = problem.problem.dim();
            let generator = match (a.generator.as_str(), a.direction.as_deref()) {
                ("translation", d) => {
                    let direction = match d {
                        Some(s) => parse_list(s).map_err(|e| CliError::domain("--direction", e))?,
                        None => vec![1.0; dim],
                    };
                    TransformationFamily::translation(direction).map_err(|e| CliError::domain("--direction", e))?
                }
                (_, Some(_)) => {
                    return Err(CliError::Conflict(
                        "`--direction` applies only to `--generator translation`".into(),
                    ))
                }
                ("scaling", None) => TransformationFamily::scaling(dim),
                (path, None) => TransformationFamily::from_table(read_grid_function(Path::new(path))?),
            };
            if generator.dim() != dim {
                return Err(CliError::domain(
                    "--generator",
                    format!("acts on {} components, the problem has {dim}", generator.dim()),
                ));
            }
            Ok(RunConfig::Noether {
                problem,
                solution: read_grid_function(&a.solution)?,
                solution_path: a.solution,
                generator,
                s_step: a.s_step,
                probes: a.probes,
                seed: a.seed,
                output: Outputs::new(a.output, "noether")?,
            })
        }
        Command::Oscillator(a) => parse_oscillator(a),
        Command::Convergence(a) => Ok(RunConfig::Convergence {
            problem: LoadedProblem::load(&a.config, &a.solver)?,
            nodes: a.nodes,
            output: Outputs::new(a.output, "convergence")?,
        }),
    }
}

fn parse_oscillator(a: OscillatorArgs) -> CliResult<RunConfig> {
    let alphas = a
        .sweep
        .as_deref()
        .map(|s| parse_list(s).map_err(|e| CliError::domain("--sweep", e)))
        .transpose()?;
    if let Some(list) = &alphas {
        for &alpha in list {
            FractionalOrder::new(alpha).map_err(|e| CliError::domain("--sweep", e))?;
        }
    }
    let order = match &alphas {
        // Rows set their own order; the classical order validates the rest.
        Some(_) => Order::Classical,
        None => order_from(a.alpha, a.classical, &FLAG_FIELDS)?.map_or(Order::Classical, Order::Fractional),
    };
    if a.classical && a.kernel.is_some() {
        return Err(CliError::Conflict("`--kernel` has no effect with `--classical`".into()));
    }
    let kernel = a.kernel.as_ref().map(|k| k.build("--kernel")).transpose()?.flatten();
    let params = OscillatorParams {
        mass: a.m,
        stiffness: a.k,
        lambda0: a.lambda0,
        order,
        kernel,
        b: a.b,
        x0: a.x0,
        xb: a.xb,
        z0: a.z0,
    };
    params.validate().map_err(|e| CliError::domain("oscillator", e))?;
    params.operator_config().map_err(|e| CliError::domain("--kernel", e))?;
    if a.jobs == Some(0) {
        return Err(CliError::domain("--jobs", "must be at least 1"));
    }
    let mode = match alphas {
        Some(alphas) => {
            if a.out.is_some() {
                return Err(CliError::Conflict(
                    "`--out` names a single trajectory; a sweep writes one per α".into(),
                ));
            }
            OscillatorMode::Sweep { alphas }
        }
        None => OscillatorMode::Single {
            out: output_path(a.out.as_deref(), &a.output.out_dir, "oscillator.csv"),
        },
    };
    Ok(RunConfig::Oscillator {
        options: a.solver.resolve(&Default::default())?,
        params,
        mode,
        nodes: a.nodes,
        jobs: a.jobs,
        output: Outputs::new(a.output, "oscillator")?,
    })
}

#[derive(Serialize)]
struct PartialsSummary {
    seed: u64,
    probes: usize,
    worst_relative_error: f64,
    worst_slot: String,
}

#[derive(Serialize)]
struct SolveReport {
    problem: ProblemSummary,
    nodes: usize,
    z_b: f64,
    converged: bool,
    termination: &'static str,
    iterations: usize,
    final_gradient_norm: f64,
    el_residual: Vec<Norms>,
    transversality: Option<Vec<Transversality>>,
    partials_check: PartialsSummary,
    verification: Verification,
}

#[derive(Serialize)]
struct ProbeWorst {
    node: usize,
    component: usize,
    improvement: f64,
}

#[derive(Serialize)]
struct ProbeSummary {
    mode: ProbeMode,
    delta: f64,
    /// Largest objective gain per unit perturbation; `null` when nothing
    /// was probed.
    max_improvement_rate: Option<f64>,
    worst: Option<ProbeWorst>,
}

#[derive(Serialize)]
struct VerifyReport {
    problem: ProblemSummary,
    nodes: usize,
    z_b: f64,
    boundary_defect: f64,
    el_residual: Vec<Norms>,
    transversality: Option<Vec<Transversality>>,
    partials_check: PartialsSummary,
    stationarity: ProbeSummary,
    verification: Verification,
}

#[derive(Serialize)]
struct DefectSummary {
    theta: f64,
    /// `|θ| / |z(b)|`.
    relative: f64,
}

#[derive(Serialize)]
struct NoetherSummary {
    all: f64,
    interior: f64,
    core: f64,
    integral: f64,
}

#[derive(Serialize)]
struct IdentitySummary {
    theta_lambda: f64,
    integral: f64,
    relative_error: f64,
    noise_floor: f64,
}

#[derive(Serialize)]
struct RandomIdentitySummary {
    seed: u64,
    count: usize,
    worst_relative_error: Option<f64>,
}

#[derive(Serialize)]
struct NoetherReport {
    problem: ProblemSummary,
    nodes: usize,
    generator: String,
    z_b: f64,
    invariance_defect: DefectSummary,
    noether_residual: NoetherSummary,
    variational_identity: IdentitySummary,
    random_probes: RandomIdentitySummary,
    verification: Verification,
}

#[derive(Serialize)]
struct OscillatorSummary {
    mass: f64,
    stiffness: f64,
    lambda0: f64,
    b: f64,
    x0: f64,
    xb: Option<f64>,
    z0: f64,
}

impl From<&OscillatorParams> for OscillatorSummary {
    fn from(p: &OscillatorParams) -> Self {
        Self {
            mass: p.mass,
            stiffness: p.stiffness,
            lambda0: p.lambda0,
            b: p.b,
            x0: p.x0,
            xb: p.xb,
            z0: p.z0,
        }
    }
}

#[derive(Serialize)]
struct OscillatorSolve {
    operator: OperatorSummary,
    z_b: f64,
    converged: bool,
    termination: &'static str,
    iterations: usize,
    final_gradient_norm: f64,
    el_residual: Vec<Norms>,
    transversality: Option<Vec<Transversality>>,
    /// Relative gap between the generic and the specialized residual.
    residual_cross_check: f64,
    /// `max |λ(t) − e^{−λ0 t}|`.
    lambda_deviation: f64,
    distance_to_classical: Option<f64>,
}

#[derive(Serialize)]
struct SweepRowSummary {
    alpha: f64,
    status: &'static str,
    error: Option<String>,
    z_b: Option<f64>,
    converged: Option<bool>,
    iterations: Option<usize>,
    final_gradient_norm: Option<f64>,
    el_residual: Option<Norms>,
    distance_to_classical: Option<f64>,
}

#[derive(Serialize)]
struct SweepSummary {
    rows: Vec<SweepRowSummary>,
    classical_z_b: Option<f64>,
    max_successive_difference: Option<f64>,
    distance_decreasing: bool,
}

#[derive(Serialize)]
struct OscillatorReport {
    params: OscillatorSummary,
    nodes: usize,
    solve: Option<OscillatorSolve>,
    sweep: Option<SweepSummary>,
    verification: Verification,
}

#[derive(Serialize)]
struct LevelSummary {
    nodes: usize,
    z_b: f64,
    converged: bool,
    iterations: usize,
    final_gradient_norm: f64,
    el_residual: Vec<Norms>,
}

#[derive(Serialize)]
struct ConvergenceSummary {
    problem: ProblemSummary,
    levels: Vec<LevelSummary>,
    z_b_differences: Vec<f64>,
    trajectory_differences: Vec<f64>,
    observed_order: Option<f64>,
    residual_not_decreasing: bool,
    verification: Verification,
}

fn not_converged(what: &str, r: &SolveResult) -> CliError {
    CliError::Numerical(format!(
        "{what} stopped on {} after {} iterations with gradient norm {:e}",
        r.termination.as_str(),
        r.iterations,
        r.final_gradient_norm
    ))
}

fn partials_summary(prob: &HerglotzProblem, seed: u64) -> CliResult<PartialsSummary> {
    let r = check_partials(prob, 16, seed)?;
    Ok(PartialsSummary {
        seed: r.seed,
        probes: r.probes,
        worst_relative_error: r.worst_relative_error,
        worst_slot: r.worst_slot,
    })
}

pub fn run(cfg: RunConfig) -> CliResult<()> {
    match cfg {
        RunConfig::Solve {
            problem,
            nodes,
            out,
            seed,
            output,
        } => run_solve(problem, nodes, out, seed, output),
        RunConfig::Verify {
            problem,
            solution_path,
            solution,
            seed,
            probe,
            probe_delta,
            output,
        } => run_verify(problem, solution_path, solution, seed, probe, probe_delta, output),
        RunConfig::Noether {
            problem,
            solution_path,
            solution,
            generator,
            s_step,
            probes,
            seed,
            output,
        } => run_noether(
            problem,
            solution_path,
            solution,
            generator,
            s_step,
            probes,
            seed,
            output,
        ),
        RunConfig::Oscillator {
            params,
            mode,
            nodes,
            options,
            jobs,
            output,
        } => match jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::domain("--jobs", e))?
                .install(|| run_oscillator(params, mode, nodes, options, Some(n), output)),
            None => run_oscillator(params, mode, nodes, options, None, output),
        },
        RunConfig::Convergence { problem, nodes, output } => run_convergence(problem, nodes, output),
    }
}

fn run_solve(problem: LoadedProblem, nodes: usize, out: PathBuf, seed: u64, output: Outputs) -> CliResult<()> {
    let prob = &problem.problem;
    let grid = prob.grid(nodes).map_err(|e| CliError::domain("--nodes", e))?;
    let r = solve_direct(prob, &grid, &problem.options)?;
    write_csv(&out, &r.evaluation.x)?;
    let body = SolveReport {
        problem: problem.summary(),
        nodes,
        z_b: r.evaluation.z_b,
        converged: r.converged,
        termination: r.termination.as_str(),
        iterations: r.iterations,
        final_gradient_norm: r.final_gradient_norm,
        el_residual: norms(&r.el_residual_norms),
        transversality: transversality(&r.transversality_residuals),
        partials_check: partials_summary(prob, seed)?,
        verification: output.verification("el_residual", &r.el_residual_norms),
    };
    let mut meta = Meta::new("herglotz", "solve").input("config", &problem.path);
    meta.outputs.insert("solution".into(), out.display().to_string());
    write_text(&output.report, &to_json(&meta, &body))?;
    if !r.converged {
        return Err(not_converged("solver", &r));
    }
    body.verification.outcome()
}

fn run_verify(
    problem: LoadedProblem,
    solution_path: PathBuf,
    x: GridFunction,
    seed: u64,
    probe: ProbeMode,
    probe_delta: f64,
    output: Outputs,
) -> CliResult<()> {
    let prob = &problem.problem;
    if x.dim() != prob.dim() {
        return Err(CliError::Config(format!(
            "{} has {} components, the problem has {}",
            solution_path.display(),
            x.dim(),
            prob.dim()
        )));
    }
    let ev = evaluate_trajectory(prob, &x)?;
    let last = x.len() - 1;
    let mut boundary_defect: f64 = 0.0;
    for c in 0..prob.dim() {
        boundary_defect = boundary_defect.max((x.get(0, c) - prob.x_a()[c]).abs());
        if let Some(xb) = prob.x_b()[c] {
            boundary_defect = boundary_defect.max((x.get(last, c) - xb).abs());
        }
    }
    let residual_norms = ResidualNorms::of(&el_residual(prob, &ev)?);
    let tc = if prob.free_components().is_empty() {
        None
    } else {
        Some(transversality_residual(prob, &ev)?)
    };
    let stationarity = match probe {
        ProbeMode::Off => ProbeSummary {
            mode: probe,
            delta: probe_delta,
            max_improvement_rate: None,
            worst: None,
        },
        _ => {
            let p = stationarity_probe(prob, &x, probe_delta, probe == ProbeMode::Endpoints)?;
            let worst = p
                .entries
                .iter()
                .max_by(|a, b| a.improvement.total_cmp(&b.improvement))
                .map(|e| ProbeWorst {
                    node: e.node,
                    component: e.component,
                    improvement: e.improvement,
                });
            ProbeSummary {
                mode: probe,
                delta: probe_delta,
                max_improvement_rate: worst.as_ref().map(|_| p.max_improvement_rate()),
                worst,
            }
        }
    };
    let body = VerifyReport {
        problem: problem.summary(),
        nodes: x.len(),
        z_b: ev.z_b,
        boundary_defect,
        el_residual: norms(&residual_norms),
        transversality: transversality(&tc),
        partials_check: partials_summary(prob, seed)?,
        stationarity,
        verification: output.verification("el_residual", &residual_norms),
    };
    let meta = Meta::new("herglotz", "verify")
        .input("config", &problem.path)
        .input("solution", &solution_path);
    write_text(&output.report, &to_json(&meta, &body))?;
    body.verification.outcome()
}

#[allow(clippy::too_many_arguments)]
fn run_noether(
    problem: LoadedProblem,
    solution_path: PathBuf,
    x: GridFunction,
    generator: TransformationFamily,
    s_step: f64,
    probes: usize,
    seed: u64,
    output: Outputs,
) -> CliResult<()> {
    let prob = &problem.problem;
    let ev = evaluate_trajectory(prob, &x)?;
    let theta = invariance_defect(prob, &x, &generator, s_step).map_err(|e| CliError::domain("--s-step", e))?;
    let residual = noether_residual(prob, &ev, &generator)?;
    let identity = variational_identity(prob, &x, &generator, s_step)?;
    let mut worst: Option<f64> = None;
    for k in 0..probes as u64 {
        let (px, pxi) = random_probe(prob, x.len(), seed.wrapping_add(k))?;
        let e = variational_identity(prob, &px, &pxi, s_step)?.relative_error;
        worst = Some(worst.map_or(e, |w| w.max(e)));
    }
    let body = NoetherReport {
        problem: problem.summary(),
        nodes: x.len(),
        generator: generator.name().to_owned(),
        z_b: ev.z_b,
        invariance_defect: DefectSummary {
            theta,
            relative: if ev.z_b == 0.0 {
                theta.abs()
            } else {
                theta.abs() / ev.z_b.abs()
            },
        },
        noether_residual: NoetherSummary {
            all: residual.norms.all,
            interior: residual.norms.interior,
            core: residual.norms.core,
            integral: residual.integral,
        },
        variational_identity: IdentitySummary {
            theta_lambda: identity.theta_lambda,
            integral: identity.integral,
            relative_error: identity.relative_error,
            noise_floor: identity.noise_floor,
        },
        random_probes: RandomIdentitySummary {
            seed,
            count: probes,
            worst_relative_error: worst,
        },
        verification: output.verification("noether_residual", &[residual.norms]),
    };
    let meta = Meta::new("herglotz", "noether")
        .input("config", &problem.path)
        .input("solution", &solution_path);
    write_text(&output.report, &to_json(&meta, &body))?;
    body.verification.outcome()
}

fn run_oscillator(
    params: OscillatorParams,
    mode: OscillatorMode,
    nodes: usize,
    options: SolveOptions,
    jobs: Option<usize>,
    output: Outputs,
) -> CliResult<()> {
    let mut meta = Meta::new("herglotz", "oscillator");
    let (solve, sweep, verification, failure) = match mode {
        OscillatorMode::Single { out } => {
            let prob = oscillator_problem(&params)?;
            let grid = prob.grid(nodes).map_err(|e| CliError::domain("--nodes", e))?;
            let r = solve_direct(&prob, &grid, &options)?;
            write_csv(&out, &r.evaluation.x)?;
            meta.outputs.insert("solution".into(), out.display().to_string());
            let cross = cross_check_residuals(&params, &r.evaluation)?;
            let lambda_deviation = grid
                .nodes()
                .enumerate()
                .map(|(i, t)| (r.evaluation.lambda.get(i, 0) - (-params.lambda0 * t).exp()).abs())
                .fold(0.0, f64::max);
            let distance_to_classical = classical_reference(&params).ok().map(|c| {
                let reference = c.sample(grid);
                r.evaluation
                    .x
                    .add_scaled(&reference, -1.0)
                    .map(|d| d.max_abs())
                    .unwrap_or(f64::NAN)
            });
            let verification = output.verification("el_residual", &r.el_residual_norms);
            let failure = (!r.converged).then(|| not_converged("solver", &r));
            let solve = OscillatorSolve {
                operator: OperatorSummary::from(prob.op()),
                z_b: r.evaluation.z_b,
                converged: r.converged,
                termination: r.termination.as_str(),
                iterations: r.iterations,
                final_gradient_norm: r.final_gradient_norm,
                el_residual: norms(&r.el_residual_norms),
                transversality: transversality(&r.transversality_residuals),
                residual_cross_check: cross.relative_difference,
                lambda_deviation,
                distance_to_classical,
            };
            (Some(solve), None, verification, failure)
        }
        OscillatorMode::Sweep { alphas } => {
            meta.jobs = Some(jobs.unwrap_or_else(rayon::current_num_threads));
            let table = alpha_sweep(&params, &alphas, nodes, &options)?;
            let (summary, failure) = write_sweep(&table, &output.out_dir, &mut meta)?;
            let row_norms: Vec<ResidualNorms> = table
                .rows
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .map(|e| e.el_residual_norms)
                .collect();
            let verification = output.verification("el_residual", &row_norms);
            (None, Some(summary), verification, failure)
        }
    };
    let body = OscillatorReport {
        params: OscillatorSummary::from(&params),
        nodes,
        solve,
        sweep,
        verification,
    };
    write_text(&output.report, &to_json(&meta, &body))?;
    if let Some(e) = failure {
        return Err(e);
    }
    body.verification.outcome()
}

fn write_sweep(table: &SweepTable, out_dir: &Path, meta: &mut Meta) -> CliResult<(SweepSummary, Option<CliError>)> {
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut failures = Vec::new();
    for row in &table.rows {
        match &row.outcome {
            Ok(e) => {
                let path = out_dir.join(format!("oscillator_alpha_{}.csv", row.alpha));
                write_csv(&path, &e.solution)?;
                meta.outputs
                    .insert(format!("alpha_{}", row.alpha), path.display().to_string());
                if !e.converged {
                    failures.push(format!("α = {} did not converge", row.alpha));
                }
                rows.push(SweepRowSummary {
                    alpha: row.alpha,
                    status: "ok",
                    error: None,
                    z_b: Some(e.z_b),
                    converged: Some(e.converged),
                    iterations: Some(e.iterations),
                    final_gradient_norm: Some(e.final_gradient_norm),
                    el_residual: Some(e.el_residual_norms.into()),
                    distance_to_classical: e.distance_to_classical,
                });
            }
            Err(msg) => {
                failures.push(format!("α = {}: {msg}", row.alpha));
                rows.push(SweepRowSummary {
                    alpha: row.alpha,
                    status: "failed",
                    error: Some(msg.clone()),
                    z_b: None,
                    converged: None,
                    iterations: None,
                    final_gradient_norm: None,
                    el_residual: None,
                    distance_to_classical: None,
                });
            }
        }
    }
    if let Some(c) = &table.classical {
        let path = out_dir.join("oscillator_classical.csv");
        write_csv(&path, &c.solution)?;
        meta.outputs.insert("classical".into(), path.display().to_string());
    }
    let summary = SweepSummary {
        rows,
        classical_z_b: table.classical.as_ref().map(|c| c.z_b),
        max_successive_difference: table.max_successive_difference,
        distance_decreasing: table.distance_decreasing(),
    };
    let failure = (!failures.is_empty()).then(|| CliError::Numerical(failures.join("; ")));
    Ok((summary, failure))
}

fn run_convergence(problem: LoadedProblem, nodes: usize, output: Outputs) -> CliResult<()> {
    let prob = &problem.problem;
    let grid = prob.grid(nodes).map_err(|e| CliError::domain("--nodes", e))?;
    let report = refine_and_verify(prob, &grid, &problem.options)?;
    let mut meta = Meta::new("herglotz", "convergence").input("config", &problem.path);
    for level in &report.levels {
        let path = output.out_dir.join(format!("convergence_{}.csv", level.nodes));
        write_csv(&path, &level.solution)?;
        meta.outputs
            .insert(format!("level_{}", level.nodes), path.display().to_string());
    }
    let finest = report
        .levels
        .last()
        .map(|l| l.el_residual_norms.clone())
        .unwrap_or_default();
    let body = ConvergenceSummary {
        problem: problem.summary(),
        levels: report
            .levels
            .iter()
            .map(|l| LevelSummary {
                nodes: l.nodes,
                z_b: l.z_b,
                converged: l.converged,
                iterations: l.iterations,
                final_gradient_norm: l.final_gradient_norm,
                el_residual: norms(&l.el_residual_norms),
            })
            .collect(),
        z_b_differences: report.z_b_differences.clone(),
        trajectory_differences: report.trajectory_differences.clone(),
        observed_order: report.observed_order,
        residual_not_decreasing: report.residual_not_decreasing,
        verification: output.verification("el_residual", &finest),
    };
    write_text(&output.report, &to_json(&meta, &body))?;
    if let Some(l) = report.levels.iter().find(|l| !l.converged) {
        return Err(CliError::Numerical(format!(
            "the solve on {} nodes did not converge",
            l.nodes
        )));
    }
    body.verification.outcome()
}

pub fn main() -> ExitCode {
    match parse_config(std::env::args_os()).and_then(run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::EXIT_CONFIG;

    fn oscillator(args: &[&str]) -> CliResult<RunConfig> {
        parse_config(["herglotz", "oscillator"].iter().chain(args))
    }

    #[test]
    fn minimal_oscillator_flags_fill_defaults() {
        match oscillator(&["--alpha", "0.5"]).unwrap() {
            RunConfig::Oscillator {
                params,
                nodes,
                options,
                mode,
                jobs,
                output,
            } => {
                assert_eq!(nodes, 201);
                assert_eq!(options, SolveOptions::default());
                assert_eq!(params.order, Order::Fractional(FractionalOrder::new(0.5).unwrap()));
                assert_eq!(
                    (params.mass, params.stiffness, params.b, params.xb),
                    (1.0, 1.0, 1.0, None)
                );
                assert!(matches!(mode, OscillatorMode::Single { .. }));
                assert_eq!(jobs, None);
                assert_eq!(output.fail_above, None);
                assert!(output.report.ends_with("oscillator.json"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn alpha_out_of_range_names_the_flag() {
        match oscillator(&["--alpha", "1.5"]) {
            Err(CliError::Domain { field, .. }) => assert_eq!(field, "--alpha"),
            other => panic!("{other:?}"),
        }
        match oscillator(&["--sweep", "0.5,1.2"]) {
            Err(CliError::Domain { field, .. }) => assert_eq!(field, "--sweep"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn order_flags_are_exclusive_and_required() {
        for args in [
            &["--alpha", "0.5", "--classical"][..],
            &["--alpha", "0.5", "--sweep", "0.9"][..],
            &[][..],
        ] {
            let e = oscillator(args).unwrap_err();
            assert!(matches!(e, CliError::Usage(_)), "{args:?}");
            assert_eq!(e.exit_code(), EXIT_CONFIG);
        }
    }

    #[test]
    fn kernel_conflicts_with_classical() {
        assert!(matches!(
            oscillator(&["--classical", "--kernel", "exponential:1"]),
            Err(CliError::Conflict(_))
        ));
    }

    #[test]
    fn bad_parameters_are_config_errors() {
        for args in [
            &["--alpha", "0.5", "--m", "0"][..],
            &["--alpha", "0.5", "--jobs", "0"][..],
        ] {
            assert_eq!(oscillator(args).unwrap_err().exit_code(), EXIT_CONFIG, "{args:?}");
        }
    }
}
