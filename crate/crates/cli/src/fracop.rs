//! `fracop`: apply `K`, `B` or `A` to a sampled function, or check the
//! integration-by-parts identity on a pair of them.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use herglotz_core::operators::{apply_a, apply_b, apply_k, ibp_residual};
use herglotz_core::{GridFunction, OperatorConfig, ParameterSet};
use serde::Serialize;

use crate::config::{operator_config, output_path, parse_pset, read_grid_function, KernelJson, FLAG_FIELDS};
use crate::error::{CliError, CliResult};
use crate::report::{to_json, write_csv, write_text, Meta, OperatorSummary, Verification};

#[derive(Debug, Parser)]
#[command(
    name = "fracop",
    version,
    about = "Generalized fractional operators with memory kernels on sampled functions"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply K, B or A to every component of a CSV grid function
    Apply(ApplyArgs),
    /// Check ∫ g·B_P[f] = ∫ f·A_{P*}[g] + boundary term for a pair of functions
    IbpCheck(IbpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OperatorArgs {
    /// Order α ∈ (0, 1) of the derivatives
    #[arg(long, conflicts_with = "classical", required_unless_present = "classical")]
    pub alpha: Option<f64>,
    /// Use the α → 1 limits: K = (p+q)·identity, B = (p+q)·d/dt, A = (p−q)·d/dt
    #[arg(long)]
    pub classical: bool,
    /// Kernel of K^{1−α}: caputo, power-law[:ALPHA], exponential:RATE[,SCALE] or table:PATH [default: caputo]
    #[arg(long, value_name = "SPEC")]
    pub kernel: Option<KernelJson>,
    /// Parameter set a,b,p,q; [a, b] must be the interval of the input grid
    #[arg(long, value_name = "A,B,P,Q", value_parser = parse_pset, allow_hyphen_values = true)]
    pub pset: [f64; 4],
}

impl OperatorArgs {
    pub fn build(&self) -> CliResult<OperatorConfig> {
        let [a, b, p, q] = self.pset;
        let pset = ParameterSet::new(a, b, p, q).map_err(|e| CliError::domain("--pset", e))?;
        operator_config(self.alpha, self.classical, self.kernel.as_ref(), pset, &FLAG_FIELDS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum OpKind {
    /// The nonlocal integral K_P
    #[value(name = "K")]
    K,
    /// The Caputo-type derivative B_P = K_P ∘ d/dt
    #[value(name = "B")]
    B,
    /// The Riemann–Liouville-type derivative A_P = d/dt ∘ K_P
    #[value(name = "A")]
    A,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[command(flatten)]
    operator: OperatorArgs,
    /// Operator to apply
    #[arg(long, value_enum, ignore_case = true)]
    op: OpKind,
    /// Input CSV with header t,x_1,...,x_d
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    /// Output CSV [default: <out-dir>/<op>.csv]
    #[arg(long, value_name = "CSV")]
    output: Option<PathBuf>,
    /// Directory for outputs whose path is not given explicitly
    #[arg(long, env = "HERGLOTZ_OUT_DIR", default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,
    /// Also write a JSON summary here
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IbpArgs {
    #[command(flatten)]
    operator: OperatorArgs,
    /// CSV of f (one component)
    #[arg(long, value_name = "CSV")]
    f: PathBuf,
    /// CSV of g (one component), on the same grid as f
    #[arg(long, value_name = "CSV")]
    g: PathBuf,
    /// Also write the JSON printed on stdout to this file
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
    /// Exit with status 4 when |residual| exceeds this
    #[arg(long, value_name = "TOL")]
    fail_above: Option<f64>,
}

/// A validated `fracop` invocation.
#[derive(Debug)]
pub enum RunConfig {
    Apply {
        op: OperatorConfig,
        which: OpKind,
        input_path: PathBuf,
        input: GridFunction,
        output: PathBuf,
        report: Option<PathBuf>,
    },
    IbpCheck {
        op: OperatorConfig,
        f_path: PathBuf,
        g_path: PathBuf,
        f: GridFunction,
        g: GridFunction,
        report: Option<PathBuf>,
        fail_above: Option<f64>,
    },
}

pub fn parse_config<I, T>(args: I) -> CliResult<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Apply(a) => {
            let name = match a.op {
                OpKind::K => "K.csv",
                OpKind::B => "B.csv",
                OpKind::A => "A.csv",
            };
            Ok(RunConfig::Apply {
                op: a.operator.build()?,
                which: a.op,
                input: read_grid_function(&a.input)?,
                output: output_path(a.output.as_deref(), &a.out_dir, name),
                input_path: a.input,
                report: a.report,
            })
        }
        Command::IbpCheck(a) => Ok(RunConfig::IbpCheck {
            op: a.operator.build()?,
            f: read_grid_function(&a.f)?,
            g: read_grid_function(&a.g)?,
            f_path: a.f,
            g_path: a.g,
            report: a.report,
            fail_above: a.fail_above,
        }),
    }
}

#[derive(Serialize)]
struct ApplyReport {
    operator: OperatorSummary,
    op: OpKind,
    nodes: usize,
    dim: usize,
    max_abs_input: f64,
    max_abs_output: f64,
}

#[derive(Serialize)]
struct IbpReport {
    operator: OperatorSummary,
    nodes: usize,
    lhs: f64,
    rhs: f64,
    boundary: f64,
    residual: f64,
    verification: Verification,
}

pub fn run(cfg: RunConfig) -> CliResult<()> {
    match cfg {
        RunConfig::Apply {
            op,
            which,
            input_path,
            input,
            output,
            report,
        } => {
            let result = match which {
                OpKind::K => apply_k(&op, &input)?,
                OpKind::B => apply_b(&op, &input)?,
                OpKind::A => apply_a(&op, &input)?,
            };
            write_csv(&output, &result)?;
            if let Some(path) = report {
                let mut meta = Meta::new("fracop", "apply").input("input", &input_path);
                meta.outputs.insert("output".into(), output.display().to_string());
                let body = ApplyReport {
                    operator: OperatorSummary::from(&op),
                    op: which,
                    nodes: input.len(),
                    dim: input.dim(),
                    max_abs_input: input.max_abs(),
                    max_abs_output: result.max_abs(),
                };
                write_text(&path, &to_json(&meta, &body))?;
            }
            Ok(())
        }
        RunConfig::IbpCheck {
            op,
            f_path,
            g_path,
            f,
            g,
            report,
            fail_above,
        } => {
            let check = ibp_residual(&op, &f, &g)?;
            let verification = Verification::new("ibp_residual", check.residual.abs(), fail_above);
            let body = IbpReport {
                operator: OperatorSummary::from(&op),
                nodes: f.len(),
                lhs: check.lhs,
                rhs: check.rhs,
                boundary: check.boundary,
                residual: check.residual,
                verification,
            };
            let meta = Meta::new("fracop", "ibp-check").input("f", &f_path).input("g", &g_path);
            let json = to_json(&meta, &body);
            print!("{json}");
            if let Some(path) = report {
                write_text(&path, &json)?;
            }
            body.verification.outcome()
        }
    }
}

pub fn main() -> ExitCode {
    match parse_config(std::env::args_os()).and_then(run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
