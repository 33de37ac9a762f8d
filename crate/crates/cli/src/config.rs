//! Problem files, kernel specifications and solver settings.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use herglotz_core::herglotz::{Monomial, Polynomial, Quadratic};
use herglotz_core::solver::InitialGuess;
use herglotz_core::{
    Extremum, FractionalOrder, GridFunction, HerglotzProblem, KernelSpec, Lagrangian, OperatorConfig, ParameterSet,
    SolveOptions,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A memory kernel as written in problem files.
///
/// `power_law` with `alpha` is `s^(-alpha)/Γ(1-alpha)`, the kernel that makes
/// `B` a Caputo derivative of order `alpha`; without `alpha` the operator's
/// own order is used, which is the same as `caputo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelJson {
    Caputo,
    PowerLaw {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    Exponential {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Tabulated {
        samples: Vec<(f64, f64)>,
    },
}

fn one() -> f64 {
    1.0
}

impl KernelJson {
    /// `None` stands for the power-law kernel matched to the operator order.
    pub fn build(&self, field: &str) -> CliResult<Option<KernelSpec>> {
        let spec = match self {
            KernelJson::Caputo | KernelJson::PowerLaw { alpha: None } => return Ok(None),
            KernelJson::PowerLaw { alpha: Some(a) } => KernelSpec::power_law(1.0 - a),
            KernelJson::Exponential { rate, scale } => KernelSpec::exponential(*rate, *scale),
            KernelJson::Tabulated { samples } => KernelSpec::tabulated(samples.clone()),
        };
        spec.map(Some).map_err(|e| CliError::domain(field, e))
    }
}

/// `--kernel` syntax: `caputo`, `power-law:ALPHA`, `exponential:RATE[,SCALE]`
/// or `table:PATH` (CSV with columns `s,k`).
impl FromStr for KernelJson {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, arg) = match s.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (s, None),
        };
        let number = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        match (family, arg) {
            ("caputo", None) => Ok(KernelJson::Caputo),
            ("power-law", None) => Ok(KernelJson::PowerLaw { alpha: None }),
            ("power-law", Some(a)) => Ok(KernelJson::PowerLaw {
                alpha: Some(number(a)?),
            }),
            ("exponential", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                match parts.as_slice() {
                    [rate] => Ok(KernelJson::Exponential {
                        rate: number(rate)?,
                        scale: 1.0,
                    }),
                    [rate, scale] => Ok(KernelJson::Exponential {
                        rate: number(rate)?,
                        scale: number(scale)?,
                    }),
                    _ => Err("expected exponential:RATE[,SCALE]".into()),
                }
            }
            ("table", Some(path)) => {
                read_kernel_table(Path::new(path)).map(|samples| KernelJson::Tabulated { samples })
            }
            _ => Err(format!(
                "unknown kernel `{s}`; expected caputo, power-law[:ALPHA], exponential:RATE[,SCALE] or table:PATH"
            )),
        }
    }
}

fn read_kernel_table(path: &Path) -> Result<Vec<(f64, f64)>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    reader
        .deserialize::<(f64, f64)>()
        .map(|row| row.map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

/// Operator order, kernel and parameter set as written in problem files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub classical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelJson>,
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

/// Field names used in error messages, so the same validation serves both
/// problem files and flags.
pub struct OperatorFields {
    pub alpha: &'static str,
    pub classical: &'static str,
    pub kernel: &'static str,
    pub pset: &'static str,
}

pub const FILE_FIELDS: OperatorFields = OperatorFields {
    alpha: "operator.alpha",
    classical: "operator.classical",
    kernel: "operator.kernel",
    pset: "operator",
};

pub const FLAG_FIELDS: OperatorFields = OperatorFields {
    alpha: "--alpha",
    classical: "--classical",
    kernel: "--kernel",
    pset: "--pset",
};

pub fn order_from(alpha: Option<f64>, classical: bool, names: &OperatorFields) -> CliResult<Option<FractionalOrder>> {
    match (alpha, classical) {
        (Some(_), true) => Err(CliError::Conflict(format!(
            "`{}` and `{}` are mutually exclusive",
            names.alpha, names.classical
        ))),
        (None, false) => Err(CliError::Config(format!(
            "one of `{}` or `{}` is required",
            names.alpha, names.classical
        ))),
        (None, true) => Ok(None),
        (Some(a), false) => FractionalOrder::new(a)
            .map(Some)
            .map_err(|e| CliError::domain(names.alpha, e)),
    }
}

pub fn operator_config(
    alpha: Option<f64>,
    classical: bool,
    kernel: Option<&KernelJson>,
    pset: ParameterSet,
    names: &OperatorFields,
) -> CliResult<OperatorConfig> {
    match order_from(alpha, classical, names)? {
        None if kernel.is_some() => Err(CliError::Conflict(format!(
            "`{}` has no effect with `{}`",
            names.kernel, names.classical
        ))),
        None => Ok(OperatorConfig::classical(pset)),
        Some(order) => match kernel.map(|k| k.build(names.kernel)).transpose()?.flatten() {
            None => Ok(OperatorConfig::caputo(order, pset)),
            Some(k) => OperatorConfig::fractional(order, k, pset).map_err(|e| CliError::domain(names.kernel, e)),
        },
    }
}

impl OperatorJson {
    pub fn build(&self, a: f64, b: f64) -> CliResult<OperatorConfig> {
        let pset = ParameterSet::new(a, b, self.p, self.q).map_err(|e| CliError::domain(FILE_FIELDS.pset, e))?;
        operator_config(self.alpha, self.classical, self.kernel.as_ref(), pset, &FILE_FIELDS)
    }
}

/// One term `coef · t^t · Π x_j^x_j · Π v_j^v_j · z^z`; omitted powers are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub coef: f64,
    #[serde(default)]
    pub t: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<u32>>,
    #[serde(default)]
    pub z: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagrangianJson {
    /// `½m|v|² − ½k|x|² + λ0·z`, the damped oscillator with memory.
    #[serde(alias = "oscillator")]
    Quadratic {
        mass: f64,
        #[serde(default)]
        stiffness: f64,
        #[serde(default)]
        coupling: f64,
    },
    Polynomial {
        terms: Vec<TermJson>,
    },
}

impl LagrangianJson {
    pub fn build(&self, dim: usize) -> CliResult<Arc<dyn Lagrangian>> {
        match self {
            LagrangianJson::Quadratic {
                mass,
                stiffness,
                coupling,
            } => {
                if !(mass.is_finite() && stiffness.is_finite() && coupling.is_finite()) {
                    return Err(CliError::domain("lagrangian", "coefficients must be finite"));
                }
                Ok(Arc::new(Quadratic {
                    mass: *mass,
                    stiffness: *stiffness,
                    coupling: *coupling,
                }))
            }
            LagrangianJson::Polynomial { terms } => {
                let monomials = terms
                    .iter()
                    .map(|t| Monomial {
                        coef: t.coef,
                        t_pow: t.t,
                        x_pow: t.x.clone().unwrap_or_else(|| vec![0; dim]),
                        v_pow: t.v.clone().unwrap_or_else(|| vec![0; dim]),
                        z_pow: t.z,
                    })
                    .collect();
                let p = Polynomial::new(dim, monomials).map_err(|e| CliError::domain("lagrangian.terms", e))?;
                Ok(Arc::new(p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumJson {
    #[default]
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessJson {
    LinearInterp,
    ConstantLeft,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<GuessJson>,
}

/// A Herglotz problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemJson {
    #[serde(default)]
    pub a: f64,
    pub b: f64,
    pub operator: OperatorJson,
    pub lagrangian: LagrangianJson,
    pub x_a: Vec<f64>,
    /// `null` entries leave that component free at `b`.
    pub x_b: Vec<Option<f64>>,
    #[serde(default)]
    pub z_a: f64,
    #[serde(default)]
    pub extremum: ExtremumJson,
    #[serde(default)]
    pub solver: SolverJson,
}

impl ProblemJson {
    pub fn build(&self) -> CliResult<HerglotzProblem> {
        let op = self.operator.build(self.a, self.b)?;
        if self.x_a.is_empty() {
            return Err(CliError::domain("x_a", "at least one component is required"));
        }
        if self.x_b.len() != self.x_a.len() {
            return Err(CliError::domain(
                "x_b",
                format!("has {} entries, x_a has {}", self.x_b.len(), self.x_a.len()),
            ));
        }
        let lagrangian = self.lagrangian.build(self.x_a.len())?;
        let prob = HerglotzProblem::new(lagrangian, op, self.x_a.clone(), self.x_b.clone())
            .map_err(|e| CliError::domain("x_a", e))?
            .with_z_a(self.z_a)
            .with_extremum(match self.extremum {
                ExtremumJson::Min => Extremum::Min,
                ExtremumJson::Max => Extremum::Max,
            });
        Ok(prob)
    }
}

/// Parses a JSON file into `T`, sorting failures into malformed text,
/// unknown keys and missing fields.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    parse_json(&text, path)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let quoted = message.split('`').nth(1).map(str::to_owned);
        match (inner.classify(), quoted) {
            (serde_json::error::Category::Data, Some(key)) if message.starts_with("unknown field") => {
                CliError::UnknownKey {
                    path: path.to_owned(),
                    key,
                    at,
                }
            }
            (serde_json::error::Category::Data, Some(field)) if message.starts_with("missing field") => {
                let field = if at == "." { field } else { format!("{at}.{field}") };
                CliError::MissingField {
                    path: path.to_owned(),
                    field,
                }
            }
            _ => CliError::Malformed {
                path: path.to_owned(),
                message: format!("{message} (at `{at}`)"),
            },
        }
    })
}

/// Solver flags; each overrides the corresponding problem-file setting.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Iteration cap of the L-BFGS optimizer [default: 5000]
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<usize>,
    /// Stop when the sup-norm of the objective gradient falls below this [default: 1e-7]
    #[arg(long, value_name = "TOL")]
    pub gradient_tolerance: Option<f64>,
    /// Stop when a step changes no variable by more than this [default: 1e-14]
    #[arg(long, value_name = "TOL")]
    pub step_tolerance: Option<f64>,
    /// Relative step of the finite-difference gradient [default: 1e-6]
    #[arg(long, value_name = "H")]
    pub fd_step: Option<f64>,
    /// Starting trajectory: `linear`, `constant-left` or a solution CSV [default: linear]
    #[arg(long, value_name = "GUESS")]
    pub initial_guess: Option<String>,
}

impl SolverArgs {
    pub fn resolve(&self, file: &SolverJson) -> CliResult<SolveOptions> {
        let mut opts = SolveOptions::default();
        if let Some(n) = self.max_iterations.or(file.max_iterations) {
            opts.max_iterations = n;
        }
        if let Some(t) = self.gradient_tolerance.or(file.gradient_tolerance) {
            opts.gradient_tolerance = t;
        }
        if let Some(t) = self.step_tolerance.or(file.step_tolerance) {
            opts.step_tolerance = t;
        }
        if let Some(h) = self.fd_step.or(file.fd_step) {
            opts.fd_step = h;
        }
        opts.initial_guess = match (self.initial_guess.as_deref(), file.initial_guess) {
            (Some("linear"), _) | (None, Some(GuessJson::LinearInterp)) | (None, None) => InitialGuess::LinearInterp,
            (Some("constant-left"), _) | (None, Some(GuessJson::ConstantLeft)) => InitialGuess::ConstantLeft,
            (Some(path), _) => InitialGuess::Provided(read_grid_function(Path::new(path))?),
        };
        opts.validate().map_err(|e| CliError::domain("solver", e))?;
        Ok(opts)
    }
}

pub fn read_grid_function(path: &Path) -> CliResult<GridFunction> {
    let file = File::open(path).map_err(|e| CliError::Input {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    GridFunction::read_csv(file).map_err(|e| CliError::Input {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// `a,b,p,q`.
pub fn parse_pset(s: &str) -> Result<[f64; 4], String> {
    let v = parse_list(s)?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected a,b,p,q, got {} values", v.len()))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect()
}

/// Where an output goes: the explicit path, or `name` inside the output
/// directory.
pub fn output_path(explicit: Option<&Path>, out_dir: &Path, name: &str) -> PathBuf {
    explicit.map(Path::to_owned).unwrap_or_else(|| out_dir.join(name))
}
