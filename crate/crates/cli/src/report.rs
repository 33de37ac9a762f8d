//! JSON reports and CSV outputs.
//!
//! Every report is one JSON object: a `meta` key with run metadata, next to
//! the data fields of the command. Nothing time- or host-dependent is
//! written, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use herglotz_core::herglotz::ResidualNorms;
use herglotz_core::kernels::Family;
use herglotz_core::{GridFunction, HerglotzProblem, KernelSpec, OperatorConfig, Order};
use serde::Serialize;

use crate::config::ProblemJson;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: BTreeMap<String, String>,
    /// Worker threads for sweeps; `null` when the command is sequential.
    pub jobs: Option<usize>,
}

impl Meta {
    pub fn new(tool: &'static str, command: &'static str) -> Self {
        Self {
            tool,
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            jobs: None,
        }
    }

    pub fn input(mut self, key: &'static str, path: &Path) -> Self {
        self.inputs.insert(key, path.display().to_string());
        self
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json<T: Serialize>(meta: &Meta, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Envelope { meta, body }).expect("reports serialize");
    s.push('\n');
    s
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::Output {
            path: path.to_owned(),
            message: e.to_string(),
        }),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::Output {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn write_csv(path: &Path, f: &GridFunction) -> CliResult<()> {
    ensure_parent(path)?;
    let out = |e: &dyn std::fmt::Display| CliError::Output {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| out(&e))?);
    f.write_csv(&mut w).map_err(|e| out(&e))?;
    w.flush().map_err(|e| out(&e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub all: f64,
    pub interior: f64,
    pub core: f64,
}

impl From<ResidualNorms> for Norms {
    fn from(n: ResidualNorms) -> Self {
        Self {
            all: n.all,
            interior: n.interior,
            core: n.core,
        }
    }
}

pub fn norms(list: &[ResidualNorms]) -> Vec<Norms> {
    list.iter().copied().map(Norms::from).collect()
}

/// Which sup-norm of a residual `--fail-above` is compared with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// All nodes.
    All,
    /// All nodes except the two endpoints.
    Interior,
    /// Nodes at least 5% of the interval away from either endpoint.
    #[default]
    Core,
}

impl NormKind {
    pub fn pick(self, n: &ResidualNorms) -> f64 {
        match self {
            NormKind::All => n.all,
            NormKind::Interior => n.interior,
            NormKind::Core => n.core,
        }
    }
}

/// The quantity `--fail-above` is checked against, recorded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub metric: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub passed: Option<bool>,
}

impl Verification {
    pub fn new(metric: impl Into<String>, value: f64, threshold: Option<f64>) -> Self {
        Self {
            metric: metric.into(),
            value,
            threshold,
            passed: threshold.map(|t| value <= t),
        }
    }

    /// `Err` when a threshold is set and exceeded (a NaN value also fails).
    pub fn outcome(&self) -> CliResult<()> {
        match self.threshold {
            Some(t) if !(self.value <= t) => Err(CliError::Verification {
                metric: self.metric.clone(),
                value: self.value,
                threshold: t,
            }),
            _ => Ok(()),
        }
    }
}

/// The operator as it appears in reports.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorSummary {
    /// `null` in classical mode.
    pub alpha: Option<f64>,
    pub classical: bool,
    pub kernel: String,
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
}

impl From<&OperatorConfig> for OperatorSummary {
    fn from(op: &OperatorConfig) -> Self {
        let pset = op.pset();
        let (alpha, classical) = match op.order() {
            Order::Classical => (None, true),
            Order::Fractional(a) => (Some(a.value()), false),
        };
        let kernel = match (op.order(), op.kernel()) {
            (Order::Classical, _) => "none".to_owned(),
            (_, Some(k)) => kernel_label(k),
            (_, None) => "caputo".to_owned(),
        };
        Self {
            alpha,
            classical,
            kernel,
            a: pset.a(),
            b: pset.b(),
            p: pset.p(),
            q: pset.q(),
        }
    }
}

fn kernel_label(k: &KernelSpec) -> String {
    match k.family() {
        Family::PowerLaw { order } => format!("power_law(alpha={})", 1.0 - order),
        Family::Exponential { rate, scale } => format!("exponential(rate={rate}, scale={scale})"),
        Family::Tabulated(t) => {
            let (lo, hi) = t.range();
            format!("tabulated({} samples on [{lo}, {hi}])", t.samples().len())
        }
    }
}

/// A problem file echoed back together with its derived operator summary.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemSummary {
    pub dim: usize,
    pub operator: OperatorSummary,
    pub free_components: Vec<usize>,
    pub definition: ProblemJson,
}

impl ProblemSummary {
    pub fn new(file: &ProblemJson, prob: &HerglotzProblem) -> Self {
        Self {
            dim: prob.dim(),
            operator: OperatorSummary::from(prob.op()),
            free_components: prob.free_components(),
            definition: file.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Transversality {
    pub component: usize,
    pub value: f64,
}

pub fn transversality(list: &Option<Vec<(usize, f64)>>) -> Option<Vec<Transversality>> {
    list.as_ref().map(|v| {
        v.iter()
            .map(|&(component, value)| Transversality { component, value })
            .collect()
    })
}
