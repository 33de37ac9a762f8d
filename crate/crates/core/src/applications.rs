//! The damped oscillator with memory,
//! `L = ½ m (B_P x)² − ½ k x² + λ0 z` with `P = ⟨0, b, 1, 0⟩`, its equation
//! of motion and the closed-form classical limit
//! `m ẍ − m λ0 ẋ + k x = 0`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::herglotz::{el_residual, evaluate_z, HerglotzEvaluation, HerglotzProblem, Quadratic, ResidualNorms};
use crate::kernels::{FractionalOrder, KernelSpec, ParameterSet};
use crate::numgrid::{Grid, GridFunction};
use crate::operators::{apply_a, OperatorConfig, Order};
use crate::solver::{solve_direct, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorParams {
    pub mass: f64,
    pub stiffness: f64,
    pub lambda0: f64,
    pub order: Order,
    /// Kernel of `K^{1-α}`; `None` selects the power-law (Caputo) kernel.
    pub kernel: Option<KernelSpec>,
    pub b: f64,
    pub x0: f64,
    /// `None` leaves `x(b)` free.
    pub xb: Option<f64>,
    pub z0: f64,
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::domain(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.stiffness >= 0.0) {
            return Err(Error::domain(format!(
                "stiffness must be non-negative, got {}",
                self.stiffness
            )));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::domain(format!("b must be positive, got {}", self.b)));
        }
        let finite = [self.lambda0, self.x0, self.z0].into_iter().chain(self.xb);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("oscillator parameters must be finite"));
        }
        Ok(())
    }

    pub fn with_order(&self, order: Order) -> Self {
        Self { order, ..self.clone() }
    }

    pub fn pset(&self) -> Result<ParameterSet> {
        ParameterSet::left(0.0, self.b)
    }

    pub fn operator_config(&self) -> Result<OperatorConfig> {
        let pset = self.pset()?;
        match self.order {
            Order::Classical => Ok(OperatorConfig::classical(pset)),
            Order::Fractional(alpha) => match &self.kernel {
                None => Ok(OperatorConfig::caputo(alpha, pset)),
                Some(k) => OperatorConfig::fractional(alpha, k.clone(), pset),
            },
        }
    }
}

pub fn oscillator_problem(p: &OscillatorParams) -> Result<HerglotzProblem> {
    p.validate()?;
    let l = Quadratic {
        mass: p.mass,
        stiffness: p.stiffness,
        coupling: p.lambda0,
    };
    Ok(HerglotzProblem::new(Arc::new(l), p.operator_config()?, vec![p.x0], vec![p.xb])?.with_z_a(p.z0))
}

/// `m·A_{P*}(e^{−λ0 t}·B_P x) − k·e^{−λ0 t}·x`, evaluated directly.
pub fn oscillator_el_residual(p: &OscillatorParams, ev: &HerglotzEvaluation) -> Result<GridFunction> {
    let cfg = p.operator_config()?;
    let grid = *ev.x.grid();
    let decay = GridFunction::from_fn(grid, |t| (-p.lambda0 * t).exp());
    let momentum = ev.v.zip_with(&decay, |v, e| p.mass * e * v)?;
    let a = apply_a(&cfg.adjoint(), &momentum)?;
    let spring = ev.x.zip_with(&decay, |x, e| p.stiffness * e * x)?;
    a.add_scaled(&spring, -1.0)
}

/// Specialized and generic residuals on one evaluation, with
/// `sup|specialized − generic| / max(1, sup|generic|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCrossCheck {
    pub specialized: GridFunction,
    pub generic: GridFunction,
    pub relative_difference: f64,
}

pub fn cross_check_residuals(p: &OscillatorParams, ev: &HerglotzEvaluation) -> Result<ResidualCrossCheck> {
    let specialized = oscillator_el_residual(p, ev)?;
    let generic = el_residual(&oscillator_problem(p)?, ev)?;
    let diff = specialized.add_scaled(&generic, -1.0)?.max_abs();
    Ok(ResidualCrossCheck {
        relative_difference: diff / generic.max_abs().max(1.0),
        specialized,
        generic,
    })
}

/// Data fixing the two constants of the classical solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceData {
    /// `x(0) = x0`, `x(b) = xb`.
    Boundary { x0: f64, b: f64, xb: f64 },
    /// `x(0) = x0`, `ẋ(b) = 0` (natural condition of a free endpoint).
    FreeEnd { x0: f64, b: f64 },
    /// `x(0) = x0`, `ẋ(0) = v0`.
    Initial { x0: f64, v0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Basis {
    /// `e^{r1 t}`, `e^{r2 t}`.
    Real(f64, f64),
    /// `e^{r t}`, `t e^{r t}`.
    Double(f64),
    /// `e^{σ t} cos ωt`, `e^{σ t} sin ωt`.
    Complex { sigma: f64, omega: f64 },
}

impl Basis {
    /// `(φ1, φ2, φ1', φ2')` at `t`.
    fn at(self, t: f64) -> [f64; 4] {
        match self {
            Basis::Real(r1, r2) => {
                let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
                [e1, e2, r1 * e1, r2 * e2]
            }
            Basis::Double(r) => {
                let e = (r * t).exp();
                [e, t * e, r * e, (1.0 + r * t) * e]
            }
            Basis::Complex { sigma, omega } => {
                let e = (sigma * t).exp();
                let (s, c) = (omega * t).sin_cos();
                [e * c, e * s, e * (sigma * c - omega * s), e * (sigma * s + omega * c)]
            }
        }
    }
}

/// Closed-form solution of `m ẍ − m λ0 ẋ + k x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalReference {
    basis: Basis,
    c1: f64,
    c2: f64,
}

impl ClassicalReference {
    pub fn fit(mass: f64, stiffness: f64, lambda0: f64, data: ReferenceData) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::domain("mass must be positive"));
        }
        let w2 = stiffness / mass;
        let disc = lambda0 * lambda0 - 4.0 * w2;
        let basis = if disc.abs() <= 1e-12 * (lambda0 * lambda0).max(4.0 * w2.abs()).max(1e-300) {
            Basis::Double(0.5 * lambda0)
        } else if disc > 0.0 {
            let s = disc.sqrt();
            Basis::Real(0.5 * (lambda0 + s), 0.5 * (lambda0 - s))
        } else {
            Basis::Complex {
                sigma: 0.5 * lambda0,
                omega: 0.5 * (-disc).sqrt(),
            }
        };
        let first = basis.at(0.0);
        let (row1, rhs1) = ([first[0], first[1]], data_x0(data));
        let (row2, rhs2) = match data {
            ReferenceData::Boundary { b, xb, .. } => {
                let e = basis.at(b);
                ([e[0], e[1]], xb)
            }
            ReferenceData::FreeEnd { b, .. } => {
                let e = basis.at(b);
                ([e[2], e[3]], 0.0)
            }
            ReferenceData::Initial { v0, .. } => ([first[2], first[3]], v0),
        };
        let det = row1[0] * row2[1] - row1[1] * row2[0];
        let scale = row1[0].hypot(row1[1]) * row2[0].hypot(row2[1]);
        if !(det.abs() >= 1e-12 * scale) {
            return Err(Error::domain(
                "boundary data do not determine the classical solution (conjugate point)",
            ));
        }
        Ok(Self {
            basis,
            c1: (rhs1 * row2[1] - row1[1] * rhs2) / det,
            c2: (row1[0] * rhs2 - rhs1 * row2[0]) / det,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let e = self.basis.at(t);
        self.c1 * e[0] + self.c2 * e[1]
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let e = self.basis.at(t);
        self.c1 * e[2] + self.c2 * e[3]
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |t| self.eval(t))
    }
}

fn data_x0(data: ReferenceData) -> f64 {
    match data {
        ReferenceData::Boundary { x0, .. } | ReferenceData::FreeEnd { x0, .. } | ReferenceData::Initial { x0, .. } => {
            x0
        }
    }
}

/// The classical solution matching the oscillator's boundary data.
pub fn classical_reference(p: &OscillatorParams) -> Result<ClassicalReference> {
    p.validate()?;
    let data = match p.xb {
        Some(xb) => ReferenceData::Boundary { x0: p.x0, b: p.b, xb },
        None => ReferenceData::FreeEnd { x0: p.x0, b: p.b },
    };
    ClassicalReference::fit(p.mass, p.stiffness, p.lambda0, data)
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub z_b: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub el_residual_norms: ResidualNorms,
    /// Sup distance to the classical reference on the grid, when it exists.
    pub distance_to_classical: Option<f64>,
    pub solution: GridFunction,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub alpha: f64,
    /// Failures are recorded and the sweep continues.
    pub outcome: std::result::Result<SweepEntry, String>,
}

#[derive(Debug, Clone)]
pub struct ClassicalRow {
    pub z_b: f64,
    pub solution: GridFunction,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `None` when the classical boundary problem is degenerate.
    pub classical: Option<ClassicalRow>,
    /// Largest sup distance between successive successful rows.
    pub max_successive_difference: Option<f64>,
}

impl SweepTable {
    /// Distances to the classical reference decrease along the rows.
    pub fn distance_decreasing(&self) -> bool {
        let d: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok()?.distance_to_classical)
            .collect();
        d.windows(2).all(|w| w[1] < w[0])
    }
}

/// Solves the fractional oscillator for each `alpha` on `nodes` nodes, in
/// parallel on the current rayon pool.
pub fn alpha_sweep(p: &OscillatorParams, alphas: &[f64], nodes: usize, opts: &SolveOptions) -> Result<SweepTable> {
    p.validate()?;
    let orders = alphas
        .iter()
        .map(|&a| FractionalOrder::new(a))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(0.0, p.b, nodes)?;
    let classical = match classical_reference(p) {
        Ok(reference) => {
            let solution = reference.sample(grid);
            let prob = oscillator_problem(&p.with_order(Order::Classical))?;
            let z_b = evaluate_z(&prob, &solution)?.z_b;
            Some(ClassicalRow { z_b, solution })
        }
        Err(_) => None,
    };
    let rows: Vec<SweepRow> = orders
        .par_iter()
        .map(|&alpha| {
            let outcome = sweep_entry(&p.with_order(Order::Fractional(alpha)), &grid, opts, classical.as_ref())
                .map_err(|e| e.to_string());
            SweepRow {
                alpha: alpha.value(),
                outcome,
            }
        })
        .collect();
    let solved: Vec<&GridFunction> = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|e| &e.solution)
        .collect();
    let max_successive_difference = solved
        .windows(2)
        .map(|w| w[1].add_scaled(w[0], -1.0).map(|d| d.max_abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .reduce(f64::max);
    Ok(SweepTable {
        rows,
        classical,
        max_successive_difference,
    })
}

fn sweep_entry(
    p: &OscillatorParams,
    grid: &Grid,
    opts: &SolveOptions,
    classical: Option<&ClassicalRow>,
) -> Result<SweepEntry> {
    let prob = oscillator_problem(p)?;
    let r = solve_direct(&prob, grid, opts)?;
    let distance_to_classical = match classical {
        Some(c) => Some(r.evaluation.x.add_scaled(&c.solution, -1.0)?.max_abs()),
        None => None,
    };
    Ok(SweepEntry {
        z_b: r.evaluation.z_b,
        converged: r.converged,
        iterations: r.iterations,
        final_gradient_norm: r.final_gradient_norm,
        el_residual_norms: ResidualNorms::max_of(&r.el_residual_norms),
        distance_to_classical,
        solution: r.evaluation.x,
    })
}
