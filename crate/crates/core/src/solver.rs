//! Direct transcription: extremize `z(b)` over the node values of a sampled
//! trajectory subject to its boundary data.

use crate::error::{Error, Result};
use crate::herglotz::{
    el_residual, evaluate_trajectory, evaluate_z, integrate_z, transversality_residual, Extremum, HerglotzEvaluation,
    HerglotzProblem, ResidualNorms,
};
use crate::lbfgs::{self, Objective, Stop};
use crate::numgrid::{Grid, GridFunction};
use crate::operators::b_matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// Linear between `x_a` and `x_b`; constant `x_a` for free components.
    LinearInterp,
    /// `x_a` everywhere except fixed right endpoints.
    ConstantLeft,
    /// A trajectory on any grid over the interval, resampled onto the
    /// solve grid. Fixed boundary values are overwritten by the problem data.
    Provided(GridFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Sup-norm of the objective gradient over the decision variables.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Relative step of the central finite-difference gradient.
    pub fd_step: f64,
    pub initial_guess: InitialGuess,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-7,
            step_tolerance: 1e-14,
            fd_step: 1e-6,
            initial_guess: InitialGuess::LinearInterp,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) || !(self.step_tolerance > 0.0) {
            return Err(Error::domain("solver tolerances must be positive"));
        }
        if !(self.fd_step > 1e-10 && self.fd_step < 1e-2) {
            return Err(Error::domain(format!(
                "fd_step must lie in (1e-10, 1e-2), got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::StepTolerance => "step_tolerance",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub evaluation: HerglotzEvaluation,
    /// True only when the gradient criterion was met.
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub el_residual: GridFunction,
    /// Per component.
    pub el_residual_norms: Vec<ResidualNorms>,
    /// `(component, K_{P*}[λ ∂L/∂v](b))` for free components.
    pub transversality_residuals: Option<Vec<(usize, f64)>>,
}

/// Decision variables: `(node, component)` for every interior node and
/// every free endpoint component.
fn decision_variables(prob: &HerglotzProblem, n: usize) -> Vec<(usize, usize)> {
    let d = prob.dim();
    let mut vars: Vec<(usize, usize)> = (1..n - 1).flat_map(|i| (0..d).map(move |c| (i, c))).collect();
    vars.extend(prob.free_components().into_iter().map(|c| (n - 1, c)));
    vars
}

struct Transcription<'a> {
    prob: &'a HerglotzProblem,
    grid: Grid,
    vars: Vec<(usize, usize)>,
    sign: f64,
    fd_step: f64,
    /// Column `j` of the `B` matrix as `(first nonzero row, rows onward)`;
    /// empty in classical mode.
    columns: Vec<(usize, Vec<f64>)>,
    x: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
    z_scratch: Vec<f64>,
    v_saved: Vec<f64>,
}

impl<'a> Transcription<'a> {
    fn new(prob: &'a HerglotzProblem, grid: Grid, x: Vec<f64>, fd_step: f64) -> Result<Self> {
        let n = grid.len();
        let columns = if prob.op().is_classical() {
            Vec::new()
        } else {
            let m = b_matrix(prob.op(), &grid)?;
            (0..n)
                .map(|j| {
                    let first = m.first_nonzero_in_column(j).unwrap_or(n);
                    (first, (first..n).map(|i| m.get(i, j)).collect())
                })
                .collect()
        };
        let mut z = vec![0.0; n];
        z[0] = prob.z_a();
        Ok(Self {
            prob,
            grid,
            vars: decision_variables(prob, n),
            sign: match prob.extremum() {
                Extremum::Min => 1.0,
                Extremum::Max => -1.0,
            },
            fd_step,
            columns,
            v: vec![0.0; x.len()],
            x,
            z_scratch: z.clone(),
            z,
            v_saved: vec![0.0; n],
        })
    }

    fn pack(&self) -> Vec<f64> {
        let d = self.prob.dim();
        self.vars.iter().map(|&(i, c)| self.x[i * d + c]).collect()
    }

    /// Loads decision values and recomputes `v` and `z`. Returns the
    /// minimization-form objective.
    fn load(&mut self, values: &[f64]) -> Result<f64> {
        let d = self.prob.dim();
        for (&(i, c), &u) in self.vars.iter().zip(values) {
            self.x[i * d + c] = u;
        }
        if !self.prob.op().is_classical() {
            self.v.iter_mut().for_each(|v| *v = 0.0);
            for (j, (first, col)) in self.columns.iter().enumerate() {
                for c in 0..d {
                    let xj = self.x[j * d + c];
                    if xj == 0.0 {
                        continue;
                    }
                    for (k, b) in col.iter().enumerate() {
                        self.v[(first + k) * d + c] += b * xj;
                    }
                }
            }
        }
        integrate_z(self.prob, &self.grid, &self.x, &self.v, &mut self.z, 0)?;
        Ok(self.sign * self.z[self.grid.len() - 1])
    }

    /// `z(b)` with node `j`, component `c` moved by `delta`.
    fn perturbed(&mut self, j: usize, c: usize, delta: f64) -> Result<f64> {
        let d = self.prob.dim();
        let n = self.grid.len();
        let classical = self.prob.op().is_classical();
        let mut start = j.saturating_sub(1);
        let mut first = n;
        if !classical {
            first = self.columns[j].0;
            start = start.min(first.saturating_sub(1));
            let col = &self.columns[j].1;
            for (k, b) in col.iter().enumerate() {
                let slot = (first + k) * d + c;
                self.v_saved[k] = self.v[slot];
                self.v[slot] += delta * b;
            }
        }
        let saved = self.x[j * d + c];
        self.x[j * d + c] = saved + delta;
        self.z_scratch[..=start].copy_from_slice(&self.z[..=start]);
        let outcome = integrate_z(self.prob, &self.grid, &self.x, &self.v, &mut self.z_scratch, start);
        self.x[j * d + c] = saved;
        if !classical {
            for k in 0..n - first {
                self.v[(first + k) * d + c] = self.v_saved[k];
            }
        }
        outcome?;
        Ok(self.z_scratch[n - 1])
    }
}

impl Objective for Transcription<'_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.load(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.load(x)?;
        let d = self.prob.dim();
        let vars = self.vars.clone();
        vars.iter()
            .map(|&(j, c)| {
                let delta = self.fd_step * self.x[j * d + c].abs().max(1.0);
                let up = self.perturbed(j, c, delta)?;
                let down = self.perturbed(j, c, -delta)?;
                Ok(self.sign * (up - down) / (2.0 * delta))
            })
            .collect()
    }
}

fn initial_trajectory(prob: &HerglotzProblem, grid: &Grid, guess: &InitialGuess) -> Result<GridFunction> {
    let d = prob.dim();
    let (a, b) = (grid.a(), grid.b());
    let mut x = match guess {
        InitialGuess::LinearInterp => GridFunction::from_vec_fn(*grid, d, |t| {
            (0..d)
                .map(|c| match prob.x_b()[c] {
                    Some(xb) => prob.x_a()[c] + (xb - prob.x_a()[c]) * (t - a) / (b - a),
                    None => prob.x_a()[c],
                })
                .collect()
        })
        .into_values(),
        InitialGuess::ConstantLeft => GridFunction::from_vec_fn(*grid, d, |_| prob.x_a().to_vec()).into_values(),
        InitialGuess::Provided(f) => {
            if f.dim() != d {
                return Err(Error::Setup(format!(
                    "initial guess has {} components, problem has {d}",
                    f.dim()
                )));
            }
            f.resample(*grid)?.into_values()
        }
    };
    let last = grid.len() - 1;
    for c in 0..d {
        x[c] = prob.x_a()[c];
        if let Some(xb) = prob.x_b()[c] {
            x[last * d + c] = xb;
        }
    }
    GridFunction::new(*grid, d, x)
}

pub fn solve_direct(prob: &HerglotzProblem, grid: &Grid, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    if grid.len() < 5 {
        return Err(Error::domain("direct transcription needs at least 5 nodes"));
    }
    let x0 = initial_trajectory(prob, grid, &opts.initial_guess)?;
    let mut tr = Transcription::new(prob, *grid, x0.into_values(), opts.fd_step)?;
    let start = tr.pack();
    match tr.load(&start) {
        Ok(f) if f.is_finite() => {}
        Ok(f) => return Err(Error::Setup(format!("objective is {f} at the initial guess"))),
        Err(e) => return Err(Error::Setup(format!("objective fails at the initial guess: {e}"))),
    }
    let outcome = lbfgs::minimize(
        &mut tr,
        start,
        lbfgs::Settings {
            max_iterations: opts.max_iterations,
            gradient_tolerance: opts.gradient_tolerance,
            step_tolerance: opts.step_tolerance,
            memory: 10,
        },
    )?;
    tr.load(&outcome.x)?;
    let x = GridFunction::new(*grid, prob.dim(), tr.x.clone())?;
    let termination = match outcome.stop {
        Stop::Gradient => Termination::GradientTolerance,
        Stop::Step => Termination::StepTolerance,
        Stop::MaxIterations => Termination::MaxIterations,
        Stop::LineSearch => Termination::LineSearchFailure,
    };
    let evaluation = evaluate_z(prob, &x)?;
    let residual = el_residual(prob, &evaluation)?;
    let transversality = if prob.free_components().is_empty() {
        None
    } else {
        Some(transversality_residual(prob, &evaluation)?)
    };
    Ok(SolveResult {
        evaluation,
        converged: termination == Termination::GradientTolerance,
        termination,
        iterations: outcome.iterations,
        final_gradient_norm: outcome.gradient_norm,
        el_residual_norms: ResidualNorms::of(&residual),
        el_residual: residual,
        transversality_residuals: transversality,
    })
}

/// Objective change from moving one decision variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeEntry {
    pub node: usize,
    pub component: usize,
    /// Best decrease of the minimization-form objective over `±delta`;
    /// negative when both directions make it worse.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityProbe {
    pub delta: f64,
    pub entries: Vec<ProbeEntry>,
}

impl StationarityProbe {
    /// Largest `improvement / delta` over all probed variables.
    pub fn max_improvement_rate(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.improvement / self.delta)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Perturbs each decision variable of `x` (or only free endpoint values,
/// if `endpoints_only`) by `±delta` and records the best objective gain.
pub fn stationarity_probe(
    prob: &HerglotzProblem,
    x: &GridFunction,
    delta: f64,
    endpoints_only: bool,
) -> Result<StationarityProbe> {
    if !(delta > 0.0) {
        return Err(Error::domain("probe delta must be positive"));
    }
    let sign = match prob.extremum() {
        Extremum::Min => 1.0,
        Extremum::Max => -1.0,
    };
    let n = x.len();
    let d = prob.dim();
    let base = sign * evaluate_trajectory(prob, x)?.z_b;
    let mut entries = Vec::new();
    for (j, c) in decision_variables(prob, n) {
        if endpoints_only && j != n - 1 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for s in [1.0, -1.0] {
            let mut values = x.values().to_vec();
            values[j * d + c] += s * delta;
            let moved = GridFunction::new(*x.grid(), d, values)?;
            let f = sign * evaluate_trajectory(prob, &moved)?.z_b;
            best = best.max(base - f);
        }
        entries.push(ProbeEntry {
            node: j,
            component: c,
            improvement: best,
        });
    }
    Ok(StationarityProbe { delta, entries })
}

#[derive(Debug, Clone)]
pub struct ConvergenceLevel {
    pub nodes: usize,
    pub z_b: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub el_residual_norms: Vec<ResidualNorms>,
    pub solution: GridFunction,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// `|z_b(k+1) − z_b(k)|`.
    pub z_b_differences: Vec<f64>,
    /// Sup distance between successive solutions on the coarser grid.
    pub trajectory_differences: Vec<f64>,
    /// `log2` of the ratio of successive `z_b` differences.
    pub observed_order: Option<f64>,
    /// Core sup-norm of the EL residual failed to decrease somewhere.
    pub residual_not_decreasing: bool,
}

/// Solves at `N`, `2N−1` and `4N−3` nodes, warm-starting each level from
/// the previous solution.
pub fn refine_and_verify(prob: &HerglotzProblem, grid: &Grid, opts: &SolveOptions) -> Result<ConvergenceReport> {
    let grids = [*grid, grid.refined(), grid.refined().refined()];
    let mut levels: Vec<ConvergenceLevel> = Vec::with_capacity(3);
    let mut level_opts = opts.clone();
    for g in grids {
        let r = solve_direct(prob, &g, &level_opts)?;
        level_opts.initial_guess = InitialGuess::Provided(r.evaluation.x.clone());
        levels.push(ConvergenceLevel {
            nodes: g.len(),
            z_b: r.evaluation.z_b,
            converged: r.converged,
            iterations: r.iterations,
            final_gradient_norm: r.final_gradient_norm,
            el_residual_norms: r.el_residual_norms,
            solution: r.evaluation.x,
        });
    }
    let z_b_differences: Vec<f64> = levels.windows(2).map(|w| (w[1].z_b - w[0].z_b).abs()).collect();
    let trajectory_differences = levels
        .windows(2)
        .map(|w| {
            let fine = w[1].solution.resample(*w[0].solution.grid())?;
            Ok(fine.add_scaled(&w[0].solution, -1.0)?.max_abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let observed_order = match z_b_differences[..] {
        [d1, d2] if d1 > 0.0 && d2 > 0.0 => Some((d1 / d2).log2()),
        _ => None,
    };
    let core = |l: &ConvergenceLevel| ResidualNorms::max_of(&l.el_residual_norms).core;
    let residual_not_decreasing = levels.windows(2).any(|w| core(&w[1]) >= core(&w[0]));
    Ok(ConvergenceReport {
        levels,
        z_b_differences,
        trajectory_differences,
        observed_order,
        residual_not_decreasing,
    })
}
