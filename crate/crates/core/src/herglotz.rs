//! Generalized Herglotz problems: `z' = L(t, x, B_P[x], z)`, `z(a) = z_a`,
//! with `z(b)` to be extremized over trajectories `x`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numgrid::{Grid, GridFunction};
use crate::operators::{apply_a, apply_b, apply_k, OperatorConfig};

/// Gradient of a Lagrangian with respect to its state arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub z: f64,
}

/// `L(t, x, v, z)` with `x, v ∈ ℝⁿ`, where `v` stands for `B_P[x]`.
pub trait Lagrangian: Send + Sync + fmt::Debug {
    fn value(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> f64;

    fn partials(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> Partials;
}

/// Central finite-difference partials of `l`, relative step `step`.
pub fn finite_difference_partials(l: &dyn Lagrangian, t: f64, x: &[f64], v: &[f64], z: f64, step: f64) -> Partials {
    let delta = |u: f64| step * u.abs().max(1.0);
    let mut xs = x.to_vec();
    let mut vs = v.to_vec();
    let mut px = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let d = delta(x[j]);
        xs[j] = x[j] + d;
        let up = l.value(t, &xs, v, z);
        xs[j] = x[j] - d;
        let down = l.value(t, &xs, v, z);
        xs[j] = x[j];
        px.push((up - down) / (2.0 * d));
    }
    let mut pv = Vec::with_capacity(v.len());
    for j in 0..v.len() {
        let d = delta(v[j]);
        vs[j] = v[j] + d;
        let up = l.value(t, x, &vs, z);
        vs[j] = v[j] - d;
        let down = l.value(t, x, &vs, z);
        vs[j] = v[j];
        pv.push((up - down) / (2.0 * d));
    }
    let d = delta(z);
    let pz = (l.value(t, x, v, z + d) - l.value(t, x, v, z - d)) / (2.0 * d);
    Partials { x: px, v: pv, z: pz }
}

/// `L = ½ m |v|² − ½ k |x|² + λ0 z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub mass: f64,
    pub stiffness: f64,
    pub coupling: f64,
}

impl Lagrangian for Quadratic {
    fn value(&self, _t: f64, x: &[f64], v: &[f64], z: f64) -> f64 {
        let vv: f64 = v.iter().map(|v| v * v).sum();
        let xx: f64 = x.iter().map(|x| x * x).sum();
        0.5 * self.mass * vv - 0.5 * self.stiffness * xx + self.coupling * z
    }

    fn partials(&self, _t: f64, x: &[f64], v: &[f64], _z: f64) -> Partials {
        Partials {
            x: x.iter().map(|x| -self.stiffness * x).collect(),
            v: v.iter().map(|v| self.mass * v).collect(),
            z: self.coupling,
        }
    }
}

/// `coef · t^t_pow · Π x_j^x_pow[j] · Π v_j^v_pow[j] · z^z_pow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub t_pow: u32,
    pub x_pow: Vec<u32>,
    pub v_pow: Vec<u32>,
    pub z_pow: u32,
}

impl Monomial {
    fn eval(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> f64 {
        let mut acc = self.coef * t.powi(self.t_pow as i32) * z.powi(self.z_pow as i32);
        for (u, &k) in x.iter().zip(&self.x_pow) {
            acc *= u.powi(k as i32);
        }
        for (u, &k) in v.iter().zip(&self.v_pow) {
            acc *= u.powi(k as i32);
        }
        acc
    }

    /// Derivative with respect to `u`, which carries power `k`: the same
    /// monomial with `coef·k` and power `k-1`.
    fn lowered(&self, which: Slot, j: usize) -> Option<Monomial> {
        let mut m = self.clone();
        let pow = match which {
            Slot::X => &mut m.x_pow[j],
            Slot::V => &mut m.v_pow[j],
            Slot::Z => &mut m.z_pow,
        };
        if *pow == 0 {
            return None;
        }
        m.coef *= *pow as f64;
        *pow -= 1;
        Some(m)
    }
}

#[derive(Clone, Copy)]
enum Slot {
    X,
    V,
    Z,
}

/// A polynomial Lagrangian given as a sum of monomials, with exact partials.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("polynomial Lagrangian needs dim >= 1"));
        }
        for (i, m) in terms.iter().enumerate() {
            if m.x_pow.len() != dim || m.v_pow.len() != dim {
                return Err(Error::domain(format!(
                    "monomial {i}: x and v power lists must have length {dim}"
                )));
            }
            if !m.coef.is_finite() {
                return Err(Error::domain(format!("monomial {i}: non-finite coefficient")));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    fn sum_lowered(&self, slot: Slot, j: usize, t: f64, x: &[f64], v: &[f64], z: f64) -> f64 {
        self.terms
            .iter()
            .filter_map(|m| m.lowered(slot, j))
            .map(|m| m.eval(t, x, v, z))
            .sum()
    }
}

impl Lagrangian for Polynomial {
    fn value(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> f64 {
        self.terms.iter().map(|m| m.eval(t, x, v, z)).sum()
    }

    fn partials(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> Partials {
        Partials {
            x: (0..self.dim)
                .map(|j| self.sum_lowered(Slot::X, j, t, x, v, z))
                .collect(),
            v: (0..self.dim)
                .map(|j| self.sum_lowered(Slot::V, j, t, x, v, z))
                .collect(),
            z: self.sum_lowered(Slot::Z, 0, t, x, v, z),
        }
    }
}

type ValueFn = dyn Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync;
type PartialsFn = dyn Fn(f64, &[f64], &[f64], f64) -> Partials + Send + Sync;

/// A Lagrangian from closures. Without explicit partials, central finite
/// differences are used.
#[derive(Clone)]
pub struct FnLagrangian {
    value: Arc<ValueFn>,
    partials: Option<Arc<PartialsFn>>,
}

impl FnLagrangian {
    pub fn new(value: impl Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            partials: None,
        }
    }

    pub fn with_partials(
        mut self,
        partials: impl Fn(f64, &[f64], &[f64], f64) -> Partials + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(partials));
        self
    }
}

impl fmt::Debug for FnLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnLagrangian")
            .field("analytic_partials", &self.partials.is_some())
            .finish()
    }
}

impl Lagrangian for FnLagrangian {
    fn value(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> f64 {
        (self.value)(t, x, v, z)
    }

    fn partials(&self, t: f64, x: &[f64], v: &[f64], z: f64) -> Partials {
        match &self.partials {
            Some(p) => p(t, x, v, z),
            None => finite_difference_partials(self, t, x, v, z, 1e-6),
        }
    }
}

/// Whether `z(b)` is to be minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extremum {
    #[default]
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub struct HerglotzProblem {
    lagrangian: Arc<dyn Lagrangian>,
    op: OperatorConfig,
    x_a: Vec<f64>,
    /// `None` marks a free right endpoint for that component.
    x_b: Vec<Option<f64>>,
    z_a: f64,
    extremum: Extremum,
}

impl HerglotzProblem {
    pub fn new(
        lagrangian: Arc<dyn Lagrangian>,
        op: OperatorConfig,
        x_a: Vec<f64>,
        x_b: Vec<Option<f64>>,
    ) -> Result<Self> {
        if x_a.is_empty() {
            return Err(Error::domain("problem dimension must be at least 1"));
        }
        if x_b.len() != x_a.len() {
            return Err(Error::domain(format!(
                "x_a has {} components but x_b has {}",
                x_a.len(),
                x_b.len()
            )));
        }
        if x_a.iter().chain(x_b.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::domain("boundary values must be finite"));
        }
        Ok(Self {
            lagrangian,
            op,
            x_a,
            x_b,
            z_a: 0.0,
            extremum: Extremum::Min,
        })
    }

    pub fn with_z_a(mut self, z_a: f64) -> Self {
        self.z_a = z_a;
        self
    }

    pub fn with_extremum(mut self, extremum: Extremum) -> Self {
        self.extremum = extremum;
        self
    }

    pub fn dim(&self) -> usize {
        self.x_a.len()
    }

    pub fn lagrangian(&self) -> &dyn Lagrangian {
        self.lagrangian.as_ref()
    }

    pub fn op(&self) -> &OperatorConfig {
        &self.op
    }

    pub fn x_a(&self) -> &[f64] {
        &self.x_a
    }

    pub fn x_b(&self) -> &[Option<f64>] {
        &self.x_b
    }

    pub fn z_a(&self) -> f64 {
        self.z_a
    }

    pub fn extremum(&self) -> Extremum {
        self.extremum
    }

    pub fn free_components(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.x_b[j].is_none()).collect()
    }

    /// The uniform grid with `n` nodes on the problem's interval.
    pub fn grid(&self, n: usize) -> Result<Grid> {
        Grid::new(self.op.pset().a(), self.op.pset().b(), n)
    }

    fn check_trajectory(&self, x: &GridFunction) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::contract(format!(
                "trajectory has {} components, problem has {}",
                x.dim(),
                self.dim()
            )));
        }
        let (a, b) = (self.op.pset().a(), self.op.pset().b());
        let tol = 1e-12 * (b - a).abs().max(1.0);
        if (x.grid().a() - a).abs() > tol || (x.grid().b() - b).abs() > tol {
            return Err(Error::contract("trajectory grid does not match the problem interval"));
        }
        Ok(())
    }
}

/// `z` integrated along a sampled trajectory, plus the integrating factor.
#[derive(Debug, Clone, PartialEq)]
pub struct HerglotzEvaluation {
    pub x: GridFunction,
    /// `B_P[x]` at the nodes.
    pub v: GridFunction,
    pub z: GridFunction,
    pub z_b: f64,
    /// `λ(t) = exp(−∫_a^t ∂L/∂z)`.
    pub lambda: GridFunction,
}

/// Heun integration of `z' = L` from node `start` to the end of the grid,
/// given `z[start]`. In classical mode each step uses the cell slope of `x`
/// at both ends; otherwise the nodal `v`.
pub(crate) fn integrate_z(
    prob: &HerglotzProblem,
    grid: &Grid,
    x: &[f64],
    v: &[f64],
    z: &mut [f64],
    start: usize,
) -> Result<()> {
    let d = prob.dim();
    let h = grid.step();
    let classical = prob.op.is_classical();
    let scale = prob.op.pset().p() + prob.op.pset().q();
    let mut slope = vec![0.0; d];
    let l = prob.lagrangian.as_ref();
    for i in start..grid.len() - 1 {
        let (x0, x1) = (&x[i * d..(i + 1) * d], &x[(i + 1) * d..(i + 2) * d]);
        let (v0, v1) = if classical {
            for c in 0..d {
                slope[c] = scale * (x1[c] - x0[c]) / h;
            }
            (&slope[..], &slope[..])
        } else {
            (&v[i * d..(i + 1) * d], &v[(i + 1) * d..(i + 2) * d])
        };
        let l0 = l.value(grid.node(i), x0, v0, z[i]);
        if !l0.is_finite() {
            return Err(Error::Evaluation {
                node: i,
                message: format!("Lagrangian is {l0}"),
            });
        }
        let predicted = z[i] + h * l0;
        let l1 = l.value(grid.node(i + 1), x1, v1, predicted);
        if !l1.is_finite() {
            return Err(Error::Evaluation {
                node: i + 1,
                message: format!("Lagrangian is {l1}"),
            });
        }
        z[i + 1] = z[i] + 0.5 * h * (l0 + l1);
    }
    Ok(())
}

/// [`evaluate_z`] without the boundary-condition check, for perturbed or
/// arbitrary trajectories.
pub fn evaluate_trajectory(prob: &HerglotzProblem, x: &GridFunction) -> Result<HerglotzEvaluation> {
    prob.check_trajectory(x)?;
    let grid = *x.grid();
    let v = apply_b(&prob.op, x)?;
    let mut z = vec![0.0; grid.len()];
    z[0] = prob.z_a;
    integrate_z(prob, &grid, x.values(), v.values(), &mut z, 0)?;
    let lz: Vec<f64> = (0..grid.len())
        .map(|i| prob.lagrangian.partials(grid.node(i), x.at(i), v.at(i), z[i]).z)
        .collect();
    let lambda = GridFunction::new(grid, 1, lz)?
        .cumulative_integral()
        .map(|s| (-s).exp());
    let z_b = z[grid.len() - 1];
    Ok(HerglotzEvaluation {
        x: x.clone(),
        v,
        z: GridFunction::new(grid, 1, z)?,
        z_b,
        lambda,
    })
}

/// Evaluates the functional on `x`, which must satisfy the boundary data.
pub fn evaluate_z(prob: &HerglotzProblem, x: &GridFunction) -> Result<HerglotzEvaluation> {
    prob.check_trajectory(x)?;
    let last = x.len() - 1;
    for j in 0..prob.dim() {
        let tol = 1e-12 * prob.x_a[j].abs().max(1.0);
        if (x.get(0, j) - prob.x_a[j]).abs() > tol {
            return Err(Error::contract(format!(
                "x_{}(a) = {} but the problem fixes {}",
                j + 1,
                x.get(0, j),
                prob.x_a[j]
            )));
        }
        if let Some(xb) = prob.x_b[j] {
            if (x.get(last, j) - xb).abs() > 1e-12 * xb.abs().max(1.0) {
                return Err(Error::contract(format!(
                    "x_{}(b) = {} but the problem fixes {}",
                    j + 1,
                    x.get(last, j),
                    xb
                )));
            }
        }
    }
    evaluate_trajectory(prob, x)
}

/// Partials of `L` at every node of an evaluation, as grid functions
/// `(∂L/∂x, ∂L/∂v, ∂L/∂z)`.
pub fn partials_along(
    prob: &HerglotzProblem,
    ev: &HerglotzEvaluation,
) -> Result<(GridFunction, GridFunction, GridFunction)> {
    let grid = *ev.x.grid();
    let d = prob.dim();
    let mut lx = Vec::with_capacity(grid.len() * d);
    let mut lv = Vec::with_capacity(grid.len() * d);
    let mut lz = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let p = prob
            .lagrangian
            .partials(grid.node(i), ev.x.at(i), ev.v.at(i), ev.z.get(i, 0));
        lx.extend(p.x);
        lv.extend(p.v);
        lz.push(p.z);
    }
    Ok((
        GridFunction::new(grid, d, lx)?,
        GridFunction::new(grid, d, lv)?,
        GridFunction::new(grid, 1, lz)?,
    ))
}

/// `λ·∂L/∂v_j` per component.
pub fn momentum(prob: &HerglotzProblem, ev: &HerglotzEvaluation) -> Result<GridFunction> {
    let (_, lv, _) = partials_along(prob, ev)?;
    Ok(weight_by_lambda(&lv, &ev.lambda))
}

fn weight_by_lambda(f: &GridFunction, lambda: &GridFunction) -> GridFunction {
    let d = f.dim();
    let values = f
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| v * lambda.get(k / d, 0))
        .collect();
    GridFunction::new(*f.grid(), d, values).expect("finite product of finite values")
}

/// `r_j = λ·∂L/∂x_j + A_{P*}(λ·∂L/∂v_j)`.
///
/// This is the exact first-order condition when `P` is one-sided with
/// `q = 0`. For mixed parameter sets the variation of `z(b)` produces
/// `−d/dt K_{P*}` in place of `A_{P*}`.
pub fn el_residual(prob: &HerglotzProblem, ev: &HerglotzEvaluation) -> Result<GridFunction> {
    let (lx, lv, _) = partials_along(prob, ev)?;
    let lambda_lx = weight_by_lambda(&lx, &ev.lambda);
    let lambda_lv = weight_by_lambda(&lv, &ev.lambda);
    let a = apply_a(&prob.op.adjoint(), &lambda_lv)?;
    lambda_lx.add_scaled(&a, 1.0)
}

/// `K_{P*}[λ·∂L/∂v_j](b)` for every free component `j`, as `(j, value)`.
pub fn transversality_residual(prob: &HerglotzProblem, ev: &HerglotzEvaluation) -> Result<Vec<(usize, f64)>> {
    let free = prob.free_components();
    if free.is_empty() {
        return Err(Error::contract(
            "transversality needs at least one free endpoint component",
        ));
    }
    let k = apply_k(&prob.op.adjoint(), &momentum(prob, ev)?)?;
    let last = k.len() - 1;
    Ok(free.into_iter().map(|j| (j, k.get(last, j))).collect())
}

/// Fraction of `[a, b]` excluded at each end by [`ResidualNorms::core`].
pub const CORE_MARGIN: f64 = 0.05;

/// Sup-norms of one residual component over three node sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms {
    /// Every node.
    pub all: f64,
    /// Every node but the two endpoints.
    pub interior: f64,
    /// Nodes at least `CORE_MARGIN·(b − a)` away from both endpoints.
    pub core: f64,
}

impl ResidualNorms {
    /// Norms per component of `r`.
    pub fn of(r: &GridFunction) -> Vec<ResidualNorms> {
        let g = r.grid();
        let n = g.len();
        let margin = CORE_MARGIN * (g.b() - g.a());
        (0..r.dim())
            .map(|c| {
                let mut norms = ResidualNorms {
                    all: 0.0,
                    interior: 0.0,
                    core: 0.0,
                };
                for i in 0..n {
                    let v = r.get(i, c).abs();
                    norms.all = norms.all.max(v);
                    if i > 0 && i + 1 < n {
                        norms.interior = norms.interior.max(v);
                    }
                    let t = g.node(i);
                    if t >= g.a() + margin - 1e-12 && t <= g.b() - margin + 1e-12 {
                        norms.core = norms.core.max(v);
                    }
                }
                norms
            })
            .collect()
    }

    /// Componentwise maximum of several norms.
    pub fn max_of(norms: &[ResidualNorms]) -> ResidualNorms {
        norms.iter().fold(
            ResidualNorms {
                all: 0.0,
                interior: 0.0,
                core: 0.0,
            },
            |acc, n| ResidualNorms {
                all: acc.all.max(n.all),
                interior: acc.interior.max(n.interior),
                core: acc.core.max(n.core),
            },
        )
    }
}

/// Outcome of comparing supplied partials with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialsReport {
    pub seed: u64,
    pub probes: usize,
    /// Largest `|analytic − fd| / max(1, |fd|)` over all probes and slots.
    pub worst_relative_error: f64,
    /// Slot of the worst error, e.g. `x_1`, `v_2` or `z`.
    pub worst_slot: String,
}

/// Compares the Lagrangian's partials with central differences at random
/// states `t ∈ [a, b]`, `x, v, z ∈ [−2, 2]`.
pub fn check_partials(prob: &HerglotzProblem, n_probes: usize, seed: u64) -> Result<PartialsReport> {
    if n_probes == 0 {
        return Err(Error::domain("n_probes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = prob.dim();
    let (a, b) = (prob.op.pset().a(), prob.op.pset().b());
    let l = prob.lagrangian();
    let mut worst = (0.0, String::from("none"));
    for _ in 0..n_probes {
        let t = rng.random_range(a..=b);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let z = rng.random_range(-2.0..=2.0);
        let exact = l.partials(t, &x, &v, z);
        let fd = finite_difference_partials(l, t, &x, &v, z, 1e-5);
        let mut consider = |got: f64, want: f64, slot: String| {
            let err = (got - want).abs() / want.abs().max(1.0);
            if err > worst.0 || err.is_nan() {
                worst = (err, slot);
            }
        };
        for j in 0..d {
            consider(exact.x[j], fd.x[j], format!("x_{}", j + 1));
            consider(exact.v[j], fd.v[j], format!("v_{}", j + 1));
        }
        consider(exact.z, fd.z, "z".into());
    }
    Ok(PartialsReport {
        seed,
        probes: n_probes,
        worst_relative_error: worst.0,
        worst_slot: worst.1,
    })
}
