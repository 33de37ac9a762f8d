//! Numerical generalized fractional operators on uniform grids.
//!
//! For a parameter set `P = ⟨a, b, p, q⟩` and kernel `k`:
//!
//! ```text
//! K_P[f](x) = p ∫_a^x k(x - t) f(t) dt + q ∫_x^b k(t - x) f(t) dt
//! B_P[f]    = K_P[f']                                  (Caputo type)
//! A_P[f]    = p (K_left f)' - q (K_right f)'            (Riemann–Liouville type)
//! ```
//!
//! The right-sided part of `A_P` carries the usual minus sign of the
//! right Riemann–Liouville derivative, so that `A_P → (p - q)·d/dt` in the
//! classical limit.
//!
//! All integrals use product integration: the data is replaced by its
//! piecewise-linear interpolant (piecewise-constant derivative for `B_P`)
//! and the kernel moments over each cell are computed exactly, so weakly
//! singular kernels keep their convergence order. For the power-law kernel
//! `B_P` reduces to the L1 scheme.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::kernels::{Family, FractionalOrder, KernelSpec, ParameterSet, TabulatedKernel};
use crate::numgrid::{Grid, GridFunction};
use crate::quadrature::GaussLegendre;

/// Fractional order of the operators, or the classical limit `α → 1` in
/// which `K` degenerates to `(p + q)·identity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    Fractional(FractionalOrder),
    Classical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    order: Order,
    /// Kernel of `K^{1-α}`; absent in classical mode.
    kernel: Option<KernelSpec>,
    pset: ParameterSet,
}

impl OperatorConfig {
    /// Fractional operators of order `alpha`. `kernel` is the kernel of the
    /// integral `K^{1-α}` that appears inside `A` and `B`.
    pub fn fractional(alpha: FractionalOrder, kernel: KernelSpec, pset: ParameterSet) -> Result<Self> {
        kernel.ensure_integrable()?;
        Ok(Self {
            order: Order::Fractional(alpha),
            kernel: Some(kernel),
            pset,
        })
    }

    /// Fractional operators with the power-law kernel `s^{-α}/Γ(1-α)`.
    pub fn caputo(alpha: FractionalOrder, pset: ParameterSet) -> Self {
        Self {
            order: Order::Fractional(alpha),
            kernel: Some(KernelSpec::caputo(alpha)),
            pset,
        }
    }

    pub fn classical(pset: ParameterSet) -> Self {
        Self {
            order: Order::Classical,
            kernel: None,
            pset,
        }
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn is_classical(&self) -> bool {
        self.order == Order::Classical
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn pset(&self) -> &ParameterSet {
        &self.pset
    }

    /// The same operators over the adjoint parameter set `P*`.
    pub fn adjoint(&self) -> Self {
        Self {
            pset: self.pset.adjoint(),
            ..self.clone()
        }
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        let tol = 1e-12 * (self.pset.b() - self.pset.a()).abs().max(1.0);
        if (grid.a() - self.pset.a()).abs() > tol || (grid.b() - self.pset.b()).abs() > tol {
            return Err(Error::contract(format!(
                "grid [{}, {}] does not match parameter-set interval [{}, {}]",
                grid.a(),
                grid.b(),
                self.pset.a(),
                self.pset.b()
            )));
        }
        Ok(())
    }

    fn weights(&self, grid: &Grid) -> Result<Arc<CellWeights>> {
        match &self.kernel {
            Some(k) => cached_weights(k, grid),
            None => Err(Error::contract("classical operators have no kernel weights")),
        }
    }
}

/// Per-lag product-integration weights for one (kernel, step, size).
///
/// For the cell at lag `m` (lags in `[m h, (m+1) h]`): `near[m]` and
/// `far[m]` multiply the data at the cell end closer to and farther from the
/// evaluation node; `mass[m] = ∫ k` over the cell.
#[derive(Debug)]
pub(crate) struct CellWeights {
    near: Vec<f64>,
    far: Vec<f64>,
    mass: Vec<f64>,
}

type WeightKey = (Vec<u64>, u64, usize);

static WEIGHT_CACHE: LazyLock<Mutex<HashMap<WeightKey, Arc<CellWeights>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

const WEIGHT_CACHE_CAPACITY: usize = 64;

fn cached_weights(kernel: &KernelSpec, grid: &Grid) -> Result<Arc<CellWeights>> {
    let h = grid.step();
    let key = (kernel.fingerprint(), h.to_bits(), grid.len());
    if let Some(w) = WEIGHT_CACHE.lock().expect("weight cache poisoned").get(&key) {
        return Ok(Arc::clone(w));
    }
    let weights = Arc::new(cell_weights(kernel, h, grid.len() - 1)?);
    let mut cache = WEIGHT_CACHE.lock().expect("weight cache poisoned");
    if cache.len() >= WEIGHT_CACHE_CAPACITY {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&weights));
    Ok(weights)
}

static GAUSS8: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(8));

fn cell_weights(kernel: &KernelSpec, h: f64, cells: usize) -> Result<CellWeights> {
    kernel.ensure_integrable()?;
    let mut w = CellWeights {
        near: Vec::with_capacity(cells),
        far: Vec::with_capacity(cells),
        mass: Vec::with_capacity(cells),
    };
    match kernel.family() {
        Family::PowerLaw { order } => {
            let beta = *order;
            let c = h.powf(beta) / gamma(beta);
            for m in 0..cells {
                // G = ∫_0^1 (m+u)^{β-1} du, g = ∫_0^1 (m+u)^{β-1} u du
                let (big, small) = power_cell_integrals(beta, m);
                w.far.push(c * small);
                w.near.push(c * (big - small));
                w.mass.push(c * big);
            }
        }
        Family::Exponential { rate, scale } => {
            let a = rate * h;
            let i0 = if a == 0.0 { 1.0 } else { -(-a).exp_m1() / a };
            let i1 = if a < 1e-3 {
                0.5 - a / 3.0 + a * a / 8.0 - a * a * a / 30.0 + a.powi(4) / 144.0
            } else {
                (1.0 - (1.0 + a) * (-a).exp()) / (a * a)
            };
            for m in 0..cells {
                let e = scale * h * (-rate * m as f64 * h).exp();
                w.far.push(e * i1);
                w.near.push(e * (i0 - i1));
                w.mass.push(e * i0);
            }
        }
        Family::Tabulated(table) => {
            for m in 0..cells {
                let lo = m as f64 * h;
                let hi = lo + h;
                let (m0, m1) = tabulated_moments(table, lo, hi);
                w.far.push((m1 - lo * m0) / h);
                w.near.push((hi * m0 - m1) / h);
                w.mass.push(m0);
            }
        }
    }
    Ok(w)
}

fn power_cell_integrals(beta: f64, m: usize) -> (f64, f64) {
    if m == 0 {
        return (1.0 / beta, 1.0 / (beta + 1.0));
    }
    let mf = m as f64;
    if m < 4 {
        let l = (1.0 / mf).ln_1p();
        let big = mf.powf(beta) * (beta * l).exp_m1() / beta;
        let s1 = mf.powf(beta + 1.0) * ((beta + 1.0) * l).exp_m1() / (beta + 1.0);
        (big, s1 - mf * big)
    } else {
        let big = GAUSS8.integrate(|u| (mf + u).powf(beta - 1.0));
        let small = GAUSS8.integrate(|u| (mf + u).powf(beta - 1.0) * u);
        (big, small)
    }
}

/// `(∫ k, ∫ s·k)` over `[lo, hi]`, exact for the piecewise power law.
fn tabulated_moments(table: &TabulatedKernel, lo: f64, hi: f64) -> (f64, f64) {
    let power_integral = |coef: f64, e: f64, a: f64, b: f64| {
        if (e + 1.0).abs() < 1e-12 {
            coef * (b / a).ln()
        } else {
            coef * (b.powf(e + 1.0) - a.powf(e + 1.0)) / (e + 1.0)
        }
    };
    table.pieces_on(lo, hi).fold((0.0, 0.0), |(m0, m1), p| {
        (
            m0 + power_integral(p.coef, p.exponent, p.start, p.end),
            m1 + power_integral(p.coef, p.exponent + 1.0, p.start, p.end),
        )
    })
}

/// Left and right kernel integrals of the piecewise-linear interpolant of
/// the scalar samples `f`.
fn kernel_integrals(w: &CellWeights, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = f.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for m in 0..i {
            acc += w.far[m] * f[i - 1 - m] + w.near[m] * f[i - m];
        }
        left[i] = acc;
        let mut acc = 0.0;
        for m in 0..n - 1 - i {
            acc += w.near[m] * f[i + m] + w.far[m] * f[i + m + 1];
        }
        right[i] = acc;
    }
    (left, right)
}

/// Left and right kernel integrals of the piecewise-constant cell slopes.
fn slope_integrals(w: &CellWeights, slopes: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = slopes.len() + 1;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        left[i] = (0..i).map(|m| w.mass[m] * slopes[i - 1 - m]).sum();
        right[i] = (0..n - 1 - i).map(|m| w.mass[m] * slopes[i + m]).sum();
    }
    (left, right)
}

fn componentwise(f: &GridFunction, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> Result<GridFunction> {
    let d = f.dim();
    let n = f.len();
    let mut out = vec![0.0; n * d];
    for c in 0..d {
        let column = f.component(c).into_values();
        for (i, v) in op(&column).into_iter().enumerate() {
            out[i * d + c] = v;
        }
    }
    GridFunction::new(*f.grid(), d, out)
}

/// `K_P[f]` per component.
pub fn apply_k(cfg: &OperatorConfig, f: &GridFunction) -> Result<GridFunction> {
    cfg.check_grid(f.grid())?;
    let (p, q) = (cfg.pset.p(), cfg.pset.q());
    if cfg.is_classical() {
        return Ok(f.scaled(p + q));
    }
    let w = cfg.weights(f.grid())?;
    componentwise(f, |col| {
        let (l, r) = kernel_integrals(&w, col);
        l.iter().zip(&r).map(|(l, r)| p * l + q * r).collect()
    })
}

/// `B_P[f] = K_P[f']`, with `f'` the derivative of the piecewise-linear
/// interpolant. In classical mode, `(p + q)` times the nodal derivative.
pub fn apply_b(cfg: &OperatorConfig, f: &GridFunction) -> Result<GridFunction> {
    cfg.check_grid(f.grid())?;
    let (p, q) = (cfg.pset.p(), cfg.pset.q());
    if cfg.is_classical() {
        return Ok(f.derivative().scaled(p + q));
    }
    let w = cfg.weights(f.grid())?;
    let h = f.grid().step();
    componentwise(f, |col| {
        let slopes: Vec<f64> = col.windows(2).map(|s| (s[1] - s[0]) / h).collect();
        let (l, r) = slope_integrals(&w, &slopes);
        l.iter().zip(&r).map(|(l, r)| p * l + q * r).collect()
    })
}

/// `A_P[f] = d/dt (p K_left f - q K_right f)`. In classical mode,
/// `(p - q)` times the nodal derivative.
pub fn apply_a(cfg: &OperatorConfig, f: &GridFunction) -> Result<GridFunction> {
    cfg.check_grid(f.grid())?;
    let (p, q) = (cfg.pset.p(), cfg.pset.q());
    if cfg.is_classical() {
        return Ok(f.derivative().scaled(p - q));
    }
    let w = cfg.weights(f.grid())?;
    let integrated = componentwise(f, |col| {
        let (l, r) = kernel_integrals(&w, col);
        l.iter().zip(&r).map(|(l, r)| p * l - q * r).collect()
    })?;
    Ok(integrated.derivative())
}

/// `d/dt K_P[f]` without the side-dependent sign of [`apply_a`].
pub fn derivative_of_integral(cfg: &OperatorConfig, f: &GridFunction) -> Result<GridFunction> {
    Ok(apply_k(cfg, f)?.derivative())
}

/// Both sides of the integration-by-parts identity
/// `∫ g·B_P[f] = [f·K_{P*}[g]]_a^b - ∫ f·(K_{P*}[g])'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `f(b)·K_{P*}[g](b) - f(a)·K_{P*}[g](a)`.
    pub boundary: f64,
    /// `|lhs - rhs| / (1 + |lhs|)`.
    pub residual: f64,
}

pub fn ibp_residual(cfg: &OperatorConfig, f: &GridFunction, g: &GridFunction) -> Result<IbpCheck> {
    if f.dim() != 1 || g.dim() != 1 || !f.grid().matches(g.grid()) {
        return Err(Error::domain("ibp check needs scalar f and g on one grid"));
    }
    let lhs = g.zip_with(&apply_b(cfg, f)?, |x, y| x * y)?.integrate()?;
    let adj = cfg.adjoint();
    let kstar = apply_k(&adj, g)?;
    let n = f.len() - 1;
    let boundary = f.get(n, 0) * kstar.get(n, 0) - f.get(0, 0) * kstar.get(0, 0);
    let bulk = f.zip_with(&kstar.derivative(), |x, y| x * y)?.integrate()?;
    let rhs = boundary - bulk;
    Ok(IbpCheck {
        lhs,
        rhs,
        boundary,
        residual: (lhs - rhs).abs() / (1.0 + lhs.abs()),
    })
}

/// Row-major dense `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// First row with a nonzero entry in column `j`, if any.
    pub fn first_nonzero_in_column(&self, j: usize) -> Option<usize> {
        (0..self.n).find(|&i| self.get(i, j) != 0.0)
    }
}

/// The matrix of the scalar map `f ↦ B_P[f]` on `grid`.
pub fn b_matrix(cfg: &OperatorConfig, grid: &Grid) -> Result<DenseMatrix> {
    cfg.check_grid(grid)?;
    let n = grid.len();
    let h = grid.step();
    let (p, q) = (cfg.pset.p(), cfg.pset.q());
    let mut data = vec![0.0; n * n];
    if cfg.is_classical() {
        let s = (p + q) * 0.5 / h;
        let row = |i: usize| i * n;
        data[row(0)] = -3.0 * s;
        data[row(0) + 1] = 4.0 * s;
        data[row(0) + 2] = -s;
        for i in 1..n - 1 {
            data[row(i) + i - 1] = -s;
            data[row(i) + i + 1] = s;
        }
        data[row(n - 1) + n - 3] = s;
        data[row(n - 1) + n - 2] = -4.0 * s;
        data[row(n - 1) + n - 1] = 3.0 * s;
        return Ok(DenseMatrix { n, data });
    }
    let w = cfg.weights(grid)?;
    for i in 0..n {
        for cell in 0..n - 1 {
            let coef = if cell < i {
                p * w.mass[i - 1 - cell]
            } else {
                q * w.mass[cell - i]
            } / h;
            data[i * n + cell + 1] += coef;
            data[i * n + cell] -= coef;
        }
    }
    Ok(DenseMatrix { n, data })
}
