//! Uniform grids, sampled (vector-valued) functions and their calculus.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Nodes `t_i = a + i·h`, `h = (b - a)/(n - 1)`, `n ≥ 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    n: usize,
}

impl Grid {
    pub fn new(a: f64, b: f64, n_nodes: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::domain(format!(
                "grid interval must satisfy a < b, got [{a}, {b}]"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::domain(format!("grid needs at least 3 nodes, got {n_nodes}")));
        }
        Ok(Self { a, b, n: n_nodes })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.b
        } else {
            self.a + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// The nested grid with every interval halved (`2n - 1` nodes).
    pub fn refined(&self) -> Self {
        Self {
            n: 2 * self.n - 1,
            ..*self
        }
    }

    /// True when both grids describe the same nodes up to roundoff.
    pub fn matches(&self, other: &Grid) -> bool {
        let tol = 1e-12 * (self.b - self.a).abs().max(1.0);
        self.n == other.n && (self.a - other.a).abs() <= tol && (self.b - other.b).abs() <= tol
    }
}

/// Values of a function `[a, b] → ℝ^d` at the nodes of a grid.
///
/// Values are stored node-major: component `c` of node `i` lives at
/// `i·d + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("grid function dimension must be at least 1"));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::domain(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "grid function value at node {} is not finite",
                i / dim
            )));
        }
        Ok(Self { grid, dim, values })
    }

    /// Samples a scalar function.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            dim: 1,
            values: grid.nodes().map(f).collect(),
        }
    }

    /// Samples a vector function; `f` must return `dim` components.
    pub fn from_vec_fn(grid: Grid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for t in grid.nodes() {
            let v = f(t);
            assert_eq!(v.len(), dim, "sampled function returned wrong dimension");
            values.extend(v);
        }
        Self { grid, dim, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            dim: 1,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.len() * dim],
        }
    }

    /// Stacks scalar functions on a common grid into a vector function.
    pub fn from_components(components: &[GridFunction]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::domain("no components supplied"))?;
        let grid = first.grid;
        let dim = components.len();
        let mut values = vec![0.0; grid.len() * dim];
        for (c, f) in components.iter().enumerate() {
            if f.dim != 1 || !f.grid.matches(&grid) {
                return Err(Error::domain("components must be scalar functions on one grid"));
            }
            for i in 0..grid.len() {
                values[i * dim + c] = f.values[i];
            }
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The vector value at node `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Component `c` at node `i`.
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.dim + c]
    }

    pub fn component(&self, c: usize) -> GridFunction {
        assert!(c < self.dim, "component {c} out of range for dimension {}", self.dim);
        Self {
            grid: self.grid,
            dim: 1,
            values: (0..self.len()).map(|i| self.get(i, c)).collect(),
        }
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Pointwise combination of two functions of equal shape.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect(),
            ..self.clone()
        })
    }

    pub fn scaled(&self, factor: f64) -> GridFunction {
        self.map(|v| factor * v)
    }

    /// `self + factor·other`.
    pub fn add_scaled(&self, other: &GridFunction, factor: f64) -> Result<GridFunction> {
        self.zip_with(other, |x, y| x + factor * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn ensure_same_shape(&self, other: &GridFunction) -> Result<()> {
        if self.dim != other.dim || !self.grid.matches(&other.grid) {
            return Err(Error::domain(format!(
                "grid functions differ in shape ({} nodes × {} vs {} nodes × {})",
                self.len(),
                self.dim,
                other.len(),
                other.dim
            )));
        }
        Ok(())
    }

    /// Second-order finite-difference derivative: central at interior
    /// nodes, three-point one-sided at both endpoints.
    pub fn derivative(&self) -> GridFunction {
        let n = self.len();
        let d = self.dim;
        let inv2h = 0.5 / self.grid.step();
        let mut out = vec![0.0; n * d];
        for c in 0..d {
            let f = |i: usize| self.values[i * d + c];
            out[c] = (-3.0 * f(0) + 4.0 * f(1) - f(2)) * inv2h;
            for i in 1..n - 1 {
                out[i * d + c] = (f(i + 1) - f(i - 1)) * inv2h;
            }
            out[(n - 1) * d + c] = (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) * inv2h;
        }
        Self {
            grid: self.grid,
            dim: d,
            values: out,
        }
    }

    /// Composite trapezoid integral over `[a, b]` of a scalar function.
    pub fn integrate(&self) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::domain(format!(
                "integrate expects a scalar function, got dimension {}",
                self.dim
            )));
        }
        let h = self.grid.step();
        let v = &self.values;
        let interior: f64 = v[1..v.len() - 1].iter().sum();
        Ok(h * (0.5 * (v[0] + v[v.len() - 1]) + interior))
    }

    /// Running trapezoid integral `∫_a^{t_i} f`, componentwise.
    pub fn cumulative_integral(&self) -> GridFunction {
        let d = self.dim;
        let half_h = 0.5 * self.grid.step();
        let mut out = vec![0.0; self.values.len()];
        for i in 1..self.len() {
            for c in 0..d {
                out[i * d + c] =
                    out[(i - 1) * d + c] + half_h * (self.values[(i - 1) * d + c] + self.values[i * d + c]);
            }
        }
        Self {
            grid: self.grid,
            dim: d,
            values: out,
        }
    }

    /// Piecewise-linear interpolation at `t ∈ [a, b]`.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let (a, b) = (self.grid.a, self.grid.b);
        if !(t >= a && t <= b) {
            return Err(Error::domain(format!("interpolation point {t} outside [{a}, {b}]")));
        }
        let h = self.grid.step();
        let i = (((t - a) / h).floor() as usize).min(self.len() - 2);
        let w = ((t - self.grid.node(i)) / h).clamp(0.0, 1.0);
        Ok(self
            .at(i)
            .iter()
            .zip(self.at(i + 1))
            .map(|(&l, &r)| {
                if w == 0.0 {
                    l
                } else if w == 1.0 {
                    r
                } else {
                    l + w * (r - l)
                }
            })
            .collect())
    }

    /// Resamples onto another grid over the same interval by interpolation.
    pub fn resample(&self, grid: Grid) -> Result<GridFunction> {
        let mut values = Vec::with_capacity(grid.len() * self.dim);
        for t in grid.nodes() {
            values.extend(self.interpolate(t.clamp(self.grid.a, self.grid.b))?);
        }
        GridFunction::new(grid, self.dim, values)
    }

    /// Writes `t,x_1,...,x_d` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|c| format!("x_{c}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format_full(self.grid.node(i))];
            row.extend(self.at(i).iter().map(|&v| format_full(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`GridFunction::write_csv`]. The `t`
    /// column must describe a uniform grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || header.get(0).map(str::trim) != Some("t") {
            return Err(Error::Format("expected a header of the form t,x_1,...,x_d".into()));
        }
        let dim = header.len() - 1;
        let mut ts = Vec::new();
        let mut values = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != dim + 1 {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    record.len(),
                    dim + 1
                )));
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: cannot parse {field:?} as a number", line + 1)))?;
                if k == 0 {
                    ts.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        if ts.len() < 3 {
            return Err(Error::Format(format!("need at least 3 rows, got {}", ts.len())));
        }
        let grid = Grid::new(ts[0], ts[ts.len() - 1], ts.len())?;
        let tol = 1e-9 * grid.step();
        if let Some(i) = ts.iter().enumerate().position(|(i, &t)| (t - grid.node(i)).abs() > tol) {
            return Err(Error::Format(format!(
                "t column is not uniform (row {} has t = {})",
                i + 1,
                ts[i]
            )));
        }
        GridFunction::new(grid, dim, values)
    }
}

fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}
