//! Invariance of the Herglotz functional under one-parameter families
//! `x̄ = h(t, x, s)` and the generalized Noether identity
//! `Σ_j Ô[λ·∂L/∂v_j, ξ_j] = 0`, with `Ô[f, g] = f·B_P[g] − g·A_{P*}[f]`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::herglotz::{evaluate_trajectory, partials_along, HerglotzEvaluation, HerglotzProblem, ResidualNorms};
use crate::numgrid::GridFunction;
use crate::operators::{apply_a, apply_b, OperatorConfig};

type Generator = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// The first-order generator `ξ(t, x) = ∂_s h(t, x, s)|_{s=0}` of a family.
#[derive(Clone)]
pub struct TransformationFamily {
    name: String,
    dim: usize,
    generator: Arc<Generator>,
}

impl fmt::Debug for TransformationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformationFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl TransformationFamily {
    /// `x̄ = x + s·direction`.
    pub fn translation(direction: Vec<f64>) -> Result<Self> {
        if direction.is_empty() || direction.iter().any(|d| !d.is_finite()) {
            return Err(Error::domain("translation direction must be finite and non-empty"));
        }
        let dim = direction.len();
        Ok(Self {
            name: "translation".into(),
            dim,
            generator: Arc::new(move |_, _| direction.clone()),
        })
    }

    /// `x̄ = e^s·x`.
    pub fn scaling(dim: usize) -> Self {
        Self {
            name: "scaling".into(),
            dim,
            generator: Arc::new(|_, x| x.to_vec()),
        }
    }

    /// `ξ(t)` interpolated from a sampled table, independent of `x`.
    pub fn from_table(table: GridFunction) -> Self {
        let dim = table.dim();
        Self {
            name: "table".into(),
            dim,
            generator: Arc::new(move |t, _| table.interpolate(t).unwrap_or_else(|_| vec![f64::NAN; dim])),
        }
    }

    pub fn from_fn(
        name: impl Into<String>,
        dim: usize,
        generator: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            generator: Arc::new(generator),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ξ_j(t, x(t))` sampled along a trajectory.
    pub fn along(&self, x: &GridFunction) -> Result<GridFunction> {
        if x.dim() != self.dim {
            return Err(Error::contract(format!(
                "generator acts on {} components, trajectory has {}",
                self.dim,
                x.dim()
            )));
        }
        let grid = *x.grid();
        let mut values = Vec::with_capacity(x.values().len());
        for i in 0..grid.len() {
            let xi = (self.generator)(grid.node(i), x.at(i));
            if xi.len() != self.dim || xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation {
                    node: i,
                    message: format!("generator `{}` is not finite", self.name),
                });
            }
            values.extend(xi);
        }
        GridFunction::new(grid, self.dim, values)
    }
}

/// `θ(b) = d/ds z[x + s·ξ](b)` at `s = 0` by central differences.
/// Zero for an invariant family.
pub fn invariance_defect(
    prob: &HerglotzProblem,
    x: &GridFunction,
    xi: &TransformationFamily,
    s_step: f64,
) -> Result<f64> {
    if !(s_step > 1e-8 && s_step < 1e-2) {
        return Err(Error::domain(format!("s_step must lie in (1e-8, 1e-2), got {s_step}")));
    }
    let direction = xi.along(x)?;
    if direction.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let up = evaluate_trajectory(prob, &x.add_scaled(&direction, s_step)?)?.z_b;
    let down = evaluate_trajectory(prob, &x.add_scaled(&direction, -s_step)?)?.z_b;
    Ok((up - down) / (2.0 * s_step))
}

/// `Ô[f, g] = f·B_P[g] − g·A_{P*}[f]` for scalar `f`, `g`.
pub fn noether_operator(cfg: &OperatorConfig, f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    if f.dim() != 1 || g.dim() != 1 || !f.grid().matches(g.grid()) {
        return Err(Error::domain("noether operator needs scalar f and g on one grid"));
    }
    let bg = apply_b(cfg, g)?;
    let af = apply_a(&cfg.adjoint(), f)?;
    let first = f.zip_with(&bg, |f, b| f * b)?;
    let second = g.zip_with(&af, |g, a| g * a)?;
    first.add_scaled(&second, -1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoetherResidual {
    pub pointwise: GridFunction,
    pub norms: ResidualNorms,
    pub integral: f64,
}

/// `Σ_j Ô[λ·∂L/∂v_j, ξ_j(t, x(t))]` along an evaluation.
pub fn noether_residual(
    prob: &HerglotzProblem,
    ev: &HerglotzEvaluation,
    xi: &TransformationFamily,
) -> Result<NoetherResidual> {
    let xi_along = xi.along(&ev.x)?;
    let (_, lv, _) = partials_along(prob, ev)?;
    let grid = *ev.x.grid();
    let mut total = GridFunction::zeros(grid, 1);
    for j in 0..prob.dim() {
        let f = lv.component(j).zip_with(&ev.lambda, |a, l| a * l)?;
        total = total.add_scaled(&noether_operator(prob.op(), &f, &xi_along.component(j))?, 1.0)?;
    }
    Ok(NoetherResidual {
        norms: ResidualNorms::of(&total)[0],
        integral: total.integrate()?,
        pointwise: total,
    })
}

/// Both sides of `θ(b)·λ(b) = ∫ λ·Σ_j (∂L/∂x_j·ξ_j + ∂L/∂v_j·B_P[ξ_j])`,
/// which holds for every trajectory and generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalIdentity {
    pub theta_lambda: f64,
    pub integral: f64,
    /// `|lhs − rhs| / max(|lhs|, |rhs|, noise_floor)`.
    pub relative_error: f64,
    /// Roundoff level of the difference quotient behind `theta_lambda`:
    /// `N·ε·max(|z(b)|, 1)·λ(b) / s_step`. Sides below it are noise.
    pub noise_floor: f64,
}

pub fn variational_identity(
    prob: &HerglotzProblem,
    x: &GridFunction,
    xi: &TransformationFamily,
    s_step: f64,
) -> Result<VariationalIdentity> {
    let theta = invariance_defect(prob, x, xi, s_step)?;
    let ev = evaluate_trajectory(prob, x)?;
    let (lx, lv, _) = partials_along(prob, &ev)?;
    let xi_along = xi.along(x)?;
    let b_xi = apply_b(prob.op(), &xi_along)?;
    let d = prob.dim();
    let density: Vec<f64> = (0..x.len())
        .map(|i| {
            let s: f64 = (0..d)
                .map(|j| lx.get(i, j) * xi_along.get(i, j) + lv.get(i, j) * b_xi.get(i, j))
                .sum();
            s * ev.lambda.get(i, 0)
        })
        .collect();
    let integral = GridFunction::new(*x.grid(), 1, density)?.integrate()?;
    let lambda_b = ev.lambda.get(x.len() - 1, 0);
    let theta_lambda = theta * lambda_b;
    let noise_floor = x.len() as f64 * f64::EPSILON * ev.z_b.abs().max(1.0) * lambda_b.abs() / s_step;
    let scale = theta_lambda.abs().max(integral.abs()).max(noise_floor);
    Ok(VariationalIdentity {
        theta_lambda,
        integral,
        relative_error: if scale == 0.0 {
            0.0
        } else {
            (theta_lambda - integral).abs() / scale
        },
        noise_floor,
    })
}

/// A smooth random trajectory through the problem's boundary data and a
/// smooth random `x`-independent generator, for identity probes.
pub fn random_probe(prob: &HerglotzProblem, n: usize, seed: u64) -> Result<(GridFunction, TransformationFamily)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = prob.grid(n)?;
    let d = prob.dim();
    let (a, b) = (grid.a(), grid.b());
    let mut coeffs = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let x_modes: Vec<Vec<f64>> = (0..d).map(|_| coeffs(4)).collect();
    let xi_modes: Vec<Vec<f64>> = (0..d).map(|_| coeffs(4)).collect();
    let xa = prob.x_a().to_vec();
    let xb: Vec<f64> = prob.x_b().iter().zip(&xa).map(|(b, a)| b.unwrap_or(*a)).collect();
    let x = GridFunction::from_vec_fn(grid, d, |t| {
        let u = (t - a) / (b - a);
        (0..d)
            .map(|j| {
                let bump: f64 = x_modes[j]
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * u).sin())
                    .sum();
                xa[j] + (xb[j] - xa[j]) * u + 0.5 * bump
            })
            .collect()
    });
    let xi = TransformationFamily::from_fn("random", d, move |t, _| {
        let u = (t - a) / (b - a);
        xi_modes
            .iter()
            .map(|m| m[0] + m[1] * u + m[2] * (3.0 * u).cos() + m[3] * u * u)
            .collect()
    });
    Ok((x, xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::herglotz::{FnLagrangian, Partials, Quadratic};
    use crate::kernels::{FractionalOrder, ParameterSet};
    use crate::numgrid::Grid;
    use proptest::prelude::*;

    fn left01() -> ParameterSet {
        ParameterSet::left(0.0, 1.0).unwrap()
    }

    fn problem(l: impl crate::herglotz::Lagrangian + 'static, op: OperatorConfig) -> HerglotzProblem {
        HerglotzProblem::new(Arc::new(l), op, vec![0.0], vec![Some(1.0)]).unwrap()
    }

    #[test]
    fn x_free_lagrangian_is_translation_invariant() {
        let prob = problem(
            Quadratic {
                mass: 1.0,
                stiffness: 0.0,
                coupling: 0.5,
            },
            OperatorConfig::caputo(FractionalOrder::new(0.5).unwrap(), left01()),
        );
        let g = prob.grid(51).unwrap();
        let x = GridFunction::from_fn(g, |t| t * t);
        let xi = TransformationFamily::translation(vec![1.0]).unwrap();
        let zb = evaluate_trajectory(&prob, &x).unwrap().z_b;
        assert!(invariance_defect(&prob, &x, &xi, 1e-4).unwrap().abs() <= 1e-8 * zb.abs().max(1.0));
        let zero = TransformationFamily::translation(vec![0.0]).unwrap();
        assert_eq!(invariance_defect(&prob, &x, &zero, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn stiffness_breaks_translation_invariance() {
        let prob = problem(
            Quadratic {
                mass: 1.0,
                stiffness: 1.0,
                coupling: 0.5,
            },
            OperatorConfig::caputo(FractionalOrder::new(0.5).unwrap(), left01()),
        );
        let g = prob.grid(51).unwrap();
        let x = GridFunction::from_fn(g, |t| 1.0 - t);
        let xi = TransformationFamily::translation(vec![1.0]).unwrap();
        assert!(invariance_defect(&prob, &x, &xi, 1e-4).unwrap().abs() > 1e-3);
    }

    #[test]
    fn classical_operator_is_a_total_derivative() {
        let cfg = OperatorConfig::classical(left01());
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::from_fn(g, |t| (2.0 * t).sin());
        let h = GridFunction::from_fn(g, |t| 1.0 + t * t);
        let o = noether_operator(&cfg, &f, &h).unwrap();
        let want = f.zip_with(&h, |a, b| a * b).unwrap().derivative();
        assert!(o.add_scaled(&want, -1.0).unwrap().max_abs() < 1e-3);
        let total = o.integrate().unwrap();
        let ends = f.get(100, 0) * h.get(100, 0) - f.get(0, 0) * h.get(0, 0);
        assert!((total - ends).abs() < 1e-3);
    }

    #[test]
    fn operator_degenerate_arguments() {
        let cfg = OperatorConfig::caputo(FractionalOrder::new(0.3).unwrap(), left01());
        let g = Grid::new(0.0, 1.0, 33).unwrap();
        let f = GridFunction::from_fn(g, |t| t.exp());
        let c = GridFunction::constant(g, 2.0);
        let o = noether_operator(&cfg, &f, &c).unwrap();
        let want = apply_a(&cfg.adjoint(), &f).unwrap().scaled(-2.0);
        assert!(o.add_scaled(&want, -1.0).unwrap().max_abs() < 1e-12);
        let zero = noether_operator(&cfg, &GridFunction::zeros(g, 1), &f).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn zero_generator_has_zero_residual() {
        let prob = problem(
            Quadratic {
                mass: 1.0,
                stiffness: 0.0,
                coupling: 0.5,
            },
            OperatorConfig::classical(left01()),
        );
        let g = prob.grid(21).unwrap();
        let ev = evaluate_trajectory(&prob, &GridFunction::from_fn(g, |t| t)).unwrap();
        let r = noether_residual(&prob, &ev, &TransformationFamily::translation(vec![0.0]).unwrap()).unwrap();
        assert_eq!(r.pointwise.max_abs(), 0.0);
        assert_eq!(r.integral, 0.0);
    }

    #[test]
    fn classical_conserved_quantity() {
        // L = v²/2 + z: e^{-t}ẋ is conserved along x = (e^t − 1)/(e − 1).
        let prob = problem(
            Quadratic {
                mass: 1.0,
                stiffness: 0.0,
                coupling: 1.0,
            },
            OperatorConfig::classical(left01()),
        );
        let g = prob.grid(401).unwrap();
        let x = GridFunction::from_fn(g, |t| t.exp_m1() / (std::f64::consts::E - 1.0));
        let ev = evaluate_trajectory(&prob, &x).unwrap();
        let r = noether_residual(&prob, &ev, &TransformationFamily::translation(vec![1.0]).unwrap()).unwrap();
        assert!(r.norms.interior < 1e-3, "{:?}", r.norms);
    }

    #[test]
    fn variational_identity_on_random_probes() {
        let l = FnLagrangian::new(|t, x: &[f64], v: &[f64], z| 0.5 * v[0] * v[0] - x[0].sin() + 0.3 * t * z)
            .with_partials(|t, x, v, _| Partials {
                x: vec![-x[0].cos()],
                v: vec![v[0]],
                z: 0.3 * t,
            });
        for op in [
            OperatorConfig::classical(left01()),
            OperatorConfig::caputo(FractionalOrder::new(0.5).unwrap(), left01()),
        ] {
            let prob = problem(l.clone(), op);
            for seed in 0..4 {
                let (x, xi) = random_probe(&prob, 201, seed).unwrap();
                let id = variational_identity(&prob, &x, &xi, 1e-5).unwrap();
                assert!(id.relative_error <= 1e-3, "seed {seed}: {id:?}");
            }
        }
    }

    #[test]
    fn generator_validation() {
        assert!(TransformationFamily::translation(vec![]).is_err());
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        let bad = TransformationFamily::from_fn("bad", 1, |t, _| vec![1.0 / (t - 0.5)]);
        let x = GridFunction::zeros(g, 1);
        assert!(matches!(bad.along(&x), Err(Error::Evaluation { node: 5, .. })));
        let table = TransformationFamily::from_table(GridFunction::from_fn(g, |t| 2.0 * t));
        assert!((table.along(&x).unwrap().get(3, 0) - 0.6).abs() < 1e-12);
        assert_eq!(
            TransformationFamily::scaling(1)
                .along(&GridFunction::constant(g, 3.0))
                .unwrap()
                .get(4, 0),
            3.0
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn operator_is_bilinear(a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let cfg = OperatorConfig::caputo(FractionalOrder::new(0.6).unwrap(), ParameterSet::new(0.0, 1.0, 0.7, 0.3).unwrap());
            let g = Grid::new(0.0, 1.0, 41).unwrap();
            let f1 = GridFunction::from_fn(g, |t| t.cos());
            let f2 = GridFunction::from_fn(g, |t| t * t - 0.2);
            let h = GridFunction::from_fn(g, |t| (3.0 * t).sin());
            let combo = f1.scaled(a).add_scaled(&f2, b).unwrap();
            let lhs = noether_operator(&cfg, &combo, &h).unwrap();
            let rhs = noether_operator(&cfg, &f1, &h).unwrap().scaled(a)
                .add_scaled(&noether_operator(&cfg, &f2, &h).unwrap(), b).unwrap();
            prop_assert!(lhs.add_scaled(&rhs, -1.0).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
            let lhs = noether_operator(&cfg, &h, &combo).unwrap();
            let rhs = noether_operator(&cfg, &h, &f1).unwrap().scaled(a)
                .add_scaled(&noether_operator(&cfg, &h, &f2).unwrap(), b).unwrap();
            prop_assert!(lhs.add_scaled(&rhs, -1.0).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
        }
    }
}
