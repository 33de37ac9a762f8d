//! Acceptance gate: one pass/fail line per criterion, nonzero exit on any
//! failure. Reference values are computed here from closed forms, never
//! taken from the library under test.

use std::f64::consts::{E, PI};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;

use herglotz_core::applications::{alpha_sweep, oscillator_el_residual, oscillator_problem, OscillatorParams};
use herglotz_core::herglotz::{evaluate_z, momentum, Quadratic};
use herglotz_core::noether::{
    invariance_defect, noether_residual, random_probe, variational_identity, TransformationFamily,
};
use herglotz_core::operators::{apply_b, ibp_residual};
use herglotz_core::solver::{solve_direct, stationarity_probe, SolveOptions};
use herglotz_core::{FractionalOrder, Grid, GridFunction, HerglotzProblem, OperatorConfig, Order, ParameterSet};

type Criterion = fn() -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Γ by Lanczos (g = 7, n = 9), independent of the library's gamma.
fn gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series: f64 = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * series
}

fn order(alpha: f64) -> FractionalOrder {
    FractionalOrder::new(alpha).unwrap()
}

fn unit_left() -> ParameterSet {
    ParameterSet::left(0.0, 1.0).unwrap()
}

fn sup_distance(x: &GridFunction, f: impl Fn(f64) -> f64) -> f64 {
    x.grid()
        .nodes()
        .enumerate()
        .map(|(i, t)| (x.get(i, 0) - f(t)).abs())
        .fold(0.0, f64::max)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn criterion_1() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.25, 0.5, 0.75] {
        let cfg = OperatorConfig::caputo(order(alpha), unit_left());
        let c = gamma(3.0) / gamma(3.0 - alpha);
        let rel_err = |intervals: usize| {
            let g = Grid::new(0.0, 1.0, intervals + 1).unwrap();
            let b = apply_b(&cfg, &GridFunction::from_fn(g, |t| t * t)).unwrap();
            let exact = GridFunction::from_fn(g, |t| c * t.powf(2.0 - alpha));
            b.add_scaled(&exact, -1.0).unwrap().max_abs() / exact.max_abs()
        };
        let (coarse, fine) = (rel_err(512), rel_err(1024));
        let observed = (coarse / fine).log2();
        let ok = fine <= 1e-3 && observed >= 2.0 - alpha - 0.2;
        pass &= ok;
        parts.push(format!(
            "α={alpha}: err {fine:.2e}, order {observed:.3} (≥ {:.2})",
            2.0 - alpha - 0.2
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_2() -> Verdict {
    let cfg = OperatorConfig::caputo(order(0.5), unit_left());
    let g = Grid::new(0.0, 1.0, 2049).unwrap();
    let check = ibp_residual(&cfg, &GridFunction::from_fn(g, |t| t), &GridFunction::constant(g, 1.0)).unwrap();
    let want = 4.0 / (3.0 * PI.sqrt());
    // The residual of this pair is reported but not gated: d/dt K_{P*}[1]
    // is singular at b, which limits the right-hand side to O(h^{1/2}).
    let monomial_ok = (check.lhs - want).abs() <= 1e-4;

    let cfg = OperatorConfig::caputo(order(0.3), unit_left());
    let residuals: Vec<f64> = [257, 513, 1025, 2049]
        .iter()
        .map(|&n| {
            let g = Grid::new(0.0, 1.0, n).unwrap();
            let f = GridFunction::from_fn(g, |t| t * (1.0 - t));
            let h = GridFunction::from_fn(g, |t| (PI * t).sin());
            ibp_residual(&cfg, &f, &h).unwrap().residual
        })
        .collect();
    let smooth_ok = residuals.iter().all(|&r| r <= 1e-3) && strictly_decreasing(&residuals);
    verdict(
        monomial_ok && smooth_ok,
        format!(
            "lhs {:.6} vs 4/(3√π) = {want:.6} (|Δ| {:.1e}), its residual {:.1e} (ungated); smooth pair residuals [{}]",
            check.lhs,
            (check.lhs - want).abs(),
            check.residual,
            fmt_seq(&residuals)
        ),
    )
}

fn classical_herglotz() -> HerglotzProblem {
    let l = Quadratic {
        mass: 1.0,
        stiffness: 0.0,
        coupling: 1.0,
    };
    HerglotzProblem::new(
        Arc::new(l),
        OperatorConfig::classical(unit_left()),
        vec![0.0],
        vec![Some(1.0)],
    )
    .unwrap()
}

fn criterion_3() -> Verdict {
    let prob = classical_herglotz();
    let exact = |t: f64| t.exp_m1() / (E - 1.0);
    let opts = SolveOptions {
        gradient_tolerance: 1e-10,
        ..Default::default()
    };
    let mut errors = Vec::new();
    let mut core = Vec::new();
    let mut interior = Vec::new();
    for n in [101, 201, 401] {
        let r = solve_direct(&prob, &prob.grid(n).unwrap(), &opts).unwrap();
        errors.push(sup_distance(&r.evaluation.x, exact));
        core.push(r.el_residual_norms[0].core);
        interior.push(r.el_residual_norms[0].interior);
    }
    let orders: Vec<f64> = core.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let pass = errors[0] <= 1e-3 && core.iter().all(|&r| r <= 1e-2) && orders.iter().all(|&o| o >= 1.5);
    verdict(
        pass,
        format!(
            "sup error at N=101 {:.2e}; EL core sup [{}] orders [{}]; interior sup [{}]",
            errors[0],
            fmt_seq(&core),
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join(", "),
            fmt_seq(&interior)
        ),
    )
}

fn fractional_oscillator(xb: Option<f64>) -> OscillatorParams {
    OscillatorParams {
        mass: 1.0,
        stiffness: 1.0,
        lambda0: 0.5,
        order: Order::Fractional(order(0.5)),
        kernel: None,
        b: 1.0,
        x0: 1.0,
        xb,
        z0: 0.0,
    }
}

fn criterion_4() -> Verdict {
    let prob = oscillator_problem(&fractional_oscillator(Some(0.0))).unwrap();
    let opts = SolveOptions {
        gradient_tolerance: 1e-9,
        ..Default::default()
    };
    let mut grads = Vec::new();
    let mut core = Vec::new();
    let mut interior = Vec::new();
    for n in [101, 201, 401] {
        let r = solve_direct(&prob, &prob.grid(n).unwrap(), &opts).unwrap();
        grads.push(r.final_gradient_norm);
        core.push(r.el_residual_norms[0].core);
        interior.push(r.el_residual_norms[0].interior);
    }
    let pass = grads.iter().all(|&g| g <= 1e-6) && strictly_decreasing(&core);
    verdict(
        pass,
        format!(
            "gradient norms [{}]; EL core sup [{}]; interior sup [{}]",
            fmt_seq(&grads),
            fmt_seq(&core),
            fmt_seq(&interior)
        ),
    )
}

fn criterion_5() -> Verdict {
    let p = OscillatorParams {
        lambda0: 0.0,
        xb: Some(0.0),
        ..fractional_oscillator(None)
    };
    let table = alpha_sweep(&p, &[0.9, 0.95, 0.99], 401, &SolveOptions::default()).unwrap();
    // Independent reference: x'' + x = 0, x(0) = 1, x(1) = 0.
    let reference = |t: f64| t.cos() - t.sin() / 1f64.tan();
    let mut distances = Vec::new();
    for row in &table.rows {
        match &row.outcome {
            Ok(e) => distances.push(sup_distance(&e.solution, reference)),
            Err(msg) => return verdict(false, format!("α={} failed: {msg}", row.alpha)),
        }
    }
    let pass = strictly_decreasing(&distances) && distances[2] <= 5e-2;
    verdict(
        pass,
        format!(
            "L∞ distance to cos t − cot(1) sin t at α = 0.9, 0.95, 0.99: [{}]",
            fmt_seq(&distances)
        ),
    )
}

fn criterion_6() -> Verdict {
    let l = Quadratic {
        mass: 1.0,
        stiffness: 0.0,
        coupling: 0.0,
    };
    let prob = HerglotzProblem::new(
        Arc::new(l),
        OperatorConfig::classical(unit_left()),
        vec![1.0],
        vec![None],
    )
    .unwrap();
    let r = solve_direct(&prob, &prob.grid(101).unwrap(), &SolveOptions::default()).unwrap();
    let flat = sup_distance(&r.evaluation.x, |_| 1.0);
    let classical_tc = r.transversality_residuals.as_ref().unwrap()[0].1.abs();
    let classical_ok = flat <= 1e-6 && classical_tc <= 1e-6;

    let prob = oscillator_problem(&fractional_oscillator(None)).unwrap();
    let opts = SolveOptions {
        gradient_tolerance: 1e-9,
        ..Default::default()
    };
    let r = solve_direct(&prob, &prob.grid(201).unwrap(), &opts).unwrap();
    let tc = r.transversality_residuals.as_ref().unwrap()[0].1.abs();
    let scale = momentum(&prob, &r.evaluation).unwrap().max_abs();
    let probe = stationarity_probe(&prob, &r.evaluation.x, 1e-4, true).unwrap();
    let rate = probe.max_improvement_rate();
    let fractional_ok = tc <= 1e-2 * scale && rate <= 10.0 * opts.gradient_tolerance;
    verdict(
        classical_ok && fractional_ok,
        format!(
            "classical: |x−1| {flat:.1e}, TC {classical_tc:.1e}; fractional: |K_P*[λL_v](b)| {tc:.1e} vs 1e-2·{scale:.3}, \
             x(b) = {:.6}, best endpoint gain/δ {rate:.1e}",
            r.evaluation.x.get(200, 0)
        ),
    )
}

fn criterion_7() -> Verdict {
    let translation = TransformationFamily::translation(vec![1.0]).unwrap();
    let l = Quadratic {
        mass: 1.0,
        stiffness: 0.0,
        coupling: 1.0,
    };
    let opts = SolveOptions {
        gradient_tolerance: 1e-10,
        ..Default::default()
    };

    let classical = classical_herglotz();
    let r = solve_direct(&classical, &classical.grid(401).unwrap(), &opts).unwrap();
    let zb = r.evaluation.z_b;
    let defect = invariance_defect(&classical, &r.evaluation.x, &translation, 1e-4)
        .unwrap()
        .abs()
        / zb.abs().max(1e-300);
    let classical_sup = noether_residual(&classical, &r.evaluation, &translation).unwrap().norms;

    let fractional = HerglotzProblem::new(
        Arc::new(l),
        OperatorConfig::caputo(order(0.5), unit_left()),
        vec![0.0],
        vec![Some(1.0)],
    )
    .unwrap();
    let mut frac_core = Vec::new();
    let mut frac_defect: f64 = 0.0;
    for n in [101, 201, 401] {
        let r = solve_direct(&fractional, &fractional.grid(n).unwrap(), &opts).unwrap();
        let d = invariance_defect(&fractional, &r.evaluation.x, &translation, 1e-4).unwrap();
        frac_defect = frac_defect.max(d.abs() / r.evaluation.z_b.abs());
        frac_core.push(
            noether_residual(&fractional, &r.evaluation, &translation)
                .unwrap()
                .norms
                .core,
        );
    }

    let mut worst_identity: f64 = 0.0;
    for (k, op) in [
        OperatorConfig::classical(unit_left()),
        OperatorConfig::caputo(order(0.5), unit_left()),
    ]
    .into_iter()
    .enumerate()
    {
        let osc = Quadratic {
            mass: 1.0,
            stiffness: 1.0,
            coupling: 0.5,
        };
        let prob = HerglotzProblem::new(Arc::new(osc), op, vec![1.0], vec![Some(0.0)]).unwrap();
        for seed in 0..5 {
            let (x, xi) = random_probe(&prob, 401, 100 * k as u64 + seed).unwrap();
            worst_identity = worst_identity.max(variational_identity(&prob, &x, &xi, 1e-5).unwrap().relative_error);
        }
    }

    let pass = defect <= 1e-8
        && frac_defect <= 1e-8
        && classical_sup.core <= 1e-3
        && strictly_decreasing(&frac_core)
        && worst_identity <= 1e-3;
    verdict(
        pass,
        format!(
            "invariance defect (rel) classical {defect:.1e}, fractional {frac_defect:.1e}; classical Noether sup core {:.2e} \
             (interior {:.2e}); fractional core [{}]; variational identity worst rel {worst_identity:.1e}",
            classical_sup.core,
            classical_sup.interior,
            fmt_seq(&frac_core)
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut worst: f64 = 0.0;
    let trajectories: [fn(f64) -> f64; 4] = [
        |t| t.cos(),
        |t| (1.0 - t) * (3.0 * t).sin() + 0.5,
        |t| t.powi(3) - 2.0 * t,
        |t| (2.0 * t).exp() / (1.0 + t * t),
    ];
    for (m, k, lambda0) in [(1.0, 1.0, 0.5), (2.0, 0.3, -1.0), (0.5, 4.0, 2.0)] {
        let p = OscillatorParams {
            mass: m,
            stiffness: k,
            lambda0,
            order: Order::Classical,
            kernel: None,
            b: 2.0,
            x0: 0.0,
            xb: None,
            z0: 0.0,
        };
        for f in trajectories {
            let p = OscillatorParams {
                x0: f(0.0),
                ..p.clone()
            };
            let prob = oscillator_problem(&p).unwrap();
            let g = prob.grid(301).unwrap();
            let ev = evaluate_z(&prob, &GridFunction::from_fn(g, f)).unwrap();
            let dho = oscillator_el_residual(&p, &ev).unwrap();
            // −[m d/dt(e^{−λ0 t} ẋ) + k e^{−λ0 t} x]
            let xdot = ev.x.derivative();
            let decay = GridFunction::from_fn(g, |t| (-lambda0 * t).exp());
            let inner = xdot.zip_with(&decay, |v, e| m * e * v).unwrap().derivative();
            let spring = ev.x.zip_with(&decay, |x, e| k * e * x).unwrap();
            let oracle = inner.add_scaled(&spring, 1.0).unwrap().scaled(-1.0);
            let rel = dho.add_scaled(&oracle, -1.0).unwrap().max_abs() / oracle.max_abs();
            worst = worst.max(rel);
        }
    }
    verdict(
        worst <= 1e-10,
        format!("worst relative difference {worst:.1e} over 12 trajectory/parameter pairs"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("1 operator accuracy (monomial oracle)", criterion_1),
        ("2 integration by parts", criterion_2),
        ("3 classical Herglotz extremal", criterion_3),
        ("4 EL residual on fractional solutions", criterion_4),
        ("5 classical limit continuity", criterion_5),
        ("6 transversality", criterion_6),
        ("7 Noether identity", criterion_7),
        ("8 sign-convention invariant", criterion_8),
    ];
    let verdicts: Vec<Verdict> = thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| verdict(false, "panicked".into())))
            .collect()
    });
    let mut failed = 0;
    for ((name, _), v) in criteria.iter().zip(&verdicts) {
        println!(
            "criterion {name}: {} | {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
