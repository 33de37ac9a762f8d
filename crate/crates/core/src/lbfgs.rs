//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use crate::error::Result;

pub(crate) trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub memory: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stop {
    Gradient,
    Step,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub stop: Stop,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn direction(g: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    let gamma = match history.back() {
        Some(p) => dot(&p.s, &p.y) / dot(&p.y, &p.y),
        None => 1.0 / sup(g).max(1.0),
    };
    q.iter_mut().for_each(|q| *q *= gamma);
    for (p, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|q| *q = -*q);
    q
}

/// Minimizes `obj` from `x0`. Steps that fail to evaluate are treated as
/// infinite objective values and backtracked.
pub(crate) fn minimize(obj: &mut dyn Objective, x0: Vec<f64>, settings: Settings) -> Result<Outcome> {
    let mut x = x0;
    let mut f = obj.value(&x)?;
    let mut g = obj.gradient(&x)?;
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut iterations = 0;
    let stop = loop {
        if sup(&g) <= settings.gradient_tolerance {
            break Stop::Gradient;
        }
        if iterations >= settings.max_iterations {
            break Stop::MaxIterations;
        }
        let mut d = direction(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            let scale = sup(&g).max(1.0);
            d = g.iter().map(|g| -g / scale).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + t * d).collect();
            if let Ok(ft) = obj.value(&trial) {
                if ft.is_finite() && ft <= f + ARMIJO_C1 * t * slope + 4.0 * f64::EPSILON * f.abs() {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((mut x_new, mut f_new)) = accepted else {
            break Stop::LineSearch;
        };
        // Parabola through f(0), f'(0) and f(t): on near-quadratic
        // objectives its minimizer approximates an exact line search.
        let curvature = (f_new - f - slope * t) / (t * t);
        if curvature > 0.0 {
            let t_star = -slope / (2.0 * curvature);
            if t_star > 0.0 && t_star <= 10.0 * t && (t_star - t).abs() > 1e-3 * t {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + t_star * d).collect();
                if let Ok(ft) = obj.value(&trial) {
                    if ft.is_finite() && ft < f_new {
                        x_new = trial;
                        f_new = ft;
                    }
                }
            }
        }
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let g_new = obj.gradient(&x_new)?;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back(Pair {
                s: s.clone(),
                y,
                rho: 1.0 / sy,
            });
        }
        let small_step = sup(&s) <= settings.step_tolerance * sup(&x).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if small_step && sup(&g) > settings.gradient_tolerance {
            break Stop::Step;
        }
    };
    Ok(Outcome {
        gradient_norm: sup(&g),
        x,
        iterations,
        stop,
    })
}
