//! Memory kernels, fractional orders and parameter sets.
//!
//! All kernels are difference kernels `k(x, t) = k(x - t)`, evaluated at the
//! lag `s = x - t > 0`. A kernel may be weakly singular at `s = 0`; its
//! [singularity exponent](KernelSpec::singularity_exponent) `σ` is the
//! smallest exponent for which `k(s)·s^σ` stays bounded as `s → 0⁺`.

use std::fmt;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Order `α` of a generalized fractional derivative, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::domain(format!(
                "fractional order must lie in (0, 1), got {alpha}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for FractionalOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The kernel families understood by the operators.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `k(s) = s^(order-1) / Γ(order)`, the Riemann–Liouville kernel of
    /// fractional integration of the given order.
    PowerLaw { order: f64 },
    /// `k(s) = scale · exp(-rate·s)`.
    Exponential { rate: f64, scale: f64 },
    /// Samples interpolated piecewise-linearly in `(ln s, ln k)`.
    Tabulated(TabulatedKernel),
}

/// A memory kernel `k(s)`, `s > 0`. Constructed only through the validating
/// constructors; immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: Family,
}

impl KernelSpec {
    /// The power-law kernel `s^(order-1)/Γ(order)`, `order ∈ (0, 1)`.
    pub fn power_law(order: f64) -> Result<Self> {
        if !(order > 0.0 && order < 1.0) {
            return Err(Error::domain(format!(
                "power-law kernel order must lie in (0, 1), got {order}"
            )));
        }
        Ok(Self {
            family: Family::PowerLaw { order },
        })
    }

    /// The kernel for which `B_P^α` with `P = ⟨a, b, 1, 0⟩` is the standard
    /// Caputo derivative of order `α`: `k(s) = s^(-α)/Γ(1-α)`.
    pub fn caputo(alpha: FractionalOrder) -> Self {
        Self {
            family: Family::PowerLaw {
                order: 1.0 - alpha.value(),
            },
        }
    }

    pub fn exponential(rate: f64, scale: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!(
                "exponential kernel rate must be positive, got {rate}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!(
                "exponential kernel scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            family: Family::Exponential { rate, scale },
        })
    }

    /// A tabulated kernel from `(s, k)` samples. Samples must be strictly
    /// positive and non-increasing in `k`, with strictly increasing `s > 0`.
    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        let table = TabulatedKernel::new(samples)?;
        if let Some(w) = table.samples.windows(2).find(|w| w[1].1 > w[0].1) {
            return Err(Error::domain(format!(
                "tabulated kernel must be non-increasing, but k({}) = {} < k({}) = {}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
        Ok(Self {
            family: Family::Tabulated(table),
        })
    }

    /// Like [`KernelSpec::tabulated`] but without the monotonicity
    /// requirement. Intended for diagnosing candidate kernels with
    /// [`check_complete_monotonicity`].
    pub fn tabulated_unchecked_shape(samples: Vec<(f64, f64)>) -> Result<Self> {
        Ok(Self {
            family: Family::Tabulated(TabulatedKernel::new(samples)?),
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// `σ ≥ 0` with `k(s)·s^σ` bounded as `s → 0⁺`.
    pub fn singularity_exponent(&self) -> f64 {
        match &self.family {
            Family::PowerLaw { order } => 1.0 - order,
            Family::Exponential { .. } => 0.0,
            Family::Tabulated(t) => (-t.segments[0].exponent).max(0.0),
        }
    }

    /// Fails unless `∫_0^ε k(s) ds` is finite.
    pub fn ensure_integrable(&self) -> Result<()> {
        let sigma = self.singularity_exponent();
        if sigma >= 1.0 {
            Err(Error::domain(format!(
                "kernel is not integrable at s = 0 (singularity exponent {sigma} ≥ 1)"
            )))
        } else {
            Ok(())
        }
    }

    /// Evaluates `k(s)`. Tabulated kernels are only defined inside their
    /// sample range.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::domain(format!(
                "kernel lag must be positive and finite, got {s}"
            )));
        }
        match &self.family {
            Family::Tabulated(t) => {
                let (lo, hi) = t.range();
                if s < lo || s > hi {
                    return Err(Error::domain(format!("lag {s} outside tabulated range [{lo}, {hi}]")));
                }
                Ok(t.eval(s))
            }
            _ => Ok(self.eval_unchecked(s)),
        }
    }

    /// `k(s)` for `s > 0`; tabulated kernels are extended beyond their
    /// samples by the power laws of the outermost segments.
    pub(crate) fn eval_unchecked(&self, s: f64) -> f64 {
        match &self.family {
            Family::PowerLaw { order } => s.powf(order - 1.0) / gamma(*order),
            Family::Exponential { rate, scale } => scale * (-rate * s).exp(),
            Family::Tabulated(t) => t.eval(s),
        }
    }

    /// Stable bit-level fingerprint used to key operator weight caches.
    pub(crate) fn fingerprint(&self) -> Vec<u64> {
        match &self.family {
            Family::PowerLaw { order } => vec![0, order.to_bits()],
            Family::Exponential { rate, scale } => vec![1, rate.to_bits(), scale.to_bits()],
            Family::Tabulated(t) => std::iter::once(2)
                .chain(t.samples.iter().flat_map(|(s, k)| [s.to_bits(), k.to_bits()]))
                .collect(),
        }
    }
}

/// `make_caputo_kernel`: the Caputo kernel of order `alpha`, validating the order.
pub fn make_caputo_kernel(alpha: f64) -> Result<KernelSpec> {
    Ok(KernelSpec::caputo(FractionalOrder::new(alpha)?))
}

/// One piece `k(s) = coef · s^exponent` of a tabulated kernel, valid on
/// `[start, end]` (the outermost pieces extend to `0` and `∞`).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PowerPiece {
    pub start: f64,
    pub end: f64,
    pub coef: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    samples: Vec<(f64, f64)>,
    segments: Vec<PowerPiece>,
}

impl TabulatedKernel {
    fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain("tabulated kernel needs at least two samples"));
        }
        for &(s, k) in &samples {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("tabulated kernel lag must be positive, got {s}")));
            }
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::domain(format!(
                    "tabulated kernel values must be strictly positive, got k({s}) = {k}"
                )));
            }
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("tabulated kernel lags must be strictly increasing"));
        }
        let segments = samples
            .windows(2)
            .map(|w| {
                let ((s0, k0), (s1, k1)) = (w[0], w[1]);
                let exponent = (k1 / k0).ln() / (s1 / s0).ln();
                PowerPiece {
                    start: s0,
                    end: s1,
                    coef: k0 / s0.powf(exponent),
                    exponent,
                }
            })
            .collect();
        Ok(Self { samples, segments })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    fn piece_index(&self, s: f64) -> usize {
        let idx = self.segments.partition_point(|p| p.end < s);
        idx.min(self.segments.len() - 1)
    }

    fn eval(&self, s: f64) -> f64 {
        let p = &self.segments[self.piece_index(s)];
        p.coef * s.powf(p.exponent)
    }

    /// The power pieces covering `[lo, hi]`, clipped to it.
    pub(crate) fn pieces_on(&self, lo: f64, hi: f64) -> impl Iterator<Item = PowerPiece> + '_ {
        let last = self.segments.len() - 1;
        self.segments.iter().enumerate().filter_map(move |(i, p)| {
            let start = if i == 0 { lo } else { p.start.max(lo) };
            let end = if i == last { hi } else { p.end.min(hi) };
            (end > start).then_some(PowerPiece {
                start,
                end,
                coef: p.coef,
                exponent: p.exponent,
            })
        })
    }
}

/// The parameter set `⟨a, b, p, q⟩`: interval and the weights of the left
/// (history) and right (future) kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSet {
    a: f64,
    b: f64,
    p: f64,
    q: f64,
}

impl ParameterSet {
    pub fn new(a: f64, b: f64, p: f64, q: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::domain(format!("interval must satisfy a < b, got [{a}, {b}]")));
        }
        if !(p.is_finite() && q.is_finite()) {
            return Err(Error::domain("weights p and q must be finite"));
        }
        if p == 0.0 && q == 0.0 {
            return Err(Error::domain("weights (p, q) must not both vanish"));
        }
        Ok(Self { a, b, p, q })
    }

    /// `⟨a, b, 1, 0⟩`: purely left-sided, the setting of the standard
    /// Caputo derivative.
    pub fn left(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, 1.0, 0.0)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `P* = ⟨a, b, q, p⟩`.
    pub fn adjoint(&self) -> Self {
        Self {
            p: self.q,
            q: self.p,
            ..*self
        }
    }
}

/// Worst violation of `(-1)^n k^(n)(s) ≥ 0` found for one derivative order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderViolation {
    pub order: usize,
    /// Violation magnitude relative to the local scale `k(s)/s^n`; zero when
    /// the sign condition holds at every sample.
    pub worst_violation: f64,
    pub worst_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub orders: Vec<OrderViolation>,
    pub tolerance: f64,
}

impl MonotonicityReport {
    pub fn passes(&self) -> bool {
        self.orders.iter().all(|o| o.worst_violation <= self.tolerance)
    }
}

/// Relative tolerance below which a sign violation counts as noise.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-6;

/// Samples complete monotonicity of `k` on `[s_min, s_max]`.
///
/// Derivatives up to `max_order` (at most 4) are estimated by central finite
/// differences with step `0.05·s` on a geometric grid of `n_samples` lags.
pub fn check_complete_monotonicity(
    kernel: &KernelSpec,
    s_min: f64,
    s_max: f64,
    n_samples: usize,
    max_order: usize,
) -> Result<MonotonicityReport> {
    if !(s_min > 0.0 && s_min < s_max && s_max.is_finite()) {
        return Err(Error::domain(format!(
            "sampling range must satisfy 0 < s_min < s_max, got [{s_min}, {s_max}]"
        )));
    }
    if max_order > 4 {
        return Err(Error::domain(format!(
            "finite-difference monotonicity check supports orders up to 4, got {max_order}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::domain("need at least two sample lags"));
    }
    let ratio = (s_max / s_min).ln();
    let lags: Vec<f64> = (0..n_samples)
        .map(|j| s_min * (ratio * j as f64 / (n_samples - 1) as f64).exp())
        .collect();

    let orders = (0..=max_order)
        .map(|n| {
            let mut worst = 0.0_f64;
            let mut worst_at = None;
            for &s in &lags {
                let h = 0.05 * s;
                let deriv = central_difference(|x| kernel.eval_unchecked(x), s, h, n);
                let scale = kernel.eval_unchecked(s).abs() / s.powi(n as i32);
                let signed = if n % 2 == 0 { deriv } else { -deriv };
                let violation = (-signed).max(0.0) / scale.max(f64::MIN_POSITIVE);
                if violation > worst {
                    worst = violation;
                    worst_at = Some(s);
                }
            }
            OrderViolation {
                order: n,
                worst_violation: worst,
                worst_at,
            }
        })
        .collect();
    Ok(MonotonicityReport {
        orders,
        tolerance: MONOTONICITY_TOLERANCE,
    })
}

/// n-th central difference `Δ_h^n f(s) / h^n`.
fn central_difference(f: impl Fn(f64) -> f64, s: f64, h: f64, n: usize) -> f64 {
    let mut binom = 1.0;
    let mut acc = 0.0;
    for i in 0..=n {
        let offset = (n as f64 / 2.0 - i as f64) * h;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(s + offset);
        binom = binom * (n - i) as f64 / (i + 1) as f64;
    }
    acc / h.powi(n as i32)
}
