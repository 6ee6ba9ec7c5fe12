//! Convergence bounds of partial aggregation under partial participation,
//! and best-effort estimation of the constants they depend on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smoothness and gradient-diversity constants.
///
/// `chi` is the relative cross-sensitivity between extractor and predictor;
/// it only enters the learning-rate condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants<T> {
    pub l_u: T,
    pub l_v: T,
    pub chi: T,
    pub delta: T,
    pub rho: T,
    pub eta_u: T,
}

impl<T: Scalar> BoundConstants<T> {
    /// All constants finite and non-negative, and `η_u ≤ 1/((χ+1)L_u)`.
    pub fn validate(&self) -> Result<()> {
        let all = [self.l_u, self.l_v, self.chi, self.delta, self.rho, self.eta_u];
        if all.iter().any(|c| !(c.is_finite() && *c >= T::zero())) {
            return Err(Error::Domain(format!("bound constants must be finite and non-negative: {self:?}")));
        }
        if self.eta_u * (self.chi + T::one()) * self.l_u > T::one() + T::lit(4.0) * T::epsilon() {
            return Err(Error::Domain(format!(
                "learning rate {} exceeds 1/((chi+1)L_u) = {}",
                self.eta_u,
                T::one() / ((self.chi + T::one()) * self.l_u)
            )));
        }
        Ok(())
    }
}

/// Data scheduled in each round and the total data `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace<T> {
    pub scheduled_data: Vec<T>,
    pub total_data: T,
}

impl<T: Scalar> ScheduleTrace<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_data > T::zero() && self.total_data.is_finite()) {
            return Err(Error::Domain(format!("total data must be positive, got {}", self.total_data)));
        }
        if let Some(s) = self.scheduled_data.iter().find(|&&s| !(s >= T::zero() && s <= self.total_data)) {
            return Err(Error::Domain(format!("scheduled data {s} outside [0, {}]", self.total_data)));
        }
        Ok(())
    }
}

fn missing_share<T: Scalar>(s: T, d: T) -> T {
    let m = (d - s) / d;
    m * m
}

/// `A_t = 1 + η_u L_u ((4/D²)(D - s_t)² ρ² - 1)`.
pub fn contraction_factor<T: Scalar>(scheduled: T, total: T, c: &BoundConstants<T>) -> T {
    T::one() + c.eta_u * c.l_u * (T::lit(4.0) * missing_share(scheduled, total) * c.rho * c.rho - T::one())
}

/// Additive term of one round: `(2η_u δ²/D²)(D - s_t)²`.
fn diversity_term<T: Scalar>(scheduled: T, total: T, c: &BoundConstants<T>) -> T {
    T::lit(2.0) * c.eta_u * c.delta * c.delta * missing_share(scheduled, total)
}

/// Optimality-gap bound after each round of the trace, starting from
/// `initial_gap = F(w_0) - F*`.
///
/// Uses `b_{t+1} = A_t b_t + (2η_u δ²/D²)(D - s_t)²`, which unrolls to the
/// product-and-sum form.
pub fn t_round_bound<T: Scalar>(initial_gap: T, trace: &ScheduleTrace<T>, c: &BoundConstants<T>) -> Result<Vec<T>> {
    c.validate()?;
    trace.validate()?;
    if !(initial_gap >= T::zero() && initial_gap.is_finite()) {
        return Err(Error::Domain(format!("initial gap must be finite and non-negative, got {initial_gap}")));
    }
    let d = trace.total_data;
    let mut b = initial_gap;
    Ok(trace
        .scheduled_data
        .iter()
        .map(|&s| {
            b = contraction_factor(s, d, c) * b + diversity_term(s, d, c);
            b
        })
        .collect())
}

/// Bound on the expected one-round change of the global loss:
/// `(η_u/2)((4/D²)(D-s)²ρ² - 1)·E‖∇_uF‖² + 2η_u(D-s)²δ²/D²`.
pub fn one_round_bound<T: Scalar>(scheduled: T, total: T, c: &BoundConstants<T>, grad_norm_sq: T) -> Result<T> {
    c.validate()?;
    ScheduleTrace { scheduled_data: vec![scheduled], total_data: total }.validate()?;
    if !(grad_norm_sq >= T::zero()) {
        return Err(Error::Domain(format!("squared gradient norm must be non-negative, got {grad_norm_sq}")));
    }
    let m = missing_share(scheduled, total);
    let half = T::lit(0.5);
    Ok(half * c.eta_u * (T::lit(4.0) * m * c.rho * c.rho - T::one()) * grad_norm_sq + diversity_term(scheduled, total, c))
}

/// Model state and gradients probed at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSnapshot<T> {
    /// Shared extractor parameters.
    pub u: Vec<T>,
    /// All local predictor parameters, concatenated.
    pub v: Vec<T>,
    /// Extractor gradient of each device's local loss.
    pub device_grad_u: Vec<Vec<T>>,
    /// Gradient of the global loss with respect to `v`.
    pub grad_v: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn sq_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().map(|&x| x * x).sum()
}

fn weighted_mean<T: Scalar>(vectors: &[Vec<T>], weights: &[T]) -> Vec<T> {
    let total: T = weights.iter().copied().sum();
    let mut out = vec![T::zero(); vectors.first().map_or(0, Vec::len)];
    for (v, &w) in vectors.iter().zip(weights) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + w / total * x;
        }
    }
    out
}

/// Best-effort estimates of the bound constants.
///
/// `L_u` and `L_v` are the largest secant ratios over snapshot pairs, so
/// they are lower bounds of the true constants. `(ρ², δ²)` are the slope and
/// intercept of a least-squares line through
/// `(‖∇_uF‖², max_k ‖∇_uF_k‖²)`, clipped to be non-negative, with the
/// intercept then raised so that every probe satisfies the inequality.
/// `χ` is not observable from these probes and is returned as zero.
pub fn estimate_constants<T: Scalar>(snapshots: &[GradientSnapshot<T>], data_sizes: &[T], eta_u: T) -> Result<BoundConstants<T>> {
    if snapshots.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 snapshots, got {}", snapshots.len())));
    }
    let k = data_sizes.len();
    if k == 0 || data_sizes.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::DegenerateInput("data sizes must be positive".into()));
    }
    if snapshots.iter().any(|s| s.device_grad_u.len() != k) {
        return Err(Error::DegenerateInput("every snapshot needs one gradient per device".into()));
    }

    let global_u: Vec<Vec<T>> = snapshots.iter().map(|s| weighted_mean(&s.device_grad_u, data_sizes)).collect();

    let (mut l_u, mut l_v) = (T::zero(), T::zero());
    let mut distinct = false;
    for i in 0..snapshots.len() {
        for j in i + 1..snapshots.len() {
            let (a, b) = (&snapshots[i], &snapshots[j]);
            let du = sq_dist(&a.u, &b.u);
            let dv = sq_dist(&a.v, &b.v);
            if du > T::zero() {
                l_u = l_u.max((sq_dist(&global_u[i], &global_u[j]) / du).sqrt());
            }
            if dv > T::zero() {
                l_v = l_v.max((sq_dist(&a.grad_v, &b.grad_v) / dv).sqrt());
            }
            distinct |= du > T::zero() || dv > T::zero();
        }
    }
    if !distinct {
        return Err(Error::DegenerateInput("all snapshots are identical".into()));
    }

    let points: Vec<(T, T)> = snapshots
        .iter()
        .zip(&global_u)
        .map(|(s, g)| {
            let worst = s.device_grad_u.iter().map(|x| sq_norm(x)).fold(T::zero(), T::max);
            (sq_norm(g), worst)
        })
        .collect();
    let (slope, intercept) = diversity_fit(&points);

    Ok(BoundConstants { l_u, l_v, chi: T::zero(), delta: intercept.sqrt(), rho: slope.sqrt(), eta_u })
}

/// Non-negative `(slope, intercept)` with `y ≤ slope·x + intercept` on all points.
fn diversity_fit<T: Scalar>(points: &[(T, T)]) -> (T, T) {
    let n = T::from_count(points.len());
    let mx = points.iter().map(|p| p.0).sum::<T>() / n;
    let my = points.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > T::zero() { (sxy / sxx).max(T::zero()) } else { T::zero() };
    let base = (my - slope * mx).max(T::zero());
    let lift = points.iter().map(|p| p.1 - slope * p.0 - base).fold(T::zero(), T::max);
    (slope, base + lift)
}
