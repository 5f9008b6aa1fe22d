//! Serving-plan redesign.
//!
//! The operator trades the priority-weighted sum of coverage thresholds
//! against their deviation from the existing plan `q`:
//!
//! ```text
//! min_a  R * sum (a - q)^2 - (1 - R) * sum b a
//! s.t.   sum a <= sum q,  a <= 1,  a >= 0
//! ```
//!
//! Up to a constant the objective is `R a'a - f'a` with
//! `f = (1 - R) b + 2 R q`. The inequality on the sum is tight at the
//! optimum because the unconstrained minimizer already exceeds `q`
//! elementwise. Collecting the multipliers into `d = [mu; delta1; delta2]`
//! and writing `B = [-1 | -I | I]`, `s = [-sum q; -1; 0]`, the stationary
//! point is `a = (f + B d) / (2R)` and the dual becomes the nonnegative QP
//!
//! ```text
//! min_{d >= 0}  1/4 d' Bh d - fh' d,   Bh = B'B / R,   fh = s - B'f / (2R)
//! ```
//!
//! solved with sign-split multiplicative updates.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Default convergence threshold on the infinity norm of the dual step.
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub f: DVector<f64>,
    pub r_weight: f64,
    pub q: DVector<f64>,
    /// Per-user priorities.
    pub b: DVector<f64>,
    /// Constraint matrix `B`, NG x (2NG + 1).
    pub b_mat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub f_hat: DVector<f64>,
    pub s: DVector<f64>,
    pub dims: usize,
    b_pos: DMatrix<f64>,
    b_neg: DMatrix<f64>,
}

impl QpProblem {
    pub fn dual_len(&self) -> usize {
        2 * self.dims + 1
    }
}

/// Nonnegative multipliers `[mu; delta1; delta2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub d: DVector<f64>,
}

impl DualVector {
    /// All-ones start; the updates need strictly positive entries.
    pub fn ones(n_users: usize) -> Self {
        Self { d: DVector::from_element(2 * n_users + 1, 1.0) }
    }

    pub fn mu(&self) -> f64 {
        self.d[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanVector {
    pub alpha: Vec<f64>,
}

impl PlanVector {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

pub fn assemble_qp(q: &[f64], b: &[f64], r_weight: f64) -> Result<QpProblem> {
    if !(r_weight > 0.0 && r_weight < 1.0) {
        return Err(Error::Domain(format!("plan weight R = {r_weight} outside (0,1)")));
    }
    if q.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: q.len(), found: b.len() });
    }
    if q.is_empty() {
        return Err(Error::Domain("empty plan".into()));
    }
    let ng = q.len();
    let q = DVector::from_column_slice(q);
    let b = DVector::from_column_slice(b);
    let f = b.scale(1.0 - r_weight) + q.scale(2.0 * r_weight);

    let mut b_mat = DMatrix::zeros(ng, 2 * ng + 1);
    for i in 0..ng {
        b_mat[(i, 0)] = -1.0;
        b_mat[(i, 1 + i)] = -1.0;
        b_mat[(i, 1 + ng + i)] = 1.0;
    }
    let mut s = DVector::zeros(2 * ng + 1);
    s[0] = -q.sum();
    for i in 0..ng {
        s[1 + i] = -1.0;
    }
    let b_hat = b_mat.transpose() * &b_mat / r_weight;
    let f_hat = &s - b_mat.transpose() * &f / (2.0 * r_weight);
    let (b_pos, b_neg) = split_signs(&b_hat);
    Ok(QpProblem { f, r_weight, q, b, b_mat, b_hat, f_hat, s, dims: ng, b_pos, b_neg })
}

/// Elementwise split `m = pos - neg` into nonnegative parts.
pub fn split_signs(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|x| x.max(0.0)), m.map(|x| (-x).max(0.0)))
}

/// One multiplicative update of every coordinate.
pub fn mu_step(d: &DualVector, qp: &QpProblem) -> DualVector {
    let pd = &qp.b_pos * &d.d;
    let nd = &qp.b_neg * &d.d;
    let mut next = d.d.clone();
    for i in 0..next.len() {
        let fh = qp.f_hat[i];
        if pd[i] > 0.0 {
            next[i] = d.d[i] * (fh + (fh * fh + pd[i] * nd[i]).sqrt()) / pd[i];
        } else if fh <= 0.0 {
            next[i] = 0.0;
        }
    }
    DualVector { d: next }
}

/// Objective minimized by the updates, `1/4 d' Bh d - fh' d`.
pub fn mu_objective(d: &DualVector, qp: &QpProblem) -> f64 {
    0.25 * d.d.dot(&(&qp.b_hat * &d.d)) - qp.f_hat.dot(&d.d)
}

/// Lagrange dual function `s'd - |f + Bd|^2 / (4R)`, to be maximized.
pub fn dual_objective(d: &DualVector, qp: &QpProblem) -> f64 {
    let v = &qp.f + &qp.b_mat * &d.d;
    qp.s.dot(&d.d) - v.norm_squared() / (4.0 * qp.r_weight)
}

/// Primal objective `R a'a - f'a` (constant dropped, same as the dual).
pub fn primal_objective(alpha: &[f64], qp: &QpProblem) -> f64 {
    let a = DVector::from_column_slice(alpha);
    qp.r_weight * a.norm_squared() - qp.f.dot(&a)
}

/// Stationary point of the Lagrangian for the multipliers `d`.
pub fn recover_alpha(d: &DualVector, qp: &QpProblem) -> Vec<f64> {
    ((&qp.f + &qp.b_mat * &d.d) / (2.0 * qp.r_weight)).iter().copied().collect()
}

/// Solver output with diagnostics.
#[derive(Debug, Clone)]
pub struct PlanReport {
    pub plan: PlanVector,
    pub dual: DualVector,
    pub iterations: usize,
    pub last_step: f64,
    /// Primal minus dual value at the returned pair.
    pub duality_gap: f64,
}

pub fn solve_plan(q: &[f64], b: &[f64], r_weight: f64, tol: f64, max_iter: usize) -> Result<PlanVector> {
    solve_plan_report(q, b, r_weight, tol, max_iter).map(|r| r.plan)
}

pub fn solve_plan_report(q: &[f64], b: &[f64], r_weight: f64, tol: f64, max_iter: usize) -> Result<PlanReport> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let qp = assemble_qp(q, b, r_weight)?;
    let mut d = DualVector::ones(qp.dims);
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = mu_step(&d, &qp);
        step = (&next.d - &d.d).amax();
        d = next;
        iterations += 1;
        if step <= tol {
            break;
        }
    }
    if step > tol {
        return Err(Error::NoConvergence { what: "plan multiplicative updates".into(), residual: step });
    }
    let raw = recover_alpha(&d, &qp);
    let (alpha, d) = match polish(&raw, &qp) {
        Some(exact) => exact,
        None => (raw.into_iter().map(|a| a.clamp(0.0, 1.0)).collect(), d),
    };
    let duality_gap = primal_objective(&alpha, &qp) - dual_objective(&d, &qp);
    Ok(PlanReport { plan: PlanVector { alpha }, dual: d, iterations, last_step: step, duality_gap })
}

/// Multiplicative updates converge linearly and can stall a few 1e-6 short
/// of the optimum. Guess the active bounds from the approximate plan, solve
/// the KKT system on that support exactly, and keep the result only if every
/// KKT condition holds.
fn polish(approx: &[f64], qp: &QpProblem) -> Option<(Vec<f64>, DualVector)> {
    const EDGE: f64 = 1e-5;
    let ng = qp.dims;
    let two_r = 2.0 * qp.r_weight;
    let upper: Vec<bool> = approx.iter().map(|a| *a >= 1.0 - EDGE).collect();
    let lower: Vec<bool> = approx.iter().map(|a| *a <= EDGE).collect();
    let free: Vec<usize> = (0..ng).filter(|&i| !upper[i] && !lower[i]).collect();
    if free.is_empty() {
        return None;
    }
    let ones = upper.iter().filter(|u| **u).count() as f64;
    let f_free: f64 = free.iter().map(|&i| qp.f[i]).sum();
    let mu = (f_free - two_r * (qp.q.sum() - ones)) / free.len() as f64;
    if mu < 0.0 {
        return None;
    }
    let mut alpha = vec![0.0; ng];
    let mut d = DVector::zeros(2 * ng + 1);
    d[0] = mu;
    for i in 0..ng {
        if upper[i] {
            alpha[i] = 1.0;
            d[1 + i] = qp.f[i] - mu - two_r;
        } else if lower[i] {
            d[1 + ng + i] = mu - qp.f[i];
        } else {
            alpha[i] = (qp.f[i] - mu) / two_r;
        }
    }
    let feasible = alpha.iter().all(|a| (0.0..=1.0).contains(a)) && d.iter().all(|x| *x >= 0.0);
    feasible.then_some((alpha, DualVector { d }))
}

/// `(sum b a, sum (a - q)^2)`.
pub fn plan_objectives(alpha: &[f64], q: &[f64], b: &[f64]) -> (f64, f64) {
    let ws = alpha.iter().zip(b).map(|(a, w)| a * w).sum();
    let var = alpha.iter().zip(q).map(|(a, p)| (a - p).powi(2)).sum();
    (ws, var)
}
