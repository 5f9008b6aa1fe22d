//! Beam powers and power-splitting factors.
//!
//! For fixed directions, the average-SINR equalities are linear in the
//! powers: `(I - L U) p = D (s0 + s1 / rho)` where `U` holds cross-to-self
//! gain ratios, `L = diag(gamma)` and `D = diag(gamma / mu_self)`. With one
//! split shared by all users this gives `p = a (s0 + s1 / rho)` with
//! `a = (I - L U)^-1 D 1`, and every user's Chebyshev energy margin becomes
//! a quadratic in `rho`. The largest split that keeps all of them
//! nonpositive minimizes the total power ([`solve_suboptimal`]).
//!
//! With one split per user the problem is still convex and is solved by a
//! log-barrier interior-point method ([`solve_optimal`]).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::beamform::BeamDirections;
use crate::energy::eh_threshold_inverse;
use crate::moments::{alpha_bar, avg_sinr, chebyshev_margin_with, interference, MarginForm, MomentTable};
use crate::plan::PlanVector;
use crate::scenario::ScenarioConfig;
use crate::{CVector, Error, Result};

/// Linear power-control system for fixed directions and SINR targets.
#[derive(Debug, Clone)]
pub struct CouplingMatrices {
    pub l_mat: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    /// `(I - L U)^-1 D 1`; infinite when the system is infeasible.
    pub a_vec: DVector<f64>,
    pub spectral_radius: f64,
    inverse: Option<DMatrix<f64>>,
}

impl CouplingMatrices {
    pub fn n_users(&self) -> usize {
        self.upsilon.nrows()
    }

    pub fn is_stable(&self) -> bool {
        self.inverse.is_some()
    }
}

pub fn build_coupling(nu: &BeamDirections, u: &[CVector], gamma: &[f64], sigma_cal_sq: f64) -> Result<CouplingMatrices> {
    if nu.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: nu.len() });
    }
    coupling_from_moments(&MomentTable::from_channels(&nu.nu, u, sigma_cal_sq), gamma)
}

pub fn coupling_from_moments(mt: &MomentTable, gamma: &[f64]) -> Result<CouplingMatrices> {
    let n = mt.n_users();
    if gamma.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: gamma.len() });
    }
    for i in 0..n {
        if !(mt.mu[(i, i)] > 0.0) {
            return Err(Error::Infeasible(format!("user {i}: beam has no gain toward its own user")));
        }
    }
    let upsilon = DMatrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { mt.mu[(k, i)] / mt.mu[(i, i)] });
    let l_mat = DMatrix::from_diagonal(&DVector::from_column_slice(gamma));
    let delta = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| gamma[i] / mt.mu[(i, i)]));
    let lu = &l_mat * &upsilon;
    let spectral_radius = lu.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let inverse = if spectral_radius < 1.0 {
        (DMatrix::identity(n, n) - &lu).try_inverse()
    } else {
        None
    };
    let a_vec = match &inverse {
        Some(inv) => inv * &delta * DVector::from_element(n, 1.0),
        None => DVector::from_element(n, f64::INFINITY),
    };
    Ok(CouplingMatrices { l_mat, upsilon, delta, a_vec, spectral_radius, inverse })
}

/// Minimal powers meeting every SINR target with equality. `rho` holds one
/// shared split or one split per user.
pub fn powers_for_rho(cm: &CouplingMatrices, rho: &[f64], sigma0_sq: f64, sigma1_sq: f64) -> Result<DVector<f64>> {
    let n = cm.n_users();
    let inv = cm
        .inverse
        .as_ref()
        .ok_or_else(|| Error::Infeasible(format!("SINR targets unreachable: coupling spectral radius {:.4} >= 1", cm.spectral_radius)))?;
    let split = |i: usize| match rho.len() {
        1 => Ok(rho[0]),
        len if len == n => Ok(rho[i]),
        len => Err(Error::DimensionMismatch { expected: n, found: len }),
    };
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let r = split(i)?;
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Domain(format!("split {r} outside (0,1]")));
        }
        rhs[i] = sigma0_sq + sigma1_sq / r;
    }
    Ok(inv * &cm.delta * rhs)
}

/// Per-user Lemma-4 quantities for the shared-split problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma4Coefficients {
    /// Means of every beam at this user.
    pub mu_vec: DVector<f64>,
    /// `sqrt(alpha_bar * var)` of every beam at this user.
    pub ups_vec: DVector<f64>,
    pub alpha_bar: f64,
    /// `(mu - ups)' a`, the certified harvest per unit of noise power.
    pub slope: f64,
    pub kappa: f64,
}

impl Lemma4Coefficients {
    /// Value of `S s0 rho^2 - kappa rho - S s1`, nonpositive iff the
    /// user's margin holds at the shared split `rho`.
    pub fn quadratic(&self, rho: f64, sigma0_sq: f64, sigma1_sq: f64) -> f64 {
        self.slope * sigma0_sq * rho * rho - self.kappa * rho - self.slope * sigma1_sq
    }

    /// Largest split satisfying the quadratic, if the slope is positive.
    pub fn rho_max(&self, sigma0_sq: f64, sigma1_sq: f64) -> Option<f64> {
        let (s, k) = (self.slope, self.kappa);
        if !(s > 0.0) {
            return None;
        }
        let disc = (k * k + 4.0 * s * s * sigma0_sq * sigma1_sq).sqrt();
        // pick the cancellation-free form of the positive root
        Some(if k < 0.0 {
            2.0 * s * sigma1_sq / (disc - k)
        } else {
            (k + disc) / (2.0 * s * sigma0_sq)
        })
    }
}

pub fn lemma4_coeffs(
    cm: &CouplingMatrices,
    mt: &MomentTable,
    alpha_star: f64,
    theta_hat: f64,
    n: usize,
    sigma0_sq: f64,
    sigma1_sq: f64,
) -> Result<Lemma4Coefficients> {
    let ab = alpha_bar(alpha_star)?;
    let mu_vec = DVector::from_column_slice(&mt.mu_col(n));
    let ups_vec = DVector::from_iterator(mt.n_users(), mt.var_col(n).into_iter().map(|v| (ab * v).sqrt()));
    let slope = (&mu_vec - &ups_vec).dot(&cm.a_vec);
    let kappa = slope * (sigma0_sq - sigma1_sq) - theta_hat;
    Ok(Lemma4Coefficients { mu_vec, ups_vec, alpha_bar: ab, slope, kappa })
}

/// Verdicts of the feasibility conditions.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub spectral_radius: f64,
    /// Spectral radius below one: the SINR targets are reachable.
    pub coupling_ok: bool,
    /// Per user: every beam's mean dominates its scaled deviation.
    pub mean_dominates: Vec<bool>,
    /// Per user: positive certified harvest slope, needed for a split.
    pub positive_slope: Vec<bool>,
}

impl FeasibilityReport {
    /// Reachable SINR targets and a usable energy slope at every user.
    pub fn is_feasible(&self) -> bool {
        self.coupling_ok && self.positive_slope.iter().all(|b| *b)
    }

    /// The stricter elementwise dominance condition.
    pub fn strictly_dominated(&self) -> bool {
        self.coupling_ok && self.mean_dominates.iter().all(|b| *b)
    }
}

pub fn feasibility(cm: &CouplingMatrices, lc: &[Lemma4Coefficients]) -> FeasibilityReport {
    let coupling_ok = cm.is_stable();
    FeasibilityReport {
        spectral_radius: cm.spectral_radius,
        coupling_ok,
        mean_dominates: lc.iter().map(|c| c.mu_vec.iter().zip(c.ups_vec.iter()).all(|(m, u)| m >= u)).collect(),
        positive_slope: lc.iter().map(|c| coupling_ok && c.slope > 0.0).collect(),
    }
}

/// Powers, splits and the certificates they achieve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub p: Vec<f64>,
    pub rho: Vec<f64>,
    /// One split shared by every user.
    pub shared_split: bool,
    pub total_power: f64,
    pub predicted_sinr: Vec<f64>,
    pub chebyshev_margin: Vec<f64>,
    pub feasible: bool,
}

impl Allocation {
    pub fn total_power_dbm(&self) -> f64 {
        crate::watts_to_dbm(self.total_power)
    }
}

/// Relative slack tolerated when certifying an allocation.
pub const CERT_TOL: f64 = 1e-8;

/// Everything the power stage needs for one channel realization.
#[derive(Debug, Clone)]
pub struct AllocationProblem {
    pub moments: MomentTable,
    pub coupling: CouplingMatrices,
    pub gamma: Vec<f64>,
    /// Input-energy thresholds.
    pub theta_hat: Vec<f64>,
    /// Coverage targets.
    pub alpha: Vec<f64>,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub margin: MarginForm,
}

impl AllocationProblem {
    pub fn new(
        moments: MomentTable,
        gamma: Vec<f64>,
        theta_hat: Vec<f64>,
        alpha: Vec<f64>,
        sigma0_sq: f64,
        sigma1_sq: f64,
    ) -> Result<Self> {
        let n = moments.n_users();
        for len in [theta_hat.len(), alpha.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        if let Some(a) = alpha.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(Error::Domain(format!("coverage target {a} outside [0,1)")));
        }
        let coupling = coupling_from_moments(&moments, &gamma)?;
        Ok(Self { moments, coupling, gamma, theta_hat, alpha, sigma0_sq, sigma1_sq, margin: MarginForm::SumOfStd })
    }

    /// Targets from the config, thresholds through the nonlinear harvester.
    pub fn from_config(cfg: &ScenarioConfig, moments: MomentTable, plan: &PlanVector) -> Result<Self> {
        let theta_hat = cfg
            .eh_target
            .iter()
            .map(|t| eh_threshold_inverse(*t, &cfg.eh_circuit))
            .collect::<Result<Vec<_>>>()?;
        Self::new(moments, cfg.sinr_targets_linear(), theta_hat, plan.alpha.clone(), cfg.sigma0_sq, cfg.sigma1_sq)
    }

    pub fn with_margin(mut self, margin: MarginForm) -> Self {
        self.margin = margin;
        self
    }

    pub fn n_users(&self) -> usize {
        self.gamma.len()
    }

    pub fn lemma4(&self, n: usize) -> Result<Lemma4Coefficients> {
        lemma4_coeffs(&self.coupling, &self.moments, self.alpha[n], self.theta_hat[n], n, self.sigma0_sq, self.sigma1_sq)
    }

    pub fn lemma4_all(&self) -> Result<Vec<Lemma4Coefficients>> {
        (0..self.n_users()).map(|n| self.lemma4(n)).collect()
    }

    pub fn feasibility(&self) -> Result<FeasibilityReport> {
        Ok(feasibility(&self.coupling, &self.lemma4_all()?))
    }

    pub fn margin_at(&self, n: usize, p: &[f64], rho: f64) -> Result<f64> {
        chebyshev_margin_with(
            self.margin,
            p,
            rho,
            self.alpha[n],
            self.theta_hat[n],
            &self.moments.mu_col(n),
            &self.moments.var_col(n),
        )
    }

    /// Re-derives every certificate for `(p, rho)` from the moments.
    pub fn evaluate(&self, p: &[f64], rho: &[f64], shared_split: bool) -> Result<Allocation> {
        let n = self.n_users();
        if p.len() != n || rho.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p.len().min(rho.len()) });
        }
        let predicted_sinr: Vec<f64> =
            (0..n).map(|i| avg_sinr(i, p, rho[i], &self.moments, self.sigma0_sq, self.sigma1_sq)).collect();
        let chebyshev_margin = (0..n).map(|i| self.margin_at(i, p, rho[i])).collect::<Result<Vec<_>>>()?;
        let feasible = p.iter().all(|x| *x >= 0.0)
            && predicted_sinr.iter().zip(&self.gamma).all(|(s, g)| *s >= g * (1.0 - CERT_TOL))
            && chebyshev_margin
                .iter()
                .enumerate()
                .all(|(i, m)| *m <= CERT_TOL * self.theta_hat[i] / (1.0 - rho[i]));
        Ok(Allocation {
            p: p.to_vec(),
            rho: rho.to_vec(),
            shared_split,
            total_power: p.iter().sum(),
            predicted_sinr,
            chebyshev_margin,
            feasible,
        })
    }

    /// Largest split every user's Lemma-4 quadratic allows.
    pub fn shared_split(&self) -> Result<f64> {
        if !self.coupling.is_stable() {
            return Err(Error::Infeasible(format!(
                "SINR targets unreachable: coupling spectral radius {:.4} >= 1",
                self.coupling.spectral_radius
            )));
        }
        let mut best = f64::INFINITY;
        for (n, c) in self.lemma4_all()?.iter().enumerate() {
            let r = c.rho_max(self.sigma0_sq, self.sigma1_sq).ok_or_else(|| {
                Error::Infeasible(format!("user {n}: harvest certificate cannot grow with power (slope {:.3e})", c.slope))
            })?;
            best = best.min(r);
        }
        if !(best > 0.0 && best < 1.0) {
            return Err(Error::Infeasible(format!("shared split {best} outside (0,1)")));
        }
        Ok(best)
    }

    pub fn solve_suboptimal(&self) -> Result<Allocation> {
        if self.margin != MarginForm::SumOfStd {
            return Err(Error::Domain("closed-form shared split needs the sum-of-deviations margin".into()));
        }
        let rho = self.shared_split()?;
        let p = powers_for_rho(&self.coupling, &[rho], self.sigma0_sq, self.sigma1_sq)?;
        self.evaluate(p.as_slice(), &vec![rho; self.n_users()], true)
    }

    pub fn solve_optimal(&self) -> Result<Allocation> {
        let start = self.as_sum_of_std().solve_suboptimal()?;
        let n = self.n_users();
        let rho0 = start.rho[0] * (1.0 - 1e-3);
        let p0 = powers_for_rho(&self.coupling, &[rho0], self.sigma0_sq, self.sigma1_sq)? * (1.0 + 1e-3);
        let (p, mut rho) = barrier::solve(self, p0.as_slice(), &vec![rho0; n])?;
        // Total power is nearly flat in the splits, so the barrier leaves
        // the SINR constraints slightly slack. Lowering a split until its
        // SINR binds only loosens that user's energy margin.
        for i in 0..n {
            let excess = self.moments.mu[(i, i)] * p[i] - self.gamma[i] * (interference(i, &p, &self.moments) + self.sigma0_sq);
            if excess > 0.0 {
                rho[i] = rho[i].min(self.gamma[i] * self.sigma1_sq / excess);
            }
        }
        let alloc = self.evaluate(&p, &rho, false)?;
        // Re-solve the SINR equalities at the final splits; keep the result
        // only if it still certifies and saves power.
        if let Ok(eq) = powers_for_rho(&self.coupling, &rho, self.sigma0_sq, self.sigma1_sq) {
            let polished = self.evaluate(eq.as_slice(), &rho, false)?;
            if polished.feasible && polished.total_power <= alloc.total_power {
                return Ok(polished);
            }
        }
        if !alloc.feasible {
            return Err(Error::NoConvergence {
                what: "barrier method returned an uncertified point".into(),
                residual: alloc.chebyshev_margin.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        Ok(alloc)
    }

    fn as_sum_of_std(&self) -> Self {
        self.clone().with_margin(MarginForm::SumOfStd)
    }
}

pub fn solve_suboptimal(cfg: &ScenarioConfig, nu: &BeamDirections, mt: &MomentTable, plan: &PlanVector) -> Result<Allocation> {
    check_directions(nu, mt)?;
    AllocationProblem::from_config(cfg, mt.clone(), plan)?.solve_suboptimal()
}

pub fn solve_optimal(cfg: &ScenarioConfig, nu: &BeamDirections, mt: &MomentTable, plan: &PlanVector) -> Result<Allocation> {
    check_directions(nu, mt)?;
    AllocationProblem::from_config(cfg, mt.clone(), plan)?.solve_optimal()
}

fn check_directions(nu: &BeamDirections, mt: &MomentTable) -> Result<()> {
    if nu.len() != mt.n_users() {
        return Err(Error::DimensionMismatch { expected: mt.n_users(), found: nu.len() });
    }
    Ok(())
}

/// Log-barrier interior-point method over `(x, rho)` with `x = p / scale`.
mod barrier {
    use super::*;

    const MU_FACTOR: f64 = 10.0;
    const GAP_TOL: f64 = 1e-9;
    const MAX_NEWTON: usize = 200;
    const MAX_OUTER: usize = 60;

    /// A smooth convex constraint `g(z) <= 0` with its derivatives, divided
    /// by a fixed normalizer to keep values near unity.
    struct Term {
        g: f64,
        grad: DVector<f64>,
        hess: DMatrix<f64>,
    }

    struct Model<'a> {
        pb: &'a AllocationProblem,
        n: usize,
        scale: f64,
        norm: Vec<f64>,
    }

    impl Model<'_> {
        fn dim(&self) -> usize {
            2 * self.n
        }

        fn n_constraints(&self) -> usize {
            5 * self.n
        }

        fn raw_terms(&self, z: &DVector<f64>) -> Vec<Term> {
            let (n, dim, pb, sc) = (self.n, self.dim(), self.pb, self.scale);
            let mu = &pb.moments.mu;
            let mut out = Vec::with_capacity(self.n_constraints());
            let x = z.rows(0, n);
            let p: Vec<f64> = x.iter().map(|v| v * sc).collect();
            for i in 0..n {
                // interference + noise - self / gamma
                let r = z[n + i];
                let mut grad = DVector::zeros(dim);
                for k in 0..n {
                    grad[k] = if k == i { -mu[(i, i)] * sc / pb.gamma[i] } else { mu[(k, i)] * sc };
                }
                grad[n + i] = -pb.sigma1_sq / (r * r);
                let mut hess = DMatrix::zeros(dim, dim);
                hess[(n + i, n + i)] = 2.0 * pb.sigma1_sq / (r * r * r);
                let g = interference(i, &p, &pb.moments) + pb.sigma0_sq + pb.sigma1_sq / r
                    - mu[(i, i)] * p[i] / pb.gamma[i];
                out.push(Term { g, grad, hess });
            }
            for i in 0..n {
                let r = z[n + i];
                let ab = alpha_bar(pb.alpha[i]).expect("validated coverage target");
                let th = pb.theta_hat[i];
                let mut grad = DVector::zeros(dim);
                let mut hess = DMatrix::zeros(dim, dim);
                let mut g = th / (1.0 - r);
                grad[n + i] = th / (1.0 - r).powi(2);
                hess[(n + i, n + i)] = 2.0 * th / (1.0 - r).powi(3);
                for k in 0..n {
                    g -= mu[(k, i)] * p[k];
                    grad[k] -= mu[(k, i)] * sc;
                }
                match pb.margin {
                    MarginForm::SumOfStd => {
                        for k in 0..n {
                            let s = (ab * pb.moments.var[(k, i)]).sqrt();
                            g += s * p[k];
                            grad[k] += s * sc;
                        }
                    }
                    MarginForm::StdOfSum => {
                        // ||D x|| with D = diag(sqrt(ab var) * scale)
                        let d2: Vec<f64> = (0..n).map(|k| ab * pb.moments.var[(k, i)] * sc * sc).collect();
                        let norm = (0..n).map(|k| d2[k] * x[k] * x[k]).sum::<f64>().sqrt();
                        g += norm;
                        if norm > 0.0 {
                            let v: Vec<f64> = (0..n).map(|k| d2[k] * x[k]).collect();
                            for k in 0..n {
                                grad[k] += v[k] / norm;
                                for l in 0..n {
                                    let diag = if k == l { d2[k] } else { 0.0 };
                                    hess[(k, l)] += (diag - v[k] * v[l] / (norm * norm)) / norm;
                                }
                            }
                        }
                    }
                }
                out.push(Term { g, grad, hess });
            }
            for j in 0..dim {
                let mut grad = DVector::zeros(dim);
                grad[j] = -1.0;
                out.push(Term { g: -z[j], grad, hess: DMatrix::zeros(dim, dim) });
            }
            for i in 0..n {
                let mut grad = DVector::zeros(dim);
                grad[n + i] = 1.0;
                out.push(Term { g: z[n + i] - 1.0, grad, hess: DMatrix::zeros(dim, dim) });
            }
            out
        }

        fn terms(&self, z: &DVector<f64>) -> Vec<Term> {
            let mut t = self.raw_terms(z);
            for (term, c) in t.iter_mut().zip(&self.norm) {
                term.g /= c;
                term.grad /= *c;
                term.hess /= *c;
            }
            t
        }

        fn strictly_feasible(&self, z: &DVector<f64>) -> bool {
            self.terms(z).iter().all(|t| t.g < 0.0 && t.g.is_finite())
        }

        fn objective(&self, z: &DVector<f64>) -> f64 {
            z.rows(0, self.n).sum()
        }

        fn barrier(&self, z: &DVector<f64>, t: f64) -> f64 {
            t * self.objective(z) - self.terms(z).iter().map(|c| (-c.g).ln()).sum::<f64>()
        }
    }

    pub(super) fn solve(pb: &AllocationProblem, p0: &[f64], rho0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = pb.n_users();
        let scale = p0.iter().sum::<f64>() / n as f64;
        let mut z = DVector::zeros(2 * n);
        for i in 0..n {
            z[i] = p0[i] / scale;
            z[n + i] = rho0[i];
        }
        let mut model = Model { pb, n, scale, norm: vec![1.0; 5 * n] };
        model.norm = model.raw_terms(&z).iter().map(|t| t.g.abs().max(1e-300)).collect();
        if !model.strictly_feasible(&z) {
            return Err(Error::Numerical("barrier start is not strictly feasible".into()));
        }
        let m = model.n_constraints() as f64;
        let mut t = m / (1e-2 * model.objective(&z));
        for _ in 0..MAX_OUTER {
            centre(&model, &mut z, t)?;
            if m / t < GAP_TOL * model.objective(&z) {
                let p = (0..n).map(|i| z[i] * scale).collect();
                let rho = (0..n).map(|i| z[n + i]).collect();
                return Ok((p, rho));
            }
            t *= MU_FACTOR;
        }
        Err(Error::NoConvergence { what: "barrier outer loop".into(), residual: m / t })
    }

    fn centre(model: &Model, z: &mut DVector<f64>, t: f64) -> Result<()> {
        let dim = model.dim();
        for _ in 0..MAX_NEWTON {
            let terms = model.terms(z);
            let mut grad = DVector::zeros(dim);
            for i in 0..model.n {
                grad[i] = t;
            }
            let mut hess = DMatrix::zeros(dim, dim);
            for c in &terms {
                let inv = -1.0 / c.g;
                grad += &c.grad * inv;
                hess += &c.grad * c.grad.transpose() * (inv * inv) + &c.hess * inv;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => hess
                    .lu()
                    .solve(&(-&grad))
                    .ok_or_else(|| Error::Numerical("singular barrier Hessian".into()))?,
            };
            let decrement = -grad.dot(&step);
            if decrement / 2.0 <= 1e-12 || !decrement.is_finite() {
                return Ok(());
            }
            let f0 = model.barrier(z, t);
            let mut s = 1.0;
            loop {
                let cand = &*z + &step * s;
                if model.strictly_feasible(&cand) && model.barrier(&cand, t) <= f0 - 0.25 * s * decrement {
                    *z = cand;
                    break;
                }
                s *= 0.5;
                if s < 1e-14 {
                    // no progress possible at this precision
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}
