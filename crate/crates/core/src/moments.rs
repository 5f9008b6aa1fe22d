//! Closed-form statistics of directional gains under calibration errors.
//!
//! With `h = (I + C) u` and `C[i,i] ~ CN(0, s2)`, the gain `|nu^H h|^2` of a
//! unit direction `nu` is a scaled non-central chi-square variable. Writing
//! `V = nu nu^H` and `D = diag(|u|^2)`, its k-th cumulant is
//!
//! ```text
//! (k-1)! [ tr((s2 V D)^k) + k u^H V (s2 D V)^(k-1) u ]
//! ```
//!
//! which gives the mean (k = 1) and variance (k = 2) used throughout the
//! allocation. A one-sided Chebyshev (Cantelli) bound on the harvested power
//! turns the energy coverage chance constraint into a deterministic margin.

use nalgebra::DMatrix;

use crate::channel::UplinkChannelSet;
use crate::{CVector, Error, Result, C64};

/// Pairwise gain moments: entry `(k, n)` describes beam direction `k`
/// observed at user `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub mu: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

impl MomentTable {
    pub fn build(directions: &[CVector], channels: &UplinkChannelSet, sigma_cal_sq: f64) -> Self {
        Self::from_channels(directions, &channels.u, sigma_cal_sq)
    }

    pub fn from_channels(directions: &[CVector], u: &[CVector], sigma_cal_sq: f64) -> Self {
        let (nb, nu) = (directions.len(), u.len());
        let mut mu = DMatrix::zeros(nb, nu);
        let mut var = DMatrix::zeros(nb, nu);
        for (k, d) in directions.iter().enumerate() {
            for (n, ch) in u.iter().enumerate() {
                mu[(k, n)] = directional_mean(d, ch, sigma_cal_sq);
                var[(k, n)] = directional_var(d, ch, sigma_cal_sq);
            }
        }
        Self { mu, var }
    }

    pub fn n_users(&self) -> usize {
        self.mu.ncols()
    }

    /// Means of every beam toward user `n`.
    pub fn mu_col(&self, n: usize) -> Vec<f64> {
        self.mu.column(n).iter().copied().collect()
    }

    pub fn var_col(&self, n: usize) -> Vec<f64> {
        self.var.column(n).iter().copied().collect()
    }
}

/// `sum_i |nu_i|^2 |u_i|^2`, i.e. `tr(V D)`.
fn weighted_energy(nu: &CVector, u: &CVector) -> f64 {
    nu.iter().zip(u.iter()).map(|(a, b)| a.norm_sqr() * b.norm_sqr()).sum()
}

/// `E|nu^H h|^2 = s2 tr(V D) + |nu^H u|^2`.
pub fn directional_mean(nu: &CVector, u: &CVector, sigma_cal_sq: f64) -> f64 {
    sigma_cal_sq * weighted_energy(nu, u) + nu.dotc(u).norm_sqr()
}

fn projector(nu: &CVector) -> DMatrix<C64> {
    nu * nu.adjoint()
}

fn diag_mag(u: &CVector) -> DMatrix<C64> {
    DMatrix::from_diagonal(&u.map(|z| C64::from(z.norm_sqr())))
}

/// `var|nu^H h|^2 = tr((s2 V D)^2) + 2 s2 u^H V D V u`.
pub fn directional_var(nu: &CVector, u: &CVector, sigma_cal_sq: f64) -> f64 {
    let v = projector(nu);
    let d = diag_mag(u);
    let vds = &v * &d * C64::from(sigma_cal_sq);
    let tr = (&vds * &vds).trace().re;
    let quad = (u.adjoint() * &v * &d * &v * u)[(0, 0)].re;
    (tr + 2.0 * sigma_cal_sq * quad).max(0.0)
}

/// k-th cumulant of `|nu^H h|^2`.
pub fn cumulant(k: u32, nu: &CVector, u: &CVector, sigma_cal_sq: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("cumulant order must be >= 1".into()));
    }
    let s = C64::from(sigma_cal_sq);
    let v = projector(nu);
    let d = diag_mag(u);
    let vds = &v * &d * s;
    let dvs = &d * &v * s;
    let m = nu.len();
    let mut pow_vds = DMatrix::<C64>::identity(m, m);
    for _ in 0..k {
        pow_vds = &pow_vds * &vds;
    }
    let mut pow_dvs = DMatrix::<C64>::identity(m, m);
    for _ in 0..k - 1 {
        pow_dvs = &pow_dvs * &dvs;
    }
    let quad = (u.adjoint() * &v * &pow_dvs * u)[(0, 0)].re;
    let fact: f64 = (1..k).map(f64::from).product();
    Ok(fact * (pow_vds.trace().re + f64::from(k) * quad))
}

/// `1/(1 - alpha) - 1`, the Cantelli factor for confidence `alpha`.
pub fn alpha_bar(alpha_star: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha_star) {
        return Err(Error::Domain(format!("coverage target {alpha_star} outside [0,1)")));
    }
    Ok(1.0 / (1.0 - alpha_star) - 1.0)
}

/// How the spread of the total harvested power is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginForm {
    /// `sum_k p_k sqrt(var_k)`: an upper bound on the standard deviation of
    /// the sum for any correlation, so the certificate stays conservative.
    #[default]
    SumOfStd,
    /// `sqrt(sum_k p_k^2 var_k)`: tighter, but ignores the correlation
    /// between beams seen through the same channel.
    StdOfSum,
}

/// Chance-constraint margin for one user; `<= 0` certifies
/// `Pr(E >= theta) >= alpha_star` (conservatively).
///
/// `mu_col[k]` and `var_col[k]` are the moments of beam `k` at this user and
/// `theta_hat` is the input-energy threshold matching the harvest target.
pub fn chebyshev_margin(
    p: &[f64],
    rho: f64,
    alpha_star: f64,
    theta_hat: f64,
    mu_col: &[f64],
    var_col: &[f64],
) -> Result<f64> {
    chebyshev_margin_with(MarginForm::SumOfStd, p, rho, alpha_star, theta_hat, mu_col, var_col)
}

pub fn chebyshev_margin_with(
    form: MarginForm,
    p: &[f64],
    rho: f64,
    alpha_star: f64,
    theta_hat: f64,
    mu_col: &[f64],
    var_col: &[f64],
) -> Result<f64> {
    if p.len() != mu_col.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: mu_col.len() });
    }
    if p.len() != var_col.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: var_col.len() });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("split {rho} outside (0,1)")));
    }
    if alpha_star >= 1.0 {
        return Err(Error::Domain("coverage target 1 makes the Chebyshev bound degenerate".into()));
    }
    let ab = alpha_bar(alpha_star)?;
    let spread = match form {
        MarginForm::SumOfStd => p.iter().zip(var_col).map(|(pk, v)| (ab * v).sqrt() * pk).sum::<f64>(),
        MarginForm::StdOfSum => (ab * p.iter().zip(var_col).map(|(pk, v)| v * pk * pk).sum::<f64>()).sqrt(),
    };
    let mean: f64 = p.iter().zip(mu_col).map(|(pk, m)| m * pk).sum();
    Ok(spread - mean - theta_hat / (rho - 1.0))
}

/// Ratio-of-expectations SINR of user `n`.
pub fn avg_sinr(n: usize, p: &[f64], rho_n: f64, mt: &MomentTable, sigma0_sq: f64, sigma1_sq: f64) -> f64 {
    let signal = mt.mu[(n, n)] * p[n];
    let interference = interference(n, p, mt);
    rho_n * signal / (rho_n * (interference + sigma0_sq) + sigma1_sq)
}

/// Mean interference power at user `n` from every other beam.
pub fn interference(n: usize, p: &[f64], mt: &MomentTable) -> f64 {
    p.iter().enumerate().filter(|(k, _)| *k != n).map(|(k, pk)| mt.mu[(k, n)] * pk).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, complex_gaussian_vector, downlink_into};
    use crate::rng::rng_from;

    fn scalar(x: f64) -> CVector {
        CVector::from_vec(vec![C64::from(x)])
    }

    #[test]
    fn scalar_case_by_substitution() {
        let (u, nu) = (scalar(1.0), scalar(1.0));
        assert!((directional_mean(&nu, &u, 0.01) - 1.01).abs() < 1e-15);
        assert!((directional_var(&nu, &u, 0.01) - 0.0201).abs() < 1e-15);
        assert!((cumulant(3, &nu, &u, 0.01).unwrap() - 2.0 * (1e-6 + 3e-4)).abs() < 1e-17);
        assert!(cumulant(0, &nu, &u, 0.01).is_err());
    }

    #[test]
    fn moments_match_sampling() {
        let mut rng = rng_from(11);
        let u = complex_gaussian_vector(&mut rng, 4, 1.0);
        let nu = complex_gaussian_vector(&mut rng, 4, 1.0).normalize();
        let s2 = 0.05;
        let n = 400_000;
        let mut h = CVector::zeros(4);
        let mut c = vec![C64::from(0.0); 4];
        let (mut s1, mut sq, mut cu) = (0.0, 0.0, 0.0);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            for ci in c.iter_mut() {
                *ci = complex_gaussian(&mut rng, s2);
            }
            downlink_into(&u, &c, &mut h);
            let x = nu.dotc(&h).norm_sqr();
            s1 += x;
            xs.push(x);
        }
        let mean = s1 / n as f64;
        for x in &xs {
            sq += (x - mean).powi(2);
            cu += (x - mean).powi(3);
        }
        let var = sq / n as f64;
        let k3 = cu / n as f64;
        let m = directional_mean(&nu, &u, s2);
        let v = directional_var(&nu, &u, s2);
        let c3 = cumulant(3, &nu, &u, s2).unwrap();
        assert!((mean - m).abs() < 0.01 * m, "{mean} vs {m}");
        assert!((var - v).abs() < 0.03 * v, "{var} vs {v}");
        assert!((k3 - c3).abs() < 0.1 * c3, "{k3} vs {c3}");
    }

    #[test]
    fn no_calibration_error() {
        let mut rng = rng_from(1);
        let u = complex_gaussian_vector(&mut rng, 5, 1.0);
        let nu = complex_gaussian_vector(&mut rng, 5, 1.0).normalize();
        assert_eq!(directional_mean(&nu, &u, 0.0), nu.dotc(&u).norm_sqr());
        assert_eq!(directional_var(&nu, &u, 0.0), 0.0);
    }

    #[test]
    fn cumulant_identities() {
        let mut rng = rng_from(2);
        for _ in 0..50 {
            let u = complex_gaussian_vector(&mut rng, 6, 0.3);
            let nu = complex_gaussian_vector(&mut rng, 6, 1.0).normalize();
            let m = directional_mean(&nu, &u, 0.01);
            let v = directional_var(&nu, &u, 0.01);
            assert!((cumulant(1, &nu, &u, 0.01).unwrap() - m).abs() <= 1e-12 * m);
            assert!((cumulant(2, &nu, &u, 0.01).unwrap() - v).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn rank_one_reduction() {
        // tau = s2 tr(VD), m = nu^H u: var = tau^2 + 2 tau |m|^2
        let mut rng = rng_from(3);
        let u = complex_gaussian_vector(&mut rng, 4, 1.0);
        let nu = complex_gaussian_vector(&mut rng, 4, 1.0).normalize();
        let tau = 0.02 * weighted_energy(&nu, &u);
        let m2 = nu.dotc(&u).norm_sqr();
        let v = directional_var(&nu, &u, 0.02);
        assert!((v - (tau * tau + 2.0 * tau * m2)).abs() < 1e-14 * v);
    }

    #[test]
    fn scale_covariance() {
        let mut rng = rng_from(4);
        let u = complex_gaussian_vector(&mut rng, 6, 1.0);
        let nu = complex_gaussian_vector(&mut rng, 6, 1.0).normalize();
        let c = C64::new(0.7, -1.3);
        let cu = &u * c;
        let m = directional_mean(&nu, &u, 0.01);
        let v = directional_var(&nu, &u, 0.01);
        assert!((directional_mean(&nu, &cu, 0.01) - c.norm_sqr() * m).abs() < 1e-12 * m);
        assert!((directional_var(&nu, &cu, 0.01) - c.norm_sqr().powi(2) * v).abs() < 1e-12 * v);
    }

    #[test]
    fn deterministic_margin_reduces_to_mean_constraint() {
        let mu = [0.3, 0.05];
        let var = [0.0, 0.0];
        let theta_hat = 0.002;
        let rho = 0.4;
        // sum mu p = theta_hat / (1 - rho) exactly at p = (x, 0)
        let x = theta_hat / (1.0 - rho) / 0.3;
        for alpha in [0.0, 0.5, 0.9] {
            assert!(chebyshev_margin(&[x * 1.01, 0.0], rho, alpha, theta_hat, &mu, &var).unwrap() < 0.0);
            assert!(chebyshev_margin(&[x * 0.99, 0.0], rho, alpha, theta_hat, &mu, &var).unwrap() > 0.0);
        }
    }

    #[test]
    fn zero_confidence_margin() {
        let mu = [0.3, 0.05];
        let var = [0.01, 0.002];
        let p = [0.02, 0.01];
        let phi = chebyshev_margin(&p, 0.3, 0.0, 0.004, &mu, &var).unwrap();
        let want = -(0.3 * 0.02 + 0.05 * 0.01) - 0.004 / (0.3 - 1.0);
        assert!((phi - want).abs() < 1e-15);
    }

    #[test]
    fn margin_rejects_degenerate_inputs() {
        assert!(chebyshev_margin(&[1.0], 0.5, 1.0, 0.1, &[1.0], &[0.1]).is_err());
        assert!(chebyshev_margin(&[1.0], 1.0, 0.5, 0.1, &[1.0], &[0.1]).is_err());
        assert!(chebyshev_margin(&[1.0, 2.0], 0.5, 0.5, 0.1, &[1.0], &[0.1]).is_err());
    }

    #[test]
    fn margin_monotonicity() {
        let mu = [0.4, 0.02, 0.03];
        let var = [0.004, 0.00005, 0.0002];
        let p = [0.01, 0.02, 0.01];
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let a = i as f64 * 0.045;
            let phi = chebyshev_margin(&p, 0.5, a, 0.001, &mu, &var).unwrap();
            assert!(phi >= last);
            last = phi;
        }
        // mu dominates sqrt(abar var) here, so more power lowers the margin
        let base = chebyshev_margin(&p, 0.5, 0.8, 0.001, &mu, &var).unwrap();
        for k in 0..3 {
            let mut q = p;
            q[k] *= 1.5;
            assert!(chebyshev_margin(&q, 0.5, 0.8, 0.001, &mu, &var).unwrap() <= base);
        }
    }

    #[test]
    fn std_of_sum_is_never_looser() {
        let mu = [0.4, 0.02, 0.03];
        let var = [0.004, 0.0001, 0.0002];
        let p = [0.01, 0.02, 0.01];
        let a = chebyshev_margin_with(MarginForm::SumOfStd, &p, 0.5, 0.8, 0.001, &mu, &var).unwrap();
        let b = chebyshev_margin_with(MarginForm::StdOfSum, &p, 0.5, 0.8, 0.001, &mu, &var).unwrap();
        assert!(b <= a);
    }

    #[test]
    fn sinr_inversion_single_user() {
        let mt = MomentTable { mu: DMatrix::from_element(1, 1, 1.0), var: DMatrix::zeros(1, 1) };
        let (gamma, rho, s0, s1) = (1.7, 0.3, 1e-12, 1e-8);
        let p = gamma * (s0 + s1 / rho);
        assert!((avg_sinr(0, &[p], rho, &mt, s0, s1) - gamma).abs() < 1e-12);
    }

    #[test]
    fn sinr_without_splitting_loss() {
        let mu = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.8]);
        let mt = MomentTable { mu, var: DMatrix::zeros(2, 2) };
        let p = [1.0, 2.0];
        let s0 = 0.05;
        let got = avg_sinr(0, &p, 1.0, &mt, s0, 0.0);
        assert!((got - 0.5 / (0.2 * 2.0 + s0)).abs() < 1e-15);
    }
}
