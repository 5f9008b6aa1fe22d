//! Beam directions: calibration-aware signal-to-leakage maximization and the
//! zero-forcing baseline.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::energy::Beam;
use crate::{CVector, Error, Result, C64};

/// One unit-norm direction per user, in user order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDirections {
    pub nu: Vec<CVector>,
}

impl BeamDirections {
    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    /// Pairs each direction with a power.
    pub fn beams(&self, p: &[f64]) -> Vec<Beam> {
        self.nu.iter().zip(p).map(|(d, &power)| Beam { power, direction: d.clone() }).collect()
    }
}

/// `E[h h^H] = u u^H + s2 diag(|u|^2)`.
pub fn second_moment_matrix(u: &CVector, sigma_cal_sq: f64) -> DMatrix<C64> {
    let mut a = u * u.adjoint();
    for i in 0..u.len() {
        a[(i, i)] += C64::from(sigma_cal_sq * u[i].norm_sqr());
    }
    a
}

pub fn second_moments(u: &[CVector], sigma_cal_sq: f64) -> Vec<DMatrix<C64>> {
    u.iter().map(|x| second_moment_matrix(x, sigma_cal_sq)).collect()
}

/// Rotates `v` so that its first non-negligible entry is real and positive.
pub fn fix_phase(v: &mut CVector) {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-12 * peak).copied() {
        let rot = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

fn principal_eigenvector(a: &DMatrix<C64>) -> (CVector, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let k = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(k).into_owned();
    v.unscale_mut(v.norm());
    fix_phase(&mut v);
    (v, eig.eigenvalues[k])
}

/// Maximizer of `nu^H A_self nu / nu^H A_leak nu` over unit vectors and the
/// maximal ratio.
///
/// Solved by whitening with the Cholesky factor of the (slightly
/// regularized) leakage matrix. With no leakage at all the ratio is
/// unbounded and the principal eigenvector of `a_self` is returned with an
/// infinite value.
pub fn slr_direction(a_self: &DMatrix<C64>, a_leak: &DMatrix<C64>) -> Result<(CVector, f64)> {
    let m = a_self.nrows();
    if a_leak.shape() != (m, m) || a_self.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, found: a_leak.nrows() });
    }
    let tr = a_leak.trace().re;
    if tr <= 0.0 {
        let (v, _) = principal_eigenvector(a_self);
        return Ok((v, f64::INFINITY));
    }
    let eps = 1e-12 * tr / m as f64;
    let reg = a_leak + DMatrix::<C64>::identity(m, m) * C64::from(eps);
    let chol = Cholesky::new(reg).ok_or_else(|| Error::Numerical("leakage matrix not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| Error::Numerical("singular leakage factor".into()))?;
    let mut c = &l_inv * a_self * l_inv.adjoint();
    // enforce exact Hermitian symmetry before the eigensolver
    c = (&c + c.adjoint()) * C64::from(0.5);
    let (y, lambda) = principal_eigenvector(&c);
    let mut nu = l_inv.adjoint() * y;
    nu.unscale_mut(nu.norm());
    fix_phase(&mut nu);
    Ok((nu, lambda))
}

pub fn slr_value(nu: &CVector, a_self: &DMatrix<C64>, a_leak: &DMatrix<C64>) -> Result<f64> {
    let num = (nu.adjoint() * a_self * nu)[(0, 0)].re;
    let den = (nu.adjoint() * a_leak * nu)[(0, 0)].re;
    if den <= 0.0 {
        return Err(Error::Domain("zero leakage in SLR denominator".into()));
    }
    Ok(num / den)
}

/// Leakage matrix for user `n`: sum of the other users' second moments.
pub fn leakage_matrix(a_mats: &[DMatrix<C64>], n: usize) -> DMatrix<C64> {
    let m = a_mats[n].nrows();
    a_mats
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != n)
        .fold(DMatrix::zeros(m, m), |acc, (_, a)| acc + a)
}

pub fn slr_directions(a_mats: &[DMatrix<C64>]) -> Result<BeamDirections> {
    let nu = (0..a_mats.len())
        .map(|n| slr_direction(&a_mats[n], &leakage_matrix(a_mats, n)).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamDirections { nu })
}

/// Zero-forcing directions: normalized columns of `H (H^H H)^-1`.
pub fn zf_directions(u: &[CVector]) -> Result<BeamDirections> {
    let n = u.len();
    let m = u.first().map_or(0, |x| x.len());
    if n == 0 {
        return Err(Error::Domain("no users".into()));
    }
    if m < n {
        return Err(Error::Infeasible(format!("zero forcing needs M >= users ({m} < {n})")));
    }
    let h = DMatrix::from_columns(u);
    let sv = h.clone().singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Numerical("channel matrix is rank deficient".into()));
    }
    let gram = h.adjoint() * &h;
    let inv = gram.try_inverse().ok_or_else(|| Error::Numerical("singular channel Gram matrix".into()))?;
    let w = &h * inv;
    let nu = (0..n)
        .map(|k| {
            let mut v = w.column(k).into_owned();
            v.unscale_mut(v.norm());
            fix_phase(&mut v);
            v
        })
        .collect();
    Ok(BeamDirections { nu })
}
