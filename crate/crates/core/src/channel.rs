//! Uplink channels, calibration errors and reciprocity-corrupted downlinks.
//!
//! Uplink channels are Rician: a half-wavelength ULA steering vector at the
//! user's azimuth (LOS) plus i.i.d. CN(0,1) scattering, scaled by the
//! distance pathloss `(1 m / d)^eta`. The downlink seen by the base station
//! after reciprocity calibration is `h = (I + C) u` with `C` diagonal and
//! `C[i,i] ~ CN(0, sigma_cal^2)`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{derived_rng, rng_from, stream};
use crate::scenario::ScenarioConfig;
use crate::{CVector, Error, Result, C64};

/// Reference distance of the pathloss model, in meters.
pub const D_REF: f64 = 1.0;

pub fn pathloss(distance: f64, exponent: f64) -> Result<f64> {
    if !(distance >= D_REF) {
        return Err(Error::Domain(format!("distance {distance} m below reference distance {D_REF} m")));
    }
    Ok((D_REF / distance).powf(exponent))
}

/// Draws a CN(0, var) sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, m: usize, var: f64) -> CVector {
    CVector::from_fn(m, |_, _| complex_gaussian(rng, var))
}

/// Half-wavelength ULA steering vector (unit-modulus entries).
pub fn steering_vector(m: usize, azimuth: f64) -> CVector {
    let phase = PI * azimuth.sin();
    CVector::from_fn(m, |i, _| C64::from_polar(1.0, phase * i as f64))
}

/// Per-user uplink channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkChannelSet {
    /// Group index of each user.
    pub groups: Vec<usize>,
    /// Uplink channel of each user (pathloss included).
    pub u: Vec<CVector>,
    /// `|u[i]|^2` for each user, the diagonal of `diag(|u|^2)`.
    pub d_mag: Vec<DVector<f64>>,
    /// Azimuth used for the LOS component, radians.
    pub azimuth: Vec<f64>,
    /// Per-entry variance of the scattered component of each user.
    pub nlos_var: Vec<f64>,
}

impl UplinkChannelSet {
    pub fn from_channels(groups: Vec<usize>, u: Vec<CVector>) -> Self {
        let d_mag = u.iter().map(magnitude_sq).collect();
        let n = u.len();
        Self { groups, u, d_mag, azimuth: vec![0.0; n], nlos_var: vec![0.0; n] }
    }

    pub fn n_users(&self) -> usize {
        self.u.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.u.first().map_or(0, |u| u.len())
    }

    /// Index of user `n` of group `g` in the flat order.
    pub fn index(&self, g: usize, n: usize) -> Option<usize> {
        self.groups.iter().enumerate().filter(|(_, &gg)| gg == g).nth(n).map(|(k, _)| k)
    }

    /// Writes `group,user,antenna,re,im` rows; `user` counts within a group.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["group", "user", "antenna", "re", "im"])?;
        let mut within = vec![0usize; self.groups.iter().copied().max().map_or(0, |g| g + 1)];
        for (k, u) in self.u.iter().enumerate() {
            let g = self.groups[k];
            let n = within[g];
            within[g] += 1;
            for (i, z) in u.iter().enumerate() {
                wr.write_record(&[g.to_string(), n.to_string(), i.to_string(), z.re.to_string(), z.im.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a dump written by [`UplinkChannelSet::write_csv`]. Rows may come
    /// in any order; users are re-sorted group-major.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut entries: std::collections::BTreeMap<(usize, usize), Vec<(usize, C64)>> = Default::default();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Parse(format!("channel dump row has {} fields", rec.len())));
            }
            let p = |i: usize| rec[i].trim().to_string();
            let g: usize = p(0).parse().map_err(|_| Error::Parse(format!("bad group {:?}", &rec[0])))?;
            let n: usize = p(1).parse().map_err(|_| Error::Parse(format!("bad user {:?}", &rec[1])))?;
            let i: usize = p(2).parse().map_err(|_| Error::Parse(format!("bad antenna {:?}", &rec[2])))?;
            let re: f64 = p(3).parse().map_err(|_| Error::Parse(format!("bad re {:?}", &rec[3])))?;
            let im: f64 = p(4).parse().map_err(|_| Error::Parse(format!("bad im {:?}", &rec[4])))?;
            entries.entry((g, n)).or_default().push((i, C64::new(re, im)));
        }
        let mut groups = Vec::new();
        let mut u = Vec::new();
        let mut m = None;
        for ((g, _), mut e) in entries {
            e.sort_by_key(|(i, _)| *i);
            if e.iter().enumerate().any(|(j, (i, _))| j != *i) {
                return Err(Error::Parse(format!("group {g}: antenna indices not contiguous")));
            }
            match m {
                None => m = Some(e.len()),
                Some(mm) if mm != e.len() => return Err(Error::DimensionMismatch { expected: mm, found: e.len() }),
                _ => {}
            }
            groups.push(g);
            u.push(CVector::from_iterator(e.len(), e.into_iter().map(|(_, z)| z)));
        }
        Ok(Self::from_channels(groups, u))
    }

    /// Checks the dump against a config's user layout and antenna count.
    pub fn check_layout(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.groups != cfg.user_groups() {
            return Err(Error::Invalid("channel dump user layout does not match config groups".into()));
        }
        if self.n_antennas() != cfg.m_antennas {
            return Err(Error::DimensionMismatch { expected: cfg.m_antennas, found: self.n_antennas() });
        }
        Ok(())
    }
}

pub fn magnitude_sq(u: &CVector) -> DVector<f64> {
    u.map(|z| z.norm_sqr())
}

/// One Rician channel vector. `k_linear = inf` gives a pure LOS channel.
pub fn rician_vector<R: Rng + ?Sized>(rng: &mut R, m: usize, gain: f64, k_linear: f64, azimuth: f64) -> CVector {
    let (los_w, nlos_w) = if k_linear.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_linear / (k_linear + 1.0)).sqrt(), (1.0 / (k_linear + 1.0)).sqrt())
    };
    let amp = gain.sqrt();
    let los = steering_vector(m, azimuth);
    let nlos = complex_gaussian_vector(rng, m, 1.0);
    (los * C64::from(los_w) + nlos * C64::from(nlos_w)) * C64::from(amp)
}

/// Per-entry variance of the scattered component for a user at `distance`.
pub fn nlos_variance(cfg: &ScenarioConfig, distance: f64) -> Result<f64> {
    let k = cfg.rician_k();
    let pl = pathloss(distance, cfg.pathloss_exp)?;
    Ok(if k.is_infinite() { 0.0 } else { pl / (k + 1.0) })
}

pub fn sample_uplink(cfg: &ScenarioConfig, seed: u64) -> Result<UplinkChannelSet> {
    let mut rng = derived_rng(seed, stream::UPLINK, 0);
    let k = cfg.rician_k();
    let groups = cfg.user_groups();
    let mut u = Vec::with_capacity(groups.len());
    let mut azimuth = Vec::with_capacity(groups.len());
    let mut nlos_var = Vec::with_capacity(groups.len());
    for &g in &groups {
        let d = cfg.groups[g].distance_m;
        let pl = pathloss(d, cfg.pathloss_exp)?;
        let phi = rng.random_range(0.0..2.0 * PI);
        u.push(rician_vector(&mut rng, cfg.m_antennas, pl, k, phi));
        azimuth.push(phi);
        nlos_var.push(nlos_variance(cfg, d)?);
    }
    let d_mag = u.iter().map(magnitude_sq).collect();
    Ok(UplinkChannelSet { groups, u, d_mag, azimuth, nlos_var })
}

/// Diagonals of the calibration-error matrices, one per user.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDraw {
    pub c: Vec<CVector>,
}

pub fn sample_calibration(sigma_cal_sq: f64, users: usize, m: usize, seed: u64) -> Result<CalibrationDraw> {
    if !(sigma_cal_sq >= 0.0) {
        return Err(Error::Domain(format!("calibration variance {sigma_cal_sq} < 0")));
    }
    let mut rng = derived_rng(seed, stream::CALIBRATION, 0);
    let c = (0..users).map(|_| complex_gaussian_vector(&mut rng, m, sigma_cal_sq)).collect();
    Ok(CalibrationDraw { c })
}

pub fn downlink_from_uplink(u: &CVector, c: &CVector) -> Result<CVector> {
    if u.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: c.len() });
    }
    Ok(u.zip_map(c, |ui, ci| (C64::from(1.0) + ci) * ui))
}

/// Writes `(1 + c[i]) u[i]` into `out` without allocating.
pub fn downlink_into(u: &CVector, c: &[C64], out: &mut CVector) {
    for ((o, ui), ci) in out.iter_mut().zip(u.iter()).zip(c) {
        *o = (C64::from(1.0) + ci) * ui;
    }
}

/// Gauss-Markov drift: `corr * h + sqrt(1 - corr^2) * w`, `w ~ CN(0, nlos_var I)`.
pub fn sample_correlated(h: &CVector, corr: f64, nlos_var: f64, seed: u64) -> Result<CVector> {
    let mut rng = rng_from(seed);
    correlated_with(&mut rng, h, corr, nlos_var)
}

pub fn correlated_with<R: Rng + ?Sized>(rng: &mut R, h: &CVector, corr: f64, nlos_var: f64) -> Result<CVector> {
    if !(0.0..=1.0).contains(&corr) {
        return Err(Error::Domain(format!("correlation {corr} outside [0,1]")));
    }
    // Always consume the draws so that a sweep over `corr` with one seed
    // shares the innovation.
    let w = complex_gaussian_vector(rng, h.len(), nlos_var);
    if corr == 1.0 {
        return Ok(h.clone());
    }
    let s = (1.0 - corr * corr).sqrt();
    Ok(h * C64::from(corr) + w * C64::from(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_table1;
    use nalgebra::DMatrix;

    #[test]
    fn pathloss_values() {
        assert_eq!(pathloss(1.0, 2.6).unwrap(), 1.0);
        // direct evaluation: exp(-2.6 ln 5.5), exp(-2.6 ln 1.5)
        assert!((pathloss(5.5, 2.6).unwrap() - 0.011_886_582).abs() < 1e-9);
        assert!((pathloss(1.5, 2.6).unwrap() - 0.348_467_859).abs() < 1e-9);
        assert!(matches!(pathloss(0.5, 2.6), Err(Error::Domain(_))));
    }

    #[test]
    fn pure_los_has_constant_modulus() {
        let mut cfg = default_table1();
        cfg.rician_k_db = f64::INFINITY;
        let ch = sample_uplink(&cfg, 3).unwrap();
        for (k, u) in ch.u.iter().enumerate() {
            let pl = pathloss(cfg.distances()[k], cfg.pathloss_exp).unwrap();
            for z in u.iter() {
                assert!((z.norm() - pl.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rayleigh_power_matches_pathloss() {
        // K = 0: E|u_i|^2 = pathloss
        let mut rng = rng_from(11);
        let pl = pathloss(3.5, 2.6).unwrap();
        let n = 1_000_000 / 6;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = rician_vector(&mut rng, 6, pl, 0.0, 0.3);
            acc += u.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (n * 6) as f64;
        assert!((mean / pl - 1.0).abs() < 0.01, "{mean} vs {pl}");
    }

    #[test]
    fn uplink_is_deterministic_and_dmag_exact() {
        let cfg = default_table1();
        let a = sample_uplink(&cfg, 42).unwrap();
        let b = sample_uplink(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_uplink(&cfg, 43).unwrap());
        for (u, d) in a.u.iter().zip(&a.d_mag) {
            for i in 0..u.len() {
                assert_eq!(d[i], u[i].norm_sqr());
            }
        }
    }

    #[test]
    fn calibration_zero_variance_is_zero() {
        let d = sample_calibration(0.0, 4, 6, 1).unwrap();
        assert!(d.c.iter().all(|c| c.iter().all(|z| *z == C64::from(0.0))));
        assert!(sample_calibration(-1.0, 1, 1, 1).is_err());
    }

    #[test]
    fn calibration_variance_and_determinism() {
        let d = sample_calibration(0.01, 1000, 1000, 5).unwrap();
        assert_eq!(d, sample_calibration(0.01, 1000, 1000, 5).unwrap());
        let n = 1_000_000.0;
        let var: f64 = d.c.iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((var / 0.01 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn downlink_algebra() {
        let u = CVector::from_vec(vec![C64::new(0.3, -0.2), C64::new(1.0, 0.5)]);
        let zero = CVector::zeros(2);
        assert_eq!(downlink_from_uplink(&u, &zero).unwrap(), u);

        let e1 = CVector::from_vec(vec![C64::new(2.0, 0.0), C64::from(0.0), C64::from(0.0)]);
        let c = CVector::from_vec(vec![C64::new(0.0, 1.0), C64::from(0.0), C64::from(0.0)]);
        let h = downlink_from_uplink(&e1, &c).unwrap();
        assert_eq!(h[0], C64::new(2.0, 2.0));
        assert_eq!(h[1], C64::from(0.0));

        assert!(matches!(
            downlink_from_uplink(&u, &CVector::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn downlink_second_moment_matches_closed_form() {
        let mut rng = rng_from(9);
        let m = 4;
        let s2 = 0.01;
        let u = complex_gaussian_vector(&mut rng, m, 1.0);
        let samples = 1_000_000;
        let mut acc = DMatrix::<C64>::zeros(m, m);
        let mut mean = CVector::zeros(m);
        let mut h = CVector::zeros(m);
        for _ in 0..samples {
            let c: Vec<C64> = (0..m).map(|_| complex_gaussian(&mut rng, s2)).collect();
            downlink_into(&u, &c, &mut h);
            acc += &h * h.adjoint();
            mean += &h;
        }
        acc /= C64::from(samples as f64);
        mean /= C64::from(samples as f64);
        let mut expected = &u * u.adjoint();
        for i in 0..m {
            expected[(i, i)] += C64::from(s2 * u[i].norm_sqr());
        }
        let rel = (&acc - &expected).norm() / expected.norm();
        assert!(rel < 0.01, "relative Frobenius error {rel}");
        // mean: each entry's standard error is sqrt(s2 |u_i|^2 / S)
        for i in 0..m {
            let se = (s2 * u[i].norm_sqr() / samples as f64).sqrt();
            assert!((mean[i] - u[i]).norm() < 4.0 * se);
        }
        // covariance is diagonal sigma^2 |u_i|^2
        let cov = &acc - &mean * mean.adjoint();
        for i in 0..m {
            let want = s2 * u[i].norm_sqr();
            let se = want * (2.0 / samples as f64).sqrt();
            assert!((cov[(i, i)].re - want).abs() < 3.0 * se + 1e-12, "{} vs {want}", cov[(i, i)].re);
        }
    }

    fn empirical_corr(corr: f64, trials: usize) -> f64 {
        let mut rng = rng_from(1234);
        let (mut cross, mut ph, mut po) = (C64::from(0.0), 0.0, 0.0);
        for _ in 0..trials {
            let h = complex_gaussian_vector(&mut rng, 1, 0.5);
            let o = correlated_with(&mut rng, &h, corr, 0.5).unwrap();
            cross += h[0].conj() * o[0];
            ph += h[0].norm_sqr();
            po += o[0].norm_sqr();
        }
        cross.norm() / (ph * po).sqrt()
    }

    #[test]
    fn correlated_drift() {
        let h = CVector::from_vec(vec![C64::new(0.1, 0.2), C64::new(-0.3, 0.0)]);
        assert_eq!(sample_correlated(&h, 1.0, 0.2, 7).unwrap(), h);
        assert!(sample_correlated(&h, 1.2, 0.2, 7).is_err());
        assert!(empirical_corr(0.0, 1_000_000) < 0.01);
        assert!((empirical_corr(0.9, 1_000_000) - 0.9).abs() < 0.01);
    }

    #[test]
    fn csv_dump_round_trips() {
        let cfg = default_table1();
        let ch = sample_uplink(&cfg, 8).unwrap();
        let mut buf = Vec::new();
        ch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("group,user,antenna,re,im\n"));
        let back = UplinkChannelSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back.u, ch.u);
        assert_eq!(back.groups, ch.groups);
        back.check_layout(&cfg).unwrap();
    }
}
