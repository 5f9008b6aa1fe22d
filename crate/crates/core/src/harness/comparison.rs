//! Paired comparison of allocation schemes on common channel realizations.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::pipeline::{design_plan, validate, PipelineOptions};
use super::{channel_hash, realization_seed, ExperimentResult, ResultRow};
use crate::beamform::{second_moments, slr_directions, zf_directions, BeamDirections};
use crate::channel::{sample_uplink, UplinkChannelSet};
use crate::energy::mc_coverage;
use crate::moments::MomentTable;
use crate::plan::PlanVector;
use crate::power::{powers_for_rho, Allocation, AllocationProblem};
use crate::rng::{derive_seed, stream};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

/// Allocation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    /// SLR directions, per-user splits.
    Proposed,
    /// SLR directions, one shared split in closed form.
    ProposedSuboptimal,
    /// Zero-forcing directions, per-user splits.
    ZfBaseline,
    /// Energy threshold from a linear harvester `theta / xi`.
    LinearEh,
    /// Mean harvest constraint, no deviation term.
    MeanOnly,
    /// Shared split tuned until the Monte Carlo coverage meets the plan.
    McTuned,
}

impl Arm {
    pub const ALL: [Arm; 6] =
        [Arm::Proposed, Arm::ProposedSuboptimal, Arm::ZfBaseline, Arm::LinearEh, Arm::MeanOnly, Arm::McTuned];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Proposed => "proposed",
            Arm::ProposedSuboptimal => "proposed_suboptimal",
            Arm::ZfBaseline => "zf_baseline",
            Arm::LinearEh => "linear_eh_arm",
            Arm::MeanOnly => "mean_only_approx",
            Arm::McTuned => "mc_tuned",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown arm {s:?}")))
    }
}

/// Inputs shared by all arms of one realization.
pub(crate) struct Realization<'a> {
    pub cfg: &'a ScenarioConfig,
    pub plan: &'a PlanVector,
    pub opts: &'a PipelineOptions,
    pub index: usize,
    pub seed: u64,
    pub channels: UplinkChannelSet,
    pub hash: String,
    pub slr: BeamDirections,
}

impl<'a> Realization<'a> {
    pub fn draw(cfg: &'a ScenarioConfig, plan: &'a PlanVector, opts: &'a PipelineOptions, root: u64, index: usize) -> Result<Self> {
        let seed = realization_seed(root, index);
        let channels = sample_uplink(cfg, seed)?;
        let hash = channel_hash(&channels)?;
        let slr = slr_directions(&second_moments(&channels.u, cfg.sigma_cal_sq))?;
        Ok(Self { cfg, plan, opts, index, seed, channels, hash, slr })
    }

    fn problem(&self, dirs: &BeamDirections) -> Result<AllocationProblem> {
        let mt = MomentTable::build(&dirs.nu, &self.channels, self.cfg.sigma_cal_sq);
        Ok(AllocationProblem::from_config(self.cfg, mt, self.plan)?.with_margin(self.opts.margin))
    }

    pub fn solve(&self, arm: Arm) -> Result<(BeamDirections, Allocation)> {
        let cfg = self.cfg;
        match arm {
            Arm::Proposed => Ok((self.slr.clone(), self.problem(&self.slr)?.solve_optimal()?)),
            Arm::ProposedSuboptimal => {
                let pb = self.problem(&self.slr)?.with_margin(crate::moments::MarginForm::SumOfStd);
                Ok((self.slr.clone(), pb.solve_suboptimal()?))
            }
            Arm::ZfBaseline => {
                let zf = zf_directions(&self.channels.u)?;
                let alloc = self.problem(&zf)?.solve_optimal()?;
                Ok((zf, alloc))
            }
            Arm::LinearEh => {
                let mut pb = self.problem(&self.slr)?;
                pb.theta_hat = cfg.eh_target.iter().map(|t| t / cfg.eh_efficiency_linear).collect();
                Ok((self.slr.clone(), pb.solve_optimal()?))
            }
            Arm::MeanOnly => {
                let mut pb = self.problem(&self.slr)?;
                pb.alpha = vec![0.0; pb.n_users()];
                Ok((self.slr.clone(), pb.solve_optimal()?))
            }
            Arm::McTuned => Ok((self.slr.clone(), self.mc_tuned()?)),
        }
    }

    /// Largest shared split whose SINR-binding powers reach the planned
    /// coverage in simulation. Tuning draws are independent of the
    /// validation draws.
    fn mc_tuned(&self) -> Result<Allocation> {
        let cfg = self.cfg;
        let pb = self.problem(&self.slr)?;
        let n = pb.n_users();
        let samples = self.opts.mc_samples;
        let covered = |rho: f64| -> Result<bool> {
            let p = powers_for_rho(&pb.coupling, &[rho], cfg.sigma0_sq, cfg.sigma1_sq)?;
            let beams = self.slr.beams(p.as_slice());
            Ok((0..n).all(|i| {
                let seed = derive_seed(self.seed, stream::MC_TUNE, i as u64);
                let cov =
                    mc_coverage(&self.channels.u[i], cfg.sigma_cal_sq, &beams, rho, cfg.eh_target[i], &cfg.eh_circuit, samples, seed);
                cov >= self.plan.alpha[i]
            }))
        };
        let (mut lo, mut hi) = (1e-6, 1.0 - 1e-9);
        if !covered(lo)? {
            return Err(Error::Infeasible("coverage targets unreachable with a shared split".into()));
        }
        if covered(hi)? {
            lo = hi;
        } else {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if covered(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let p = powers_for_rho(&pb.coupling, &[lo], cfg.sigma0_sq, cfg.sigma1_sq)?;
        pb.evaluate(p.as_slice(), &vec![lo; n], true)
    }

    pub fn row(&self, arm: Arm, param: Option<f64>) -> Result<ResultRow> {
        let n = self.channels.n_users();
        match self.solve(arm) {
            Ok((dirs, alloc)) => {
                let v = validate(self.cfg, &self.channels.u, &dirs, &alloc, self.opts.mc_samples, self.seed);
                Ok(ResultRow {
                    realization: self.index,
                    scheme: arm.name().to_string(),
                    param,
                    channel_sha256: self.hash.clone(),
                    feasible: true,
                    total_power_w: Some(alloc.total_power),
                    total_power_dbm: Some(alloc.total_power_dbm()),
                    sinr_db: v.sinr_db.into_iter().map(Some).collect(),
                    coverage: v.coverage.into_iter().map(Some).collect(),
                    eh_w: v.mean_harvested.into_iter().map(Some).collect(),
                })
            }
            Err(e) if e.is_infeasible() => Ok(ResultRow::infeasible(self.index, arm.name(), param, self.hash.clone(), n)),
            Err(e) => Err(tag(e, self.index)),
        }
    }
}

/// Adds the realization id to solver failures.
pub(crate) fn tag(e: Error, index: usize) -> Error {
    match e {
        Error::NoConvergence { what, residual } => Error::NoConvergence { what: format!("realization {index}: {what}"), residual },
        Error::Numerical(m) => Error::Numerical(format!("realization {index}: {m}")),
        Error::Infeasible(m) => Error::Infeasible(format!("realization {index}: {m}")),
        other => other,
    }
}

/// Runs `arms` on `realizations` common channel draws. Infeasible arms are
/// recorded as rows, solver failures abort the run.
pub fn run_comparison(
    cfg: &ScenarioConfig,
    arms: &[Arm],
    realizations: usize,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<ExperimentResult> {
    if realizations == 0 {
        return Err(Error::Domain("at least one realization required".into()));
    }
    let plan = design_plan(cfg)?;
    let per: Vec<Vec<ResultRow>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let real = Realization::draw(cfg, &plan, opts, seed, r).map_err(|e| tag(e, r))?;
            arms.iter().map(|&arm| real.row(arm, None)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult { n_users: cfg.total_users(), rows: per.into_iter().flatten().collect() })
}
