//! One realization end to end: plan, directions, allocation, validation.

use crate::beamform::{second_moments, slr_directions, BeamDirections};
use crate::channel::{sample_uplink, UplinkChannelSet};
use crate::energy::mc_harvest;
use crate::moments::{avg_sinr, MarginForm, MomentTable};
use crate::plan::{solve_plan, PlanVector, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::power::{Allocation, AllocationProblem, FeasibilityReport};
use crate::rng::{derive_seed, stream};
use crate::scenario::ScenarioConfig;
use crate::{lin_to_db, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Per-user splits, barrier method.
    Optimal,
    /// One shared split in closed form.
    Suboptimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub solver: Solver,
    pub margin: MarginForm,
    pub mc_samples: usize,
}

impl PipelineOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self { solver: Solver::Optimal, margin: MarginForm::SumOfStd, mc_samples: cfg.mc_samples }
    }
}

/// Monte Carlo check of an allocation on a set of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub coverage: Vec<f64>,
    pub mean_harvested: Vec<f64>,
    /// Ratio-of-expectations SINR from the closed-form moments, in dB.
    pub sinr_db: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub channels: UplinkChannelSet,
    pub plan: PlanVector,
    pub directions: BeamDirections,
    pub feasibility: FeasibilityReport,
    pub allocation: Allocation,
    pub validation: Validation,
}

/// The redesigned serving plan for the configured weight.
pub fn design_plan(cfg: &ScenarioConfig) -> Result<PlanVector> {
    solve_plan(&cfg.existing_plan(), &cfg.priorities(), cfg.plan_weight, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Seed of user `n`'s calibration draws for a realization.
pub fn mc_seed(realization_seed: u64, n: usize) -> u64 {
    derive_seed(realization_seed, stream::MONTE_CARLO, n as u64)
}

pub fn run_pipeline(cfg: &ScenarioConfig, seed: u64) -> Result<PipelineOutput> {
    let channels = sample_uplink(cfg, seed)?;
    let plan = design_plan(cfg)?;
    run_pipeline_with(cfg, channels, &plan, &PipelineOptions::from_config(cfg), seed)
}

pub fn run_pipeline_with(
    cfg: &ScenarioConfig,
    channels: UplinkChannelSet,
    plan: &PlanVector,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<PipelineOutput> {
    channels.check_layout(cfg)?;
    let directions = slr_directions(&second_moments(&channels.u, cfg.sigma_cal_sq))?;
    let mt = MomentTable::build(&directions.nu, &channels, cfg.sigma_cal_sq);
    let problem = AllocationProblem::from_config(cfg, mt, plan)?.with_margin(opts.margin);
    let feasibility = problem.feasibility()?;
    let allocation = match opts.solver {
        Solver::Optimal => problem.solve_optimal()?,
        Solver::Suboptimal => problem.solve_suboptimal()?,
    };
    let validation = validate(cfg, &channels.u, &directions, &allocation, opts.mc_samples, seed);
    Ok(PipelineOutput { channels, plan: plan.clone(), directions, feasibility, allocation, validation })
}

/// Evaluates `alloc` on the downlink implied by uplinks `u` (which need not
/// be the channels it was designed for).
pub fn validate(
    cfg: &ScenarioConfig,
    u: &[crate::CVector],
    directions: &BeamDirections,
    alloc: &Allocation,
    samples: usize,
    seed: u64,
) -> Validation {
    let beams = directions.beams(&alloc.p);
    let mt = MomentTable::from_channels(&directions.nu, u, cfg.sigma_cal_sq);
    let n = u.len();
    let mut coverage = Vec::with_capacity(n);
    let mut mean_harvested = Vec::with_capacity(n);
    for i in 0..n {
        let h = mc_harvest(
            &u[i],
            cfg.sigma_cal_sq,
            &beams,
            alloc.rho[i],
            cfg.eh_target[i],
            &cfg.eh_circuit,
            samples,
            mc_seed(seed, i),
        );
        coverage.push(h.coverage);
        mean_harvested.push(h.mean_harvested);
    }
    let sinr_db = (0..n).map(|i| lin_to_db(avg_sinr(i, &alloc.p, alloc.rho[i], &mt, cfg.sigma0_sq, cfg.sigma1_sq))).collect();
    Validation { coverage, mean_harvested, sinr_db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_table1;

    fn quick() -> ScenarioConfig {
        let mut cfg = default_table1();
        cfg.mc_samples = 4000;
        cfg
    }

    #[test]
    fn deterministic() {
        let cfg = quick();
        let a = run_pipeline(&cfg, 11).unwrap();
        let b = run_pipeline(&cfg, 11).unwrap();
        assert_eq!(a.allocation, b.allocation);
        assert_eq!(a.validation, b.validation);
    }

    #[test]
    fn perfect_calibration_always_covers() {
        let cfg = quick().with_perfect_calibration();
        let out = run_pipeline(&cfg, 12).unwrap();
        assert!(out.validation.coverage.iter().all(|c| *c == 1.0), "{:?}", out.validation.coverage);
    }

    #[test]
    fn suboptimal_option() {
        let cfg = quick();
        let plan = design_plan(&cfg).unwrap();
        let ch = sample_uplink(&cfg, 13).unwrap();
        let opts = PipelineOptions { solver: Solver::Suboptimal, ..PipelineOptions::from_config(&cfg) };
        let out = run_pipeline_with(&cfg, ch, &plan, &opts, 13).unwrap();
        assert!(out.allocation.shared_split);
        assert!(out.allocation.rho.windows(2).all(|w| w[0] == w[1]));
    }
}
