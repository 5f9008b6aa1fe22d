//! Allocation on stale channel estimates.
//!
//! The first user of every group moves: its true uplink drifts to
//! `corr * u + sqrt(1 - corr^2) * w` with `w ~ CN(0, pathloss I)`, which
//! keeps the average channel power. One innovation `w` is drawn per user
//! and realization and reused across the whole correlation grid.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::comparison::{tag, Arm, Realization};
use super::pipeline::{design_plan, validate, PipelineOptions};
use super::{ExperimentResult, ResultRow};
use crate::channel::{correlated_with, pathloss};
use crate::rng::{derived_rng, stream};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

/// Scheme tag of the rows evaluated on drifted channels.
pub const MOBILITY: &str = "mobility";
/// Scheme tag of the design-time reference row of each realization.
pub const DESIGNED: &str = "designed";

/// Indices of the moving users.
pub fn moving_users(cfg: &ScenarioConfig) -> Vec<usize> {
    let mut first = 0;
    cfg.groups
        .iter()
        .map(|g| {
            let i = first;
            first += g.n_users;
            i
        })
        .collect()
}

pub fn run_mobility(
    cfg: &ScenarioConfig,
    corr_grid: &[f64],
    realizations: usize,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<ExperimentResult> {
    if let Some(c) = corr_grid.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("correlation {c} outside [0,1]")));
    }
    if realizations == 0 {
        return Err(Error::Domain("at least one realization required".into()));
    }
    let plan = design_plan(cfg)?;
    let moving = moving_users(cfg);
    let per: Vec<Vec<ResultRow>> = (0..realizations)
        .into_par_iter()
        .map(|r| -> Result<Vec<ResultRow>> {
            let real = Realization::draw(cfg, &plan, opts, seed, r).map_err(|e| tag(e, r))?;
            let mut rows = vec![real.row(Arm::Proposed, None)?];
            rows[0].scheme = DESIGNED.to_string();
            let n = cfg.total_users();
            let (dirs, alloc) = match real.solve(Arm::Proposed) {
                Ok(x) => x,
                Err(e) if e.is_infeasible() => {
                    for &c in corr_grid {
                        rows.push(ResultRow::infeasible(r, MOBILITY, Some(c), real.hash.clone(), n));
                    }
                    return Ok(rows);
                }
                Err(e) => return Err(tag(e, r)),
            };
            let base = derived_rng(real.seed, stream::MOBILITY, 0);
            for &c in corr_grid {
                let mut rng = base.clone();
                let mut u = real.channels.u.clone();
                for &i in &moving {
                    let pl = pathloss(cfg.groups[real.channels.groups[i]].distance_m, cfg.pathloss_exp)?;
                    u[i] = correlated_with(&mut rng, &real.channels.u[i], c, pl)?;
                }
                let v = validate(cfg, &u, &dirs, &alloc, opts.mc_samples, real.seed);
                rows.push(ResultRow {
                    realization: r,
                    scheme: MOBILITY.to_string(),
                    param: Some(c),
                    channel_sha256: real.hash.clone(),
                    feasible: true,
                    total_power_w: Some(alloc.total_power),
                    total_power_dbm: Some(alloc.total_power_dbm()),
                    sinr_db: v.sinr_db.into_iter().map(Some).collect(),
                    coverage: v.coverage.into_iter().map(Some).collect(),
                    eh_w: v.mean_harvested.into_iter().map(Some).collect(),
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult { n_users: cfg.total_users(), rows: per.into_iter().flatten().collect() })
}

/// Average SINR loss in dB (designed minus drifted) of the moving user of
/// each group, per correlation, over feasible realizations.
pub fn sinr_loss_by_group(res: &ExperimentResult, cfg: &ScenarioConfig) -> Vec<(f64, Vec<f64>)> {
    let moving = moving_users(cfg);
    let designed: BTreeMap<usize, &ResultRow> = res.rows_for(DESIGNED).filter(|r| r.feasible).map(|r| (r.realization, r)).collect();
    let mut acc: BTreeMap<u64, (Vec<f64>, usize)> = BTreeMap::new();
    for row in res.rows_for(MOBILITY).filter(|r| r.feasible) {
        let (Some(c), Some(d)) = (row.param, designed.get(&row.realization)) else { continue };
        let entry = acc.entry(c.to_bits()).or_insert_with(|| (vec![0.0; moving.len()], 0));
        for (g, &i) in moving.iter().enumerate() {
            if let (Some(a), Some(b)) = (d.sinr_db[i], row.sinr_db[i]) {
                entry.0[g] += a - b;
            }
        }
        entry.1 += 1;
    }
    let mut out: Vec<(f64, Vec<f64>)> = acc
        .into_iter()
        .map(|(bits, (sum, n))| (f64::from_bits(bits), sum.into_iter().map(|s| s / n as f64).collect()))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
