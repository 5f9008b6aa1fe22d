//! Monte Carlo experiments over channel realizations.
//!
//! Every realization `r` draws its channels from
//! `derive_seed(seed, REALIZATION, r)`, so all schemes in one run see the
//! same channels and the same calibration-error draws. Results are collected
//! in realization order regardless of the thread pool.

pub mod comparison;
pub mod emit;
pub mod mobility;
pub mod pipeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::UplinkChannelSet;
use crate::rng::{derive_seed, stream};
use crate::Result;

pub use comparison::{run_comparison, Arm};
pub use emit::{emit, read_csv, write_csv, write_json, Format};
pub use mobility::{run_mobility, sinr_loss_by_group};
pub use pipeline::{run_pipeline, run_pipeline_with, PipelineOptions, PipelineOutput, Solver};

/// Realization and sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 50 realizations, 1e4 calibration draws.
    Ci,
    /// 1000 realizations, 1e5 calibration draws.
    Paper,
}

impl Profile {
    pub fn realizations(self) -> usize {
        match self {
            Profile::Ci => 50,
            Profile::Paper => 1000,
        }
    }

    pub fn mc_samples(self) -> usize {
        match self {
            Profile::Ci => 10_000,
            Profile::Paper => 100_000,
        }
    }
}

/// Seed of realization `r` under the run seed.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, stream::REALIZATION, r as u64)
}

/// Hex SHA-256 of the channel dump, used to prove paired comparisons.
pub fn channel_hash(ch: &UplinkChannelSet) -> Result<String> {
    let mut buf = Vec::new();
    ch.write_csv(&mut buf)?;
    Ok(Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect())
}

/// One scheme evaluated on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub realization: usize,
    pub scheme: String,
    /// Sweep parameter (e.g. the mobility correlation), if any.
    pub param: Option<f64>,
    pub channel_sha256: String,
    pub feasible: bool,
    pub total_power_w: Option<f64>,
    pub total_power_dbm: Option<f64>,
    pub sinr_db: Vec<Option<f64>>,
    pub coverage: Vec<Option<f64>>,
    pub eh_w: Vec<Option<f64>>,
}

impl ResultRow {
    pub fn infeasible(realization: usize, scheme: &str, param: Option<f64>, hash: String, n_users: usize) -> Self {
        Self {
            realization,
            scheme: scheme.to_string(),
            param,
            channel_sha256: hash,
            feasible: false,
            total_power_w: None,
            total_power_dbm: None,
            sinr_db: vec![None; n_users],
            coverage: vec![None; n_users],
            eh_w: vec![None; n_users],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub n_users: usize,
    pub rows: Vec<ResultRow>,
}

/// Aggregates over the feasible rows of one `(scheme, param)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: String,
    pub param: Option<f64>,
    pub rows: usize,
    pub feasible: usize,
    pub mean_power_dbm: Option<f64>,
    pub stderr_power_dbm: Option<f64>,
    pub mean_sinr_db: Vec<Option<f64>>,
    pub mean_coverage: Vec<Option<f64>>,
    pub stderr_coverage: Vec<Option<f64>>,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

impl ExperimentResult {
    pub fn new(n_users: usize) -> Self {
        Self { n_users, rows: Vec::new() }
    }

    pub fn rows_for<'a>(&'a self, scheme: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.scheme == scheme)
    }

    /// Infeasible rows are counted but excluded from the means.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut cells: BTreeMap<(String, Option<u64>), Vec<&ResultRow>> = BTreeMap::new();
        for row in &self.rows {
            cells.entry((row.scheme.clone(), row.param.map(f64::to_bits))).or_default().push(row);
        }
        cells
            .into_iter()
            .map(|((scheme, param), rows)| {
                let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.feasible).collect();
                let power: Vec<f64> = ok.iter().filter_map(|r| r.total_power_dbm).collect();
                let column = |pick: fn(&ResultRow) -> &Vec<Option<f64>>, k: usize| -> Vec<f64> {
                    ok.iter().filter_map(|r| pick(r).get(k).copied().flatten()).collect()
                };
                let per_user = |pick: fn(&ResultRow) -> &Vec<Option<f64>>| -> Vec<Option<(f64, f64)>> {
                    (0..self.n_users).map(|k| mean_stderr(&column(pick, k))).collect()
                };
                let sinr = per_user(|r| &r.sinr_db);
                let cov = per_user(|r| &r.coverage);
                let ps = mean_stderr(&power);
                CellSummary {
                    scheme,
                    param: param.map(f64::from_bits),
                    rows: rows.len(),
                    feasible: ok.len(),
                    mean_power_dbm: ps.map(|x| x.0),
                    stderr_power_dbm: ps.map(|x| x.1),
                    mean_sinr_db: sinr.iter().map(|x| x.map(|v| v.0)).collect(),
                    mean_coverage: cov.iter().map(|x| x.map(|v| v.0)).collect(),
                    stderr_coverage: cov.iter().map(|x| x.map(|v| v.1)).collect(),
                }
            })
            .collect()
    }

    /// Mean of `a - b` total power in dB over realizations where both
    /// schemes are feasible, with its standard error and the pair count.
    pub fn paired_power_gap_db(&self, a: &str, b: &str) -> Option<(f64, f64, usize)> {
        let pa: BTreeMap<usize, f64> =
            self.rows_for(a).filter(|r| r.feasible).filter_map(|r| Some((r.realization, r.total_power_dbm?))).collect();
        let gaps: Vec<f64> = self
            .rows_for(b)
            .filter(|r| r.feasible)
            .filter_map(|r| Some(pa.get(&r.realization)? - r.total_power_dbm?))
            .collect();
        mean_stderr(&gaps).map(|(m, s)| (m, s, gaps.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(r: usize, scheme: &str, feasible: bool, dbm: f64) -> ResultRow {
        let mut row = ResultRow::infeasible(r, scheme, None, String::new(), 1);
        if feasible {
            row.feasible = true;
            row.total_power_dbm = Some(dbm);
            row.total_power_w = Some(1e-3 * 10f64.powf(dbm / 10.0));
            row.coverage = vec![Some(1.0)];
            row.sinr_db = vec![Some(2.0)];
        }
        row
    }

    #[test]
    fn summary_excludes_infeasible_rows() {
        let mut res = ExperimentResult::new(1);
        res.rows = vec![row(0, "a", true, 10.0), row(1, "a", false, 0.0), row(2, "a", true, 20.0)];
        let s = &res.summary()[0];
        assert_eq!((s.rows, s.feasible), (3, 2));
        assert_eq!(s.mean_power_dbm, Some(15.0));
        assert_eq!(s.stderr_power_dbm, Some(5.0));
        assert_eq!(s.mean_coverage, vec![Some(1.0)]);
    }

    #[test]
    fn paired_gap_uses_common_realizations() {
        let mut res = ExperimentResult::new(1);
        res.rows = vec![row(0, "a", true, 10.0), row(0, "b", true, 9.0), row(1, "a", true, 12.0), row(1, "b", false, 0.0)];
        let (gap, _, n) = res.paired_power_gap_db("a", "b").unwrap();
        assert_eq!((gap, n), (1.0, 1));
    }

    #[test]
    fn profiles() {
        assert_eq!((Profile::Ci.realizations(), Profile::Ci.mc_samples()), (50, 10_000));
        assert_eq!((Profile::Paper.realizations(), Profile::Paper.mc_samples()), (1000, 100_000));
    }
}
