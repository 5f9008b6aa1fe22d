use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use swipt_alloc::beamform::{leakage_matrix, second_moments, slr_direction, slr_directions, slr_value};
use swipt_alloc::channel::{sample_uplink, UplinkChannelSet};
use swipt_alloc::harness::pipeline::design_plan;
use swipt_alloc::harness::{
    realization_seed, run_comparison, run_mobility, write_csv, write_json, Arm, ExperimentResult, PipelineOptions,
    Profile, Solver,
};
use swipt_alloc::moments::{MarginForm, MomentTable};
use swipt_alloc::plan::{plan_objectives, solve_plan, DEFAULT_MAX_ITER, DEFAULT_TOL};
use swipt_alloc::power::AllocationProblem;
use swipt_alloc::scenario::{default_table1, load_config_file, ScenarioConfig};
use swipt_alloc::{lin_to_db, watts_to_dbm, Error, Result};

/// Resource allocation for multi-user SWIPT downlinks with calibration errors.
#[derive(Parser)]
#[command(name = "swipt-alloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the plan weight and print the trade-off.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated plan weights.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        r_grid: Vec<f64>,
    },
    /// Print the beam directions of one realization.
    Beamform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: ChannelSource,
    },
    /// Allocate powers and splits for one realization.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: ChannelSource,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run the proposed scheme over many realizations.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Compare schemes on common realizations.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Schemes to run (default: all).
        #[arg(long, value_delimiter = ',')]
        arm: Vec<String>,
        #[arg(long, value_enum, default_value_t = MarginArg::SumOfStd)]
        margin: MarginArg,
    },
    /// Evaluate allocations on drifted channels.
    Mobility {
        #[command(flatten)]
        common: Common,
        /// Comma-separated correlation coefficients.
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,0.9,1")]
        corr_grid: Vec<f64>,
    },
    /// Dump the uplink channels of one realization.
    Channels {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); the built-in six-user scenario if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (default: the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Realization and sample counts (default: the config's).
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Args)]
struct ChannelSource {
    /// Channel dump to use instead of sampling.
    #[arg(long)]
    channels: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SolverArg::Optimal)]
    solver: SolverArg,
    #[arg(long, value_enum, default_value_t = MarginArg::SumOfStd)]
    margin: MarginArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Ci,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Optimal,
    Suboptimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarginArg {
    SumOfStd,
    StdOfSum,
}

impl From<MarginArg> for MarginForm {
    fn from(m: MarginArg) -> Self {
        match m {
            MarginArg::SumOfStd => MarginForm::SumOfStd,
            MarginArg::StdOfSum => MarginForm::StdOfSum,
        }
    }
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Optimal => Solver::Optimal,
            SolverArg::Suboptimal => Solver::Suboptimal,
        }
    }
}

struct Ctx {
    cfg: ScenarioConfig,
    seed: u64,
    realizations: usize,
    out: Option<PathBuf>,
    format: FormatArg,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => load_config_file(p)?,
            None => default_table1(),
        };
        for w in cfg.warnings() {
            eprintln!("warning: {w}");
        }
        let realizations = match common.profile {
            Some(ProfileArg::Ci) => Profile::Ci.realizations(),
            Some(ProfileArg::Paper) => Profile::Paper.realizations(),
            None => cfg.realizations,
        };
        match common.profile {
            Some(ProfileArg::Ci) => cfg.mc_samples = Profile::Ci.mc_samples(),
            Some(ProfileArg::Paper) => cfg.mc_samples = Profile::Paper.mc_samples(),
            None => {}
        }
        let seed = common.seed.unwrap_or(cfg.seed);
        Ok(Self { cfg, seed, realizations, out: common.out.clone(), format: common.format })
    }

    fn channels(&self, source: &ChannelSource) -> Result<UplinkChannelSet> {
        match &source.channels {
            Some(p) => {
                let ch = UplinkChannelSet::read_csv(File::open(p)?)?;
                ch.check_layout(&self.cfg)?;
                Ok(ch)
            }
            None => sample_uplink(&self.cfg, realization_seed(self.seed, 0)),
        }
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn table(&self, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.writer()?;
        match self.format {
            FormatArg::Csv => {
                let mut wr = csv::Writer::from_writer(&mut w);
                wr.write_record(header)?;
                for r in rows {
                    wr.write_record(r)?;
                }
                wr.flush()?;
            }
            FormatArg::Json => {
                let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                    .iter()
                    .map(|r| header.iter().cloned().zip(r.iter().map(|v| json_value(v))).collect())
                    .collect();
                serde_json::to_writer_pretty(&mut w, &objs)?;
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn experiment(&self, res: &ExperimentResult) -> Result<()> {
        let mut w = self.writer()?;
        match self.format {
            FormatArg::Csv => write_csv(res, &mut w)?,
            FormatArg::Json => write_json(res, &mut w)?,
        }
        w.flush()?;
        Ok(())
    }
}

fn json_value(s: &str) -> serde_json::Value {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => serde_json::json!(x),
        _ => serde_json::Value::String(s.to_string()),
    }
}

fn plan_cmd(ctx: &Ctx, r_grid: &[f64]) -> Result<()> {
    let (q, b) = (ctx.cfg.existing_plan(), ctx.cfg.priorities());
    let mut header: Vec<String> = vec!["r".into(), "weighted_sum".into(), "variance".into()];
    header.extend((1..=q.len()).map(|k| format!("alpha_{k}")));
    let mut rows = Vec::new();
    for &r in r_grid {
        let plan = solve_plan(&q, &b, r, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let (ws, var) = plan_objectives(&plan.alpha, &q, &b);
        let mut row = vec![r.to_string(), ws.to_string(), var.to_string()];
        row.extend(plan.alpha.iter().map(|a| a.to_string()));
        rows.push(row);
    }
    ctx.table(&header, &rows)
}

fn beamform_cmd(ctx: &Ctx, source: &ChannelSource) -> Result<()> {
    let ch = ctx.channels(source)?;
    let a = second_moments(&ch.u, ctx.cfg.sigma_cal_sq);
    let dirs = slr_directions(&a)?;
    let header: Vec<String> = ["user", "group", "antenna", "re", "im", "slr_db"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (n, nu) in dirs.nu.iter().enumerate() {
        let leak = leakage_matrix(&a, n);
        let slr = if dirs.len() > 1 { slr_value(nu, &a[n], &leak)? } else { slr_direction(&a[n], &leak)?.1 };
        for (m, z) in nu.iter().enumerate() {
            rows.push(vec![
                n.to_string(),
                ch.groups[n].to_string(),
                m.to_string(),
                z.re.to_string(),
                z.im.to_string(),
                lin_to_db(slr).to_string(),
            ]);
        }
    }
    ctx.table(&header, &rows)
}

#[derive(Serialize)]
struct AllocationDoc {
    feasible: bool,
    shared_split: bool,
    total_power_w: f64,
    total_power_dbm: f64,
    spectral_radius: f64,
    coupling_ok: bool,
    mean_dominates: Vec<bool>,
    positive_slope: Vec<bool>,
    users: Vec<UserDoc>,
}

#[derive(Serialize)]
struct UserDoc {
    user: usize,
    group: usize,
    alpha: f64,
    p_w: f64,
    p_dbm: f64,
    rho: f64,
    sinr_db: f64,
    chebyshev_margin: f64,
}

fn allocate_cmd(ctx: &Ctx, source: &ChannelSource, solver: &SolverArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let ch = ctx.channels(source)?;
    let plan = design_plan(cfg)?;
    let dirs = slr_directions(&second_moments(&ch.u, cfg.sigma_cal_sq))?;
    let mt = MomentTable::build(&dirs.nu, &ch, cfg.sigma_cal_sq);
    let pb = AllocationProblem::from_config(cfg, mt, &plan)?.with_margin(solver.margin.into());
    let report = pb.feasibility()?;
    let alloc = match Solver::from(solver.solver) {
        Solver::Optimal => pb.solve_optimal()?,
        Solver::Suboptimal => pb.solve_suboptimal()?,
    };
    let users: Vec<UserDoc> = (0..pb.n_users())
        .map(|n| UserDoc {
            user: n,
            group: ch.groups[n],
            alpha: plan.alpha[n],
            p_w: alloc.p[n],
            p_dbm: watts_to_dbm(alloc.p[n]),
            rho: alloc.rho[n],
            sinr_db: lin_to_db(alloc.predicted_sinr[n]),
            chebyshev_margin: alloc.chebyshev_margin[n],
        })
        .collect();
    match ctx.format {
        FormatArg::Json => ctx.json(&AllocationDoc {
            feasible: alloc.feasible,
            shared_split: alloc.shared_split,
            total_power_w: alloc.total_power,
            total_power_dbm: alloc.total_power_dbm(),
            spectral_radius: report.spectral_radius,
            coupling_ok: report.coupling_ok,
            mean_dominates: report.mean_dominates,
            positive_slope: report.positive_slope,
            users,
        }),
        FormatArg::Csv => {
            let header: Vec<String> = ["user", "group", "alpha", "p_w", "p_dbm", "rho", "sinr_db", "chebyshev_margin"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let rows: Vec<Vec<String>> = users
                .iter()
                .map(|u| {
                    vec![
                        u.user.to_string(),
                        u.group.to_string(),
                        u.alpha.to_string(),
                        u.p_w.to_string(),
                        u.p_dbm.to_string(),
                        u.rho.to_string(),
                        u.sinr_db.to_string(),
                        u.chebyshev_margin.to_string(),
                    ]
                })
                .collect();
            ctx.table(&header, &rows)
        }
    }
}

fn options(ctx: &Ctx, solver: Solver, margin: MarginForm) -> PipelineOptions {
    PipelineOptions { solver, margin, mc_samples: ctx.cfg.mc_samples }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { common, r_grid } => plan_cmd(&Ctx::new(&common)?, &r_grid),
        Command::Beamform { common, source } => beamform_cmd(&Ctx::new(&common)?, &source),
        Command::Allocate { common, source, solver } => allocate_cmd(&Ctx::new(&common)?, &source, &solver),
        Command::Simulate { common, solver } => {
            let ctx = Ctx::new(&common)?;
            let arm = match solver.solver {
                SolverArg::Optimal => Arm::Proposed,
                SolverArg::Suboptimal => Arm::ProposedSuboptimal,
            };
            let opts = options(&ctx, solver.solver.into(), solver.margin.into());
            ctx.experiment(&run_comparison(&ctx.cfg, &[arm], ctx.realizations, ctx.seed, &opts)?)
        }
        Command::Compare { common, arm, margin } => {
            let ctx = Ctx::new(&common)?;
            let arms = if arm.is_empty() {
                Arm::ALL.to_vec()
            } else {
                arm.iter().map(|a| a.parse()).collect::<Result<Vec<Arm>>>()?
            };
            let opts = options(&ctx, Solver::Optimal, margin.into());
            ctx.experiment(&run_comparison(&ctx.cfg, &arms, ctx.realizations, ctx.seed, &opts)?)
        }
        Command::Mobility { common, corr_grid } => {
            let ctx = Ctx::new(&common)?;
            let opts = options(&ctx, Solver::Optimal, MarginForm::SumOfStd);
            ctx.experiment(&run_mobility(&ctx.cfg, &corr_grid, ctx.realizations, ctx.seed, &opts)?)
        }
        Command::Channels { common } => {
            let ctx = Ctx::new(&common)?;
            let ch = sample_uplink(&ctx.cfg, realization_seed(ctx.seed, 0))?;
            let mut w = ctx.writer()?;
            ch.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::Invalid(_) | Error::Parse(_) | Error::Domain(_) | Error::DimensionMismatch { .. } => 2,
        Error::NoConvergence { .. } | Error::Numerical(_) => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
