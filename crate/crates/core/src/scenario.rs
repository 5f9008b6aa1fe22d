//! Experiment configuration.
//!
//! Configs are TOML documents with the following keys (defaults in
//! parentheses):
//!
//! ```toml
//! antennas = 6
//!
//! [[groups]]
//! n = 3
//! distance_m = 1.5
//! priority = 0.1
//! q = 0.9                # scalar (broadcast) or one value per user
//!
//! [noise]
//! sigma0_sq_w = 1e-12
//! sigma1_sq_w = 1e-8
//!
//! [cal]
//! sigma_sq = 0.01
//!
//! [eh]
//! m_w = 0.024
//! a = 150.0
//! b = 0.014
//! xi = 0.5               # (0.5) linear-model efficiency, baseline arm only
//!
//! [channel]
//! rician_k_db = 2.0      # (2.0)
//! pathloss_exp = 2.6     # (2.6)
//!
//! [targets]
//! gamma_db = 2.0         # scalar or per-user list
//! theta_w = 1e-3         # scalar or per-user list
//!
//! [plan]
//! r = 0.3
//!
//! [mc]
//! samples = 100000       # (100000) calibration draws per realization
//! realizations = 1000    # (1000)
//! seed = 1               # (1)
//! ```
//!
//! Users are indexed group-major: all users of group 0, then group 1, ...

use serde::{Deserialize, Serialize};

use crate::{db_to_lin, Error, Result};

/// Logistic energy-harvesting circuit constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhCircuitParams {
    /// Saturation level in W.
    pub m_eh: f64,
    /// Slope constant.
    pub a: f64,
    /// Turn-on constant in W.
    pub b: f64,
}

impl EhCircuitParams {
    pub fn new(m_eh: f64, a: f64, b: f64) -> Result<Self> {
        let p = Self { m_eh, a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn table1() -> Self {
        Self { m_eh: 0.024, a: 150.0, b: 0.014 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.m_eh > 0.0) {
            return Err(Error::Invalid("eh.m_w must be > 0".into()));
        }
        if !(self.a > 0.0) {
            return Err(Error::Invalid("eh.a must be > 0".into()));
        }
        if !(self.b > 0.0) {
            return Err(Error::Invalid("eh.b must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub n_users: usize,
    pub distance_m: f64,
    pub priority: f64,
    /// Existing serving plan, one coverage probability per user.
    pub existing_plan: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub m_antennas: usize,
    pub groups: Vec<GroupSpec>,
    /// Per-user SINR target in dB.
    pub sinr_target_db: Vec<f64>,
    /// Per-user harvested-energy target in W.
    pub eh_target: Vec<f64>,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma_cal_sq: f64,
    pub rician_k_db: f64,
    pub pathloss_exp: f64,
    pub plan_weight: f64,
    pub eh_efficiency_linear: f64,
    pub eh_circuit: EhCircuitParams,
    pub mc_samples: usize,
    pub realizations: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn total_users(&self) -> usize {
        self.groups.iter().map(|g| g.n_users).sum()
    }

    /// Group index of every user, in the global user order.
    pub fn user_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, spec)| std::iter::repeat_n(g, spec.n_users))
            .collect()
    }

    /// Per-user priorities (group constant expanded).
    pub fn priorities(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.priority, g.n_users))
            .collect()
    }

    pub fn existing_plan(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.existing_plan.iter().copied()).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.distance_m, g.n_users))
            .collect()
    }

    pub fn sinr_targets_linear(&self) -> Vec<f64> {
        self.sinr_target_db.iter().map(|&d| db_to_lin(d)).collect()
    }

    pub fn rician_k(&self) -> f64 {
        db_to_lin(self.rician_k_db)
    }

    /// Non-fatal observations about the config.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.m_antennas < self.total_users() {
            w.push(format!(
                "{} antennas < {} users: zero-forcing baseline is infeasible",
                self.m_antennas,
                self.total_users()
            ));
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.m_antennas == 0 {
            return inv("antennas must be >= 1");
        }
        if self.groups.is_empty() {
            return inv("at least one group required");
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.n_users == 0 {
                return inv(&format!("groups[{i}].n must be >= 1"));
            }
            if !(g.distance_m >= 1.0) || !g.distance_m.is_finite() {
                return inv(&format!("groups[{i}].distance_m must be >= 1 m"));
            }
            if !(g.priority > 0.0) {
                return inv(&format!("groups[{i}].priority must be > 0"));
            }
            if g.existing_plan.len() != g.n_users {
                return inv(&format!(
                    "groups[{i}].q has {} entries for {} users",
                    g.existing_plan.len(),
                    g.n_users
                ));
            }
            if g.existing_plan.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return inv(&format!("groups[{i}].q entries must lie in [0,1]"));
            }
        }
        let k = self.total_users();
        if self.sinr_target_db.len() != k {
            return inv("targets.gamma_db length must match total users");
        }
        if self.eh_target.len() != k {
            return inv("targets.theta_w length must match total users");
        }
        if self.sinr_target_db.iter().any(|g| !g.is_finite()) {
            return inv("targets.gamma_db must be finite");
        }
        if self.eh_target.iter().any(|t| !(*t > 0.0)) {
            return inv("targets.theta_w must be > 0");
        }
        if !(self.sigma0_sq > 0.0) {
            return inv("noise.sigma0_sq_w must be > 0");
        }
        if !(self.sigma1_sq > 0.0) {
            return inv("noise.sigma1_sq_w must be > 0");
        }
        if !(self.sigma_cal_sq > 0.0) {
            return inv("cal.sigma_sq must be > 0");
        }
        if !(self.plan_weight > 0.0 && self.plan_weight < 1.0) {
            return inv("plan_weight out of (0,1)");
        }
        if !(0.0..=1.0).contains(&self.eh_efficiency_linear) {
            return inv("eh.xi must lie in [0,1]");
        }
        if !(self.pathloss_exp > 0.0) {
            return inv("channel.pathloss_exp must be > 0");
        }
        if self.rician_k_db.is_nan() {
            return inv("channel.rician_k_db must be a number");
        }
        if self.mc_samples == 0 {
            return inv("mc.samples must be >= 1");
        }
        if self.realizations == 0 {
            return inv("mc.realizations must be >= 1");
        }
        self.eh_circuit.validate()
    }

    /// Same scenario with a zero calibration-error variance. Validation
    /// requires a positive variance, so this bypasses it; used for
    /// degenerate-distribution checks.
    pub fn with_perfect_calibration(&self) -> Self {
        Self { sigma_cal_sq: 0.0, ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigDoc::from(self)).expect("config serializes")
    }
}

/// The canonical six-user, three-group scenario.
pub fn default_table1() -> ScenarioConfig {
    let group = |n: usize, d: f64, b: f64, q: f64| GroupSpec {
        n_users: n,
        distance_m: d,
        priority: b,
        existing_plan: vec![q; n],
    };
    ScenarioConfig {
        m_antennas: 6,
        groups: vec![group(3, 1.5, 0.1, 0.9), group(2, 3.5, 0.2, 0.8), group(1, 5.5, 0.3, 0.7)],
        sinr_target_db: vec![2.0; 6],
        eh_target: vec![DEFAULT_THETA_W; 6],
        sigma0_sq: 1e-12,
        sigma1_sq: 1e-8,
        sigma_cal_sq: 0.01,
        rician_k_db: 2.0,
        pathloss_exp: 2.6,
        plan_weight: 0.3,
        eh_efficiency_linear: 0.5,
        eh_circuit: EhCircuitParams::table1(),
        mc_samples: 100_000,
        realizations: 1000,
        seed: 1,
    }
}

/// Default harvested-energy target for the canonical scenario.
pub const DEFAULT_THETA_W: f64 = 1e-3;

pub fn load_config(text: &str) -> Result<ScenarioConfig> {
    let doc: ConfigDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let cfg = doc.into_config()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config_file(path: &std::path::Path) -> Result<ScenarioConfig> {
    load_config(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(x) => Ok(vec![*x; n]),
            ScalarOrList::List(v) if v.len() == n => Ok(v.clone()),
            ScalarOrList::List(v) => Err(Error::Invalid(format!(
                "{key} has {} entries, expected 1 or {n}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupDoc {
    n: usize,
    distance_m: f64,
    priority: f64,
    q: ScalarOrList,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    sigma0_sq_w: f64,
    sigma1_sq_w: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalDoc {
    sigma_sq: f64,
}

fn default_xi() -> f64 {
    0.5
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EhDoc {
    m_w: f64,
    a: f64,
    b: f64,
    #[serde(default = "default_xi")]
    xi: f64,
}

fn default_k_db() -> f64 {
    2.0
}

fn default_pathloss() -> f64 {
    2.6
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    #[serde(default = "default_k_db")]
    rician_k_db: f64,
    #[serde(default = "default_pathloss")]
    pathloss_exp: f64,
}

impl Default for ChannelDoc {
    fn default() -> Self {
        Self { rician_k_db: default_k_db(), pathloss_exp: default_pathloss() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsDoc {
    gamma_db: ScalarOrList,
    theta_w: ScalarOrList,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    r: f64,
}

fn default_samples() -> usize {
    100_000
}

fn default_realizations() -> usize {
    1000
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct McDoc {
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_realizations")]
    realizations: usize,
    #[serde(default = "default_seed")]
    seed: u64,
}

impl Default for McDoc {
    fn default() -> Self {
        Self { samples: default_samples(), realizations: default_realizations(), seed: default_seed() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    antennas: usize,
    groups: Vec<GroupDoc>,
    noise: NoiseDoc,
    cal: CalDoc,
    eh: EhDoc,
    #[serde(default)]
    channel: ChannelDoc,
    targets: TargetsDoc,
    plan: PlanDoc,
    #[serde(default)]
    mc: McDoc,
}

impl ConfigDoc {
    fn into_config(self) -> Result<ScenarioConfig> {
        let mut groups = Vec::with_capacity(self.groups.len());
        for (i, g) in self.groups.iter().enumerate() {
            groups.push(GroupSpec {
                n_users: g.n,
                distance_m: g.distance_m,
                priority: g.priority,
                existing_plan: g.q.expand(g.n, &format!("groups[{i}].q"))?,
            });
        }
        let k: usize = groups.iter().map(|g| g.n_users).sum();
        Ok(ScenarioConfig {
            m_antennas: self.antennas,
            groups,
            sinr_target_db: self.targets.gamma_db.expand(k, "targets.gamma_db")?,
            eh_target: self.targets.theta_w.expand(k, "targets.theta_w")?,
            sigma0_sq: self.noise.sigma0_sq_w,
            sigma1_sq: self.noise.sigma1_sq_w,
            sigma_cal_sq: self.cal.sigma_sq,
            rician_k_db: self.channel.rician_k_db,
            pathloss_exp: self.channel.pathloss_exp,
            plan_weight: self.plan.r,
            eh_efficiency_linear: self.eh.xi,
            eh_circuit: EhCircuitParams { m_eh: self.eh.m_w, a: self.eh.a, b: self.eh.b },
            mc_samples: self.mc.samples,
            realizations: self.mc.realizations,
            seed: self.mc.seed,
        })
    }
}

impl From<&ScenarioConfig> for ConfigDoc {
    fn from(c: &ScenarioConfig) -> Self {
        ConfigDoc {
            antennas: c.m_antennas,
            groups: c
                .groups
                .iter()
                .map(|g| GroupDoc {
                    n: g.n_users,
                    distance_m: g.distance_m,
                    priority: g.priority,
                    q: ScalarOrList::List(g.existing_plan.clone()),
                })
                .collect(),
            noise: NoiseDoc { sigma0_sq_w: c.sigma0_sq, sigma1_sq_w: c.sigma1_sq },
            cal: CalDoc { sigma_sq: c.sigma_cal_sq },
            eh: EhDoc { m_w: c.eh_circuit.m_eh, a: c.eh_circuit.a, b: c.eh_circuit.b, xi: c.eh_efficiency_linear },
            channel: ChannelDoc { rician_k_db: c.rician_k_db, pathloss_exp: c.pathloss_exp },
            targets: TargetsDoc {
                gamma_db: ScalarOrList::List(c.sinr_target_db.clone()),
                theta_w: ScalarOrList::List(c.eh_target.clone()),
            },
            plan: PlanDoc { r: c.plan_weight },
            mc: McDoc { samples: c.mc_samples, realizations: c.realizations, seed: c.seed },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TABLE1_DOC: &str = r#"
antennas = 6

[[groups]]
n = 3
distance_m = 1.5
priority = 0.1
q = [0.9, 0.9, 0.9]

[[groups]]
n = 2
distance_m = 3.5
priority = 0.2
q = [0.8, 0.8]

[[groups]]
n = 1
distance_m = 5.5
priority = 0.3
q = 0.7

[noise]
sigma0_sq_w = 1e-12
sigma1_sq_w = 1e-8

[cal]
sigma_sq = 0.01

[eh]
m_w = 0.024
a = 150.0
b = 0.014

[targets]
gamma_db = 2.0
theta_w = 1e-3

[plan]
r = 0.3
"#;

    #[test]
    fn table1_document_loads() {
        let cfg = load_config(TABLE1_DOC).unwrap();
        assert_eq!(cfg.m_antennas, 6);
        let sizes: Vec<_> = cfg.groups.iter().map(|g| g.n_users).collect();
        assert_eq!(sizes, vec![3, 2, 1]);
        assert_eq!(cfg.existing_plan(), vec![0.9, 0.9, 0.9, 0.8, 0.8, 0.7]);
        assert_eq!(cfg.priorities(), vec![0.1, 0.1, 0.1, 0.2, 0.2, 0.3]);
        assert_eq!(cfg.sigma0_sq, 1e-12);
        assert_eq!(cfg.sigma1_sq, 1e-8);
        // defaults
        assert_eq!(cfg.rician_k_db, 2.0);
        assert_eq!(cfg.pathloss_exp, 2.6);
        assert_eq!(cfg.mc_samples, 100_000);
        assert_eq!(cfg.eh_efficiency_linear, 0.5);
    }

    #[test]
    fn plan_weight_outside_unit_interval_rejected() {
        let doc = TABLE1_DOC.replace("r = 0.3", "r = 1.5");
        match load_config(&doc) {
            Err(Error::Invalid(m)) => assert_eq!(m, "plan_weight out of (0,1)"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_groups_rejected() {
        let mut cfg = default_table1();
        cfg.groups.clear();
        cfg.sinr_target_db.clear();
        cfg.eh_target.clear();
        match load_config(&cfg.to_toml()) {
            Err(Error::Invalid(m)) => assert_eq!(m, "at least one group required"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_config("antennas = [[["), Err(Error::Parse(_))));
        assert!(matches!(load_config("antennas = 6"), Err(Error::Parse(_))));
    }

    #[test]
    fn wrong_list_length_named() {
        let doc = TABLE1_DOC.replace("q = [0.8, 0.8]", "q = [0.8, 0.8, 0.8]");
        let err = load_config(&doc).unwrap_err().to_string();
        assert!(err.contains("groups[1].q"), "{err}");
    }

    #[test]
    fn invariants_rejected_not_clamped() {
        let mut cfg = default_table1();
        cfg.groups[0].existing_plan[1] = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = default_table1();
        cfg.sigma_cal_sq = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = default_table1();
        cfg.eh_circuit.a = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = default_table1();
        cfg.eh_target[3] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = default_table1();
        cfg.groups[2].priority = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn table1_defaults() {
        let cfg = default_table1();
        cfg.validate().unwrap();
        assert_eq!(cfg.m_antennas, 6);
        assert_eq!(cfg.eh_circuit, EhCircuitParams { m_eh: 0.024, a: 150.0, b: 0.014 });
        assert_eq!(cfg.pathloss_exp, 2.6);
        assert_eq!(cfg.sigma_cal_sq, 0.01);
        assert_eq!(cfg.distances(), vec![1.5, 1.5, 1.5, 3.5, 3.5, 5.5]);
        assert!((cfg.rician_k() - 10f64.powf(0.2)).abs() < 1e-15);
        assert!(cfg.warnings().is_empty());
    }

    fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
        (
            1usize..9,
            prop::collection::vec((1usize..4, 1.0f64..10.0, 0.01f64..1.0, 0.0f64..=1.0), 1..4),
            -5.0f64..10.0,
            1e-4f64..0.02,
            0.01f64..0.99,
            0u64..(i64::MAX as u64),
        )
            .prop_map(|(m, groups, gamma_db, theta, r, seed)| {
                let groups: Vec<GroupSpec> = groups
                    .into_iter()
                    .map(|(n, d, b, q)| GroupSpec { n_users: n, distance_m: d, priority: b, existing_plan: vec![q; n] })
                    .collect();
                let k = groups.iter().map(|g| g.n_users).sum();
                ScenarioConfig {
                    m_antennas: m,
                    groups,
                    sinr_target_db: vec![gamma_db; k],
                    eh_target: vec![theta; k],
                    plan_weight: r,
                    seed,
                    ..default_table1()
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_then_load_round_trips(cfg in arb_config()) {
            let back = load_config(&cfg.to_toml()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
