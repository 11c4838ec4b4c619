//! Experiment specs and their execution: offline attack sweeps written as
//! CSV, online batches written as CSV plus a JSON summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::robust_margin;
use crate::attack::{
    solve_dattack, solve_jattack, solve_nt_jattack, solve_rattack, AttackConfig, AttackSolution, VERIFY_SLACK,
};
use crate::envs::{build_chain_n, build_navigation_with};
use crate::error::{Error, Result};
use crate::learners::LearnerKind;
use crate::mdp::{EnvFile, Mdp, Policy};
use crate::simulation::{run_batch, AttackSource, BatchPoint, Checkpoint, SimConfig};

pub const OFFLINE_CSV: &str = "offline.csv";
pub const ONLINE_CSV: &str = "online_checkpoints.csv";
pub const ONLINE_JSON: &str = "online_summary.json";

fn default_reward_s0() -> f64 {
    -2.5
}

fn default_chain_states() -> usize {
    4
}

fn default_gamma() -> f64 {
    1.0
}

/// Where the environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Chain {
        #[serde(default = "default_reward_s0")]
        reward_s0: f64,
        #[serde(default = "default_chain_states")]
        n_states: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Navigation {
        #[serde(default)]
        reward_s0: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Inline {
        env: EnvFile,
    },
    File {
        path: PathBuf,
    },
}

impl EnvSpec {
    fn is_builtin(&self) -> bool {
        matches!(self, EnvSpec::Chain { .. } | EnvSpec::Navigation { .. })
    }

    /// Builds the MDP, optionally overriding the `s0` reward of a
    /// built-in environment.
    pub fn build(&self, reward_s0: Option<f64>) -> Result<(Mdp, Option<Policy>)> {
        match self {
            EnvSpec::Chain { reward_s0: r, n_states, gamma } => {
                let (m, pi) = build_chain_n(reward_s0.unwrap_or(*r), *n_states, *gamma)?;
                Ok((m, Some(pi)))
            }
            EnvSpec::Navigation { reward_s0: r, gamma } => {
                let (m, pi) = build_navigation_with(reward_s0.unwrap_or(*r), *gamma)?;
                Ok((m, Some(pi)))
            }
            EnvSpec::Inline { env } => env.clone().into_mdp(),
            EnvSpec::File { path } => EnvFile::load(path)?.into_mdp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[serde(rename = "rattack")]
    RAttack,
    #[serde(rename = "dattack")]
    DAttack,
    #[serde(rename = "jattack")]
    JAttack,
    #[serde(rename = "nt_jattack")]
    NtJAttack,
    None,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::RAttack => "RAttack",
            AttackKind::DAttack => "DAttack",
            AttackKind::JAttack => "JAttack",
            AttackKind::NtJAttack => "NT-JAttack",
            AttackKind::None => "None",
        }
    }

    pub fn solve(self, original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
        match self {
            AttackKind::RAttack => solve_rattack(original, target, cfg),
            AttackKind::DAttack => solve_dattack(original, target, cfg),
            AttackKind::JAttack => solve_jattack(original, target, cfg),
            AttackKind::NtJAttack => solve_nt_jattack(original, target, cfg),
            AttackKind::None => AttackSolution::assess(original.clone(), original, target, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RewardS0,
    Epsilon,
}

/// Either explicit values or `num` evenly spaced points in `[start, stop]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangeSpec {
    Values(Vec<f64>),
    Linspace { start: f64, stop: f64, num: usize },
}

impl RangeSpec {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            RangeSpec::Values(ref v) => v.clone(),
            RangeSpec::Linspace { start, stop, num } => match num {
                0 => Vec::new(),
                1 => vec![start],
                _ => (0..num).map(|i| start + (stop - start) * i as f64 / (num - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub range: RangeSpec,
}

fn default_online_attack() -> AttackKind {
    AttackKind::NtJAttack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSpec {
    pub learner: LearnerKind,
    pub horizon: u64,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Attack that produces the sampling MDP.
    #[serde(default = "default_online_attack")]
    pub attack: AttackKind,
    /// Step-cost norm of the online metrics.
    #[serde(default = "one", with = "crate::attack::serde_inf")]
    pub p_norm: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub env: EnvSpec,
    /// Overrides the target shipped with the environment.
    #[serde(default)]
    pub target: Option<Vec<usize>>,
    #[serde(default)]
    pub attack_config: AttackConfig,
    #[serde(default)]
    pub attacks: Vec<AttackKind>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub online: Option<OnlineSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentSpec {
    /// Spec with the given environment and library defaults elsewhere.
    pub fn for_env(env: EnvSpec) -> Self {
        ExperimentSpec {
            name: None,
            env,
            target: None,
            attack_config: AttackConfig::default(),
            attacks: Vec::new(),
            sweep: None,
            online: None,
            output_dir: default_output_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The environment and target at the base configuration.
    pub fn environment(&self) -> Result<(Mdp, Policy)> {
        self.environment_at(None)
    }

    fn environment_at(&self, reward_s0: Option<f64>) -> Result<(Mdp, Policy)> {
        let (m, shipped) = self.env.build(reward_s0)?;
        let target = match (&self.target, shipped) {
            (Some(actions), _) => Policy::new(actions.clone()),
            (None, Some(pi)) => pi,
            (None, None) => return Err(Error::Configuration("no target policy given".into())),
        };
        target.check_against(&m)?;
        Ok((m, target))
    }

    fn sweep_points(&self) -> (SweepAxis, Vec<f64>) {
        match &self.sweep {
            Some(s) => (s.axis, s.range.points()),
            None => (SweepAxis::Epsilon, vec![self.attack_config.epsilon]),
        }
    }

    /// Checks everything that can be checked without solving anything.
    pub fn validate(&self) -> Result<()> {
        let conf = |msg: String| Err(Error::Configuration(msg));
        self.attack_config.validate()?;
        let (m, _) = self.environment()?;
        if let Some(sweep) = &self.sweep {
            let points = sweep.range.points();
            if points.is_empty() {
                return conf("sweep range is empty".into());
            }
            if let Some(v) = points.iter().find(|v| !v.is_finite()) {
                return conf(format!("sweep value {v} is not finite"));
            }
            match sweep.axis {
                SweepAxis::RewardS0 if !self.env.is_builtin() => {
                    return conf("a reward_s0 sweep needs the chain or navigation environment".into());
                }
                SweepAxis::Epsilon if points.iter().any(|&e| e < 0.0) => {
                    return conf("epsilon sweep values must be nonnegative".into());
                }
                _ => {}
            }
        }
        let joint_lp_norm = self.attack_config.p_norm == 1.0 || self.attack_config.p_norm.is_infinite();
        let mut attacks = self.attacks.clone();
        attacks.extend(self.online.as_ref().map(|o| o.attack));
        if attacks.contains(&AttackKind::RAttack) && !joint_lp_norm {
            return conf(format!("RAttack supports p = 1 or p = inf, got p = {}", self.attack_config.p_norm));
        }
        if let Some(online) = &self.online {
            online.learner.validate()?;
            if online.horizon == 0 || online.runs == 0 {
                return conf("online horizon and runs must be at least 1".into());
            }
            if !(online.p_norm >= 1.0) {
                return conf(format!("online p_norm must be >= 1, got {}", online.p_norm));
            }
            match online.learner {
                LearnerKind::Ucrl { .. } if !m.is_average_reward() => {
                    return conf(format!("UCRL needs gamma = 1, environment has {}", m.gamma()));
                }
                LearnerKind::QLearning { .. } if m.is_average_reward() => {
                    return conf("Q-learning needs gamma < 1".into());
                }
                _ => {}
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return conf("output_dir is empty".into());
        }
        Ok(())
    }
}

/// One row of the offline CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineRow {
    pub sweep_value: f64,
    pub attack: AttackKind,
    pub feasible: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OnlineSummary {
    pub learner: LearnerKind,
    pub attack: AttackKind,
    pub attack_feasible: bool,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub points: Vec<BatchPoint>,
    /// Final checkpoint of each run, in seed order.
    pub finals: Vec<Checkpoint>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub files: Vec<PathBuf>,
    pub offline: Vec<OfflineRow>,
    pub online: Option<OnlineSummary>,
}

impl ExperimentReport {
    /// At least one attack was run and none was feasible.
    pub fn infeasible_only(&self) -> bool {
        let mut feasible = self.offline.iter().map(|r| r.feasible).chain(self.online.iter().map(|o| o.attack_feasible));
        let mut any = false;
        let all_infeasible = feasible.all(|f| {
            any = true;
            !f
        });
        any && all_infeasible
    }
}

fn provenance(spec: &ExperimentSpec, seeds: &str) -> Result<String> {
    Ok(format!(
        "# {} {}\n# spec: {}\n# seeds: {}\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(spec)?,
        seeds
    ))
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

/// Runs the offline sweep. Rows come out sweep point by sweep point, in
/// the order of the attack list.
pub fn run_offline(spec: &ExperimentSpec) -> Result<Vec<OfflineRow>> {
    let (axis, points) = spec.sweep_points();
    let per_point: Vec<Vec<OfflineRow>> = points
        .par_iter()
        .map(|&x| {
            let (m, pi, cfg) = match axis {
                SweepAxis::Epsilon => {
                    let (m, pi) = spec.environment()?;
                    (m, pi, spec.attack_config.with_epsilon(x))
                }
                SweepAxis::RewardS0 => {
                    let (m, pi) = spec.environment_at(Some(x))?;
                    (m, pi, spec.attack_config.clone())
                }
            };
            spec.attacks
                .iter()
                .map(|&kind| {
                    let sol = kind.solve(&m, &pi, &cfg)?;
                    Ok(OfflineRow { sweep_value: x, attack: kind, feasible: sol.feasible, cost: sol.cost })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

pub fn write_offline_csv<W: Write>(mut out: W, spec: &ExperimentSpec, rows: &[OfflineRow]) -> Result<()> {
    out.write_all(provenance(spec, "none")?.as_bytes())?;
    writeln!(out, "sweep_value,attack,feasible,cost")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", fmt_f64(r.sweep_value), r.attack.name(), r.feasible, fmt_f64(r.cost))?;
    }
    Ok(())
}

/// Runs the online batch at the base configuration.
pub fn run_online_batch(spec: &ExperimentSpec, online: &OnlineSpec) -> Result<OnlineSummary> {
    let (m, pi) = spec.environment()?;
    let cfg = &spec.attack_config;
    let (source, feasible) = match online.attack {
        AttackKind::None => (AttackSource::None, robust_margin(&m, &pi)? >= cfg.epsilon - VERIFY_SLACK),
        kind => {
            let sol = kind.solve(&m, &pi, cfg)?;
            (AttackSource::Sampling(sol.poisoned), sol.feasible)
        }
    };
    let sim = SimConfig {
        attack_source: source,
        cost_cfg: AttackConfig { p_norm: online.p_norm, ..cfg.clone() },
        subopt_margin: Some(cfg.epsilon),
        ..SimConfig::new(online.horizon, online.seed)
    };
    let batch = run_batch(&m, &pi, &online.learner, &sim, online.runs)?;
    Ok(OnlineSummary {
        learner: online.learner.clone(),
        attack: online.attack,
        attack_feasible: feasible,
        horizon: online.horizon,
        seeds: (0..online.runs as u64).map(|i| online.seed.wrapping_add(i)).collect(),
        points: batch.points,
        finals: batch.runs.iter().map(|r| *r.last()).collect(),
    })
}

fn write_online_csv<W: Write>(mut out: W, spec: &ExperimentSpec, summary: &OnlineSummary) -> Result<()> {
    let seeds: Vec<String> = summary.seeds.iter().map(|s| s.to_string()).collect();
    out.write_all(provenance(spec, &seeds.join(" "))?.as_bytes())?;
    writeln!(out, "t,avg_miss_mean,avg_miss_sem,avg_cost_mean,avg_cost_sem")?;
    for p in &summary.points {
        writeln!(out, "{},{},{},{},{}", p.t, p.avg_miss_mean, p.avg_miss_sem, p.avg_cost_mean, p.avg_cost_sem)?;
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Validates the spec, then runs its offline sweep and online batch and
/// writes the result files into `output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let mut report = ExperimentReport::default();

    if !spec.attacks.is_empty() || spec.online.is_none() {
        report.offline = run_offline(spec)?;
        let path = spec.output_dir.join(OFFLINE_CSV);
        write_file(&path, |w| write_offline_csv(w, spec, &report.offline))?;
        report.files.push(path);
    }

    if let Some(online) = &spec.online {
        let summary = run_online_batch(spec, online)?;
        let csv = spec.output_dir.join(ONLINE_CSV);
        write_file(&csv, |w| write_online_csv(w, spec, &summary))?;
        let json = spec.output_dir.join(ONLINE_JSON);
        write_file(&json, |w| Ok(serde_json::to_writer_pretty(w, &summary)?))?;
        report.files.extend([csv, json]);
        report.online = Some(summary);
    }
    Ok(report)
}
