use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use envpoison::analysis::{robust_margin, score};
use envpoison::attack::{compute_bound_quantities, constructive_attack, theorem1_bounds, AttackSolutionFile};
use envpoison::envs::{build_chain_n, build_navigation_with};
use envpoison::harness::{run_experiment, AttackKind, EnvSpec, ExperimentSpec};
use envpoison::learners::LearnerKind;
use envpoison::mdp::{validate_mdp, EnvFile};
use envpoison::simulation::{run_batch, AttackSource, SimConfig};
use envpoison::{Mdp, Policy};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] envpoison::Error),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "envpoison", version, about = "Environment-poisoning attacks on tabular RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a built-in environment as JSON.
    Env {
        #[command(subcommand)]
        which: EnvCommand,
    },
    /// Synthesize an attack and print it as JSON.
    Attack {
        #[command(subcommand)]
        kind: AttackCommand,
    },
    /// Run a batch of online learners against an environment, optionally
    /// poisoned by an attack file.
    Simulate {
        #[arg(long, value_enum)]
        learner: LearnerArg,
        #[arg(long)]
        horizon: u64,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Attack file written by `attack`; omit for the clean environment.
        #[arg(long)]
        attack: Option<PathBuf>,
        /// Environment file; defaults to the chain with `s0` reward -2.5.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check whether a policy is epsilon-robust optimal.
    Verify {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Lower and upper cost bounds of the offline attack, with the
    /// constructive attack's cost.
    Bounds {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Experiment spec whose attack config (weights, norm, delta) is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run an experiment spec and write its result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    Chain {
        #[arg(long, allow_hyphen_values = true)]
        reward_s0: f64,
        #[arg(long, default_value_t = 4)]
        n_states: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Navigation {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        reward_s0: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    Offline {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        eps: f64,
        /// Experiment spec supplying the environment, target and attack config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The non-target-only attack used as the online sampling MDP.
    Online {
        #[arg(long)]
        eps: f64,
        /// Defaults to the average-reward chain with `s0` reward -2.5.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    R,
    D,
    J,
    Ntj,
}

impl ModeArg {
    fn kind(self) -> AttackKind {
        match self {
            ModeArg::R => AttackKind::RAttack,
            ModeArg::D => AttackKind::DAttack,
            ModeArg::J => AttackKind::JAttack,
            ModeArg::Ntj => AttackKind::NtJAttack,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Ucrl,
    Qlearn,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_owned(), source })?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

/// A policy file holds either a bare action list or an object with an
/// `actions` or `target_policy` field.
fn load_policy(path: &Path) -> CliResult<Policy> {
    let value: Value = read_json(path)?;
    let actions = match &value {
        Value::Array(_) => value.clone(),
        Value::Object(map) => map
            .get("actions")
            .or_else(|| map.get("target_policy"))
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{}: no actions in policy file", path.display())))?,
        _ => return Err(CliError::Usage(format!("{}: not a policy", path.display()))),
    };
    Ok(Policy::new(serde_json::from_value(actions)?))
}

fn load_env(path: &Path) -> CliResult<(Mdp, Option<Policy>)> {
    let file: EnvFile = read_json(path)?;
    Ok(file.into_mdp()?)
}

fn solution_exit(feasible: bool) -> ExitCode {
    if feasible {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Env { which } => {
            let (m, pi, out) = match which {
                EnvCommand::Chain { reward_s0, n_states, gamma, out } => {
                    let (m, pi) = build_chain_n(reward_s0, n_states, gamma)?;
                    (m, pi, out)
                }
                EnvCommand::Navigation { reward_s0, gamma, out } => {
                    let (m, pi) = build_navigation_with(reward_s0, gamma)?;
                    (m, pi, out)
                }
            };
            validate_mdp(&m)?;
            emit(&m.to_file(Some(&pi)), out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { kind } => {
            let (spec, kind, eps, out) = match kind {
                AttackCommand::Offline { mode, eps, config, out } => {
                    (read_json::<ExperimentSpec>(&config)?, mode.kind(), eps, out)
                }
                AttackCommand::Online { eps, config, out } => {
                    let spec = match config {
                        Some(path) => read_json(&path)?,
                        None => ExperimentSpec::for_env(EnvSpec::Chain { reward_s0: -2.5, n_states: 4, gamma: 1.0 }),
                    };
                    (spec, AttackKind::NtJAttack, eps, out)
                }
            };
            let cfg = spec.attack_config.with_epsilon(eps);
            cfg.validate()?;
            let (m, pi) = spec.environment()?;
            let sol = kind.solve(&m, &pi, &cfg)?;
            emit(&sol.to_file(), out.as_deref())?;
            Ok(solution_exit(sol.feasible))
        }
        Command::Simulate { learner, horizon, runs, attack, env, seed, eps, out } => {
            let kind = match learner {
                LearnerArg::Ucrl => LearnerKind::ucrl(),
                LearnerArg::Qlearn => LearnerKind::qlearning(),
            };
            let (m, pi) = match env {
                Some(path) => {
                    let (m, pi) = load_env(&path)?;
                    let pi = pi.ok_or_else(|| CliError::Usage("environment file has no target_policy".into()))?;
                    (m, pi)
                }
                None => {
                    let gamma = if matches!(learner, LearnerArg::Ucrl) { 1.0 } else { 0.99 };
                    build_chain_n(-2.5, 4, gamma)?
                }
            };
            let source = match attack {
                Some(path) => AttackSource::Sampling(read_json::<AttackSolutionFile>(&path)?.poisoned_mdp(&m)?),
                None => AttackSource::None,
            };
            let cfg = SimConfig { attack_source: source, subopt_margin: Some(eps), ..SimConfig::new(horizon, seed) };
            let batch = run_batch(&m, &pi, &kind, &cfg, runs)?;
            let finals: Vec<_> = batch.runs.iter().map(|r| *r.last()).collect();
            emit(&json!({ "learner": kind, "points": batch.points, "finals": finals }), out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { env, policy, eps } => {
            let (m, _) = load_env(&env)?;
            let pi = load_policy(&policy)?;
            pi.check_against(&m)?;
            let margin = robust_margin(&m, &pi)?;
            let robust = margin >= eps;
            emit(
                &json!({ "score": score(&m, &pi)?, "robust_margin": margin, "epsilon": eps, "eps_robust_optimal": robust }),
                None,
            )?;
            Ok(solution_exit(robust))
        }
        Command::Bounds { env, policy, eps, config } => {
            let (m, _) = load_env(&env)?;
            let pi = load_policy(&policy)?;
            let base = match config {
                Some(path) => read_json::<ExperimentSpec>(&path)?.attack_config,
                None => Default::default(),
            };
            let cfg = base.with_epsilon(eps);
            let (lower, upper) = theorem1_bounds(&m, &pi, &cfg)?;
            let constructive = constructive_attack(&m, &pi, &cfg)?;
            let q = compute_bound_quantities(&m, &pi, &cfg)?;
            emit(
                &json!({
                    "lower": lower,
                    "upper": upper,
                    "constructive_cost": constructive.cost,
                    "constructive_feasible": constructive.feasible,
                    "quantities": q,
                }),
                None,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, out_dir } => {
            let mut spec: ExperimentSpec = read_json(&config)?;
            if let Some(dir) = out_dir {
                spec.output_dir = dir;
            }
            let report = run_experiment(&spec)?;
            for f in &report.files {
                println!("{}", f.display());
            }
            Ok(solution_exit(!report.infeasible_only()))
        }
    }
}

fn main() -> ExitCode {
    // Exit code 2 means an infeasible result, so usage errors map to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
