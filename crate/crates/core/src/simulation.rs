//! The online attack loop: a learner interacts with either the true
//! environment or, under attack, with the stationary sampling MDP.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{enumerate_policies, optimal_policy, policy_count, score, ORACLE_POLICY_CAP};
use crate::attack::{pair_cost, AttackConfig};
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerKind, MetricsAccumulator};
use crate::mdp::{Mdp, Policy};

/// Tolerance separating near-optimal policies from those exactly
/// `epsilon` behind the best.
const NEAR_OPTIMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub enum AttackSource {
    #[default]
    None,
    /// Feedback is drawn from this MDP at every step.
    Sampling(Mdp),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    pub attack_source: AttackSource,
    /// Step-cost weights and the norm `p` of the average cost.
    pub cost_cfg: AttackConfig,
    /// Keep per-step records; memory grows linearly with the horizon.
    pub record_steps: bool,
    /// Margin used to define near-optimal actions for `SubOpt`.
    pub subopt_margin: Option<f64>,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        SimConfig {
            horizon,
            seed,
            attack_source: AttackSource::None,
            cost_cfg: AttackConfig { p_norm: 1.0, ..AttackConfig::default() },
            record_steps: false,
            subopt_margin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub matched: bool,
    pub step_cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub avg_miss: f64,
    pub avg_cost: f64,
    pub mismatches: u64,
    /// `rho* t - sum r`, measured in the feedback MDP; average reward only.
    pub regret: Option<f64>,
    /// Steps off every near-optimal policy of the feedback MDP.
    pub subopt: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

impl SimTrace {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("horizon is at least one step")
    }

    /// Columns `t,state,action,matched,step_cost,reward,avg_miss,avg_cost`
    /// with running averages recomputed from the records.
    pub fn write_csv<W: Write>(&self, mut out: W, p: f64) -> Result<()> {
        writeln!(out, "t,state,action,matched,step_cost,reward,avg_miss,avg_cost")?;
        let mut acc = MetricsAccumulator::new(p);
        for r in &self.records {
            acc.record(r.matched, r.step_cost, r.reward);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.state,
                r.action,
                r.matched as u8,
                r.step_cost,
                r.reward,
                acc.avg_miss(),
                acc.avg_cost()
            )?;
        }
        Ok(())
    }
}

/// `1, 2, 4, ...` up to the horizon, plus the horizon itself.
pub fn checkpoint_schedule(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |&t| t.checked_mul(2))
        .take_while(|&t| t <= horizon)
        .collect();
    if out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}

/// Actions used by some policy within `margin` of the best score.
/// `None` when the policy space is too large to enumerate.
pub fn near_optimal_actions(m: &Mdp, margin: f64) -> Result<Option<Vec<bool>>> {
    if policy_count(m).is_none_or(|c| c > ORACLE_POLICY_CAP) {
        return Ok(None);
    }
    let best = score(m, &optimal_policy(m)?)?;
    let na = m.n_actions();
    let mut mask = vec![false; m.n_states() * na];
    for pi in enumerate_policies(m)? {
        if score(m, &pi)? > best - margin + NEAR_OPTIMAL_TOL {
            for (s, &a) in pi.actions().iter().enumerate() {
                mask[s * na + a] = true;
            }
        }
    }
    Ok(Some(mask))
}

fn sample(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last state with positive mass.
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

pub fn run_online(original: &Mdp, target: &Policy, learner: &mut dyn Learner, cfg: &SimConfig) -> Result<SimTrace> {
    if cfg.horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    target.check_against(original)?;
    let feedback = match &cfg.attack_source {
        AttackSource::None => original,
        AttackSource::Sampling(m) => {
            if !m.same_shape(original) || m.gamma() != original.gamma() {
                return Err(Error::ShapeMismatch("sampling MDP differs from the environment".into()));
            }
            m
        }
    };
    let (ns, na) = (original.n_states(), original.n_actions());
    let step_costs: Vec<f64> = (0..ns * na)
        .map(|i| pair_cost(feedback, original, &cfg.cost_cfg, i / na, i % na))
        .collect();
    if let Some(i) = (0..ns * na).find(|&i| !feedback.reward(i / na, i % na).is_finite() || !step_costs[i].is_finite()) {
        return Err(Error::Simulation(format!("non-finite reward or cost at pair {i}")));
    }
    let rho_star = if feedback.is_average_reward() {
        Some(score(feedback, &optimal_policy(feedback)?)?)
    } else {
        None
    };
    let mut acc = MetricsAccumulator::new(cfg.cost_cfg.p_norm);
    if let Some(margin) = cfg.subopt_margin {
        if let Some(mask) = near_optimal_actions(feedback, margin)? {
            acc = acc.with_near_optimal(mask, na);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let schedule = checkpoint_schedule(cfg.horizon);
    let mut next_checkpoint = 0;
    let mut records = Vec::with_capacity(if cfg.record_steps { cfg.horizon as usize } else { 0 });
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut state = sample(&mut rng, original.initial_dist());
    for t in 0..cfg.horizon {
        let action = learner.act(state);
        if action >= na {
            return Err(Error::Simulation(format!("learner chose action {action} out of {na}")));
        }
        let reward = feedback.reward(state, action);
        let next = sample(&mut rng, feedback.row(state, action));
        let step_cost = step_costs[state * na + action];
        acc.record_step(state, action, target, step_cost, reward);
        if cfg.record_steps {
            records.push(StepRecord {
                t,
                state,
                action,
                matched: action == target.action(state),
                step_cost,
                reward,
            });
        }
        learner.observe(state, action, reward, next);
        state = next;
        if acc.t == schedule[next_checkpoint] {
            checkpoints.push(Checkpoint {
                t: acc.t,
                avg_miss: acc.avg_miss(),
                avg_cost: acc.avg_cost(),
                mismatches: acc.mismatch_count,
                regret: rho_star.map(|r| acc.regret(r)),
                subopt: acc.subopt(),
            });
            next_checkpoint += 1;
        }
    }
    Ok(SimTrace { records, checkpoints })
}

/// Mean and standard error at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPoint {
    pub t: u64,
    pub avg_miss_mean: f64,
    pub avg_miss_sem: f64,
    pub avg_cost_mean: f64,
    pub avg_cost_sem: f64,
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub points: Vec<BatchPoint>,
    /// Per-run traces without step records, in seed order.
    pub runs: Vec<SimTrace>,
}

fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `n_runs` independent simulations with seeds `seed, seed + 1, ...`;
/// the learner of run `i` is seeded with the same value.
pub fn run_batch(
    original: &Mdp,
    target: &Policy,
    learner: &LearnerKind,
    cfg: &SimConfig,
    n_runs: usize,
) -> Result<BatchSummary> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
    }
    learner.validate()?;
    let runs: Vec<SimTrace> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i);
            let run_cfg = SimConfig { seed, record_steps: false, ..cfg.clone() };
            let mut l = learner.build(original.n_states(), original.n_actions(), original.gamma(), seed);
            run_online(original, target, l.as_mut(), &run_cfg)
        })
        .collect::<Result<_>>()?;
    let points = (0..runs[0].checkpoints.len())
        .map(|k| {
            let miss: Vec<f64> = runs.iter().map(|r| r.checkpoints[k].avg_miss).collect();
            let cost: Vec<f64> = runs.iter().map(|r| r.checkpoints[k].avg_cost).collect();
            let (avg_miss_mean, avg_miss_sem) = mean_sem(&miss);
            let (avg_cost_mean, avg_cost_sem) = mean_sem(&cost);
            BatchPoint {
                t: runs[0].checkpoints[k].t,
                avg_miss_mean,
                avg_miss_sem,
                avg_cost_mean,
                avg_cost_sem,
            }
        })
        .collect();
    Ok(BatchSummary { points, runs })
}
