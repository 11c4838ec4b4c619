//! Non-target-only poisoning: the per-pair linear programs, the closed form
//! for a neighbor policy's visitation of its deviating state, and the
//! online mismatch / cost bounds.

use rayon::prelude::*;

use super::{lp_norm, AttackConfig, AttackSolution};
use crate::analysis::{evaluate_policy, reach_times, state_distribution, ReachTimes};
use crate::error::{Error, Result};
use crate::linprog::{solve_lp, AbsTerm, LinExpr, LinearProgram, LpBuilder, LpStatus};
use crate::mdp::{Mdp, Policy};

/// Tightening of the structural constraint so that rounding in the LP
/// solution cannot push the verified margin below epsilon.
const CONSTRAINT_GUARD: f64 = 1e-10;

/// Target-policy quantities shared by every subproblem of one base MDP.
#[derive(Debug, Clone)]
pub(crate) struct TargetCache {
    pub rho: f64,
    pub values: Vec<f64>,
    pub reach: ReachTimes,
    pub eta: Vec<f64>,
    gamma: f64,
}

impl TargetCache {
    pub fn new(base: &Mdp, target: &Policy) -> Result<Self> {
        let vb = evaluate_policy(base, target)?;
        let reach = reach_times(base, target)?;
        let n = base.n_states();
        let gamma = base.gamma();
        let d0 = base.initial_dist();
        let eta = (0..n)
            .map(|s| 1.0 - (1.0 - gamma) * (0..n).map(|j| d0[j] * reach.get(j, s)).sum::<f64>())
            .collect();
        Ok(TargetCache {
            rho: vb.score,
            values: vb.v_values,
            reach,
            eta,
            gamma,
        })
    }

    fn eta(&self, s: usize) -> Result<f64> {
        let eta = self.eta[s];
        if eta > 0.0 {
            Ok(eta)
        } else {
            Err(Error::OutOfDomain(format!("eta({s}) = {eta} is not positive")))
        }
    }

    pub fn mu_neighbor(&self, row: &[f64], s: usize) -> Result<f64> {
        let eta = self.eta(s)?;
        let hit: f64 = row.iter().enumerate().map(|(j, p)| p * self.reach.get(j, s)).sum();
        Ok(eta / (1.0 + self.gamma * hit))
    }

    /// Left side minus right side of the rewritten neighbor constraint at
    /// `(reward, row)`; nonnegative iff the neighbor `(s, a)` trails the
    /// target by at least epsilon.
    pub fn constraint_slack(&self, s: usize, eps: f64, reward: f64, row: &[f64]) -> Result<f64> {
        let eta = self.eta(s)?;
        let w = self.weights(s, eps, eta);
        let future: f64 = row.iter().zip(&w).map(|(p, w)| p * w).sum();
        Ok(self.values[s] - reward + self.rho - self.gamma * future - eps / eta)
    }

    fn weights(&self, s: usize, eps: f64, eta: f64) -> Vec<f64> {
        (0..self.values.len())
            .map(|j| self.values[j] + eps / eta * self.reach.get(j, s))
            .collect()
    }
}

/// `mu^{pi<s;a>}(s)` from the target's reach times, valid when the MDP
/// agrees with `original` on every target row and `row` is the deviating
/// action's transition row.
pub fn mu_neighbor_closed_form(original: &Mdp, target: &Policy, row: &[f64], s: usize) -> Result<f64> {
    if row.len() != original.n_states() || s >= original.n_states() {
        return Err(Error::ShapeMismatch("row or state out of range".into()));
    }
    TargetCache::new(original, target)?.mu_neighbor(row, s)
}

/// One independent piece of the non-target attack.
#[derive(Debug, Clone)]
pub struct P2Subproblem {
    pub state: usize,
    pub action: usize,
    pub lp: LinearProgram,
    pub eta_s: f64,
    /// `T(s', s)` for every `s'`.
    pub reach_row: Vec<f64>,
    /// `None` when rewards are frozen.
    pub reward_var: Option<usize>,
    /// `None` when transitions are frozen.
    pub prob_vars: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Freedom {
    pub rewards: bool,
    pub transitions: bool,
}

impl Freedom {
    pub fn for_weights(c_r: f64, c_p: f64) -> Self {
        Freedom {
            rewards: c_r.is_finite(),
            transitions: c_p.is_finite(),
        }
    }
}

fn pair_lp(
    cache: &TargetCache,
    original: &Mdp,
    cfg: &AttackConfig,
    s: usize,
    a: usize,
    free: Freedom,
) -> Result<P2Subproblem> {
    let n = original.n_states();
    let eta = cache.eta(s)?;
    let w = cache.weights(s, cfg.epsilon, eta);
    let r_bar = original.reward(s, a);
    let p_bar = original.row(s, a);
    let mut b = LpBuilder::new();
    let mut terms = Vec::new();
    let mut abs_terms = Vec::new();
    // V(s) - R + rho - gamma sum P w - eps / eta >= guard
    let mut constant = cache.values[s] + cache.rho - cfg.epsilon / eta - CONSTRAINT_GUARD;

    let reward_var = if free.rewards {
        let r = b.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        terms.push((r, -1.0));
        abs_terms.push(AbsTerm { weight: cfg.c_r, expr: LinExpr::new(vec![(r, 1.0)], -r_bar) });
        Some(r)
    } else {
        constant -= r_bar;
        None
    };
    let prob_vars = if free.transitions {
        let vars: Vec<usize> = (0..n).map(|j| b.add_var(cfg.delta * p_bar[j], 1.0, 0.0)).collect();
        for (j, &v) in vars.iter().enumerate() {
            terms.push((v, -cache.gamma * w[j]));
            abs_terms.push(AbsTerm { weight: cfg.c_p, expr: LinExpr::new(vec![(v, 1.0)], -p_bar[j]) });
        }
        b.add_eq(&LinExpr::new(vars.iter().map(|&v| (v, 1.0)).collect(), -1.0));
        Some(vars)
    } else {
        constant -= cache.gamma * p_bar.iter().zip(&w).map(|(p, w)| p * w).sum::<f64>();
        None
    };
    b.add_ge(&LinExpr::new(terms, constant));
    b.abs_objective(&abs_terms)?;
    Ok(P2Subproblem {
        state: s,
        action: a,
        lp: b.build(),
        eta_s: eta,
        reach_row: (0..n).map(|j| cache.reach.get(j, s)).collect(),
        reward_var,
        prob_vars,
    })
}

/// The linear program for neighbor `(s, a)` over `R(s, a)` and
/// `P(s, a, .)`, priced against `original`.
pub fn build_p2_subproblem(
    original: &Mdp,
    target: &Policy,
    cfg: &AttackConfig,
    s: usize,
    a: usize,
) -> Result<P2Subproblem> {
    target.check_against(original)?;
    if s >= original.n_states() || a >= original.n_actions() || a == target.action(s) {
        return Err(Error::InvalidPolicy(format!("({s}, {a}) is not a neighbor pair of the target")));
    }
    let cache = TargetCache::new(original, target)?;
    let (c_r, c_p) = cfg.effective_weights();
    pair_lp(&cache, original, cfg, s, a, Freedom::for_weights(c_r, c_p))
}

/// Reward and row for one pair, or `None` when its LP is infeasible.
fn solve_pair(
    cache: &TargetCache,
    original: &Mdp,
    cfg: &AttackConfig,
    s: usize,
    a: usize,
    free: Freedom,
) -> Result<Option<(f64, Vec<f64>)>> {
    let r_bar = original.reward(s, a);
    let p_bar = original.row(s, a);
    if cache.constraint_slack(s, cfg.epsilon, r_bar, p_bar)? >= 0.0 {
        return Ok(Some((r_bar, p_bar.to_vec())));
    }
    if !free.rewards && !free.transitions {
        return Ok(None);
    }
    let sub = pair_lp(cache, original, cfg, s, a, free)?;
    let sol = solve_lp(&sub.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Unbounded => return Err(Error::Consistency("nonnegative cost LP reported unbounded".into())),
    }
    let reward = sub.reward_var.map_or(r_bar, |r| sol.x[r]);
    let row = match &sub.prob_vars {
        Some(vars) => clean_row(vars.iter().map(|&v| sol.x[v]).collect(), p_bar, cfg.delta),
        None => p_bar.to_vec(),
    };
    Ok(Some((reward, row)))
}

/// Snaps LP round-off back onto the floor and the probability simplex.
fn clean_row(mut row: Vec<f64>, p_bar: &[f64], delta: f64) -> Vec<f64> {
    for (p, q) in row.iter_mut().zip(p_bar) {
        *p = p.max(delta * q).max(0.0);
    }
    let excess = row.iter().sum::<f64>() - 1.0;
    let top = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
    row[top] -= excess;
    row
}

/// Re-optimizes every non-target pair of `base`, pricing against
/// `original`. Returns `None` if some pair cannot be repaired.
pub(crate) fn repair_non_target(
    base: &Mdp,
    original: &Mdp,
    target: &Policy,
    cfg: &AttackConfig,
    free: Freedom,
) -> Result<Option<Mdp>> {
    let cache = TargetCache::new(base, target)?;
    let pairs: Vec<(usize, usize)> = (0..base.n_states())
        .flat_map(|s| (0..base.n_actions()).filter(move |&a| a != target.action(s)).map(move |a| (s, a)))
        .collect();
    let solved: Vec<Option<(f64, Vec<f64>)>> = pairs
        .par_iter()
        .map(|&(s, a)| solve_pair(&cache, original, cfg, s, a, free))
        .collect::<Result<_>>()?;
    let mut out = base.clone();
    for (&(s, a), sol) in pairs.iter().zip(solved) {
        let Some((reward, row)) = sol else {
            return Ok(None);
        };
        out.set_reward(s, a, reward);
        out.set_row(s, a, &row)?;
    }
    Ok(Some(out))
}

/// Cheapest attack that leaves every target-policy reward and row intact.
pub fn solve_nt_jattack(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
    cfg.validate()?;
    target.check_against(original)?;
    let free = Freedom::for_weights(cfg.c_r, cfg.c_p);
    let Some(poisoned) = repair_non_target(original, original, target, cfg, free)? else {
        return Ok(AttackSolution::infeasible(original, "some neighbor pair admits no repair"));
    };
    let sol = AttackSolution::assess(poisoned, original, target, cfg)?;
    if !sol.feasible {
        return Err(Error::Consistency(format!(
            "non-target attack failed verification: {}",
            sol.diagnostic.as_deref().unwrap_or("")
        )));
    }
    Ok(sol)
}

/// Instance constants of the regret-based online bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretBoundTerms {
    /// `max_{s,a} mu^{pi<s;a>}(s)` in the sampling MDP.
    pub mu_max: f64,
    /// `||V^{pi}||_inf` in the sampling MDP.
    pub v_inf: f64,
    /// Max-norm attack cost of the sampling MDP.
    pub cost_inf: f64,
}

impl RegretBoundTerms {
    fn mismatch_budget(&self, eps: f64, regret: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::OutOfDomain("regret bound undefined for epsilon = 0".into()));
        }
        Ok(self.mu_max / eps * (regret + 2.0 * self.v_inf))
    }

    pub fn avg_miss(&self, eps: f64, regret: f64, horizon: u64) -> Result<f64> {
        Ok(self.mismatch_budget(eps, regret)? / horizon as f64)
    }

    pub fn avg_cost(&self, eps: f64, regret: f64, horizon: u64, p: f64) -> Result<f64> {
        let budget = self.mismatch_budget(eps, regret)?.max(0.0);
        Ok(self.cost_inf / horizon as f64 * budget.powf(1.0 / p))
    }
}

pub fn regret_bound_terms(sampling: &Mdp, original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<RegretBoundTerms> {
    if !sampling.is_average_reward() {
        return Err(Error::OutOfDomain("regret bound applies to the average-reward case".into()));
    }
    target.check_against(sampling)?;
    let mut mu_max: f64 = 0.0;
    for (s, _, nb) in target.neighbors(sampling.n_actions()) {
        mu_max = mu_max.max(state_distribution(sampling, &nb)?[s]);
    }
    let v_inf = evaluate_policy(sampling, target)?
        .v_values
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    let costs = super::per_pair_costs(sampling, original, cfg)?;
    Ok(RegretBoundTerms {
        mu_max,
        v_inf,
        cost_inf: lp_norm(&costs, f64::INFINITY),
    })
}

/// Expected average mismatch bound for a learner with the given regret in
/// the sampling MDP.
pub fn online_bound_avgmiss_regret(sampling: &Mdp, target: &Policy, eps: f64, regret: f64, horizon: u64) -> Result<f64> {
    let cfg = AttackConfig::default();
    regret_bound_terms(sampling, sampling, target, &cfg)?.avg_miss(eps, regret, horizon)
}

/// Companion average-cost bound.
pub fn online_bound_avgcost_regret(
    sampling: &Mdp,
    original: &Mdp,
    target: &Policy,
    cfg: &AttackConfig,
    regret: f64,
    horizon: u64,
) -> Result<f64> {
    regret_bound_terms(sampling, original, target, cfg)?.avg_cost(cfg.epsilon, regret, horizon, cfg.p_norm)
}

/// `(SubOpt / T, cost_inf / T * SubOpt^{1/p})`.
pub fn online_bound_avgmiss_subopt(subopt_steps: f64, horizon: u64, cost_inf: f64, p: f64) -> (f64, f64) {
    let t = horizon as f64;
    if subopt_steps <= 0.0 {
        return (0.0, 0.0);
    }
    (subopt_steps / t, cost_inf / t * subopt_steps.powf(1.0 / p))
}
