//! Offline attacks: the rewards-only linear program and the pool
//! heuristics for transition-only and joint poisoning.

use rayon::prelude::*;

use super::online::{repair_non_target, Freedom};
use super::{AttackConfig, AttackSolution};
use crate::analysis::{evaluate_policy, state_distribution};
use crate::error::{Error, Result};
use crate::linprog::{solve_lp, LinExpr, LpBuilder, LpStatus};
use crate::mdp::{Mdp, Policy};

/// Cheapest reward-only attack. With the kernel fixed every state
/// distribution is a constant, so each neighbor constraint is linear in
/// the rewards and one LP covers them all. Supports `p = 1` and `p = inf`.
pub fn solve_rattack(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
    cfg.validate()?;
    target.check_against(original)?;
    let p = cfg.p_norm;
    if !(p == 1.0 || p.is_infinite()) {
        return Err(Error::UnsupportedNorm(p));
    }
    if !cfg.c_r.is_finite() {
        return Err(Error::InvalidConfig("reward-only attack needs a finite c_r".into()));
    }
    let (n, na) = (original.n_states(), original.n_actions());
    let mu_target = state_distribution(original, target)?;
    let rho_target = evaluate_policy(original, target)?.score;

    let mut b = LpBuilder::new();
    let per_pair_cost = if p == 1.0 { cfg.c_r } else { 0.0 };
    // dR(s, a) = up - down
    let slacks: Vec<(usize, usize)> = (0..n * na)
        .map(|_| (b.add_var(0.0, f64::INFINITY, per_pair_cost), b.add_var(0.0, f64::INFINITY, per_pair_cost)))
        .collect();
    if p.is_infinite() {
        let t = b.add_var(0.0, f64::INFINITY, 1.0);
        for &(up, down) in &slacks {
            b.add_le(&LinExpr::new(vec![(up, cfg.c_r), (down, cfg.c_r), (t, -1.0)], 0.0));
        }
    }
    for (_, _, nb) in target.neighbors(na) {
        let mu_nb = state_distribution(original, &nb)?;
        let rho_nb: f64 = mu_nb.iter().zip(original.policy_rewards(&nb)).map(|(m, r)| m * r).sum();
        // sum mu_t dR(., pi) - sum mu_nb dR(., nb) >= eps - (rho_t - rho_nb)
        let mut terms = Vec::with_capacity(4 * n);
        for j in 0..n {
            let (up, down) = slacks[j * na + target.action(j)];
            terms.push((up, mu_target[j]));
            terms.push((down, -mu_target[j]));
            let (up, down) = slacks[j * na + nb.action(j)];
            terms.push((up, -mu_nb[j]));
            terms.push((down, mu_nb[j]));
        }
        let deficit = cfg.epsilon - (rho_target - rho_nb);
        b.add_ge(&LinExpr::new(terms, -deficit));
    }
    let sol = solve_lp(&b.build())?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Consistency(format!("reward-only LP returned {:?}", sol.status)));
    }
    let mut poisoned = original.clone();
    for s in 0..n {
        for a in 0..na {
            let (up, down) = slacks[s * na + a];
            let d = sol.x[up] - sol.x[down];
            if d != 0.0 {
                poisoned.set_reward(s, a, original.reward(s, a) + d);
            }
        }
    }
    AttackSolution::assess(poisoned, original, target, cfg)
}

/// First-found minimum-cost feasible candidate.
fn cheapest(candidates: Vec<AttackSolution>) -> Option<AttackSolution> {
    candidates
        .into_iter()
        .filter(|c| c.feasible)
        .reduce(|best, c| if c.cost < best.cost { c } else { best })
}

/// Completes `base` (whose target rows and rewards are already chosen) by
/// repairing every non-target pair; `None` when some pair is infeasible
/// or the base leaves the formula's domain.
fn complete_base(
    base: &Mdp,
    original: &Mdp,
    target: &Policy,
    cfg: &AttackConfig,
    free: Freedom,
) -> Result<Option<AttackSolution>> {
    let repaired = match repair_non_target(base, original, target, cfg, free) {
        Ok(Some(m)) => m,
        Ok(None) | Err(Error::OutOfDomain(_)) | Err(Error::UnreachableState(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    AttackSolution::assess(repaired, original, target, cfg).map(Some)
}

/// Target rows tilted toward the highest-value state: a fraction `theta`
/// of the mass the floor allows to move is taken, lowest-value
/// destinations first, and placed on the top state.
fn tilted_target_rows(original: &Mdp, target: &Policy, values: &[f64], theta: f64, delta: f64) -> Result<Mdp> {
    let mut m = original.clone();
    if theta == 0.0 {
        return Ok(m);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
    let top = order.pop().unwrap_or(0);
    for s in 0..original.n_states() {
        let a = target.action(s);
        let mut row = original.row(s, a).to_vec();
        let movable: f64 = order.iter().map(|&j| (1.0 - delta) * row[j]).sum();
        let mut budget = theta * movable;
        let mut moved = 0.0;
        for &j in &order {
            let shift = budget.min((1.0 - delta) * row[j]);
            row[j] -= shift;
            moved += shift;
            budget -= shift;
        }
        row[top] += moved;
        m.set_row(s, a, &renormalized(row))?;
    }
    Ok(m)
}

/// Transition-only attack: tilt the target rows toward the best state,
/// then repair the remaining pairs by transitions alone; cheapest wins.
pub fn solve_dattack(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
    cfg.validate()?;
    target.check_against(original)?;
    if !cfg.c_p.is_finite() {
        return Err(Error::InvalidConfig("transition-only attack needs a finite c_p".into()));
    }
    let values = evaluate_policy(original, target)?.v_values;
    let free = Freedom { rewards: false, transitions: true };
    let candidates = cfg
        .pool_grid()
        .par_iter()
        .map(|&theta| {
            let base = tilted_target_rows(original, target, &values, theta, cfg.delta)?;
            complete_base(&base, original, target, cfg, free)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cheapest(candidates.into_iter().flatten().collect())
        .unwrap_or_else(|| AttackSolution::infeasible(original, "no transition-only pool member is feasible")))
}

/// Joint attack: blend the reward-only and transition-only solutions with
/// the original on the target pairs, repair the rest, keep the cheapest.
pub fn solve_jattack(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
    cfg.validate()?;
    target.check_against(original)?;
    // The blended reward seed only needs a reasonable LP; fall back to the
    // max norm when the configured one is outside its scope.
    let seed_cfg = if cfg.p_norm == 1.0 || cfg.p_norm.is_infinite() {
        cfg.clone()
    } else {
        AttackConfig { p_norm: f64::INFINITY, ..cfg.clone() }
    };
    let r_only = if cfg.c_r.is_finite() {
        solve_rattack(original, target, &seed_cfg)?.poisoned
    } else {
        original.clone()
    };
    let p_only = if cfg.c_p.is_finite() {
        let d = solve_dattack(original, target, cfg)?;
        if d.feasible {
            d.poisoned
        } else {
            original.clone()
        }
    } else {
        original.clone()
    };

    let grid = cfg.pool_grid();
    let combos: Vec<(f64, f64)> = grid.iter().flat_map(|&ar| grid.iter().map(move |&ap| (ar, ap))).collect();
    let free = Freedom::for_weights(cfg.c_r, cfg.c_p);
    let n = original.n_states();
    let candidates = combos
        .par_iter()
        .map(|&(alpha_r, alpha_p)| {
            let mut base = original.clone();
            for s in 0..n {
                let a = target.action(s);
                let r = (1.0 - alpha_r) * r_only.reward(s, a) + alpha_r * original.reward(s, a);
                base.set_reward(s, a, r);
                let row: Vec<f64> = p_only
                    .row(s, a)
                    .iter()
                    .zip(original.row(s, a))
                    .map(|(x, y)| (1.0 - alpha_p) * x + alpha_p * y)
                    .collect();
                base.set_row(s, a, &renormalized(row))?;
            }
            complete_base(&base, original, target, cfg, free)
        })
        .collect::<Result<Vec<_>>>()?;
    cheapest(candidates.into_iter().flatten().collect()).ok_or_else(|| {
        Error::Consistency("no joint pool member is feasible although rewards are unconstrained".into())
    })
}

fn renormalized(mut row: Vec<f64>) -> Vec<f64> {
    let excess = row.iter().sum::<f64>() - 1.0;
    let top = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
    row[top] -= excess;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::robust_margin;
    use crate::attack::AttackMode;
    use crate::mdp::fixtures::sym2;

    #[test]
    fn rattack_zero_when_already_robust() {
        let m = sym2([1.0, 0.0], [1.0, 0.0], 1.0, vec![0.5, 0.5]);
        let pi = Policy::constant(2, 0);
        let cfg = AttackConfig { epsilon: 0.1, mode: AttackMode::RewardsOnly, ..Default::default() };
        let sol = solve_rattack(&m, &pi, &cfg).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn rattack_flips_preference() {
        let m = sym2([0.0, 1.0], [0.0, 1.0], 0.9, vec![0.5, 0.5]);
        let pi = Policy::constant(2, 0);
        let cfg = AttackConfig { epsilon: 0.2, mode: AttackMode::RewardsOnly, ..Default::default() };
        let sol = solve_rattack(&m, &pi, &cfg).unwrap();
        assert!(sol.feasible, "{:?}", sol.diagnostic);
        assert!(robust_margin(&sol.poisoned, &pi).unwrap() >= 0.2 - 1e-9);
        assert_eq!(sol.poisoned.transitions(), m.transitions());
    }

    #[test]
    fn rattack_rejects_two_norm() {
        let m = sym2([0.0, 1.0], [0.0, 1.0], 0.9, vec![0.5, 0.5]);
        let cfg = AttackConfig { p_norm: 2.0, ..Default::default() };
        let err = solve_rattack(&m, &Policy::constant(2, 0), &cfg).unwrap_err();
        assert!(matches!(err, Error::UnsupportedNorm(_)));
    }

    #[test]
    fn dattack_leaves_rewards() {
        let m = sym2([0.5, 0.0], [1.0, 0.6], 0.9, vec![0.5, 0.5]);
        let pi = Policy::constant(2, 0);
        let cfg = AttackConfig { epsilon: 0.01, mode: AttackMode::TransitionsOnly, ..Default::default() };
        let sol = solve_dattack(&m, &pi, &cfg).unwrap();
        assert_eq!(sol.poisoned.rewards(), m.rewards());
    }

    #[test]
    fn jattack_no_worse_than_components() {
        let m = sym2([0.0, 1.0], [0.3, 0.8], 0.9, vec![0.5, 0.5]);
        let pi = Policy::constant(2, 0);
        let cfg = AttackConfig { epsilon: 0.2, ..Default::default() };
        let j = solve_jattack(&m, &pi, &cfg).unwrap();
        let r = solve_rattack(&m, &pi, &cfg).unwrap();
        let nt = crate::attack::solve_nt_jattack(&m, &pi, &cfg).unwrap();
        assert!(j.feasible);
        assert!(j.cost <= r.cost + 1e-6 && j.cost <= nt.cost + 1e-6, "{} {} {}", j.cost, r.cost, nt.cost);
    }
}
