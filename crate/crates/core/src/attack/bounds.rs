//! Instance-dependent lower and upper bounds on the optimal joint attack
//! cost, and the explicit attack achieving the upper bound.

use serde::Serialize;

use super::{lp_norm, weighted, AttackConfig, AttackSolution};
use crate::analysis::{evaluate_policy, hajnal_alpha, reach_times, state_distribution};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};

/// All matrices are row-major `[s * n_actions + a]`; entries of target
/// pairs are zero.
#[derive(Debug, Clone, Serialize)]
pub struct BoundQuantities {
    /// Required Q-value decrease at margin epsilon.
    pub chi: Vec<f64>,
    /// Required decrease at margin zero.
    pub chi_zero: Vec<f64>,
    /// Required decrease at margin `beta(s, a)`.
    pub chi_beta: Vec<f64>,
    pub beta: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub k: Vec<usize>,
    pub value_span: f64,
    /// States by decreasing target value, ties by index.
    pub state_order: Vec<usize>,
    pub diameter: f64,
    pub hajnal_alpha: f64,
    n_actions: usize,
}

impl BoundQuantities {
    pub fn at(&self, m: &[f64], s: usize, a: usize) -> f64 {
        m[s * self.n_actions + a]
    }
}

pub fn compute_bound_quantities(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<BoundQuantities> {
    cfg.validate()?;
    target.check_against(original)?;
    let (n, na) = (original.n_states(), original.n_actions());
    let gamma = original.gamma();
    let vb = evaluate_policy(original, target)?;
    let diameter = reach_times(original, target)?.diameter;
    let stretch = 1.0 - (1.0 - gamma) * diameter;
    if !(stretch > 0.0) {
        return Err(Error::BetaUndefined((1.0 - gamma) * diameter));
    }
    let (c_r, c_p) = cfg.effective_weights();
    let eps = cfg.epsilon;

    let mut state_order: Vec<usize> = (0..n).collect();
    state_order.sort_by(|&x, &y| vb.v(y).total_cmp(&vb.v(x)));
    let v_last = vb.v(state_order[n - 1]);
    // gamma C_r (V(s_i) - V(s_last)) > 2 C_p, the "transitions pay off" test.
    let worth = |i: usize| {
        let gap = vb.v(state_order[i]) - v_last;
        if c_r.is_infinite() {
            gap > 0.0 && c_p.is_finite()
        } else {
            gamma * c_r * gap > 2.0 * c_p
        }
    };

    let size = n * na;
    let mut q = BoundQuantities {
        chi: vec![0.0; size],
        chi_zero: vec![0.0; size],
        chi_beta: vec![0.0; size],
        beta: vec![0.0; size],
        f: vec![0.0; size],
        g: vec![0.0; size],
        k: vec![0; size],
        value_span: vb.value_span(),
        state_order: state_order.clone(),
        diameter,
        hajnal_alpha: hajnal_alpha(original),
        n_actions: na,
    };
    for (s, a, nb) in target.neighbors(na) {
        let i = s * na + a;
        let mu = state_distribution(original, &nb)?;
        let mu_nb = mu[s];
        let rho_nb: f64 = mu.iter().zip(original.policy_rewards(&nb)).map(|(m, r)| m * r).sum();
        let gap = rho_nb - vb.score;
        let chi_at = |margin: f64| ((gap + margin) / mu_nb).max(0.0);
        let beta = eps * mu_nb * (1.0 + gamma * diameter) / stretch;
        q.chi[i] = chi_at(eps);
        q.chi_zero[i] = chi_at(0.0);
        q.chi_beta[i] = chi_at(beta);
        q.beta[i] = beta;

        let row = original.row(s, a);
        let (mut f_i, mut g_i) = (0.0, 0.0);
        for (idx, &sj) in state_order.iter().enumerate() {
            let mass = (1.0 - cfg.delta) * row[sj];
            f_i += gamma * mass * (vb.v(sj) - v_last);
            g_i += 2.0 * mass;
            if worth(idx) && f_i <= q.chi_beta[i] {
                q.k[i] = idx + 1;
                q.f[i] = f_i;
                q.g[i] = g_i;
            }
        }
    }
    Ok(q)
}

/// `(lower, upper)` on the cost of an optimal joint attack.
pub fn theorem1_bounds(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<(f64, f64)> {
    let q = compute_bound_quantities(original, target, cfg)?;
    let (c_r, c_p) = cfg.effective_weights();
    let gamma = original.gamma();
    let chi_max = q.chi_zero.iter().cloned().fold(0.0, f64::max);
    let lower = if chi_max == 0.0 {
        0.0
    } else {
        let mixing = 1.0 - gamma + gamma * cfg.delta * q.hajnal_alpha;
        mixing / (2.0 / c_r + gamma * q.value_span / c_p) * chi_max
    };
    let per_pair: Vec<f64> = (0..q.f.len())
        .map(|i| weighted(c_p, q.g[i]) + weighted(c_r, q.chi_beta[i] - q.f[i]))
        .collect();
    let upper = lp_norm(&per_pair, cfg.p_norm);
    if lower > upper + 1e-9 * (1.0 + upper.abs()) {
        return Err(Error::Consistency(format!("lower bound {lower} exceeds upper bound {upper}")));
    }
    Ok((lower, upper))
}

/// The explicit attack: for each neighbor pair, send the `(1 - delta)`
/// share of mass on the `k` highest-value states to the lowest-value state
/// and lower the reward by what the transition change did not cover.
pub fn constructive_attack(original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<AttackSolution> {
    let q = compute_bound_quantities(original, target, cfg)?;
    let na = original.n_actions();
    let last = q.state_order[q.state_order.len() - 1];
    let mut poisoned = original.clone();
    for (s, a, _) in target.neighbors(na) {
        let i = s * na + a;
        let shift = q.chi_beta[i] - q.f[i];
        if shift != 0.0 {
            poisoned.set_reward(s, a, original.reward(s, a) - shift);
        }
        if q.k[i] > 0 {
            let mut row = original.row(s, a).to_vec();
            for &sj in &q.state_order[..q.k[i]] {
                row[sj] *= cfg.delta;
            }
            row[last] += 0.5 * q.g[i];
            poisoned.set_row(s, a, &row)?;
        }
    }
    AttackSolution::assess(poisoned, original, target, cfg)
}
