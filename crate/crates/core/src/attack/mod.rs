//! Poisoning attacks: the cost model, the offline attack family (bounds,
//! constructive solution, rewards-only LP, pool heuristics) and the
//! non-target-only attack used as the online sampling MDP.

mod bounds;
mod offline;
mod online;

pub use bounds::{compute_bound_quantities, constructive_attack, theorem1_bounds, BoundQuantities};
pub use offline::{solve_dattack, solve_jattack, solve_rattack};
pub use online::{
    build_p2_subproblem, mu_neighbor_closed_form, online_bound_avgcost_regret, online_bound_avgmiss_regret,
    online_bound_avgmiss_subopt, regret_bound_terms, solve_nt_jattack, P2Subproblem, RegretBoundTerms,
};

use serde::{Deserialize, Serialize};

use crate::analysis::robust_margin;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};

/// Slack applied when checking the margin of an attack result.
pub const VERIFY_SLACK: f64 = 1e-9;

/// Tolerance of the `P_hat >= delta * P_bar` floor check.
const FLOOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    RewardsOnly,
    TransitionsOnly,
    Joint,
    NonTargetOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    #[serde(with = "serde_inf")]
    pub c_r: f64,
    #[serde(with = "serde_inf")]
    pub c_p: f64,
    /// `f64::INFINITY` for the max norm.
    #[serde(with = "serde_inf")]
    pub p_norm: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub mode: AttackMode,
    /// Grid size of the pool heuristics, `{0, 1/(n-1), ..., 1}`.
    pub pool_points: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            c_r: 3.0,
            c_p: 1.0,
            p_norm: f64::INFINITY,
            epsilon: 0.1,
            delta: 1e-4,
            mode: AttackMode::Joint,
            pool_points: 11,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let weight_ok = |w: f64| w >= 0.0 && !w.is_nan();
        if !weight_ok(self.c_r) || !weight_ok(self.c_p) {
            return Err(Error::InvalidConfig(format!(
                "cost weights must be nonnegative, got c_r = {}, c_p = {}",
                self.c_r, self.c_p
            )));
        }
        let usable = |w: f64| w.is_finite() && w > 0.0;
        if !usable(self.c_r) && !usable(self.c_p) {
            return Err(Error::InvalidConfig("one cost weight must be finite and positive".into()));
        }
        if !(self.p_norm >= 1.0) {
            return Err(Error::InvalidConfig(format!("p_norm must be >= 1, got {}", self.p_norm)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.pool_points < 2 {
            return Err(Error::InvalidConfig("pool_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: AttackMode) -> Self {
        AttackConfig { mode, ..self.clone() }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        AttackConfig { epsilon, ..self.clone() }
    }

    /// Weights with the frozen block priced at infinity.
    pub(crate) fn effective_weights(&self) -> (f64, f64) {
        match self.mode {
            AttackMode::RewardsOnly => (self.c_r, f64::INFINITY),
            AttackMode::TransitionsOnly => (f64::INFINITY, self.c_p),
            AttackMode::Joint | AttackMode::NonTargetOnly => (self.c_r, self.c_p),
        }
    }

    pub(crate) fn pool_grid(&self) -> Vec<f64> {
        let n = self.pool_points;
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }
}

/// `w * d` with the convention that an untouched quantity costs nothing,
/// even at infinite weight.
pub(crate) fn weighted(w: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        w * d
    }
}

/// `l_p` norm of a nonnegative vector; `p = inf` gives the max.
pub fn lp_norm(values: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().cloned().fold(0.0, f64::max)
    } else if p == 1.0 {
        values.iter().sum()
    } else {
        values.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Cost of changing one state-action pair, `C_r |dR| + C_p sum |dP|`.
pub fn pair_cost(poisoned: &Mdp, original: &Mdp, cfg: &AttackConfig, s: usize, a: usize) -> f64 {
    let dr = (poisoned.reward(s, a) - original.reward(s, a)).abs();
    let dp: f64 = poisoned
        .row(s, a)
        .iter()
        .zip(original.row(s, a))
        .map(|(x, y)| (x - y).abs())
        .sum();
    weighted(cfg.c_r, dr) + weighted(cfg.c_p, dp)
}

/// Row-major `[s * n_actions + a]` per-pair costs.
pub fn per_pair_costs(poisoned: &Mdp, original: &Mdp, cfg: &AttackConfig) -> Result<Vec<f64>> {
    check_compatible(poisoned, original)?;
    let (n, k) = (original.n_states(), original.n_actions());
    Ok((0..n * k).map(|i| pair_cost(poisoned, original, cfg, i / k, i % k)).collect())
}

pub fn attack_cost(poisoned: &Mdp, original: &Mdp, cfg: &AttackConfig) -> Result<f64> {
    Ok(lp_norm(&per_pair_costs(poisoned, original, cfg)?, cfg.p_norm))
}

fn check_compatible(poisoned: &Mdp, original: &Mdp) -> Result<()> {
    if !poisoned.same_shape(original) || poisoned.gamma() != original.gamma() {
        return Err(Error::ShapeMismatch("poisoned and original MDPs differ in shape or gamma".into()));
    }
    if poisoned.initial_dist() != original.initial_dist() {
        return Err(Error::ShapeMismatch("poisoned and original MDPs differ in d0".into()));
    }
    Ok(())
}

/// Smallest `P_hat - delta * P_bar` over all entries.
pub fn floor_slack(poisoned: &Mdp, original: &Mdp, delta: f64) -> f64 {
    poisoned
        .transitions()
        .iter()
        .zip(original.transitions())
        .map(|(p, q)| p - delta * q)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct AttackSolution {
    pub poisoned: Mdp,
    pub feasible: bool,
    /// `f64::INFINITY` when infeasible.
    pub cost: f64,
    /// Robust margin of the target policy in `poisoned`.
    pub verified_margin: f64,
    /// Row-major `[s * n_actions + a]`.
    pub per_pair_cost: Vec<f64>,
    pub diagnostic: Option<String>,
}

impl AttackSolution {
    /// Prices and verifies a candidate.
    pub fn assess(poisoned: Mdp, original: &Mdp, target: &Policy, cfg: &AttackConfig) -> Result<Self> {
        let per_pair_cost = per_pair_costs(&poisoned, original, cfg)?;
        let cost = lp_norm(&per_pair_cost, cfg.p_norm);
        let verified_margin = robust_margin(&poisoned, target)?;
        let floor = floor_slack(&poisoned, original, cfg.delta);
        let diagnostic = if floor < -FLOOR_TOL {
            Some(format!("delta floor violated by {:e}", -floor))
        } else if verified_margin < cfg.epsilon - VERIFY_SLACK {
            Some(format!("target margin {verified_margin} below epsilon {}", cfg.epsilon))
        } else {
            None
        };
        Ok(AttackSolution {
            poisoned,
            feasible: diagnostic.is_none(),
            cost,
            verified_margin,
            per_pair_cost,
            diagnostic,
        })
    }

    pub fn infeasible(original: &Mdp, reason: impl Into<String>) -> Self {
        AttackSolution {
            poisoned: original.clone(),
            feasible: false,
            cost: f64::INFINITY,
            verified_margin: f64::NAN,
            per_pair_cost: vec![0.0; original.n_states() * original.n_actions()],
            diagnostic: Some(reason.into()),
        }
    }

    pub fn to_file(&self) -> AttackSolutionFile {
        let m = &self.poisoned;
        let (n, k) = (m.n_states(), m.n_actions());
        AttackSolutionFile {
            feasible: self.feasible,
            cost: self.cost,
            verified_margin: self.verified_margin,
            rewards_hat: (0..n).map(|s| (0..k).map(|a| m.reward(s, a)).collect()).collect(),
            transitions_hat: (0..n).map(|s| (0..k).map(|a| m.row(s, a).to_vec()).collect()).collect(),
            per_pair_cost: self.per_pair_cost.chunks(k).map(|c| c.to_vec()).collect(),
            diagnostic: self.diagnostic.clone(),
        }
    }
}

/// JSON form of an [`AttackSolution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSolutionFile {
    pub feasible: bool,
    #[serde(with = "serde_inf")]
    pub cost: f64,
    #[serde(with = "serde_inf")]
    pub verified_margin: f64,
    pub rewards_hat: Vec<Vec<f64>>,
    pub transitions_hat: Vec<Vec<Vec<f64>>>,
    pub per_pair_cost: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl AttackSolutionFile {
    /// Rebuilds the poisoned MDP; gamma and d0 come from the original.
    pub fn poisoned_mdp(&self, original: &Mdp) -> Result<Mdp> {
        Mdp::from_nested(
            &self.rewards_hat,
            &self.transitions_hat,
            original.gamma(),
            original.initial_dist().to_vec(),
        )
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`
/// and accepts either form back.
pub mod serde_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }
}
