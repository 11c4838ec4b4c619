#![allow(dead_code)]

use envpoison::analysis::{score, state_distribution};
use envpoison::attack::AttackConfig;
use envpoison::{Mdp, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random rows with full support (so every policy is ergodic), rewards in
/// `[-1, 1]` and a random strictly positive `d0`.
pub fn random_mdp<R: Rng>(rng: &mut R, ns: usize, na: usize, gamma: f64) -> Mdp {
    let rewards: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut transitions = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        transitions.extend(w.iter().map(|x| x / total));
    }
    let d: Vec<f64> = (0..ns).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = d.iter().sum();
    Mdp::from_flat(ns, na, rewards, transitions, gamma, d.iter().map(|x| x / total).collect()).unwrap()
}

pub fn random_policy<R: Rng>(rng: &mut R, ns: usize, na: usize) -> Policy {
    Policy::new((0..ns).map(|_| rng.random_range(0..na)).collect())
}

pub fn random_gamma<R: Rng>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        rng.random_range(0.5..0.99)
    }
}

/// A random instance with `2..=max_states` states and `2..=max_actions`
/// actions, determined by `seed`.
pub fn instance(seed: u64, max_states: usize, max_actions: usize) -> (Mdp, Policy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(2..=max_actions);
    let gamma = random_gamma(&mut rng);
    let m = random_mdp(&mut rng, ns, na, gamma);
    let pi = random_policy(&mut rng, ns, na);
    (m, pi)
}

/// Cheapest change of the single pair `(s, a)` of a 3-state MDP that puts
/// the neighbor `pi<s;a>` at least `eps` below `pi`, found by a
/// coarse-to-fine grid over the row and the exact best reward for each
/// row. Only target rows and the `(s, a)` row enter the neighbor's score,
/// so the pair can be priced in isolation.
pub fn nt_pair_grid_oracle(m: &Mdp, pi: &Policy, cfg: &AttackConfig, s: usize, a: usize) -> f64 {
    assert_eq!(m.n_states(), 3);
    let base = score(m, pi).unwrap();
    let nb = pi.neighbor(s, a);
    let p_bar = m.row(s, a).to_vec();
    let r_bar = m.reward(s, a);
    let floor: Vec<f64> = p_bar.iter().map(|p| cfg.delta * p).collect();
    let cost_at = |x: f64, y: f64| -> Option<f64> {
        let row = [x, y, 1.0 - x - y];
        if row.iter().zip(&floor).any(|(p, f)| p < f) {
            return None;
        }
        let mut trial = m.clone();
        trial.set_row(s, a, &row).ok()?;
        let mu = state_distribution(&trial, &nb).ok()?[s];
        let gap = base - score(&trial, &nb).ok()?;
        let r_max = r_bar + (gap - cfg.epsilon) / mu;
        let dr = (r_bar - r_max).max(0.0);
        let dp: f64 = row.iter().zip(&p_bar).map(|(p, q)| (p - q).abs()).sum();
        Some(cfg.c_r * dr + cfg.c_p * dp)
    };
    let mut best = cost_at(p_bar[0], p_bar[1]).unwrap();
    let (mut cx, mut cy) = (p_bar[0], p_bar[1]);
    let coarse = 100;
    for i in 0..=coarse {
        for j in 0..=coarse - i {
            let (x, y) = (i as f64 / coarse as f64, j as f64 / coarse as f64);
            // Pull grid points off the boundary onto the floor.
            let (x, y) = (x.max(floor[0]), y.max(floor[1]));
            let (x, y) = if 1.0 - x - y < floor[2] { (x - floor[2], y) } else { (x, y) };
            if let Some(c) = cost_at(x, y) {
                if c < best {
                    (best, cx, cy) = (c, x, y);
                }
            }
        }
    }
    let mut step = 1e-3;
    while step >= 1e-6 {
        let (ox, oy) = (cx, cy);
        for i in -30..=30 {
            for j in -30..=30 {
                let (x, y) = (ox + i as f64 * step, oy + j as f64 * step);
                if let Some(c) = cost_at(x, y) {
                    if c < best {
                        (best, cx, cy) = (c, x, y);
                    }
                }
            }
        }
        step /= 10.0;
    }
    best
}
