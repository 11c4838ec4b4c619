use envpoison::linprog::{solve_lp, LinearProgram, LpStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min c^T x` over `[0, u]^n` with one knapsack row `a^T x >= b`, `a > 0`.
fn knapsack_lp(c: &[f64], u: &[f64], a: &[f64], b: f64) -> LinearProgram {
    LinearProgram {
        objective: c.to_vec(),
        eq_matrix: vec![],
        eq_rhs: vec![],
        ub_matrix: vec![a.iter().map(|x| -x).collect()],
        ub_rhs: vec![-b],
        bounds: u.iter().map(|&u| (0.0, u)).collect(),
    }
}

/// Exact optimum: free negative-cost variables go to their cap, then the
/// cheapest cost per unit of `a` fills the remaining requirement.
fn knapsack_oracle(c: &[f64], u: &[f64], a: &[f64], b: f64) -> Option<f64> {
    let n = c.len();
    let mut x = vec![0.0; n];
    let mut have = 0.0;
    for i in 0..n {
        if c[i] < 0.0 {
            x[i] = u[i];
            have += a[i] * u[i];
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| c[i] >= 0.0).collect();
    order.sort_by(|&i, &j| (c[i] / a[i]).total_cmp(&(c[j] / a[j])));
    for i in order {
        if have >= b {
            break;
        }
        let take = ((b - have) / a[i]).min(u[i]);
        x[i] = take;
        have += a[i] * take;
    }
    (have >= b - 1e-12).then(|| c.iter().zip(&x).map(|(c, x)| c * x).sum())
}

fn grid_min(c: &[f64], a: &[f64], b: f64, step: f64) -> Option<f64> {
    let k = (1.0 / step).round() as usize;
    let mut best: Option<f64> = None;
    for i in 0..=k {
        for j in 0..=k {
            let x = [i as f64 * step, j as f64 * step];
            if a[0] * x[0] + a[1] * x[1] >= b {
                let v = c[0] * x[0] + c[1] * x[1];
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    }
    best
}

#[test]
fn two_variable_lps_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        let b = rng.random_range(0.0..1.2);
        let sol = solve_lp(&knapsack_lp(&c, &[1.0, 1.0], &a, b)).unwrap();
        match grid_min(&c, &a, b, 1e-3) {
            Some(g) => {
                assert_eq!(sol.status, LpStatus::Optimal);
                assert!(sol.objective_value <= g + 1e-9);
                assert!(g - sol.objective_value <= 5e-3, "{} vs grid {g}", sol.objective_value);
            }
            None => assert!(a[0] + a[1] < b + 1e-9),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn knapsack_lps_match_greedy(
        n in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let b = rng.random_range(0.0..2.0);
        let lp = knapsack_lp(&c, &u, &a, b);
        let sol = solve_lp(&lp).unwrap();
        match knapsack_oracle(&c, &u, &a, b) {
            Some(v) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective_value - v).abs() < 1e-9);
                prop_assert!(lp.max_violation(&sol.x) < 1e-9);
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn equality_constrained_simplex_vertices(n in 2usize..=6, seed in any::<u64>()) {
        // min c^T x over the probability simplex is the smallest cost entry.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lp = LinearProgram {
            objective: c.clone(),
            eq_matrix: vec![vec![1.0; n]],
            eq_rhs: vec![1.0],
            ub_matrix: vec![],
            ub_rhs: vec![],
            bounds: vec![(0.0, f64::INFINITY); n],
        };
        let sol = solve_lp(&lp).unwrap();
        let best = c.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((sol.objective_value - best).abs() < 1e-12);
    }
}
