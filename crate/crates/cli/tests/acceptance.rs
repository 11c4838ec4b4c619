//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{nt_pair_grid_oracle, random_gamma, random_mdp, random_policy};
use envpoison::analysis::*;
use envpoison::attack::*;
use envpoison::envs::{build_chain, build_chain_n};
use envpoison::learners::LearnerKind;
use envpoison::simulation::{run_batch, AttackSource, BatchSummary, SimConfig};
use envpoison::{Mdp, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLACK: f64 = 1e-6;
const SEEDS: usize = 20;
/// Checkpoints before this are the learner's initial exploration; the
/// monotonicity check of the online curves starts here.
const WARM_UP: u64 = 4096;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    out.detail = format!("{}; {:.2} s (limit {} s)", out.detail, took.as_secs_f64(), limit.as_secs());
    out.pass &= took <= limit;
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut disagreements, mut robust) = (0, 0);
    for _ in 0..200 {
        let (ns, na) = (rng.random_range(2..=4), rng.random_range(2..=3));
        let gamma = random_gamma(&mut rng);
        let m = random_mdp(&mut rng, ns, na, gamma);
        let eps = rng.random_range(0.0..0.5);
        let pi = if rng.random_bool(0.5) { optimal_policy(&m).unwrap() } else { random_policy(&mut rng, ns, na) };
        let lemma = is_eps_robust_optimal(&m, &pi, eps).unwrap();
        robust += lemma as usize;
        if lemma != brute_force_eps_robust(&m, &pi, eps).unwrap() {
            disagreements += 1;
        }
    }
    outcome(
        disagreements == 0,
        format!("{disagreements} disagreements over 200 instances ({robust} robust)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = [0.0f64; 4];
    let mut discounted = 0;
    for _ in 0..400 {
        let (ns, na) = (rng.random_range(2..=6), rng.random_range(2..=3));
        // Half average reward, half discounted, so each identity sees >= 200.
        let gamma = if discounted < 200 { rng.random_range(0.5..0.99) } else { random_gamma(&mut rng) };
        let m = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let vb = evaluate_policy(&m, &pi).unwrap();
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = m.row(s, a).iter().zip(&vb.v_values).map(|(p, v)| p * v).sum();
                let q = m.reward(s, a) - vb.score + m.gamma() * future;
                worst[0] = worst[0].max((q - vb.q(s, a)).abs());
            }
        }
        if let Some(v_std) = &vb.v_standard {
            discounted += 1;
            let rho = (1.0 - gamma) * m.initial_dist().iter().zip(v_std).map(|(d, v)| d * v).sum::<f64>();
            worst[1] = worst[1].max((rho - vb.score).abs());
        }
        let s = rng.random_range(0..ns);
        let a = (pi.action(s) + rng.random_range(1..na)) % na;
        let (lhs, rhs) = score_gap_identity(&m, &pi, s, a).unwrap();
        worst[2] = worst[2].max((lhs - rhs).abs());
        let w: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let row: Vec<f64> = w.iter().map(|x| x / total).collect();
        let closed = mu_neighbor_closed_form(&m, &pi, &row, s).unwrap();
        let mut assembled = m.clone();
        assembled.set_row(s, a, &row).unwrap();
        let solved = state_distribution(&assembled, &pi.neighbor(s, a)).unwrap()[s];
        worst[3] = worst[3].max((closed - solved).abs());
    }
    outcome(
        worst.iter().all(|&w| w <= 1e-8) && discounted >= 200,
        format!(
            "max errors: Bellman {:.1e}, discounted score {:.1e} ({discounted} instances), score gap {:.1e}, closed-form occupancy {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_3() -> Outcome {
    let (m, pi) = build_chain_n(-2.5, 4, 0.99).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.5, 1.0] {
        let cfg = AttackConfig { epsilon: eps, ..AttackConfig::default() };
        let (lower, upper) = theorem1_bounds(&m, &pi, &cfg).unwrap();
        let nt = solve_nt_jattack(&m, &pi, &cfg).unwrap().cost;
        let j = solve_jattack(&m, &pi, &cfg).unwrap().cost;
        let c = constructive_attack(&m, &pi, &cfg).unwrap().cost;
        pass &= lower <= nt + SLACK && lower <= j + SLACK && j <= c + SLACK && c <= upper + SLACK;
        parts.push(format!("eps {eps}: {lower:.4} <= NT {nt:.4}, J {j:.4} <= constr {c:.4} <= {upper:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn dattack_threshold(m: &Mdp, pi: &Policy) -> f64 {
    let feasible = |eps: f64| solve_dattack(m, pi, &AttackConfig { epsilon: eps, ..AttackConfig::default() }).unwrap().feasible;
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn criterion_4() -> Outcome {
    let (m, pi) = build_chain_n(-2.5, 4, 0.99).unwrap();
    let mut pass = true;
    let mut last = [0.0f64; 3];
    let mut d_feasible = Vec::new();
    for i in 0..=10 {
        let cfg = AttackConfig { epsilon: i as f64 / 10.0, ..AttackConfig::default() };
        let sols = [
            solve_rattack(&m, &pi, &cfg).unwrap(),
            solve_nt_jattack(&m, &pi, &cfg).unwrap(),
            solve_jattack(&m, &pi, &cfg).unwrap(),
        ];
        for (k, s) in sols.iter().enumerate() {
            pass &= s.feasible && s.cost >= last[k] - SLACK;
            last[k] = s.cost;
        }
        pass &= sols[2].cost <= sols[0].cost.min(sols[1].cost) + SLACK;
        d_feasible.push(solve_dattack(&m, &pi, &cfg).unwrap().feasible);
    }
    let flip = d_feasible.iter().position(|f| !f);
    let monotone_flip = flip.is_some_and(|k| d_feasible[k..].iter().all(|f| !f));
    let threshold = dattack_threshold(&m, &pi);
    pass &= monotone_flip && (0.5..=1.0).contains(&threshold);
    outcome(
        pass,
        format!(
            "R/NT/J feasible with nondecreasing cost, J <= min(R, NT) on 11 points; DAttack threshold eps* = {threshold:.3}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut verified, mut total) = (0, 0);
    for _ in 0..100 {
        let (ns, na) = (rng.random_range(2..=5), rng.random_range(2..=3));
        let gamma = random_gamma(&mut rng);
        let m = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let cfg = AttackConfig { epsilon: rng.random_range(0.0..0.5), ..AttackConfig::default() };
        let sol = solve_nt_jattack(&m, &pi, &cfg).unwrap();
        let untouched = (0..ns).all(|s| {
            let a = pi.action(s);
            sol.poisoned.reward(s, a).to_bits() == m.reward(s, a).to_bits()
                && sol.poisoned.row(s, a).iter().zip(m.row(s, a)).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        total += 1;
        if sol.feasible && untouched && is_eps_robust_optimal(&sol.poisoned, &pi, cfg.epsilon).unwrap() {
            verified += 1;
        }
    }
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for _ in 0..10 {
        let gamma = if rng.random_bool(0.5) { 1.0 } else { 0.9 };
        let m = random_mdp(&mut rng, 3, 2, gamma);
        let pi = random_policy(&mut rng, 3, 2);
        let cfg = AttackConfig {
            c_r: rng.random_range(0.5..3.0),
            c_p: rng.random_range(0.5..3.0),
            epsilon: rng.random_range(0.05..0.3),
            ..AttackConfig::default()
        };
        let sol = solve_nt_jattack(&m, &pi, &cfg).unwrap();
        for s in 0..3 {
            let a = 1 - pi.action(s);
            worst = worst.max((sol.per_pair_cost[s * 2 + a] - nt_pair_grid_oracle(&m, &pi, &cfg, s, a)).abs());
            pairs += 1;
        }
    }
    outcome(
        verified == total && worst <= 5e-3,
        format!("{verified}/{total} outputs verified with target rows bit-identical; per-pair LP vs grid max gap {worst:.1e} over {pairs} pairs"),
    )
}

struct OnlineRuns {
    ucrl_nt: BatchSummary,
    ucrl_j: BatchSummary,
    q_nt: BatchSummary,
    nt_avg: Mdp,
    j_avg: Mdp,
    nt_disc: Mdp,
}

fn online_cfg() -> AttackConfig {
    AttackConfig { epsilon: 0.1, p_norm: 1.0, ..AttackConfig::default() }
}

fn online_runs() -> OnlineRuns {
    let (avg, pi) = build_chain(-2.5);
    let (disc, _) = build_chain_n(-2.5, 4, 0.99).unwrap();
    let cfg = online_cfg();
    let nt_avg = solve_nt_jattack(&avg, &pi, &cfg).unwrap().poisoned;
    let j_avg = solve_jattack(&avg, &pi, &cfg).unwrap().poisoned;
    let nt_disc = solve_nt_jattack(&disc, &pi, &cfg).unwrap().poisoned;
    let sim = |poisoned: &Mdp, horizon| SimConfig {
        attack_source: AttackSource::Sampling(poisoned.clone()),
        cost_cfg: cfg.clone(),
        subopt_margin: Some(cfg.epsilon),
        ..SimConfig::new(horizon, 0)
    };
    let q = LearnerKind::QLearning { exploration: 0.001, lr_exponent: 0.55 };
    OnlineRuns {
        ucrl_nt: run_batch(&avg, &pi, &LearnerKind::ucrl(), &sim(&nt_avg, 300_000), SEEDS).unwrap(),
        ucrl_j: run_batch(&avg, &pi, &LearnerKind::ucrl(), &sim(&j_avg, 300_000), SEEDS).unwrap(),
        q_nt: run_batch(&disc, &pi, &q, &sim(&nt_disc, 1_000_000), SEEDS).unwrap(),
        nt_avg,
        j_avg,
        nt_disc,
    }
}

fn strictly_decreasing_after(batch: &BatchSummary, f: impl Fn(&envpoison::simulation::BatchPoint) -> f64) -> bool {
    let tail: Vec<f64> = batch.points.iter().filter(|p| p.t >= WARM_UP).map(f).collect();
    tail.windows(2).all(|w| w[1] < w[0])
}

fn criterion_6(runs: &OnlineRuns) -> Outcome {
    let nt = runs.ucrl_nt.points.last().unwrap();
    let curve = |b: &BatchSummary, f: fn(&envpoison::simulation::BatchPoint) -> f64| {
        b.points.iter().filter(|p| p.t.is_power_of_two() && p.t.trailing_zeros() % 3 == 0).map(|p| format!("{:.3}", f(p))).collect::<Vec<_>>().join(" ")
    };
    let miss_down = strictly_decreasing_after(&runs.ucrl_nt, |p| p.avg_miss_mean);
    let cost_down = strictly_decreasing_after(&runs.ucrl_nt, |p| p.avg_cost_mean);
    let a = miss_down && cost_down && nt.avg_miss_mean <= 0.2;

    // Saturation: the mismatch rate over the last checkpoint interval is
    // also below the target, not just the running average.
    let q_last = runs.q_nt.points.last().unwrap();
    let late_rate: f64 = runs
        .q_nt
        .runs
        .iter()
        .map(|r| {
            let (p, l) = (&r.checkpoints[r.checkpoints.len() - 2], r.last());
            (l.mismatches - p.mismatches) as f64 / (l.t - p.t) as f64
        })
        .sum::<f64>()
        / SEEDS as f64;
    let b = q_last.avg_miss_mean <= 0.05 && late_rate <= 0.05;

    let j = runs.ucrl_j.points.last().unwrap();
    let c = j.avg_cost_mean >= 5.0 * nt.avg_cost_mean;
    outcome(
        a && b && c,
        format!(
            "(a) {} UCRL+NT AvgMiss {:.4} at T=3e5, decreasing from t={WARM_UP}: miss {miss_down}, cost {cost_down}; AvgMiss at t=1,8,..: {}; AvgCost: {} \
             (b) {} Q-learning+NT AvgMiss {:.4} at T=1e6, late-window rate {:.4} \
             (c) {} JAttack AvgCost {:.3} vs NT {:.3} (x{:.1})",
            if a { "ok" } else { "FAILED" },
            nt.avg_miss_mean,
            curve(&runs.ucrl_nt, |p| p.avg_miss_mean),
            curve(&runs.ucrl_nt, |p| p.avg_cost_mean),
            if b { "ok" } else { "FAILED" },
            q_last.avg_miss_mean,
            late_rate,
            if c { "ok" } else { "FAILED" },
            j.avg_cost_mean,
            nt.avg_cost_mean,
            j.avg_cost_mean / nt.avg_cost_mean,
        ),
    )
}

fn criterion_7(runs: &OnlineRuns) -> Outcome {
    let (avg, pi) = build_chain(-2.5);
    let (disc, _) = build_chain_n(-2.5, 4, 0.99).unwrap();
    let cfg = online_cfg();
    let eps = cfg.epsilon;
    let mut violations = 0;
    let mut checks = 0;
    let mut worst_ratio: f64 = 0.0;
    // The cost bound presumes a non-target-only sampling MDP: under the
    // joint attack matched steps are charged too, so only the mismatch
    // bound is a claim about those runs.
    let mut joint_cost_exceeded = 0;
    for (batch, poisoned, non_target) in [(&runs.ucrl_nt, &runs.nt_avg, true), (&runs.ucrl_j, &runs.j_avg, false)] {
        let terms = regret_bound_terms(poisoned, &avg, &pi, &cfg).unwrap();
        for run in &batch.runs {
            for c in &run.checkpoints {
                let regret = c.regret.unwrap();
                let miss_bound = terms.avg_miss(eps, regret, c.t).unwrap();
                let cost_bound = terms.avg_cost(eps, regret, c.t, cfg.p_norm).unwrap();
                checks += 1;
                worst_ratio = worst_ratio.max(c.avg_miss / miss_bound);
                let cost_over = c.avg_cost > cost_bound;
                if c.avg_miss > miss_bound || (non_target && cost_over) {
                    violations += 1;
                }
                joint_cost_exceeded += (!non_target && cost_over) as usize;
            }
        }
    }
    let cost_inf = lp_norm(&per_pair_costs(&runs.nt_disc, &disc, &cfg).unwrap(), f64::INFINITY);
    for run in &runs.q_nt.runs {
        for c in &run.checkpoints {
            let subopt = c.subopt.unwrap() as f64;
            let (miss, cost_bound) = online_bound_avgmiss_subopt(subopt, c.t, cost_inf, cfg.p_norm);
            checks += 1;
            if c.avg_miss > miss + 1e-12 || c.avg_cost > cost_bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations over {checks} checkpoint checks (largest AvgMiss / regret bound {worst_ratio:.3}); \
             for reference the joint-attack runs exceed the non-target cost bound at {joint_cost_exceeded} checkpoints"
        ),
    )
}

fn criterion_8() -> Outcome {
    let (m, pi) = build_chain_n(-2.5, 100, 0.99).unwrap();
    let cfg = AttackConfig::default();
    let time = |f: &dyn Fn() -> AttackSolution| {
        let start = Instant::now();
        let sol = f();
        (start.elapsed().as_secs_f64(), sol.feasible)
    };
    let (nt, nt_ok) = time(&|| solve_nt_jattack(&m, &pi, &cfg).unwrap());
    let (r, r_ok) = time(&|| solve_rattack(&m, &pi, &cfg).unwrap());
    let (j, j_ok) = time(&|| solve_jattack(&m, &pi, &cfg).unwrap());
    outcome(
        nt <= 15.0 && r <= 10.0 && j <= 1800.0 && nt_ok && r_ok && j_ok,
        format!("|S|=100: NT-JAttack {nt:.2} s, RAttack {r:.2} s, JAttack {j:.1} s, all feasible {}", nt_ok && r_ok && j_ok),
    )
}

fn csv_bodies(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
            (p.file_name().unwrap().to_string_lossy().into_owned(), body)
        })
        .collect();
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"env": {"kind": "chain", "gamma": 1.0},
            "attacks": ["rattack", "dattack", "jattack", "nt_jattack"],
            "sweep": {"axis": "epsilon", "range": {"start": 0.0, "stop": 1.0, "num": 6}},
            "online": {"learner": {"kind": "ucrl"}, "horizon": 20000, "runs": 4, "seed": 3}}"#,
    )
    .unwrap();
    let run = |dir: &Path| {
        Command::new(env!("CARGO_BIN_EXE_envpoison"))
            .args(["run", "--config"])
            .arg(&spec)
            .arg("--out-dir")
            .arg(dir)
            .status()
            .unwrap()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (sa, sb) = (run(&a), run(&b));
    let (ba, bb) = (csv_bodies(&a), csv_bodies(&b));
    outcome(
        sa.success() && sb.success() && ba.len() == 2 && ba == bb,
        format!("{} CSV files, bodies identical: {}", ba.len(), ba == bb),
    )
}

#[test]
fn acceptance() {
    let mut results = vec![
        (1, timed(Duration::from_secs(30), criterion_1)),
        (2, timed(Duration::from_secs(60), criterion_2)),
        (3, timed(Duration::from_secs(60), criterion_3)),
        (4, timed(Duration::from_secs(600), criterion_4)),
        (5, timed(Duration::from_secs(120), criterion_5)),
    ];
    let start = Instant::now();
    let runs = online_runs();
    let sim_time = start.elapsed();
    let mut c6 = criterion_6(&runs);
    c6.detail = format!("{}; simulations {:.2} s (limit 1200 s)", c6.detail, sim_time.as_secs_f64());
    c6.pass &= sim_time <= Duration::from_secs(1200);
    results.push((6, c6));
    results.push((7, criterion_7(&runs)));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    for (k, r) in &results {
        println!("criterion {k}: {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed: Vec<_> = results.iter().filter(|(_, r)| !r.pass).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
