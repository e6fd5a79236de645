//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::Command;
use std::time::Instant;

use aoi_core::bounds::{
    alpha_relaxed, bounded_support_zero_rate, minimize_psi_over_s, phi_closed_form, phi_two,
    psi_chernoff, stability_window, two_hop_tail_factor,
};
use aoi_core::dist::cross_sum_tail;
use aoi_core::optimize::solve_alpha_ubmp;
use aoi_core::par::map_indexed;
use aoi_core::sim::{
    compare_policies, simulate_violation, tagged_departure_violation_phase_averaged,
    transient_violation, Policy,
};
use aoi_core::{ServiceDistribution, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.025;

fn rate_grid() -> Vec<f64> {
    (0..=22).map(|i| 0.2 + i as f64 * STEP).collect()
}

fn geo(p: f64) -> ServiceDistribution {
    ServiceDistribution::geometric(p, 1.0).unwrap()
}

fn exp1() -> ServiceDistribution {
    ServiceDistribution::exponential(1.0).unwrap()
}

fn erl() -> ServiceDistribution {
    ServiceDistribution::erlang(3, 3.0).unwrap()
}

/// The three example families, as (name, hop 1, hop 2).
fn families() -> Vec<(&'static str, ServiceDistribution, ServiceDistribution)> {
    vec![
        ("geometric", geo(0.85), geo(0.9)),
        ("exponential", exp1(), exp1()),
        ("erlang", erl(), erl()),
    ]
}

fn hops_for(
    n: usize,
    h1: &ServiceDistribution,
    h2: &ServiceDistribution,
) -> Vec<ServiceDistribution> {
    if n == 1 {
        vec![*h1]
    } else {
        vec![*h1, *h2]
    }
}

fn sim(cfg: &SystemConfig, policy: Policy, periods: f64, seed: u64) -> (f64, f64) {
    let horizon = periods / cfg.rate;
    let e = simulate_violation(cfg, policy, horizon, 0.05 * horizon, seed).unwrap();
    (e.violation_prob, e.std_error())
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn dm1_optimum() -> Outcome {
    let grid = rate_grid();
    let cfg = SystemConfig::single(exp1(), 0.2, 5.0).unwrap();
    let probs: Vec<f64> = map_indexed(grid.len(), |i| {
        let c = cfg.with_rate(grid[i]).unwrap();
        sim(&c, Policy::FcfsInfinite, 1e7, 1000 + i as u64).0
    });
    let sim_util = grid[argmin(&probs)];
    let sol = solve_alpha_ubmp(&[exp1()], 5.0, 30, STEP).unwrap();
    let alpha_util = sol.utilization();
    let ok =
        (sim_util - 0.425).abs() <= STEP + 1e-9 && (alpha_util - sim_util).abs() <= STEP + 1e-9;
    (
        ok,
        format!(
            "simulated optimum {sim_util:.3}, alpha-UBMP {alpha_util:.3} (target 0.425 +- 0.025)"
        ),
    )
}

fn dominance() -> Outcome {
    let mut cases = Vec::new();
    for (name, h1, h2) in families() {
        for n in [1usize, 2] {
            for d in [5.0, 10.0, 15.0] {
                for &r in &rate_grid() {
                    cases.push((name, hops_for(n, &h1, &h2), r, d));
                }
            }
        }
    }
    let results = map_indexed(cases.len(), |i| {
        let (name, hops, r, d) = &cases[i];
        let cfg = SystemConfig::new(hops.clone(), *r, *d).unwrap();
        if !cfg.is_feasible() {
            return None;
        }
        let ch = minimize_psi_over_s(&cfg).unwrap().value;
        let al = alpha_relaxed(&cfg, 30).unwrap().value;
        let (p, se) = sim(&cfg, Policy::FcfsInfinite, 1e6, 7_000 + i as u64);
        let ok = ch >= al && al >= p - 3.0 * se;
        Some((ok, format!("{name} N={} R={r:.3} d={d}: chernoff {ch:.3e} alpha {al:.3e} sim {p:.3e}+-{se:.1e}", hops.len())))
    });
    let checked: Vec<_> = results.into_iter().flatten().collect();
    let failures: Vec<&String> = checked
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, s)| s)
        .collect();
    let mut msg = format!(
        "{} feasible points, {} violations",
        checked.len(),
        failures.len()
    );
    if let Some(f) = failures.first() {
        msg.push_str(&format!("; first: {f}"));
    }
    (failures.is_empty(), msg)
}

fn closed_forms() -> Outcome {
    const M: usize = 500;
    const K: u32 = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b1: f64 = rng.random_range(0.0..=0.95);
        let b2: f64 = rng.random_range(0.0..=0.95);
        let mut tri = 0.0;
        let mut tail = 0.0;
        for v0 in 0..=M {
            for v1 in 0..=M {
                let term = b1.powi(v1 as i32) * b2.powi(v0 as i32);
                if v0 + v1 <= M {
                    tri += term;
                }
                if v0 >= K as usize || v1 >= K as usize {
                    tail += term;
                }
            }
        }
        worst = worst
            .max(rel_err(phi_closed_form(b1, b2).unwrap(), tri))
            .max(rel_err(two_hop_tail_factor(b1, b2, K).unwrap(), tail));
    }
    (
        worst <= 1e-8,
        format!("20 pairs, worst relative error {worst:.2e} (tolerance 1e-8)"),
    )
}

fn convexity() -> Outcome {
    let mut cases = Vec::new();
    for (name, h1, h2) in families() {
        for n in [1usize, 2] {
            for d in [5.0, 10.0, 15.0] {
                cases.push((name, hops_for(n, &h1, &h2), d));
            }
        }
    }
    let results = map_indexed(cases.len(), |i| {
        let (name, hops, d) = &cases[i];
        let mut bad = Vec::new();
        let pts: Vec<(f64, f64)> = rate_grid()
            .into_iter()
            .filter_map(|r| {
                let cfg = SystemConfig::new(hops.clone(), r, *d).ok()?;
                cfg.is_feasible()
                    .then(|| (1.0 / r, minimize_psi_over_s(&cfg).unwrap().value))
            })
            .collect();
        // divided second differences on the non-uniform T grid
        for w in pts.windows(3) {
            let (t0, f0) = w[0];
            let (t1, f1) = w[1];
            let (t2, f2) = w[2];
            let dd = ((f2 - f1) / (t2 - t1) - (f1 - f0) / (t1 - t0)) / (t2 - t0);
            if !(dd > 0.0) {
                bad.push(format!("{name} N={} d={d} T={t1:.4}: {dd:.3e}", hops.len()));
            }
        }
        // Ψ(s, ·) in T at fixed s
        let cfgs: Vec<SystemConfig> = rate_grid()
            .into_iter()
            .filter_map(|r| SystemConfig::new(hops.clone(), r, *d).ok())
            .filter(|c| c.is_feasible())
            .collect();
        let s_max = cfgs
            .iter()
            .map(|c| stability_window(c).s_high)
            .fold(f64::INFINITY, f64::min);
        let mut fixed_s_bad = 0;
        for j in 1..10 {
            let s = s_max * j as f64 / 10.0;
            let f: Vec<(f64, f64)> = cfgs
                .iter()
                .map(|c| (1.0 / c.rate, psi_chernoff(c, s)))
                .collect();
            for w in f.windows(3) {
                let dd = ((w[2].1 - w[1].1) / (w[2].0 - w[1].0)
                    - (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    / (w[2].0 - w[0].0);
                if !(dd > 0.0) {
                    fixed_s_bad += 1;
                }
            }
        }
        for r in [0.2, 0.4, 0.6] {
            let Ok(cfg) = SystemConfig::new(hops.clone(), r, *d) else {
                continue;
            };
            if !cfg.is_feasible() {
                continue;
            }
            let w = stability_window(&cfg);
            let n = 60;
            let s: Vec<f64> = (1..n)
                .map(|j| w.s_low + w.width() * j as f64 / n as f64)
                .collect();
            let f: Vec<f64> = s.iter().map(|&x| psi_chernoff(&cfg, x)).collect();
            for j in 1..f.len() - 1 {
                let dd = f[j + 1] - 2.0 * f[j] + f[j - 1];
                if !(dd > 0.0) {
                    bad.push(format!(
                        "{name} N={} d={d} R={r} s={:.4}: {dd:.3e}",
                        hops.len(),
                        s[j]
                    ));
                }
            }
        }
        (bad, fixed_s_bad)
    });
    let fixed_s_bad: usize = results.iter().map(|r| r.1).sum();
    let bad: Vec<String> = results.into_iter().flat_map(|r| r.0).collect();
    let mut msg = format!(
        "{} configurations, {} non-convex points (fixed-s curves in T: {fixed_s_bad})",
        cases.len(),
        bad.len()
    );
    if let Some(b) = bad.first() {
        msg.push_str(&format!("; first: {b}"));
    }
    (bad.is_empty(), msg)
}

fn zero_violation() -> Outcome {
    let det = ServiceDistribution::deterministic(1.0).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [1usize, 2] {
        let d = n as f64 + 1.0;
        let probe = SystemConfig::new(vec![det; n], 1.0, d).unwrap();
        let r = bounded_support_zero_rate(&probe, 1.0).unwrap();
        let cfg = probe.with_rate(r).unwrap();
        let est = simulate_violation(&cfg, Policy::FcfsInfinite, 1e6 / r, 0.05e6 / r, 11).unwrap();
        ok &= est.violation_prob == 0.0 && est.deliveries > 0;
        parts.push(format!("N={n} R={r}: {}", est.violation_prob));
    }
    (ok, parts.join(", "))
}

fn dichotomy() -> Outcome {
    let cfg = SystemConfig::single(exp1(), 0.1, 5.0).unwrap();
    let reps = 100_000;
    let mut dead_min: f64 = 1.0;
    let mut live_max: f64 = 0.0;
    for n in 0..10 {
        let base = n as f64 / cfg.rate;
        let dead = transient_violation(&cfg, base + 7.5, reps, 20 + n)
            .unwrap()
            .probability;
        let live = transient_violation(&cfg, base + 3.0, reps, 40 + n)
            .unwrap()
            .probability;
        dead_min = dead_min.min(dead);
        live_max = live_max.max(live);
    }
    let ok = dead_min == 1.0 && live_max < 0.9;
    (
        ok,
        format!("dead-interval minimum {dead_min}, live-interval maximum {live_max:.4}"),
    )
}

/// Pmf of a sum of `n` geometric slot counts, by repeated convolution.
fn geo_sum_pmf(p: f64, n: usize, len: usize) -> Vec<f64> {
    let one: Vec<f64> = (0..len)
        .map(|j| {
            if j == 0 {
                0.0
            } else {
                p * (1.0 - p).powi(j as i32 - 1)
            }
        })
        .collect();
    let mut acc = one.clone();
    for _ in 1..n {
        let mut next = vec![0.0; len];
        for (i, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in one.iter().enumerate().take(len - i) {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    acc
}

fn tail_above(pmf: &[f64], x: f64) -> f64 {
    pmf.iter()
        .enumerate()
        .filter(|(j, _)| *j as f64 > x)
        .map(|(_, w)| w)
        .sum()
}

fn erlang_tail(k: u32, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= rate * x / j as f64;
        sum += term;
    }
    (-rate * x).exp() * sum
}

fn erlang_pdf(k: u32, rate: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let ln = k as f64 * rate.ln() + (k - 1) as f64 * y.ln()
        - rate * y
        - (1..k).map(|j| (j as f64).ln()).sum::<f64>();
    ln.exp()
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn oracles() -> Outcome {
    let len = 1500;
    let (p1, p2) = (0.85, 0.9);
    let g1 = geo(p1);
    let g2 = geo(p2);
    let mut geo_worst: f64 = 0.0;
    let xs = [0.0, 1.0, 2.5, 4.0, 7.0, 9.999, 12.0, 15.5, 20.0, 30.0];
    for n in 1..=10usize {
        let pmf = geo_sum_pmf(p1, n, len);
        for &x in &xs {
            geo_worst = geo_worst.max(rel_err(
                g1.sum_tail(n as u32, x).unwrap(),
                tail_above(&pmf, x),
            ));
        }
    }
    for n1 in 1..=10usize {
        let a = geo_sum_pmf(p1, n1, len);
        for n2 in [1usize, 3, 6, 10] {
            let b = geo_sum_pmf(p2, n2, len);
            let mut c = vec![0.0; len];
            for (i, &wa) in a.iter().enumerate() {
                for (j, &wb) in b.iter().enumerate().take(len - i) {
                    c[i + j] += wa * wb;
                }
            }
            for &x in &xs {
                let got = cross_sum_tail(&g1, n1 as u32, &g2, n2 as u32, x).unwrap();
                geo_worst = geo_worst.max(rel_err(got, tail_above(&c, x)));
            }
        }
    }

    let mut exp_worst: f64 = 0.0;
    for (r, d) in [(0.3, 5.0), (0.5, 10.0), (0.7, 15.0)] {
        for v0 in 0..=18u32 {
            for v1 in 0..=(18 - v0) {
                let kappa = d + (v0 + v1) as f64 / r - 1.0 / r;
                let oracle = erlang_tail(v0 + v1 + 2, 1.0, kappa);
                let got = phi_two(&exp1(), &exp1(), v0, v1, r, d).unwrap();
                exp_worst = exp_worst.max(rel_err(got, oracle));
            }
        }
    }

    let mut erl_worst: f64 = 0.0;
    let other = ServiceDistribution::erlang(2, 1.7).unwrap();
    for (d2, k2, r2) in [(erl(), 3u32, 3.0), (other, 2u32, 1.7)] {
        for (n1, n2) in [(1u32, 1u32), (2, 3), (4, 2), (6, 6)] {
            for x in [0.5, 2.0, 5.0, 9.0] {
                let (k1, r1) = (3 * n1, 3.0);
                let kk2 = k2 * n2;
                // condition on the first sum
                let oracle = erlang_tail(k1, r1, x)
                    + simpson(
                        |y| erlang_pdf(k1, r1, y) * erlang_tail(kk2, r2, x - y),
                        0.0,
                        x,
                        4000,
                    );
                let got = cross_sum_tail(&erl(), n1, &d2, n2, x).unwrap();
                erl_worst = erl_worst.max(rel_err(got, oracle));
            }
        }
    }
    let ok = geo_worst <= 1e-10 && exp_worst <= 1e-10 && erl_worst <= 1e-6;
    (
        ok,
        format!(
            "geometric {geo_worst:.1e} (1e-10), exponential {exp_worst:.1e} (1e-10), erlang {erl_worst:.1e} (1e-6)"
        ),
    )
}

fn estimators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fam = families();
    let mut picked = Vec::new();
    // skip draws too rare for 1e5 replications to resolve
    while picked.len() < 5 {
        let (_, h1, h2) = fam[rng.random_range(0..fam.len())];
        let n = rng.random_range(1..=2usize);
        let d: f64 = rng.random_range(3.0..8.0);
        let hops = hops_for(n, &h1, &h2);
        let probe = SystemConfig::new(hops.clone(), 1.0, d).unwrap();
        let mu = probe.bottleneck_rate();
        let r = rng.random_range(1.0 / d..0.8 * mu);
        let cfg = probe.with_rate(r).unwrap();
        let (p, se) = sim(&cfg, Policy::FcfsInfinite, 2e6, rng.random());
        if p >= 0.01 {
            picked.push((cfg, p, se));
        }
    }
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (i, (cfg, p, se)) in picked.iter().enumerate() {
        let t = 500.0 / cfg.rate + cfg.age_limit;
        let tg = tagged_departure_violation_phase_averaged(cfg, t, 100_000, 90 + i as u64).unwrap();
        let z = (tg.probability - p).abs() / (tg.std_error.powi(2) + se.powi(2)).sqrt();
        worst = worst.max(z);
        ok &= z <= 3.0;
    }
    (
        ok,
        format!("5 configurations, largest gap {worst:.2} combined standard errors"),
    )
}

fn policies() -> Outcome {
    let cfg = SystemConfig::new(vec![exp1(), exp1()], 0.2, 10.0).unwrap();
    let grid = rate_grid();
    let periods = 4e6;
    let per_rate: Vec<Vec<f64>> = map_indexed(grid.len(), |i| {
        let c = cfg.with_rate(grid[i]).unwrap();
        let h = periods / grid[i];
        compare_policies(&c, &[grid[i]], &Policy::ALL, h, 0.05 * h, 500 + i as u64)
            .unwrap()
            .iter()
            .map(|e| e.estimate.violation_prob)
            .collect()
    });
    let min_of = |k: usize| per_rate.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
    let idx = |p: Policy| Policy::ALL.iter().position(|&q| q == p).unwrap();
    let fcfs = min_of(idx(Policy::FcfsInfinite));
    let fub = min_of(idx(Policy::FcfsUnitBuffer));
    let lub = min_of(idx(Policy::LgfsUnitBuffer));
    let ratio = fub / lub;
    let ok = lub <= fcfs && fcfs <= fub && ratio >= 2.0;
    (
        ok,
        format!("minima: lgfs_ub {lub:.3e}, fcfs {fcfs:.3e}, fcfs_ub {fub:.3e}; fcfs_ub/lgfs_ub = {ratio:.2} (need >= 2)"),
    )
}

fn determinism() -> Outcome {
    let run = |jobs: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_aoi"))
            .args([
                "simulate",
                "--seed",
                "42",
                "--jobs",
                jobs,
                "--set",
                "hops=2",
                "--set",
                "sweep.step=0.05",
                "--set",
                "horizon=200000",
                "--set",
                "replications=3",
                "--set",
                "policies=fcfs,fcfs_ub,lgfs_ub",
            ])
            .output()
            .expect("aoi binary runs");
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let a = run("8");
    let b = run("8");
    let c = run("1");
    let ok = !a.is_empty() && a == b && a == c;
    (
        ok,
        format!(
            "{} bytes; rerun equal: {}, jobs 1 vs 8 equal: {}",
            a.len(),
            a == b,
            a == c
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("D/M/1 optimal utilization", dm1_optimum),
        ("bound dominance", dominance),
        ("closed-form double sums", closed_forms),
        ("convexity in T and s", convexity),
        ("bounded-support zero violation", zero_violation),
        ("transient dichotomy below 1/d", dichotomy),
        ("distribution oracles", oracles),
        ("tagged vs time-average estimators", estimators),
        ("buffer policy ordering", policies),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {:>2} {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
