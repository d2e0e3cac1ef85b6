//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! status 1 if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use hetroute_core::achq::{train, train_discounted, Hyperparams, ThetaInit};
use hetroute_core::exact::{
    exact_average_cost, extract_thresholds, feature_matrix_rank, linear_fit_value, max_feature_norm,
    relative_value_iteration, RviOptions, RviResult,
};
use hetroute_core::mdp::Action;
use hetroute_core::policy::{grad_log_pi, soft_threshold_dist, ThresholdPolicy};
use hetroute_core::sim::{default_burn_in, simulate};
use hetroute_core::two_server::{discounted_optimal_threshold, distance_to_threshold_cell, verify_point};
use hetroute_core::{linspace_rates, RoutingPolicy, SoftThresholdParams, SoftThresholdPolicy, State, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn table_config(label: char) -> SystemConfig {
    let (load, rates) = match label {
        'a' => (0.4, vec![100.0, 25.0, 5.0, 1.0]),
        'b' => (0.5, vec![100.0, 25.0, 5.0, 1.0]),
        'c' => (0.4, vec![100.0, 100.0, 1.0, 1.0]),
        'd' => (0.4, vec![100.0, 25.0, 5.0, 5.0, 1.0, 1.0]),
        _ => unreachable!(),
    };
    SystemConfig::with_load(load, rates, 100).unwrap()
}

fn two_server() -> SystemConfig {
    SystemConfig::with_load(0.4, vec![100.0, 25.0], 100).unwrap()
}

fn eight_server() -> SystemConfig {
    SystemConfig::with_load(0.4, linspace_rates(100.0, 1.0, 8), 100).unwrap()
}

const LABELS: [char; 4] = ['a', 'b', 'c', 'd'];

struct Solved {
    label: char,
    config: SystemConfig,
    rvi: RviResult,
}

fn solve_tables() -> Vec<Solved> {
    LABELS
        .iter()
        .map(|&label| {
            let config = table_config(label);
            let rvi = relative_value_iteration(&config, &RviOptions::default()).unwrap();
            Solved { label, config, rvi }
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1(tables: &[Solved]) -> Outcome {
    let rvi_ref = [5.48, 8.11, 2.36, 5.46];
    let fas_ref = [7.72, 9.72, 4.64, 9.56];
    let rsrt_ref = [10.04, 17.15, 2.37, 10.45];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let lam = t.config.arrival_rate();
        let rvi = exact_average_cost(&t.rvi.policy, &t.config).unwrap() / lam * 100.0;
        let fas = exact_average_cost(&ThresholdPolicy::fas(&t.config), &t.config).unwrap() / lam * 100.0;
        let rsrt = exact_average_cost(&ThresholdPolicy::rsrt(&t.config), &t.config).unwrap() / lam * 100.0;
        for (got, want) in [(rvi, rvi_ref[i]), (fas, fas_ref[i]), (rsrt, rsrt_ref[i])] {
            pass &= rel(got, want) <= 0.03;
        }
        parts.push(format!(
            "({}) RVI {:.3}/{:.2} FAS {:.3}/{:.2} RSRT {:.3}/{:.2}",
            t.label, rvi, rvi_ref[i], fas, fas_ref[i], rsrt, rsrt_ref[i]
        ));
    }
    Outcome {
        pass,
        detail: format!("T_r x1e-2 got/table: {}", parts.join("; ")),
    }
}

fn criterion_2(tables: &[Solved]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for t in tables {
        let report = extract_thresholds(&t.rvi.policy, &t.config);
        let eq = report.equal_rate_violations(&t.config).len();
        let order = report.speed_order_violations().len();
        pass &= report.is_threshold_type && eq == 0 && order == 0;
        let broken: Vec<String> = report
            .patterns
            .iter()
            .filter_map(|p| p.first_violation.map(|l| format!("{}@L={l}", p.busy)))
            .collect();
        parts.push(format!(
            "({}) threshold_type={} [{}] equal_rate_violations={} speed_order_violations={}",
            t.label,
            report.is_threshold_type,
            broken.join(" "),
            eq,
            order
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_3(tables: &[Solved]) -> Outcome {
    let want = [0.941, 0.943, 0.942, 0.942];
    let mut pass = true;
    let mut parts = Vec::new();
    for (t, w) in tables.iter().zip(want) {
        let fit = linear_fit_value(&t.rvi.values, &t.config).unwrap();
        pass &= (fit.r_squared - w).abs() <= 0.02;
        parts.push(format!("({}) {:.4}/{:.3}", t.label, fit.r_squared, w));
    }
    Outcome {
        pass,
        detail: format!("R^2 got/reported: {}", parts.join(" ")),
    }
}

fn criterion_4() -> Outcome {
    let config = eight_server();
    let hp = Hyperparams::default();
    let actor0 = hp.initial_actor(&config).unwrap();
    let out = train(&config, &actor0, &hp).unwrap();
    let learned = exact_average_cost(&SoftThresholdPolicy(out.actor.clone()), &config).unwrap();
    let fas = exact_average_cost(&ThresholdPolicy::fas(&config), &config).unwrap();
    let gain = 100.0 * (fas - learned) / fas;
    Outcome {
        pass: gain >= 20.0,
        detail: format!(
            "T_r learned {:.5e} FAS {:.5e} gain {:.2}% (need >= 20%); thresholds {:?}",
            learned / config.arrival_rate(),
            fas / config.arrival_rate(),
            gain,
            out.actor.thresholds.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    }
}

fn criterion_5() -> Outcome {
    let config = two_server();
    let rvi = relative_value_iteration(&config, &RviOptions::default()).unwrap();
    let report = extract_thresholds(&rvi.policy, &config);
    let h = report.get(0b01).and_then(|p| p.threshold).expect("fast-busy pattern routes") as f64;
    let optimum = exact_average_cost(&rvi.policy, &config).unwrap();
    let hp = Hyperparams {
        sigma: 10.0,
        init: ThetaInit::Rsrt,
        ..Hyperparams::default()
    };
    let actor0 = hp.initial_actor(&config).unwrap();
    let runs = [
        ("average", train(&config, &actor0, &hp).unwrap()),
        ("discounted(0.99)", train_discounted(&config, &actor0, &hp, 0.99).unwrap()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, out) in &runs {
        let theta = out.actor.thresholds[0];
        let cost = exact_average_cost(&SoftThresholdPolicy(out.actor.clone()), &config).unwrap();
        let gap = (cost - optimum) / optimum;
        pass &= (theta - h).abs() <= 1.0 && gap <= 0.05;
        parts.push(format!("{name}: theta2 {theta:.3} cost gap {:.2}%", 100.0 * gap));
    }
    Outcome {
        pass,
        detail: format!(
            "RVI threshold {h} optimum {optimum:.5}; {} (need |theta2 - {h}| <= 1 and gap <= 5%)",
            parts.join("; ")
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let horizon = 1_000_000;
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for inst in 0..5 {
        let k = rng.random_range(2..=3usize);
        let mut rates: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..10.0)).collect();
        rates.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let l_m = rng.random_range(3..=10usize);
        let load = rng.random_range(0.2..0.8);
        let config = SystemConfig::with_load(load, rates, l_m).unwrap();
        let thetas: Vec<f64> = (1..k).map(|_| rng.random_range(0.0..l_m as f64)).collect();
        let soft = SoftThresholdPolicy(SoftThresholdParams::new(thetas, rng.random_range(0.5..3.0)).unwrap());
        let policies: [(&str, Box<dyn RoutingPolicy>); 3] = [
            ("fas", Box::new(ThresholdPolicy::fas(&config))),
            ("rsrt", Box::new(ThresholdPolicy::rsrt(&config))),
            ("soft", Box::new(soft)),
        ];
        for (j, (_, p)) in policies.iter().enumerate() {
            let exact = exact_average_cost(p.as_ref(), &config).unwrap();
            let seed = 100 * inst + j as u64;
            let s = simulate(p.as_ref(), &config, horizon, default_burn_in(horizon), seed).unwrap();
            let z = (s.avg_jobs - exact).abs() / s.ci_halfwidth;
            worst = worst.max(z);
            pass &= z <= 3.0;
            checked += 1;
        }
    }
    Outcome {
        pass,
        detail: format!("{checked} instance/policy pairs, worst |sim - exact| = {worst:.2} CI halfwidths (need <= 3)"),
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log-probability of `action` under the soft threshold rule, written out
/// directly from the policy definition.
fn log_prob(thresholds: &[f64], sigma: f64, state: &State, action: Action, k: usize) -> f64 {
    let f = (0..k).find(|&j| !state.is_busy(j));
    match (f, state.queue_len) {
        (None, _) | (_, 0) => 0.0,
        (Some(0), _) => 0.0,
        (Some(f), l) => {
            let x = sigma * (l as f64 - thresholds[f - 1]);
            match action {
                Action::Wait => log_sigmoid(-x),
                Action::Route(_) => log_sigmoid(x),
            }
        }
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=4usize);
        let l_m = 10;
        let rates: Vec<f64> = (0..k).map(|i| 10.0 / (i + 1) as f64).collect();
        let config = SystemConfig::with_load(0.5, rates, l_m).unwrap();
        let state = State::new(rng.random_range(0..=l_m), rng.random_range(0..(1u32 << k)));
        let thetas: Vec<f64> = (1..k).map(|_| rng.random_range(-2.0..12.0)).collect();
        let sigma = rng.random_range(0.1..3.0);
        let params = SoftThresholdParams::new(thetas.clone(), sigma).unwrap();
        let support = soft_threshold_dist(&params, &state, &config);
        let action = support.entries()[rng.random_range(0..support.entries().len())].0;
        let grad = grad_log_pi(&params, &state, action, &config).unwrap();
        for (i, g) in grad.iter().enumerate() {
            let mut up = thetas.clone();
            let mut down = thetas.clone();
            up[i] += step;
            down[i] -= step;
            let fd = (log_prob(&up, sigma, &state, action, k) - log_prob(&down, sigma, &state, action, k)) / (2.0 * step);
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-12);
            let err = if g.abs().max(fd.abs()) < 1e-12 { 0.0 } else { err };
            worst = worst.max(err);
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("1000 triples, worst relative error {worst:.2e} (need < 1e-6)"),
    }
}

fn criterion_8() -> Outcome {
    let grid: Vec<f64> = (0..=120).map(|i| i as f64 * 0.25).collect();
    let mut pass = true;
    let mut points = 0;
    let mut bad = Vec::new();
    let mut mismatches = 0;
    for load in [0.3, 0.4, 0.5] {
        let config = SystemConfig::with_load(load, vec![100.0, 25.0], 100).unwrap();
        for gamma in [0.9, 0.99, 0.999] {
            let dth = discounted_optimal_threshold(&config, gamma).unwrap().expect("routes eventually");
            for sigma in [10.0, 50.0] {
                for offset in -2..=2 {
                    let base = dth as f64 + 0.5 + offset as f64;
                    let row = verify_point(&config, gamma, sigma, base, &grid, Some(dth)).unwrap();
                    points += 1;
                    let shape_ok = row.single_sign_change && row.increasing_prefix && row.unimodal;
                    let dist = distance_to_threshold_cell(row.argmin, dth);
                    if offset == 0 && dist > 0.25 {
                        pass = false;
                        bad.push(format!("rho={load} g={gamma} s={sigma} argmin {} vs {dth}", row.argmin));
                    }
                    if dist > 0.25 {
                        mismatches += 1;
                    }
                    if !shape_ok {
                        pass = false;
                        bad.push(format!("rho={load} g={gamma} s={sigma} base={base} shape"));
                    }
                }
            }
        }
    }
    Outcome {
        pass,
        detail: format!(
            "{points} sweep points; argmin off the optimal cell at {mismatches} off-center bases; failures: [{}]",
            bad.join(", ")
        ),
    }
}

fn criterion_9(tables: &[Solved]) -> Outcome {
    let mut configs: Vec<SystemConfig> = tables.iter().map(|t| t.config.clone()).collect();
    configs.push(two_server());
    configs.push(eight_server());
    configs.push(SystemConfig::with_load(0.5, vec![4.0, 1.0], 10).unwrap());
    let mut pass = true;
    let mut worst_norm: f64 = 0.0;
    for c in &configs {
        let rank = feature_matrix_rank(c);
        let norm = max_feature_norm(c);
        worst_norm = worst_norm.max(norm);
        pass &= rank == c.num_servers() + 1 && norm < 1.0;
    }
    Outcome {
        pass,
        detail: format!("{} configs, full column rank on all: {pass}, max |phi| {worst_norm:.4}", configs.len()),
    }
}

fn report(n: u32, o: &Outcome) -> bool {
    println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() -> ExitCode {
    let start = Instant::now();
    let tables = solve_tables();
    let mut passed = Vec::new();
    passed.push(report(1, &criterion_1(&tables)));
    passed.push(report(2, &criterion_2(&tables)));
    passed.push(report(3, &criterion_3(&tables)));
    let c4 = report(4, &criterion_4());
    let c5 = report(5, &criterion_5());
    passed.extend([c4, c5]);
    passed.push(report(6, &criterion_6()));
    passed.push(report(7, &criterion_7()));
    passed.push(report(8, &criterion_8()));
    passed.push(report(9, &criterion_9(&tables)));
    passed.push(report(
        10,
        &Outcome {
            pass: c4 && c5,
            detail: "rate claims replaced by criteria 4 and 5; passes iff both pass".into(),
        },
    ));
    let failed = passed.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        passed.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
