//! Runs a validated spec and writes its artifacts.

use anyhow::{bail, Context};
use hetroute_core::achq::train;
use hetroute_core::exact::{
    exact_average_cost, expected_response_time, extract_thresholds, linear_fit_value, relative_value_iteration,
    write_value_csv, RviOptions,
};
use hetroute_core::sim::{comparison_table, simulate, ComparisonTable, TrajectoryStats};
use hetroute_core::two_server::{
    discounted_optimal_threshold, distance_to_threshold_cell, verify_point, write_verify_csv, VerifyRow,
};
use hetroute_core::{linspace_rates, PowerOfD, RoutingPolicy, SoftThresholdParams, SoftThresholdPolicy, SystemConfig, ThresholdPolicy};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::output::{write_runs_csv, OutDir};
use crate::spec::{
    Axis, CompareSpec, Eval, ExperimentSpec, PolicyEntry, PolicyKind, RviSpec, SimulateSpec, SweepSpec, TrainSpec,
    VerifySpec,
};

/// Largest tabular state space solved exactly.
pub const EXACT_STATE_LIMIT: usize = 1 << 22;

pub fn run(spec: &ExperimentSpec, out: &OutDir) -> anyhow::Result<()> {
    match spec {
        ExperimentSpec::Rvi(s) => run_rvi(s, out),
        ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => run_train(s, out),
        ExperimentSpec::Simulate(s) => run_simulate(s, out),
        ExperimentSpec::Compare(s) => run_compare(s, out),
        ExperimentSpec::Verify2(s) => run_verify(s, out),
        ExperimentSpec::Sweep(s) => run_sweep(s, out),
    }
}

fn exact_ok(config: &SystemConfig) -> bool {
    config.num_states() <= EXACT_STATE_LIMIT
}

fn response_time(policy: &dyn RoutingPolicy, config: &SystemConfig) -> anyhow::Result<f64> {
    Ok(expected_response_time(exact_average_cost(policy, config)?, config))
}

fn run_rvi(s: &RviSpec, out: &OutDir) -> anyhow::Result<()> {
    let c = &s.system;
    if !exact_ok(c) {
        bail!("{} states exceed the exact-solver limit {EXACT_STATE_LIMIT}", c.num_states());
    }
    let opts = RviOptions {
        tolerance: s.tolerance,
        max_iterations: s.max_iterations,
        ..RviOptions::default()
    };
    let r = relative_value_iteration(c, &opts)?;
    write_value_csv(&r.values, &r.policy, c, out.csv("values.csv")?)?;
    let report = extract_thresholds(&r.policy, c);
    report.write_csv(out.csv("thresholds.csv")?)?;
    let avg = exact_average_cost(&r.policy, c)?;
    let summary = json!({
        "iterations": r.iterations,
        "average_cost": avg,
        "response_time": expected_response_time(avg, c),
        "rvi_average_cost_estimate": r.average_cost,
        "is_threshold_type": report.is_threshold_type,
        "equal_rate_violations": report.equal_rate_violations(c),
        "speed_order_violations": report.speed_order_violations(),
        "linear_fit_r_squared": linear_fit_value(&r.values, c).ok().map(|f| f.r_squared),
        "fas_response_time": response_time(&ThresholdPolicy::fas(c), c)?,
        "rsrt_response_time": response_time(&ThresholdPolicy::rsrt(c), c)?,
    });
    out.json("summary.json", &summary)
}

fn run_train(s: &TrainSpec, out: &OutDir) -> anyhow::Result<()> {
    let c = &s.system;
    let seeds = s.seeds.clone().unwrap_or_else(|| vec![s.hyperparams.seed]);
    let results = seeds
        .par_iter()
        .map(|seed| {
            let hp = hetroute_core::achq::Hyperparams {
                seed: *seed,
                ..s.hyperparams.clone()
            };
            let a0 = hp.initial_actor(c)?;
            let trained = train(c, &a0, &hp).with_context(|| format!("training seed {seed}"))?;
            let exact = if exact_ok(c) {
                let pol = SoftThresholdPolicy(trained.actor.clone());
                let pol: Box<dyn RoutingPolicy> = match hp.pod_d {
                    Some(d) => Box::new(PowerOfD::new(pol, d, c)?),
                    None => Box::new(pol),
                };
                Some(response_time(&*pol, c)?)
            } else {
                None
            };
            Ok((*seed, trained, exact))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let fas = if exact_ok(c) {
        let fas = ThresholdPolicy::fas(c);
        Some(match s.hyperparams.pod_d {
            Some(d) => response_time(&PowerOfD::new(fas, d, c)?, c)?,
            None => response_time(&fas, c)?,
        })
    } else {
        None
    };

    let k = c.num_servers();
    let mut w = csv::Writer::from_writer(out.csv("train_summary.csv")?);
    let mut header = vec!["seed".to_string()];
    header.extend((2..=k).map(|i| format!("theta_{i}")));
    header.extend(["sigma", "eta", "exact_response_time", "fas_response_time", "gain_vs_fas_pct"].map(String::from));
    w.write_record(&header)?;
    let mut per_seed = Vec::new();
    for (seed, trained, exact) in &results {
        trained.record.write_csv(k, out.csv(&format!("train_seed{seed}.csv"))?)?;
        let gain = match (exact, fas) {
            (Some(t), Some(f)) => Some(100.0 * (f - t) / f),
            _ => None,
        };
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.10e}"));
        let mut row = vec![seed.to_string()];
        row.extend(trained.actor.thresholds.iter().map(|t| format!("{t:.10}")));
        row.push(format!("{}", trained.actor.sharpness));
        row.push(format!("{:.10}", trained.critic.avg_cost_estimate));
        row.push(opt(*exact));
        row.push(opt(fas));
        row.push(gain.map_or(String::new(), |g| format!("{g:.6}")));
        w.write_record(&row)?;
        per_seed.push(json!({
            "seed": seed,
            "thresholds": trained.actor.thresholds,
            "sigma": trained.actor.sharpness,
            "eta": trained.critic.avg_cost_estimate,
            "critic_weights": trained.critic.weights,
            "exact_response_time": exact,
            "gain_vs_fas_pct": gain,
        }));
    }
    w.flush()?;
    out.json("summary.json", &json!({ "fas_response_time": fas, "runs": per_seed }))
}

/// A policy ready to simulate.
pub struct Resolved {
    pub name: String,
    pub policy: Box<dyn RoutingPolicy>,
    pub detail: Value,
}

pub fn resolve_policy(entry: &PolicyEntry, config: &SystemConfig) -> anyhow::Result<Resolved> {
    let f = &entry.0;
    let name = entry.name();
    let (inner, detail): (Box<dyn RoutingPolicy>, Value) = match f.kind {
        PolicyKind::Fas => {
            let p = ThresholdPolicy::fas(config);
            let d = json!({ "thresholds": p.thresholds });
            (Box::new(p), d)
        }
        PolicyKind::Rsrt => {
            let p = ThresholdPolicy::rsrt(config);
            let d = json!({ "thresholds": p.thresholds });
            (Box::new(p), d)
        }
        PolicyKind::Threshold => {
            let mut t = vec![0.0];
            t.extend(f.thresholds.clone().unwrap_or_default());
            let p = ThresholdPolicy::new(t)?;
            let d = json!({ "thresholds": p.thresholds });
            (Box::new(p), d)
        }
        PolicyKind::Soft => {
            let p = SoftThresholdParams::new(f.thresholds.clone().unwrap_or_default(), f.sigma.unwrap_or(1.0))?;
            let d = json!({ "thresholds": p.thresholds, "sigma": p.sharpness });
            (Box::new(SoftThresholdPolicy(p)), d)
        }
        PolicyKind::Rvi => {
            if !exact_ok(config) {
                bail!("{name}: {} states exceed the exact-solver limit", config.num_states());
            }
            let r = relative_value_iteration(config, &RviOptions::default())?;
            let d = json!({ "iterations": r.iterations, "average_cost": r.average_cost });
            (Box::new(r.policy), d)
        }
        PolicyKind::Achq => {
            let hp = entry.achq_hyperparams()?;
            let a0 = hp.initial_actor(config)?;
            let trained = train(config, &a0, &hp).with_context(|| format!("training {name}"))?;
            let d = json!({
                "thresholds": trained.actor.thresholds,
                "sigma": trained.actor.sharpness,
                "eta": trained.critic.avg_cost_estimate,
                "training_seed": hp.seed,
                "training_horizon": hp.horizon,
            });
            // The trained actor already accounts for the sampled view.
            let p = SoftThresholdPolicy(trained.actor);
            (Box::new(p), d)
        }
    };
    let policy: Box<dyn RoutingPolicy> = match f.pod_d {
        Some(d) => Box::new(PowerOfD::new(inner, d, config)?),
        None => inner,
    };
    Ok(Resolved { name, policy, detail })
}

/// Simulates every policy under every seed on the worker pool.
pub fn evaluate(
    policies: &[Resolved],
    config: &SystemConfig,
    seeds: &[u64],
    eval: Eval,
) -> anyhow::Result<Vec<(String, Vec<TrajectoryStats>)>> {
    let tasks: Vec<(usize, u64)> = (0..policies.len()).flat_map(|i| seeds.iter().map(move |s| (i, *s))).collect();
    let runs = tasks
        .par_iter()
        .map(|(i, s)| simulate(&*policies[*i].policy, config, eval.horizon, eval.burn_in, *s))
        .collect::<hetroute_core::Result<Vec<_>>>()?;
    Ok(policies
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(p, r)| (p.name.clone(), r.to_vec()))
        .collect())
}

fn resolve_all(entries: &[PolicyEntry], config: &SystemConfig) -> anyhow::Result<Vec<Resolved>> {
    entries.par_iter().map(|e| resolve_policy(e, config)).collect()
}

fn run_simulate(s: &SimulateSpec, out: &OutDir) -> anyhow::Result<()> {
    let c = &s.system;
    let pol = resolve_policy(&s.policy, c)?;
    let results = evaluate(std::slice::from_ref(&pol), c, &s.seeds, s.eval())?;
    write_runs_csv(&results, out.csv("runs.csv")?)?;
    let table = comparison_table(results, &pol.name, c)?;
    let row = &table.rows[0];
    out.json(
        "summary.json",
        &json!({
            "policy": pol.name,
            "policy_detail": pol.detail,
            "seed_count": row.seed_count,
            "response_time_mean": row.response_time_mean,
            "response_time_se": row.response_time_se,
        }),
    )
}

/// Table, raw replications and per-policy details of one comparison.
pub type PointResult = (ComparisonTable, Vec<(String, Vec<TrajectoryStats>)>, Vec<Value>);

/// One comparison: resolve, simulate and tabulate.
pub fn compare_point(
    config: &SystemConfig,
    entries: &[PolicyEntry],
    reference: &str,
    seeds: &[u64],
    eval: Eval,
) -> anyhow::Result<PointResult> {
    let resolved = resolve_all(entries, config)?;
    let results = evaluate(&resolved, config, seeds, eval)?;
    let details = resolved.iter().map(|r| json!({ "policy": r.name, "detail": r.detail })).collect();
    let table = comparison_table(results.clone(), reference, config)?;
    Ok((table, results, details))
}

fn run_compare(s: &CompareSpec, out: &OutDir) -> anyhow::Result<()> {
    let reference = s.reference.clone().unwrap_or_else(|| s.policies[0].name());
    let (table, results, details) = compare_point(&s.system, &s.policies, &reference, &s.seeds, s.eval())?;
    table.write_csv(out.csv("comparison.csv")?)?;
    write_runs_csv(&results, out.csv("runs.csv")?)?;
    out.json("summary.json", &json!({ "reference": reference, "policies": details }))
}

fn grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn run_verify(s: &VerifySpec, out: &OutDir) -> anyhow::Result<()> {
    let total: f64 = s.system.total_service_rate();
    let pairs: Vec<(f64, f64)> = s.loads().iter().flat_map(|l| s.gammas.iter().map(move |g| (*l, *g))).collect();
    let blocks = pairs
        .par_iter()
        .map(|(load, gamma)| {
            let c = s.system.with_arrival_rate(load * total)?;
            let dth = discounted_optimal_threshold(&c, *gamma)?
                .with_context(|| format!("load {load}, discount {gamma}: the optimal policy never uses server 2"))?;
            let top_offset = s.offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let max = s.grid_max.unwrap_or((3.0 * (dth as f64 + 0.5 + top_offset)).max(3.0));
            let g = grid(s.grid_step, max);
            let points: Vec<(f64, f64)> = s.sigmas.iter().flat_map(|sg| s.offsets.iter().map(move |o| (*sg, *o))).collect();
            points
                .par_iter()
                .map(|(sigma, offset)| {
                    let row = verify_point(&c, *gamma, *sigma, dth as f64 + 0.5 + offset, &g, Some(dth))?;
                    Ok((*offset, row))
                })
                .collect::<anyhow::Result<Vec<(f64, VerifyRow)>>>()
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows: Vec<(f64, VerifyRow)> = blocks.into_iter().flatten().collect();
    let plain: Vec<VerifyRow> = rows.iter().map(|(_, r)| r.clone()).collect();
    write_verify_csv(&plain, out.csv("verify.csv")?)?;

    let mut w = csv::Writer::from_writer(out.csv("verify_detail.csv")?);
    w.write_record([
        "load",
        "gamma",
        "sigma",
        "offset",
        "theta_base",
        "discounted_threshold",
        "l_star",
        "single_sign_change",
        "increasing_prefix",
        "unimodal",
        "argmin",
        "argmin_cell_distance",
        "expansion_error",
    ])?;
    let mut shape_failures = 0;
    let mut centered_mismatches = 0;
    for (offset, r) in &rows {
        let dist = r.discounted_threshold.map(|h| distance_to_threshold_cell(r.argmin, h));
        if !(r.single_sign_change && r.increasing_prefix && r.unimodal) {
            shape_failures += 1;
        }
        if *offset == 0.0 && dist.is_some_and(|d| d > s.grid_step) {
            centered_mismatches += 1;
        }
        w.write_record([
            format!("{}", r.load),
            r.gamma.to_string(),
            r.sigma.to_string(),
            offset.to_string(),
            r.theta_base.to_string(),
            r.discounted_threshold.map_or("none".into(), |h| h.to_string()),
            r.l_star.map_or("none".into(), |l| l.to_string()),
            r.single_sign_change.to_string(),
            r.increasing_prefix.to_string(),
            r.unimodal.to_string(),
            format!("{:.4}", r.argmin),
            dist.map_or(String::new(), |d| format!("{d:.4}")),
            format!("{:.3e}", r.expansion_error),
        ])?;
    }
    w.flush()?;
    out.json(
        "summary.json",
        &json!({
            "points": rows.len(),
            "shape_failures": shape_failures,
            "centered_argmin_mismatches": centered_mismatches,
        }),
    )
}

/// System at one sweep point.
pub fn sweep_config(base: &SystemConfig, axis: Axis, value: f64) -> anyhow::Result<SystemConfig> {
    let rates = base.service_rates();
    let (fast, slow) = (rates[0], rates[rates.len() - 1]);
    let (load, l) = (base.load(), base.buffer_capacity());
    Ok(match axis {
        Axis::NumServers => SystemConfig::with_load(load, linspace_rates(fast, slow, value as usize), l)?,
        Axis::Load => SystemConfig::with_load(value, rates.to_vec(), l)?,
        Axis::Heterogeneity => SystemConfig::with_load(load, linspace_rates(fast, fast / value, rates.len()), l)?,
        Axis::PodD => base.clone(),
    })
}

/// ACHQ, FAS and RSRT at one sweep point, FAS first as the reference.
pub fn sweep_entries(s: &SweepSpec, value: f64) -> Vec<PolicyEntry> {
    let pod = (s.axis == Axis::PodD).then_some(value as usize);
    let mut entries = vec![
        PolicyEntry::simple(PolicyKind::Achq),
        PolicyEntry::simple(PolicyKind::Fas),
        PolicyEntry::simple(PolicyKind::Rsrt),
    ];
    entries[0].0.hyperparams = Some(s.hyperparams.clone());
    for e in &mut entries {
        e.0.pod_d = pod;
    }
    entries
}

fn run_sweep(s: &SweepSpec, out: &OutDir) -> anyhow::Result<()> {
    let points = s
        .values
        .par_iter()
        .map(|v| {
            let res = sweep_config(&s.system, s.axis, *v).and_then(|c| {
                let entries = sweep_entries(s, *v);
                let reference = entries[1].name();
                compare_point(&c, &entries, &reference, &s.seeds, s.eval()).map(|r| (c, r))
            });
            if let Err(e) = &res {
                eprintln!("sweep {} = {v}: {e:#}", s.axis.as_str());
            }
            res
        })
        .collect::<Vec<_>>();

    let mut w = csv::Writer::from_writer(out.csv("sweep.csv")?);
    w.write_record([
        "axis",
        "axis_value",
        "policy_name",
        "seed_count",
        "response_time_mean",
        "response_time_se",
        "improvement_vs_reference_pct",
    ])?;
    let mut summary = Vec::new();
    for (v, point) in s.values.iter().zip(&points) {
        match point {
            Ok((c, (table, _, details))) => {
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                // Same rows as a compare run, prefixed by the axis point.
                let mut r = csv::Reader::from_reader(buf.as_slice());
                for rec in r.records() {
                    let mut row = vec![s.axis.as_str().to_string(), v.to_string()];
                    row.extend(rec?.iter().map(String::from));
                    w.write_record(&row)?;
                }
                summary.push(json!({ "axis_value": v, "system": c, "policies": details }));
            }
            Err(e) => summary.push(json!({ "axis_value": v, "error": format!("{e:#}") })),
        }
    }
    w.flush()?;
    let failures = points.iter().filter(|p| p.is_err()).count();
    out.json("summary.json", &json!({ "axis": s.axis, "failures": failures, "points": summary }))?;
    if failures == points.len() {
        bail!("every sweep point failed");
    }
    Ok(())
}
