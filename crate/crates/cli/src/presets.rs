//! Built-in experiments on the four benchmark systems.

use hetroute_core::exact::{
    exact_average_cost, expected_response_time, extract_thresholds, linear_fit_value, relative_value_iteration,
    RviOptions, ThresholdReport,
};
use hetroute_core::{RoutingPolicy, State, SystemConfig, ThresholdPolicy};
use rayon::prelude::*;
use serde_json::json;

use crate::output::OutDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Exact response times of RVI, FAS and RSRT on systems (a)–(d).
    Table1,
    /// Threshold reports of the RVI policy on systems (a)–(d).
    Fig2,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fig2 => "fig2",
        }
    }
}

/// `pattern@L` for every busy pattern that breaks the threshold shape.
fn first_violations(report: &ThresholdReport, k: usize) -> String {
    report
        .patterns
        .iter()
        .filter_map(|p| p.first_violation.map(|l| format!("{}@{l}", State::new(0, p.busy).pattern(k))))
        .collect::<Vec<_>>()
        .join(";")
}

pub const BUFFER: usize = 100;

pub fn benchmark_systems() -> Vec<(&'static str, SystemConfig)> {
    [
        ("a", 0.4, vec![100.0, 25.0, 5.0, 1.0]),
        ("b", 0.5, vec![100.0, 25.0, 5.0, 1.0]),
        ("c", 0.4, vec![100.0, 100.0, 1.0, 1.0]),
        ("d", 0.4, vec![100.0, 25.0, 5.0, 5.0, 1.0, 1.0]),
    ]
    .into_iter()
    .map(|(label, load, rates)| (label, SystemConfig::with_load(load, rates, BUFFER).expect("valid benchmark system")))
    .collect()
}

pub fn describe(preset: Preset) -> serde_json::Value {
    let systems: Vec<_> = benchmark_systems()
        .into_iter()
        .map(|(label, c)| json!({ "label": label, "system": c }))
        .collect();
    json!({ "preset": preset.as_str(), "systems": systems, "rvi": RviOptions::default() })
}

pub fn run(preset: Preset, out: &OutDir) -> anyhow::Result<()> {
    let solved = benchmark_systems()
        .into_par_iter()
        .map(|(label, c)| {
            let r = relative_value_iteration(&c, &RviOptions::default())?;
            Ok((label, c, r))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    match preset {
        Preset::Table1 => {
            let mut w = csv::Writer::from_writer(out.csv("table1.csv")?);
            w.write_record(["system", "policy", "avg_jobs", "response_time"])?;
            let mut fits = Vec::new();
            for (label, c, r) in &solved {
                let fas = ThresholdPolicy::fas(c);
                let rsrt = ThresholdPolicy::rsrt(c);
                let policies: [(&str, &dyn RoutingPolicy); 3] = [("rvi", &r.policy), ("fas", &fas), ("rsrt", &rsrt)];
                for (name, p) in policies {
                    let n = exact_average_cost(p, c)?;
                    w.write_record([
                        label.to_string(),
                        name.to_string(),
                        format!("{n:.10e}"),
                        format!("{:.10e}", expected_response_time(n, c)),
                    ])?;
                }
                fits.push(json!({
                    "system": label,
                    "linear_fit_r_squared": linear_fit_value(&r.values, c).ok().map(|f| f.r_squared),
                }));
            }
            w.flush()?;
            out.json("summary.json", &json!({ "value_fits": fits }))
        }
        Preset::Fig2 => {
            let mut w = csv::Writer::from_writer(out.csv("fig2.csv")?);
            w.write_record([
                "system",
                "is_threshold_type",
                "equal_rate_violations",
                "speed_order_violations",
                "first_violations",
            ])?;
            for (label, c, r) in &solved {
                let report = extract_thresholds(&r.policy, c);
                report.write_csv(out.csv(&format!("thresholds_{label}.csv"))?)?;
                w.write_record([
                    label.to_string(),
                    report.is_threshold_type.to_string(),
                    report.equal_rate_violations(c).len().to_string(),
                    report.speed_order_violations().len().to_string(),
                    first_violations(&report, c.num_servers()),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
