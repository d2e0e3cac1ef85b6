//! Monte Carlo evaluation of routing policies on the uniformized chain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::{sample_next, State, StateSpace};
use crate::policy::RoutingPolicy;

/// Number of batches for the batch-means interval.
pub const NUM_BATCHES: usize = 30;
/// `t_{0.975}` with 29 degrees of freedom.
pub const T_QUANTILE_29: f64 = 2.045229642132703;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// Epochs that entered the average (after burn-in).
    pub epochs: u64,
    pub avg_jobs: f64,
    /// `avg_jobs / λ`.
    pub response_time: f64,
    /// 95% batch-means half-width of `avg_jobs`; infinite with fewer than
    /// one counted epoch per batch.
    pub ci_halfwidth: f64,
    pub seed: u64,
}

impl TrajectoryStats {
    /// Half-width on the response-time scale.
    pub fn response_time_halfwidth(&self, config: &SystemConfig) -> f64 {
        self.ci_halfwidth / config.arrival_rate()
    }
}

/// Default burn-in: 10% of the horizon.
pub fn default_burn_in(horizon: u64) -> u64 {
    horizon / 10
}

fn run(
    policy: &dyn RoutingPolicy,
    config: &SystemConfig,
    horizon: u64,
    burn_in: u64,
    seed: u64,
    mut visit: impl FnMut(&State),
) -> Result<TrajectoryStats> {
    if horizon <= burn_in {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must exceed burn-in {burn_in}"
        )));
    }
    let counted = horizon - burn_in;
    let batch = counted / NUM_BATCHES as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = State::empty();
    let mut total = 0.0;
    let mut batch_sums = [0.0f64; NUM_BATCHES];

    for t in 0..horizon {
        if t >= burn_in {
            let c = state.cost() as f64;
            let i = t - burn_in;
            total += c;
            if batch > 0 && i < batch * NUM_BATCHES as u64 {
                batch_sums[(i / batch) as usize] += c;
            }
            visit(&state);
        }
        let action = policy.sample_action(&state, config, &mut rng);
        state = sample_next(&state, action, config, &mut rng)?;
    }

    let avg_jobs = total / counted as f64;
    let ci_halfwidth = if batch == 0 {
        f64::INFINITY
    } else {
        let means: Vec<f64> = batch_sums.iter().map(|s| s / batch as f64).collect();
        let m = means.iter().sum::<f64>() / NUM_BATCHES as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (NUM_BATCHES - 1) as f64;
        T_QUANTILE_29 * (var / NUM_BATCHES as f64).sqrt()
    };
    Ok(TrajectoryStats {
        epochs: counted,
        avg_jobs,
        response_time: avg_jobs / config.arrival_rate(),
        ci_halfwidth,
        seed,
    })
}

/// Simulates `horizon` epochs from the empty state and averages the cost of
/// the states after the first `burn_in`.
pub fn simulate(
    policy: &dyn RoutingPolicy,
    config: &SystemConfig,
    horizon: u64,
    burn_in: u64,
    seed: u64,
) -> Result<TrajectoryStats> {
    run(policy, config, horizon, burn_in, seed, |_| {})
}

/// As [`simulate`], also returning visit counts per tabular state index.
pub fn simulate_occupancy(
    policy: &dyn RoutingPolicy,
    config: &SystemConfig,
    horizon: u64,
    burn_in: u64,
    seed: u64,
) -> Result<(TrajectoryStats, Vec<u64>)> {
    let space = StateSpace::new(config);
    let mut counts = vec![0u64; space.len()];
    let stats = run(policy, config, horizon, burn_in, seed, |s| counts[space.index_of(s)] += 1)?;
    Ok((stats, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy_name: String,
    pub seed_count: usize,
    pub response_time_mean: f64,
    pub response_time_se: f64,
    pub improvement_vs_reference_pct: f64,
    pub runs: Vec<TrajectoryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Mean and standard error of the response time over replications. A single
/// replication falls back to its batch-means standard error.
pub fn summarize_runs(runs: &[TrajectoryStats], config: &SystemConfig) -> (f64, f64) {
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.response_time).sum::<f64>() / n;
    let se = if runs.len() == 1 {
        runs[0].response_time_halfwidth(config) / T_QUANTILE_29
    } else {
        let var = runs.iter().map(|r| (r.response_time - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    (mean, se)
}

/// Builds the comparison table from finished replications, one entry per
/// policy in input order. `reference` names the baseline for the relative
/// improvement `100 · (T_ref − T) / T_ref`.
pub fn comparison_table(
    results: Vec<(String, Vec<TrajectoryStats>)>,
    reference: &str,
    config: &SystemConfig,
) -> Result<ComparisonTable> {
    if results.is_empty() || results.iter().any(|(_, r)| r.is_empty()) {
        return Err(Error::InvalidArgument("comparison needs policies and seeds".into()));
    }
    let ref_mean = results
        .iter()
        .find(|(n, _)| n == reference)
        .map(|(_, r)| summarize_runs(r, config).0)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown reference policy {reference}")))?;
    let rows = results
        .into_iter()
        .map(|(policy_name, runs)| {
            let (mean, se) = summarize_runs(&runs, config);
            ComparisonRow {
                policy_name,
                seed_count: runs.len(),
                response_time_mean: mean,
                response_time_se: se,
                improvement_vs_reference_pct: 100.0 * (ref_mean - mean) / ref_mean,
                runs,
            }
        })
        .collect();
    Ok(ComparisonTable {
        reference: reference.to_string(),
        rows,
    })
}

/// Simulates every policy under every seed, sequentially.
pub fn compare(
    policies: &[(String, &dyn RoutingPolicy)],
    config: &SystemConfig,
    horizon: u64,
    burn_in: u64,
    seeds: &[u64],
    reference: &str,
) -> Result<ComparisonTable> {
    if policies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("comparison needs policies and seeds".into()));
    }
    let mut results = Vec::with_capacity(policies.len());
    for (name, policy) in policies {
        let runs = seeds
            .iter()
            .map(|s| simulate(*policy, config, horizon, burn_in, *s))
            .collect::<Result<Vec<_>>>()?;
        results.push((name.clone(), runs));
    }
    comparison_table(results, reference, config)
}

impl ComparisonTable {
    /// CSV rows `(policy_name, seed_count, response_time_mean,
    /// response_time_se, improvement_vs_reference_pct)`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "policy_name",
            "seed_count",
            "response_time_mean",
            "response_time_se",
            "improvement_vs_reference_pct",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.policy_name.clone(),
                r.seed_count.to_string(),
                format!("{:.10e}", r.response_time_mean),
                format!("{:.10e}", r.response_time_se),
                format!("{:.6}", r.improvement_vs_reference_pct),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy_name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ThresholdPolicy;

    fn cfg() -> SystemConfig {
        SystemConfig::with_load(0.5, vec![4.0, 1.0], 10).unwrap()
    }

    #[test]
    fn single_counted_epoch() {
        let c = cfg();
        let s = simulate(&ThresholdPolicy::fas(&c), &c, 1, 0, 3).unwrap();
        assert_eq!(s.epochs, 1);
        assert_eq!(s.avg_jobs, 0.0);
        assert!(s.ci_halfwidth.is_infinite());
        assert!(simulate(&ThresholdPolicy::fas(&c), &c, 5, 5, 3).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cfg();
        let p = ThresholdPolicy::rsrt(&c);
        let a = simulate(&p, &c, 20_000, 2_000, 11).unwrap();
        let b = simulate(&p, &c, 20_000, 2_000, 11).unwrap();
        assert_eq!(a, b);
        let d = simulate(&p, &c, 20_000, 2_000, 12).unwrap();
        assert_ne!(a.avg_jobs, d.avg_jobs);
        assert!(a.ci_halfwidth > 0.0 && a.ci_halfwidth.is_finite());
    }

    #[test]
    fn duplicate_policy_same_stats() {
        let c = cfg();
        let p = ThresholdPolicy::fas(&c);
        let t = compare(
            &[("x".into(), &p), ("y".into(), &p)],
            &c,
            10_000,
            1_000,
            &[1, 2, 3],
            "x",
        )
        .unwrap();
        assert_eq!(t.rows[0].runs, t.rows[1].runs);
        assert_eq!(t.rows[1].improvement_vs_reference_pct, 0.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "policy_name,seed_count,response_time_mean,response_time_se,improvement_vs_reference_pct\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn occupancy_counts_sum_to_epochs() {
        let c = cfg();
        let (s, counts) = simulate_occupancy(&ThresholdPolicy::fas(&c), &c, 5_000, 500, 1).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), s.epochs);
    }
}
