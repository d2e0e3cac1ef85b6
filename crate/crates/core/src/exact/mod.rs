//! Tabular exact methods on the full state space.

pub mod fit;
pub mod rvi;
pub mod stationary;
pub mod thresholds;

pub use fit::{feature_matrix_rank, linear_fit_value, max_feature_norm, LinearFit};
pub use rvi::{
    bellman_backup, greedy_policy, relative_value_iteration, span, RviOptions, RviResult, TabularPolicy,
    ValueTable,
};
pub use stationary::{
    cost_vector, differential_values, discounted_values, exact_average_cost, expected_response_time,
    policy_matrix, stationary_distribution, stationary_from_matrix, stationary_residual, DifferentialValues,
};
pub use thresholds::{extract_thresholds, PatternThreshold, ThresholdReport};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::mdp::StateSpace;

/// CSV rows `(state_index, queue_len, busy_bits, value, greedy_action)`.
pub fn write_value_csv<W: std::io::Write>(
    values: &ValueTable,
    policy: &TabularPolicy,
    config: &SystemConfig,
    writer: W,
) -> Result<()> {
    let k = config.num_servers();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["state_index", "queue_len", "busy_bits", "value", "greedy_action"])?;
    for (i, s) in StateSpace::new(config).iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.queue_len.to_string(),
            s.pattern(k),
            format!("{:.12}", values.values[i]),
            policy.actions[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
