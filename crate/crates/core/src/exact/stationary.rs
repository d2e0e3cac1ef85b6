//! Exact evaluation of a fixed policy on the tabular chain: transition
//! matrix, stationary distribution, average cost, differential values and
//! discounted values. All linear systems go through the block-tridiagonal
//! solver in [`crate::linalg`].

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{LevelSystem, SparseRows};
use crate::mdp::{post_action, State, StateSpace};
use crate::policy::RoutingPolicy;

/// One-epoch transition matrix `P_π` of the chain induced by `policy`.
pub fn policy_matrix(policy: &dyn RoutingPolicy, config: &SystemConfig) -> Result<SparseRows> {
    let space = StateSpace::new(config);
    let k = config.num_servers();
    let cap = config.buffer_capacity();
    let (arrival, departures) = config.event_probs();
    let mut rows = Vec::with_capacity(space.len());
    for s in space.iter() {
        let mut row = Vec::with_capacity(2 * (k + 1));
        for (a, pa) in policy.action_dist(&s, config).entries() {
            let post = post_action(&s, *a, config)?;
            let up = State::new((post.queue_len + 1).min(cap), post.busy);
            row.push((space.index_of(&up), pa * arrival));
            for (j, pj) in departures.iter().enumerate() {
                let next = State::new(post.queue_len, post.busy & !(1 << j));
                row.push((space.index_of(&next), pa * pj));
            }
        }
        rows.push(row);
    }
    Ok(SparseRows::from_rows(rows, space.len()))
}

fn level_system(config: &SystemConfig) -> LevelSystem {
    let space = StateSpace::new(config);
    LevelSystem::new(space.num_levels(), space.level_size())
}

/// Stationary distribution of a transition matrix on the tabular space.
///
/// Solves `ν(I − P) = 0` with the balance equation of the empty state
/// replaced by `ν(empty) = 1`, then normalizes. States that cannot be
/// reached from the empty state come out as exactly zero.
pub fn stationary_from_matrix(p: &SparseRows, config: &SystemConfig) -> Result<Vec<f64>> {
    let mut sys = level_system(config);
    let n = sys.len();
    for i in 0..n {
        sys.add(i, i, 1.0);
        for (j, v) in p.row(i) {
            // Transposed: equation j collects inflow from i.
            sys.add(j, i, -v);
        }
    }
    sys.clear_row(0);
    sys.add(0, 0, 1.0);
    let mut rhs = vec![0.0; n];
    rhs[0] = 1.0;
    let mut nu = sys.solve(&rhs)?;

    let total: f64 = nu.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::SingularSystem("stationary mass is not positive".into()));
    }
    for x in nu.iter_mut() {
        *x /= total;
        if *x < -1e-10 {
            return Err(Error::SingularSystem(format!(
                "negative stationary probability {x}; is the empty state recurrent?"
            )));
        }
        *x = x.max(0.0);
    }
    Ok(nu)
}

/// Stationary distribution `ν_π` of the chain induced by `policy`.
pub fn stationary_distribution(policy: &dyn RoutingPolicy, config: &SystemConfig) -> Result<Vec<f64>> {
    stationary_from_matrix(&policy_matrix(policy, config)?, config)
}

/// `‖νP − ν‖₁`.
pub fn stationary_residual(nu: &[f64], p: &SparseRows) -> f64 {
    p.left_mul(nu).iter().zip(nu).map(|(a, b)| (a - b).abs()).sum()
}

pub fn cost_vector(config: &SystemConfig) -> Vec<f64> {
    StateSpace::new(config).iter().map(|s| s.cost() as f64).collect()
}

/// Long-run average number of jobs `Σ ν(s) c(s)`.
pub fn exact_average_cost(policy: &dyn RoutingPolicy, config: &SystemConfig) -> Result<f64> {
    let nu = stationary_distribution(policy, config)?;
    Ok(nu.iter().zip(cost_vector(config)).map(|(p, c)| p * c).sum())
}

/// Little's law with the raw arrival rate: `T_r = n / λ`.
pub fn expected_response_time(avg_jobs: f64, config: &SystemConfig) -> f64 {
    avg_jobs / config.arrival_rate()
}

/// Solution of the Poisson equation for a fixed policy.
#[derive(Debug, Clone)]
pub struct DifferentialValues {
    pub average_cost: f64,
    /// `h` with `h(empty) = 0` and `h = c − g + P h`.
    pub values: Vec<f64>,
}

/// Average cost and differential value function of `policy` from one
/// stationary solve and one Poisson solve.
pub fn differential_values(policy: &dyn RoutingPolicy, config: &SystemConfig) -> Result<DifferentialValues> {
    let p = policy_matrix(policy, config)?;
    let nu = stationary_from_matrix(&p, config)?;
    let cost = cost_vector(config);
    let g: f64 = nu.iter().zip(&cost).map(|(a, b)| a * b).sum();

    let mut sys = level_system(config);
    let n = sys.len();
    for i in 0..n {
        sys.add(i, i, 1.0);
        for (j, v) in p.row(i) {
            sys.add(i, j, -v);
        }
    }
    sys.clear_row(0);
    sys.add(0, 0, 1.0);
    let mut rhs: Vec<f64> = cost.iter().map(|c| c - g).collect();
    rhs[0] = 0.0;
    Ok(DifferentialValues {
        average_cost: g,
        values: sys.solve(&rhs)?,
    })
}

/// `V = (I − γP)⁻¹ c`.
pub fn discounted_values(p: &SparseRows, cost: &[f64], gamma: f64, config: &SystemConfig) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let mut sys = level_system(config);
    for i in 0..sys.len() {
        sys.add(i, i, 1.0);
        for (j, v) in p.row(i) {
            sys.add(i, j, -gamma * v);
        }
    }
    sys.solve(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rvi::{relative_value_iteration, RviOptions};
    use crate::policy::{SoftThresholdParams, SoftThresholdPolicy, ThresholdPolicy};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn fas_small() -> SystemConfig {
        SystemConfig::new(1.0, vec![2.0], 1).unwrap()
    }

    #[test]
    fn four_state_chain_by_hand() {
        // Balance equations: ν(0,1) = 0, ν(1,0) = 2ν(1,1), ν(0,0) = 4ν(1,1).
        let cfg = fas_small();
        let nu = stationary_distribution(&ThresholdPolicy::fas(&cfg), &cfg).unwrap();
        let want = [4.0 / 7.0, 0.0, 2.0 / 7.0, 1.0 / 7.0];
        for (a, b) in nu.iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        let g = exact_average_cost(&ThresholdPolicy::fas(&cfg), &cfg).unwrap();
        assert_relative_eq!(g, 4.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn matrix_rows_are_stochastic() {
        let cfg = SystemConfig::with_load(0.5, vec![10.0, 4.0, 1.0], 7).unwrap();
        let pol = SoftThresholdPolicy(SoftThresholdParams::new(vec![1.5, 4.0], 2.0).unwrap());
        let p = policy_matrix(&pol, &cfg).unwrap();
        for i in 0..p.nrows() {
            assert_relative_eq!(p.row_sum(i), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn stationary_matches_dense_solve() {
        let cfg = SystemConfig::with_load(0.6, vec![5.0, 2.0], 6).unwrap();
        let pol = SoftThresholdPolicy(SoftThresholdParams::new(vec![2.3], 1.0).unwrap());
        let p = policy_matrix(&pol, &cfg).unwrap();
        let nu = stationary_from_matrix(&p, &cfg).unwrap();
        assert!(stationary_residual(&nu, &p) < 1e-12);

        // Dense oracle: replace the last balance equation by Σν = 1.
        let n = p.nrows();
        let mut a = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for (j, v) in p.row(i) {
                a[(j, i)] -= v;
            }
        }
        a.row_mut(n - 1).fill(1.0);
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let dense = a.lu().solve(&b).unwrap();
        for i in 0..n {
            assert_relative_eq!(nu[i], dense[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn poisson_solution_satisfies_equation() {
        let cfg = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0], 12).unwrap();
        let pol = ThresholdPolicy::rsrt(&cfg);
        let dv = differential_values(&pol, &cfg).unwrap();
        let p = policy_matrix(&pol, &cfg).unwrap();
        let ph = p.mul_vec(&dv.values);
        for (i, c) in cost_vector(&cfg).iter().enumerate() {
            assert_relative_eq!(dv.values[i], c - dv.average_cost + ph[i], epsilon = 1e-9);
        }
        assert_eq!(dv.values[0], 0.0);
    }

    #[test]
    fn rvi_values_match_poisson_of_greedy_policy() {
        let cfg = SystemConfig::with_load(0.5, vec![6.0, 2.0], 15).unwrap();
        let res = relative_value_iteration(&cfg, &RviOptions::default()).unwrap();
        let dv = differential_values(&res.policy, &cfg).unwrap();
        assert_relative_eq!(dv.average_cost, res.average_cost, epsilon = 1e-7);
        for (a, b) in dv.values.iter().zip(&res.values.values) {
            assert_relative_eq!(*a, *b, epsilon = 1e-5);
        }
    }

    #[test]
    fn discounted_constant_cost_is_geometric() {
        let cfg = SystemConfig::with_load(0.4, vec![3.0, 1.0], 5).unwrap();
        let p = policy_matrix(&ThresholdPolicy::fas(&cfg), &cfg).unwrap();
        let ones = vec![1.0; p.nrows()];
        let v = discounted_values(&p, &ones, 0.9, &cfg).unwrap();
        for x in v {
            assert_relative_eq!(x, 10.0, epsilon = 1e-10);
        }
        assert!(discounted_values(&p, &ones, 1.0, &cfg).is_err());
    }

    #[test]
    fn response_time_identities() {
        let cfg = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0, 1.0], 100).unwrap();
        assert_relative_eq!(expected_response_time(2.87, &cfg), 2.87 / 52.4);
        assert_eq!(expected_response_time(0.0, &cfg), 0.0);
        assert_relative_eq!(expected_response_time(52.4 * 0.3, &cfg), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn light_traffic_cost_vanishes() {
        let cfg = SystemConfig::new(1e-6, vec![1.0, 0.5], 10).unwrap();
        let g = exact_average_cost(&ThresholdPolicy::fas(&cfg), &cfg).unwrap();
        assert!(g < 1e-5);
    }
}
