//! Numerical checks of the two-server structure under discounted cost: exact
//! policy evaluation, the `h_l` sequence, and the shape of the weighted
//! policy-improvement objective over candidate thresholds.
//!
//! State triples `(l, b_1, b_2)` below follow the usual notation: `(l,1,0)`
//! has the fast server busy and the slow one idle.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::exact::rvi::{Expectation, TabularPolicy};
use crate::exact::stationary::{cost_vector, discounted_values, policy_matrix, stationary_distribution};
use crate::exact::{extract_thresholds, span};
use crate::mdp::{post_action, valid_actions, Action, State, StateSpace};
use crate::policy::{soft_threshold_dist, SoftThresholdParams, SoftThresholdPolicy};

const FAST_BUSY: u32 = 0b01;
const SLOW_BUSY: u32 = 0b10;
const BOTH_BUSY: u32 = 0b11;

fn require_two(config: &SystemConfig) -> Result<()> {
    if config.num_servers() != 2 {
        return Err(Error::InvalidArgument(format!(
            "two-server verification needs k = 2, got {}",
            config.num_servers()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedEval {
    pub gamma: f64,
    /// `V^θ_γ` per state index.
    pub values: Vec<f64>,
    /// `Q(s, a) = c(s) + γ Σ P(s′|s,a) V(s′)` for every feasible action.
    pub q_values: Vec<Vec<(Action, f64)>>,
}

impl DiscountedEval {
    pub fn q(&self, index: usize, action: Action) -> Option<f64> {
        self.q_values[index].iter().find(|(a, _)| *a == action).map(|(_, q)| *q)
    }
}

/// Exact discounted evaluation of a soft-threshold actor: solves
/// `(I − γP_θ)V = c`.
pub fn discounted_policy_eval(actor: &SoftThresholdParams, config: &SystemConfig, gamma: f64) -> Result<DiscountedEval> {
    require_two(config)?;
    let p = policy_matrix(&SoftThresholdPolicy(actor.clone()), config)?;
    let cost = cost_vector(config);
    let values = discounted_values(&p, &cost, gamma, config)?;
    let exp = Expectation::new(config);
    let q_values = StateSpace::new(config)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            valid_actions(&s, config)
                .into_iter()
                .map(|a| {
                    let post = post_action(&s, a, config).expect("valid action");
                    (a, cost[i] + gamma * exp.after(post, &values))
                })
                .collect()
        })
        .collect();
    Ok(DiscountedEval { gamma, values, q_values })
}

/// `h_0 = V(0,1,0) − V(0,0,1)` and `h_l = V(l,1,0) − V(l−1,1,1)` for
/// `l = 1..=l_M`.
pub fn h_from_values(values: &[f64], config: &SystemConfig) -> Vec<f64> {
    let space = StateSpace::new(config);
    let v = |l: usize, busy: u32| values[space.index_of(&State::new(l, busy))];
    (0..=config.buffer_capacity())
        .map(|l| {
            if l == 0 {
                v(0, FAST_BUSY) - v(0, SLOW_BUSY)
            } else {
                v(l, FAST_BUSY) - v(l - 1, BOTH_BUSY)
            }
        })
        .collect()
}

pub fn h_sequence(actor: &SoftThresholdParams, config: &SystemConfig, gamma: f64) -> Result<Vec<f64>> {
    Ok(h_from_values(&discounted_policy_eval(actor, config, gamma)?.values, config))
}

/// The same differences rebuilt from one Bellman expansion of each side.
/// Both states in each pair have the same cost, and `(l−1,1,1)` must wait,
/// which leaves
///
/// `h_l = γ(1 − p_l)[λ̃(V(l⁺,1,0) − V(l,1,1)) + μ̃₁(V(l,0,0) − V(l−1,0,1))
///        + μ̃₂(V(l,1,0) − V(l−1,1,0))]`
///
/// with `l⁺ = min(l+1, l_M)`, normalized rates `λ̃ + μ̃₁ + μ̃₂ = 1` and
/// `p_l` the routing probability in `(l,1,0)`. For `l = 0` both states wait
/// and the bracket compares the two post-action states directly.
pub fn h_from_expansion(values: &[f64], actor: &SoftThresholdParams, config: &SystemConfig, gamma: f64) -> Vec<f64> {
    let space = StateSpace::new(config);
    let cap = config.buffer_capacity();
    let (lam, mu) = config.event_probs();
    let v = |l: usize, busy: u32| values[space.index_of(&State::new(l, busy))];
    (0..=cap)
        .map(|l| {
            if l == 0 {
                gamma * (lam * (v(1, FAST_BUSY) - v(1, SLOW_BUSY)) + mu[0] * (v(0, 0) - v(0, SLOW_BUSY)) + mu[1] * (v(0, FAST_BUSY) - v(0, 0)))
            } else {
                let wait = soft_threshold_dist(actor, &State::new(l, FAST_BUSY), config).prob(Action::Wait);
                let up = (l + 1).min(cap);
                gamma
                    * wait
                    * (lam * (v(up, FAST_BUSY) - v(l, BOTH_BUSY))
                        + mu[0] * (v(l, 0) - v(l - 1, SLOW_BUSY))
                        + mu[1] * (v(l, FAST_BUSY) - v(l - 1, FAST_BUSY)))
            }
        })
        .collect()
}

/// Sign structure of an `h` sequence. Entries within `tol` of zero count as
/// non-negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignStructure {
    /// Last index of the negative prefix, if the sequence starts negative.
    pub l_star: Option<usize>,
    /// Negative prefix followed by a non-empty non-negative suffix and no
    /// other sign changes.
    pub single_sign_change: bool,
    /// `h_0 < h_1 < … < h_{l*}`.
    pub increasing_prefix: bool,
}

pub fn sign_structure(h: &[f64], tol: f64) -> SignStructure {
    let neg: Vec<bool> = h.iter().map(|x| *x < -tol).collect();
    let prefix = neg.iter().take_while(|n| **n).count();
    let l_star = prefix.checked_sub(1);
    let single_sign_change = prefix > 0 && prefix < h.len() && neg[prefix..].iter().all(|n| !n);
    let increasing_prefix = h[..prefix].windows(2).all(|w| w[0] < w[1]);
    SignStructure {
        l_star,
        single_sign_change,
        increasing_prefix,
    }
}

/// Default zero tolerance for `h`: `1e-9 · max(1, max|V|)`.
pub fn h_tolerance(values: &[f64]) -> f64 {
    1e-9 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Precomputed `ν_θ` and `Q^θ_γ` of a base actor; evaluates the weighted
/// policy-improvement objective `Σ_s ν(s) Σ_a π_θ̄(a|s) Q(s,a)` for any
/// candidate.
#[derive(Debug, Clone)]
pub struct WeightedPiObjective {
    pub stationary: Vec<f64>,
    pub eval: DiscountedEval,
    config: SystemConfig,
}

impl WeightedPiObjective {
    pub fn new(base: &SoftThresholdParams, config: &SystemConfig, gamma: f64) -> Result<Self> {
        require_two(config)?;
        Ok(WeightedPiObjective {
            stationary: stationary_distribution(&SoftThresholdPolicy(base.clone()), config)?,
            eval: discounted_policy_eval(base, config, gamma)?,
            config: config.clone(),
        })
    }

    pub fn value(&self, candidate: &SoftThresholdParams) -> f64 {
        StateSpace::new(&self.config)
            .iter()
            .enumerate()
            .filter(|(i, _)| self.stationary[*i] > 0.0)
            .map(|(i, s)| {
                let inner: f64 = soft_threshold_dist(candidate, &s, &self.config)
                    .entries()
                    .iter()
                    .map(|(a, p)| p * self.eval.q(i, *a).expect("soft actions are feasible"))
                    .sum();
                self.stationary[i] * inner
            })
            .sum()
    }

    pub fn at(&self, theta: f64, sigma: f64) -> Result<f64> {
        Ok(self.value(&SoftThresholdParams::new(vec![theta], sigma)?))
    }
}

pub fn weighted_pi_objective(
    candidate_theta: f64,
    base: &SoftThresholdParams,
    config: &SystemConfig,
    gamma: f64,
    sigma: f64,
) -> Result<f64> {
    WeightedPiObjective::new(base, config, gamma)?.at(candidate_theta, sigma)
}

/// Shape test on a sequence: weakly decreasing, then weakly increasing, with
/// steps within `rel_tol · max|v|` treated as flat. Returns the verdict and
/// the midpoint of the minimal plateau on the grid.
pub fn unimodal_shape(values: &[f64], grid: &[f64], rel_tol: f64) -> (bool, f64) {
    assert_eq!(values.len(), grid.len());
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut rising = false;
    let mut ok = true;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d > tol {
            rising = true;
        } else if d < -tol && rising {
            ok = false;
        }
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = values.iter().position(|v| *v <= min + tol).unwrap_or(0);
    let hi = values.iter().rposition(|v| *v <= min + tol).unwrap_or(0);
    (ok, 0.5 * (grid[lo] + grid[hi]))
}

/// Relative flatness tolerance used by [`check_unimodality`].
pub const UNIMODAL_REL_TOL: f64 = 1e-10;

/// Grid scan of the weighted PI objective (candidates share the base
/// actor's sharpness).
pub fn check_unimodality(base: &SoftThresholdParams, config: &SystemConfig, gamma: f64, grid: &[f64]) -> Result<(bool, f64)> {
    if grid.len() < 3 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid must be increasing with at least 3 points".into()));
    }
    let obj = WeightedPiObjective::new(base, config, gamma)?;
    let values = grid.iter().map(|t| obj.at(*t, base.sharpness)).collect::<Result<Vec<_>>>()?;
    Ok(unimodal_shape(&values, grid, UNIMODAL_REL_TOL))
}

/// `[0, 3h]` in steps of `0.25`, with `h` at least 1.
pub fn default_grid(threshold: f64) -> Vec<f64> {
    let top = (3.0 * threshold).max(3.0);
    let n = (top / 0.25).round() as usize;
    (0..=n).map(|i| i as f64 * 0.25).collect()
}

/// Discounted value iteration from `V = 0` until `sp(V_{t+1} − V_t)` drops
/// to `tolerance`; returns the values and the greedy policy (ties to
/// `Wait`, then the lowest server index).
pub fn discounted_value_iteration(config: &SystemConfig, gamma: f64, tolerance: f64) -> Result<(Vec<f64>, TabularPolicy)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let space = StateSpace::new(config);
    let states: Vec<State> = space.iter().collect();
    let cost = cost_vector(config);
    let exp = Expectation::new(config);
    let mut v = vec![0.0; space.len()];
    let mut next = vec![0.0; space.len()];
    let cap = 10_000_000;
    for _ in 0..cap {
        for (i, s) in states.iter().enumerate() {
            next[i] = cost[i] + gamma * exp.best(*s, &v).0;
        }
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        std::mem::swap(&mut v, &mut next);
        if span(&diff) <= tolerance {
            let actions = states.iter().map(|s| exp.best(*s, &v).1).collect();
            return Ok((v, TabularPolicy { actions }));
        }
    }
    Err(Error::NotConverged {
        iterations: cap,
        span: f64::NAN,
    })
}

/// Hard threshold of the discounted-optimal policy in pattern `(·,1,0)`.
pub fn discounted_optimal_threshold(config: &SystemConfig, gamma: f64) -> Result<Option<usize>> {
    require_two(config)?;
    let (_, policy) = discounted_value_iteration(config, gamma, 1e-10)?;
    let report = extract_thresholds(&policy, config);
    Ok(report.get(FAST_BUSY).and_then(|p| p.threshold))
}

/// Distance from `x` to the interval `[h, h + 1]` of soft thresholds whose
/// hard rounding matches threshold `h`.
pub fn distance_to_threshold_cell(x: f64, h: usize) -> f64 {
    let h = h as f64;
    if x < h {
        h - x
    } else if x > h + 1.0 {
        x - h - 1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub load: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub theta_base: f64,
    pub l_star: Option<usize>,
    pub single_sign_change: bool,
    pub increasing_prefix: bool,
    pub expansion_error: f64,
    pub unimodal: bool,
    pub argmin: f64,
    pub discounted_threshold: Option<usize>,
}

/// Runs every check for one base actor.
pub fn verify_point(
    config: &SystemConfig,
    gamma: f64,
    sigma: f64,
    theta_base: f64,
    grid: &[f64],
    discounted_threshold: Option<usize>,
) -> Result<VerifyRow> {
    let base = SoftThresholdParams::new(vec![theta_base], sigma)?;
    let eval = discounted_policy_eval(&base, config, gamma)?;
    let h = h_from_values(&eval.values, config);
    let h2 = h_from_expansion(&eval.values, &base, config, gamma);
    let expansion_error = h.iter().zip(&h2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let signs = sign_structure(&h, h_tolerance(&eval.values));
    let (unimodal, argmin) = check_unimodality(&base, config, gamma, grid)?;
    Ok(VerifyRow {
        load: config.load(),
        gamma,
        sigma,
        theta_base,
        l_star: signs.l_star,
        single_sign_change: signs.single_sign_change,
        increasing_prefix: signs.increasing_prefix,
        expansion_error,
        unimodal,
        argmin,
        discounted_threshold,
    })
}

/// CSV rows `(gamma, sigma, theta_base, l_star, single_sign_change,
/// unimodal, argmin)`.
pub fn write_verify_csv<W: std::io::Write>(rows: &[VerifyRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gamma", "sigma", "theta_base", "l_star", "single_sign_change", "unimodal", "argmin"])?;
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.sigma.to_string(),
            r.theta_base.to_string(),
            r.l_star.map_or("none".into(), |l| l.to_string()),
            r.single_sign_change.to_string(),
            r.unimodal.to_string(),
            format!("{:.4}", r.argmin),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> SystemConfig {
        SystemConfig::with_load(0.4, vec![100.0, 25.0], 40).unwrap()
    }

    #[test]
    fn rejects_other_server_counts() {
        let c = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0], 10).unwrap();
        let a = SoftThresholdParams::new(vec![1.0, 2.0], 5.0).unwrap();
        assert!(discounted_policy_eval(&a, &c, 0.9).is_err());
    }

    #[test]
    fn bellman_identity_holds() {
        let c = cfg();
        let a = SoftThresholdParams::new(vec![6.0], 3.0).unwrap();
        let e = discounted_policy_eval(&a, &c, 0.99).unwrap();
        for (i, s) in StateSpace::new(&c).iter().enumerate() {
            let v: f64 = soft_threshold_dist(&a, &s, &c)
                .entries()
                .iter()
                .map(|(act, p)| p * e.q(i, *act).unwrap())
                .sum();
            assert!((v - e.values[i]).abs() < 1e-9, "state {s}");
        }
    }

    #[test]
    fn small_discount_gives_immediate_cost() {
        let c = cfg();
        let a = SoftThresholdParams::new(vec![6.0], 3.0).unwrap();
        let e = discounted_policy_eval(&a, &c, 1e-9).unwrap();
        for (i, s) in StateSpace::new(&c).iter().enumerate() {
            assert_relative_eq!(e.values[i], s.cost() as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn symmetric_servers_have_zero_h0() {
        // The exchange argument also needs a symmetric policy: server 2 must
        // be used exactly like server 1, i.e. the FAS limit.
        let c = SystemConfig::with_load(0.4, vec![10.0, 10.0], 20).unwrap();
        let a = SoftThresholdParams::new(vec![0.0], 1e3).unwrap();
        let h = h_sequence(&a, &c, 0.99).unwrap();
        assert!(h[0].abs() < 1e-9);
    }

    #[test]
    fn expansion_matches_differences() {
        let c = cfg();
        for (theta, sigma) in [(3.0, 10.0), (8.0, 1.0), (0.5, 50.0)] {
            let a = SoftThresholdParams::new(vec![theta], sigma).unwrap();
            let e = discounted_policy_eval(&a, &c, 0.95).unwrap();
            let h = h_from_values(&e.values, &c);
            let h2 = h_from_expansion(&e.values, &a, &c, 0.95);
            for (x, y) in h.iter().zip(&h2) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_detector_on_synthetic_sequences() {
        let grid: Vec<f64> = (0..9).map(f64::from).collect();
        let convex: Vec<f64> = grid.iter().map(|x| (x - 3.0) * (x - 3.0)).collect();
        assert_eq!(unimodal_shape(&convex, &grid, 1e-12), (true, 3.0));
        let bimodal = vec![4.0, 1.0, 3.0, 5.0, 2.0, 0.5, 2.0, 3.0, 4.0];
        assert!(!unimodal_shape(&bimodal, &grid, 1e-12).0);
        let plateau = vec![5.0, 2.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 4.0];
        assert_eq!(unimodal_shape(&plateau, &grid, 1e-12), (true, 3.0));
    }

    #[test]
    fn self_evaluation_of_objective() {
        let c = cfg();
        let a = SoftThresholdParams::new(vec![5.0], 4.0).unwrap();
        let obj = WeightedPiObjective::new(&a, &c, 0.9).unwrap();
        let direct: f64 = obj.stationary.iter().zip(&obj.eval.values).map(|(n, v)| n * v).sum();
        assert_relative_eq!(obj.value(&a), direct, epsilon = 1e-9 * direct.abs());
    }

    #[test]
    fn sharp_candidate_approaches_hard_threshold() {
        let c = cfg();
        let a = SoftThresholdParams::new(vec![5.0], 4.0).unwrap();
        let obj = WeightedPiObjective::new(&a, &c, 0.9).unwrap();
        let space = StateSpace::new(&c);
        let hard: f64 = space
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let act = crate::policy::hard_threshold_action(&[0.0, 6.5], &s, &c);
                obj.stationary[i] * obj.eval.q(i, act).unwrap()
            })
            .sum();
        assert_relative_eq!(obj.at(6.5, 1e4).unwrap(), hard, epsilon = 1e-9 * hard.abs());
    }

    #[test]
    fn cell_distance() {
        assert_eq!(distance_to_threshold_cell(3.5, 3), 0.0);
        assert_eq!(distance_to_threshold_cell(2.75, 3), 0.25);
        assert_eq!(distance_to_threshold_cell(4.5, 3), 0.5);
        assert_eq!(default_grid(2.0).len(), 25);
    }
}
