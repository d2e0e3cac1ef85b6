//! Routing policies: the soft-threshold actor and its score function, hard
//! thresholds (FAS and RSRT are special cases) and the power-of-d view.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::{self, fastest_available, Action, State};

/// Probability of each action with positive mass. Absent actions have
/// probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist {
    entries: Vec<(Action, f64)>,
}

impl ActionDist {
    pub fn deterministic(action: Action) -> Self {
        ActionDist {
            entries: vec![(action, 1.0)],
        }
    }

    /// Builds a distribution from `(action, prob)` pairs, dropping zero
    /// entries and merging repeated actions.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Action, f64)>) -> Self {
        let mut entries: Vec<(Action, f64)> = Vec::new();
        for (a, p) in pairs {
            if p <= 0.0 {
                continue;
            }
            match entries.iter_mut().find(|(b, _)| *b == a) {
                Some((_, q)) => *q += p,
                None => entries.push((a, p)),
            }
        }
        ActionDist { entries }
    }

    pub fn entries(&self) -> &[(Action, f64)] {
        &self.entries
    }

    pub fn prob(&self, action: Action) -> f64 {
        self.entries
            .iter()
            .find(|(a, _)| *a == action)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    /// Inverse-CDF draw for a uniform `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> Action {
        let mut acc = 0.0;
        for (a, p) in &self.entries {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        self.entries.last().map_or(Action::Wait, |(a, _)| *a)
    }
}

/// A (possibly randomized) stationary routing rule.
///
/// `sample_action` consumes exactly one uniform variate for every policy in
/// this crate except [`PowerOfD`], which additionally draws its server
/// sample. This keeps simulation streams aligned across policies.
pub trait RoutingPolicy: Send + Sync {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist;

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        let u: f64 = rng.random();
        self.action_dist(state, config).pick(u)
    }
}

impl<P: RoutingPolicy + ?Sized> RoutingPolicy for &P {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        (**self).action_dist(state, config)
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        (**self).sample_action(state, config, rng)
    }
}

impl<P: RoutingPolicy + ?Sized> RoutingPolicy for Box<P> {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        (**self).action_dist(state, config)
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        (**self).sample_action(state, config, rng)
    }
}

/// Actor parameters: one threshold per server `2..=k` (server 1's threshold
/// is fixed at zero and not stored) and the sigmoid sharpness `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftThresholdParams {
    pub thresholds: Vec<f64>,
    pub sharpness: f64,
}

impl SoftThresholdParams {
    pub fn new(thresholds: Vec<f64>, sharpness: f64) -> Result<Self> {
        let params = SoftThresholdParams {
            thresholds,
            sharpness,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Threshold of server `f` (0-based); zero for the fastest server.
    pub fn threshold(&self, server: usize) -> f64 {
        if server == 0 {
            0.0
        } else {
            self.thresholds[server - 1]
        }
    }

    /// Full length-`k` threshold vector including the leading zero.
    pub fn full_thresholds(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.thresholds.iter().copied()).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Decision of the soft-threshold rule in one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SoftDecision {
    /// Only `Wait` is possible.
    Forced,
    /// The fastest server is idle; route there with certainty.
    RouteFastest,
    /// Route to `server` with probability `route_prob`, else wait.
    Mixed {
        server: usize,
        route_prob: f64,
        wait_prob: f64,
    },
}

pub(crate) fn soft_decision(params: &SoftThresholdParams, state: &State, config: &SystemConfig) -> SoftDecision {
    if state.queue_len == 0 {
        return SoftDecision::Forced;
    }
    match fastest_available(state, config) {
        None => SoftDecision::Forced,
        Some(0) => SoftDecision::RouteFastest,
        Some(f) => {
            let z = params.sharpness * (state.queue_len as f64 - params.threshold(f));
            SoftDecision::Mixed {
                server: f,
                route_prob: sigmoid(z),
                wait_prob: sigmoid(-z),
            }
        }
    }
}

/// Soft-threshold action distribution. Only `Wait` and `Route(f)` for the
/// fastest idle server `f` ever carry mass.
pub fn soft_threshold_dist(params: &SoftThresholdParams, state: &State, config: &SystemConfig) -> ActionDist {
    match soft_decision(params, state, config) {
        SoftDecision::Forced => ActionDist::deterministic(Action::Wait),
        SoftDecision::RouteFastest => ActionDist::deterministic(Action::Route(0)),
        SoftDecision::Mixed {
            server,
            route_prob,
            wait_prob,
        } => ActionDist::from_pairs([(Action::Route(server), route_prob), (Action::Wait, wait_prob)]),
    }
}

/// Score function `∇_θ log π_θ(a|s)`, a vector of length `k - 1`.
///
/// With `f ≥ 2` the only nonzero entry is `f`'s: `-σ(1-p)` for routing and
/// `+σp` for waiting.
pub fn grad_log_pi(
    params: &SoftThresholdParams,
    state: &State,
    action: Action,
    config: &SystemConfig,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.thresholds.len()];
    let zero_prob = || Error::ZeroProbabilityAction {
        state: *state,
        action,
    };
    match soft_decision(params, state, config) {
        SoftDecision::Forced if action == Action::Wait => {}
        SoftDecision::RouteFastest if action == Action::Route(0) => {}
        SoftDecision::Mixed {
            server,
            route_prob,
            wait_prob,
        } => {
            let sigma = params.sharpness;
            if action == Action::Route(server) && route_prob > 0.0 {
                grad[server - 1] = -sigma * wait_prob;
            } else if action == Action::Wait && wait_prob > 0.0 {
                grad[server - 1] = sigma * route_prob;
            } else {
                return Err(zero_prob());
            }
        }
        _ => return Err(zero_prob()),
    }
    Ok(grad)
}

/// Soft-threshold actor as a [`RoutingPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftThresholdPolicy(pub SoftThresholdParams);

impl RoutingPolicy for SoftThresholdPolicy {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        soft_threshold_dist(&self.0, state, config)
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        let u: f64 = rng.random();
        match soft_decision(&self.0, state, config) {
            SoftDecision::Forced => Action::Wait,
            SoftDecision::RouteFastest => Action::Route(0),
            SoftDecision::Mixed {
                server, route_prob, ..
            } => {
                if u < route_prob {
                    Action::Route(server)
                } else {
                    Action::Wait
                }
            }
        }
    }
}

/// Route to the fastest idle server whenever the queue is nonempty.
pub fn fas_action(state: &State, config: &SystemConfig) -> Action {
    match fastest_available(state, config) {
        Some(f) if state.queue_len > 0 => Action::Route(f),
        _ => Action::Wait,
    }
}

/// Light-traffic break-even thresholds `θ_f = (μ_1 + … + μ_{f-1}) / μ_f`.
pub fn rsrt_thresholds(config: &SystemConfig) -> Vec<f64> {
    let rates = config.service_rates();
    let mut faster = 0.0;
    rates
        .iter()
        .map(|mu| {
            let theta = faster / mu;
            faster += mu;
            theta
        })
        .collect()
}

/// Route to the fastest idle server `f` only when `queue_len > thresholds[f]`.
pub fn hard_threshold_action(thresholds: &[f64], state: &State, config: &SystemConfig) -> Action {
    match fastest_available(state, config) {
        Some(f) if state.queue_len > 0 && state.queue_len as f64 > thresholds[f] => Action::Route(f),
        _ => Action::Wait,
    }
}

/// Deterministic hard-threshold policy (length-`k` thresholds, first is 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub thresholds: Vec<f64>,
}

impl ThresholdPolicy {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        match thresholds.first() {
            Some(t) if *t == 0.0 => Ok(ThresholdPolicy { thresholds }),
            _ => Err(Error::InvalidArgument(
                "threshold vector must start with the fastest server's threshold 0".into(),
            )),
        }
    }

    /// Fastest-available-server: every threshold zero.
    pub fn fas(config: &SystemConfig) -> Self {
        ThresholdPolicy {
            thresholds: vec![0.0; config.num_servers()],
        }
    }

    pub fn rsrt(config: &SystemConfig) -> Self {
        ThresholdPolicy {
            thresholds: rsrt_thresholds(config),
        }
    }
}

impl RoutingPolicy for ThresholdPolicy {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        ActionDist::deterministic(hard_threshold_action(&self.thresholds, state, config))
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        let _: f64 = rng.random();
        hard_threshold_action(&self.thresholds, state, config)
    }
}

/// Draws `d` of the `k` servers uniformly without replacement (partial
/// Fisher-Yates, `d` uniform variates) and returns the set as a bitmask.
pub fn sample_servers(k: usize, d: usize, rng: &mut dyn RngCore) -> Result<u32> {
    if d == 0 || d > k {
        return Err(Error::InvalidArgument(format!(
            "power-of-d sample size must lie in 1..={k}, got {d}"
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    let mut sampled = 0u32;
    for i in 0..d {
        let j = i + rng.random_range(0..k - i);
        order.swap(i, j);
        sampled |= 1 << order[i];
    }
    Ok(sampled)
}

/// Masked view of `state` in which the servers outside `sampled` appear busy.
pub fn mask_view(state: &State, sampled: u32, k: usize) -> State {
    State::new(state.queue_len, state.busy | (!sampled & mdp::mask(k)))
}

/// Power-of-d observation: sample `d` servers and render the rest as busy,
/// so any policy applied to the view routes only among sampled idle servers.
pub fn pod_restrict(state: &State, d: usize, config: &SystemConfig, rng: &mut dyn RngCore) -> Result<State> {
    let k = config.num_servers();
    let sampled = sample_servers(k, d, rng)?;
    Ok(mask_view(state, sampled, k))
}

/// All `d`-subsets of `0..k` as bitmasks, in increasing numeric order.
pub(crate) fn subsets(k: usize, d: usize) -> Vec<u32> {
    (0u32..(1u32 << k))
        .filter(|m| m.count_ones() as usize == d)
        .collect()
}

/// Wraps a policy so it only sees a random `d`-subset of the servers each
/// epoch. The exact action distribution averages over all `C(k, d)` subsets.
#[derive(Debug, Clone)]
pub struct PowerOfD<P> {
    pub inner: P,
    pub d: usize,
}

impl<P: RoutingPolicy> PowerOfD<P> {
    pub fn new(inner: P, d: usize, config: &SystemConfig) -> Result<Self> {
        if d == 0 || d > config.num_servers() {
            return Err(Error::InvalidArgument(format!(
                "power-of-d sample size must lie in 1..={}, got {d}",
                config.num_servers()
            )));
        }
        Ok(PowerOfD { inner, d })
    }
}

impl<P: RoutingPolicy> RoutingPolicy for PowerOfD<P> {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        let k = config.num_servers();
        let subsets = subsets(k, self.d);
        let weight = 1.0 / subsets.len() as f64;
        let mut pairs = Vec::new();
        for sampled in subsets {
            let view = mask_view(state, sampled, k);
            for (a, p) in self.inner.action_dist(&view, config).entries() {
                pairs.push((*a, p * weight));
            }
        }
        ActionDist::from_pairs(pairs)
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn RngCore) -> Action {
        let k = config.num_servers();
        // d is validated in the constructor.
        let sampled = sample_servers(k, self.d, rng).expect("validated sample size");
        self.inner.sample_action(&mask_view(state, sampled, k), config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two() -> SystemConfig {
        SystemConfig::with_load(0.4, vec![100.0, 25.0], 20).unwrap()
    }

    fn params(theta: f64, sigma: f64) -> SoftThresholdParams {
        SoftThresholdParams::new(vec![theta], sigma).unwrap()
    }

    #[test]
    fn soft_dist_examples() {
        let cfg = two();
        let p = params(5.0, 1.0);
        let d = soft_threshold_dist(&p, &State::new(5, 0b01), &cfg);
        assert_relative_eq!(d.prob(Action::Route(1)), 0.5, epsilon = 1e-15);
        let d = soft_threshold_dist(&p, &State::new(7, 0b01), &cfg);
        let e2 = 2f64.exp();
        assert_relative_eq!(d.prob(Action::Route(1)), e2 / (1.0 + e2), epsilon = 1e-15);
        assert!((d.prob(Action::Route(1)) - 0.880797).abs() < 1e-6);
        let d = soft_threshold_dist(&p, &State::new(3, 0b10), &cfg);
        assert_eq!(d.prob(Action::Route(0)), 1.0);
        let d = soft_threshold_dist(&p, &State::new(0, 0), &cfg);
        assert_eq!(d.prob(Action::Wait), 1.0);
    }

    #[test]
    fn grad_examples() {
        let cfg = two();
        let p = params(5.0, 1.0);
        let s = State::new(5, 0b01);
        assert_relative_eq!(grad_log_pi(&p, &s, Action::Route(1), &cfg).unwrap()[0], -0.5);
        assert_relative_eq!(grad_log_pi(&p, &s, Action::Wait, &cfg).unwrap()[0], 0.5);
        let fast = State::new(3, 0b10);
        assert_eq!(grad_log_pi(&p, &fast, Action::Route(0), &cfg).unwrap(), vec![0.0]);
        assert!(grad_log_pi(&p, &fast, Action::Wait, &cfg).is_err());
        assert!(grad_log_pi(&p, &State::empty(), Action::Route(0), &cfg).is_err());
    }

    #[test]
    fn grad_rejects_underflowed_action() {
        let cfg = two();
        let p = params(0.0, 1e4);
        assert!(grad_log_pi(&p, &State::new(20, 0b01), Action::Wait, &cfg).is_err());
    }

    #[test]
    fn fas_examples() {
        let cfg = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0, 1.0], 20).unwrap();
        assert_eq!(fas_action(&State::from_flags(2, &[true, false, false, true]), &cfg), Action::Route(1));
        assert_eq!(fas_action(&State::new(0, 0b0110), &cfg), Action::Wait);
        assert_eq!(fas_action(&State::new(5, 0b1111), &cfg), Action::Wait);
    }

    #[test]
    fn rsrt_examples() {
        let a = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0, 1.0], 20).unwrap();
        assert_eq!(rsrt_thresholds(&a), vec![0.0, 4.0, 25.0, 130.0]);
        let c = SystemConfig::with_load(0.4, vec![100.0, 100.0, 1.0, 1.0], 20).unwrap();
        assert_eq!(rsrt_thresholds(&c), vec![0.0, 1.0, 200.0, 201.0]);
        let one = SystemConfig::new(1.0, vec![2.0], 3).unwrap();
        assert_eq!(rsrt_thresholds(&one), vec![0.0]);
    }

    #[test]
    fn hard_threshold_examples() {
        let cfg = two();
        let th = [0.0, 4.0];
        assert_eq!(hard_threshold_action(&th, &State::new(5, 0b01), &cfg), Action::Route(1));
        assert_eq!(hard_threshold_action(&th, &State::new(4, 0b01), &cfg), Action::Wait);
        assert_eq!(hard_threshold_action(&th, &State::new(1, 0b10), &cfg), Action::Route(0));
    }

    #[test]
    fn pod_full_sample_is_identity() {
        let cfg = SystemConfig::with_load(0.4, vec![8.0, 4.0, 2.0, 1.0], 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = State::new(3, 0b0101);
        assert_eq!(pod_restrict(&s, 4, &cfg, &mut rng).unwrap(), s);
        assert!(pod_restrict(&s, 0, &cfg, &mut rng).is_err());
        assert!(pod_restrict(&s, 5, &cfg, &mut rng).is_err());
    }

    #[test]
    fn pod_single_busy_sample_only_waits() {
        let cfg = SystemConfig::with_load(0.4, vec![8.0, 4.0, 2.0, 1.0], 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = State::new(3, 0b0001);
        let mut saw_wait_only = false;
        for _ in 0..200 {
            let view = pod_restrict(&s, 1, &cfg, &mut rng).unwrap();
            if view.busy == 0b1111 {
                saw_wait_only = true;
                assert_eq!(mdp::valid_actions(&view, &cfg), vec![Action::Wait]);
            } else {
                assert_eq!(view.busy.count_ones(), 3);
            }
        }
        assert!(saw_wait_only);
    }

    #[test]
    fn pod_sampling_frequencies() {
        let k = 8;
        let d = 4;
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let m = sample_servers(k, d, &mut rng).unwrap();
            assert_eq!(m.count_ones() as usize, d);
            for (i, c) in counts.iter_mut().enumerate() {
                if m & (1 << i) != 0 {
                    *c += 1;
                }
            }
        }
        let p = d as f64 / k as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!(((c as f64 / n as f64) - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn pod_exact_dist_sums_to_one() {
        let cfg = SystemConfig::with_load(0.4, vec![8.0, 4.0, 2.0, 1.0], 10).unwrap();
        let pod = PowerOfD::new(ThresholdPolicy::fas(&cfg), 2, &cfg).unwrap();
        let d = pod.action_dist(&State::new(2, 0b0001), &cfg);
        assert_relative_eq!(d.total(), 1.0, epsilon = 1e-12);
        // Only server 0 is busy, so every 2-subset contains an idle server.
        assert_relative_eq!(d.prob(Action::Wait), 0.0);
        // Server 1 is the fastest sampled idle server in 3 of the 6 subsets.
        assert_relative_eq!(d.prob(Action::Route(1)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn soft_dist_matches_sampler() {
        let cfg = two();
        let policy = SoftThresholdPolicy(params(3.3, 0.7));
        let s = State::new(3, 0b01);
        let p = policy.action_dist(&s, &cfg).prob(Action::Route(1));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| policy.sample_action(&s, &cfg, &mut rng) == Action::Route(1))
            .count();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    fn arb_soft() -> impl Strategy<Value = (SoftThresholdParams, State, SystemConfig)> {
        (2usize..=5, 0.05f64..20.0, 0usize..=30, any::<u32>())
            .prop_flat_map(|(k, sigma, q, busy)| {
                (
                    prop::collection::vec(-5.0f64..40.0, k - 1),
                    Just(sigma),
                    Just(q),
                    Just(busy & ((1 << k) - 1)),
                    Just(k),
                )
            })
            .prop_map(|(th, sigma, q, busy, k)| {
                let rates: Vec<f64> = (0..k).map(|i| 10.0 / (1 + i) as f64).collect();
                let cfg = SystemConfig::with_load(0.5, rates, 30).unwrap();
                (SoftThresholdParams::new(th, sigma).unwrap(), State::new(q, busy), cfg)
            })
    }

    proptest! {
        #[test]
        fn soft_dist_normalized_and_supported((p, s, cfg) in arb_soft()) {
            let d = soft_threshold_dist(&p, &s, &cfg);
            prop_assert!((d.total() - 1.0).abs() < 1e-12);
            let f = fastest_available(&s, &cfg);
            for (a, _) in d.entries() {
                prop_assert!(mdp::is_feasible(&s, *a, &cfg));
                let ok = match a {
                    Action::Wait => true,
                    Action::Route(i) => Some(*i) == f,
                };
                prop_assert!(ok);
            }
        }

        #[test]
        fn soft_route_prob_monotone((p, s, cfg) in arb_soft()) {
            if let Some(f) = fastest_available(&s, &cfg) {
                if s.queue_len > 0 && f > 0 {
                    let now = soft_threshold_dist(&p, &s, &cfg).prob(Action::Route(f));
                    let longer = State::new(s.queue_len + 1, s.busy);
                    prop_assert!(soft_threshold_dist(&p, &longer, &cfg).prob(Action::Route(f)) >= now);
                    let mut q = p.clone();
                    q.thresholds[f - 1] += 0.5;
                    prop_assert!(soft_threshold_dist(&q, &s, &cfg).prob(Action::Route(f)) <= now);
                }
            }
        }

        #[test]
        fn grad_bounded_by_sharpness((p, s, cfg) in arb_soft()) {
            for (a, _) in soft_threshold_dist(&p, &s, &cfg).entries() {
                let g = grad_log_pi(&p, &s, *a, &cfg).unwrap();
                prop_assert!(g.iter().all(|x| x.abs() <= p.sharpness + 1e-12));
            }
        }
    }

    #[test]
    fn sharp_limit_matches_hard_threshold() {
        let cfg = SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0, 1.0], 40).unwrap();
        let th = vec![2.5, 13.5, 30.5];
        let soft = SoftThresholdParams::new(th.clone(), 1e3).unwrap();
        let hard = ThresholdPolicy::new([vec![0.0], th].concat()).unwrap();
        for s in mdp::enumerate_states(&cfg) {
            let want = hard.action_dist(&s, &cfg);
            let got = soft_threshold_dist(&soft, &s, &cfg);
            for a in mdp::valid_actions(&s, &cfg) {
                assert!((want.prob(a) - got.prob(a)).abs() < 1e-6, "{s} {a}");
            }
        }
    }
}
