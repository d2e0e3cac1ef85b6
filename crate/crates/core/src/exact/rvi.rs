use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::{Action, State, StateSpace};
use crate::policy::{ActionDist, RoutingPolicy};

/// Value per enumerated state plus the reference state used for
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub reference_state: usize,
}

impl ValueTable {
    pub fn zeros(config: &SystemConfig) -> Self {
        ValueTable {
            values: vec![0.0; config.num_states()],
            reference_state: 0,
        }
    }

    pub fn value(&self, state: &State, config: &SystemConfig) -> f64 {
        self.values[StateSpace::new(config).index_of(state)]
    }

    pub fn span(&self) -> f64 {
        span(&self.values)
    }
}

/// Span seminorm `max f − min f`.
pub fn span(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    hi - lo
}

/// One deterministic action per enumerated state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub actions: Vec<Action>,
}

impl TabularPolicy {
    /// Tabulates any policy whose action distribution is deterministic in
    /// every state; errors otherwise.
    pub fn from_policy(policy: &dyn RoutingPolicy, config: &SystemConfig) -> Result<Self> {
        let space = StateSpace::new(config);
        let actions = space
            .iter()
            .map(|s| {
                let dist = policy.action_dist(&s, config);
                match dist.entries() {
                    [(a, _)] => Ok(*a),
                    _ => Err(Error::InvalidArgument(format!(
                        "policy is randomized in state {s}; cannot tabulate"
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TabularPolicy { actions })
    }

    pub fn action(&self, state: &State, config: &SystemConfig) -> Action {
        self.actions[StateSpace::new(config).index_of(state)]
    }
}

impl RoutingPolicy for TabularPolicy {
    fn action_dist(&self, state: &State, config: &SystemConfig) -> ActionDist {
        ActionDist::deterministic(self.action(state, config))
    }

    fn sample_action(&self, state: &State, config: &SystemConfig, rng: &mut dyn rand::RngCore) -> Action {
        let _: f64 = rand::Rng::random(rng);
        self.action(state, config)
    }
}

/// Precomputed event probabilities for evaluating `E[V(s′) | post-action state]`.
pub(crate) struct Expectation {
    arrival: f64,
    departures: Vec<f64>,
    k: usize,
    capacity: usize,
}

impl Expectation {
    pub fn new(config: &SystemConfig) -> Self {
        let (arrival, departures) = config.event_probs();
        Expectation {
            arrival,
            departures,
            k: config.num_servers(),
            capacity: config.buffer_capacity(),
        }
    }

    /// Expected value after the event, given the post-action state.
    #[inline]
    pub fn after(&self, post: State, values: &[f64]) -> f64 {
        let base = post.queue_len << self.k;
        let up = ((post.queue_len + 1).min(self.capacity)) << self.k;
        let mut acc = self.arrival * values[up | post.busy as usize];
        for (j, p) in self.departures.iter().enumerate() {
            acc += p * values[base | (post.busy & !(1 << j)) as usize];
        }
        acc
    }

    /// Greedy one-step lookahead: returns `(min_a E[V | post(s, a)], argmin)`.
    /// Actions within [`TIE_TOLERANCE`] (relative) of the minimum count as
    /// tied; ties go to `Wait`, then the smallest server index. Without the
    /// tolerance, rounding noise splits actions that are exact mirror images
    /// under equal service rates.
    #[inline]
    pub fn best(&self, state: State, values: &[f64]) -> (f64, Action) {
        let wait = self.after(state, values);
        let mut min = wait;
        let mut qs = [f64::INFINITY; crate::config::MAX_SERVERS];
        if state.queue_len > 0 {
            for (i, q) in qs.iter_mut().enumerate().take(self.k) {
                if state.busy & (1 << i) == 0 {
                    let post = State::new(state.queue_len - 1, state.busy | (1 << i));
                    *q = self.after(post, values);
                    min = min.min(*q);
                }
            }
        }
        let cut = min + TIE_TOLERANCE * min.abs().max(1.0);
        let arg = if wait <= cut {
            Action::Wait
        } else {
            Action::Route(qs.iter().position(|q| *q <= cut).expect("minimum is attained"))
        };
        (min, arg)
    }
}

/// Relative gap below which two actions' lookahead values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Average-cost Bellman operator `T(V)(s) = c(s) + min_a Σ P(s′|s,a) V(s′)`
/// and its greedy policy. No reference-state normalization is applied.
pub fn bellman_backup(values: &ValueTable, config: &SystemConfig) -> (ValueTable, TabularPolicy) {
    let space = StateSpace::new(config);
    let exp = Expectation::new(config);
    let mut out = Vec::with_capacity(space.len());
    let mut actions = Vec::with_capacity(space.len());
    for s in space.iter() {
        let (q, a) = exp.best(s, &values.values);
        out.push(s.cost() as f64 + q);
        actions.push(a);
    }
    (
        ValueTable {
            values: out,
            reference_state: values.reference_state,
        },
        TabularPolicy { actions },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviOptions {
    /// Stop once `sp(V⁽ᵗ⁾ − V⁽ᵗ⁻¹⁾)` is at most this.
    pub tolerance: f64,
    pub reference_state: usize,
    pub max_iterations: usize,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tolerance: 1e-9,
            reference_state: 0,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RviResult {
    pub values: ValueTable,
    pub policy: TabularPolicy,
    pub iterations: usize,
    /// `T(V)(s*)` at the final sweep: the optimal average cost estimate.
    pub average_cost: f64,
    /// `sp(V⁽ᵗ⁾ − V⁽ᵗ⁻¹⁾)` per sweep.
    pub span_history: Vec<f64>,
}

impl RviResult {
    /// True when the span of successive differences ever increased after the
    /// first ten sweeps.
    pub fn span_increase_after_warmup(&self) -> bool {
        self.span_history
            .windows(2)
            .skip(10)
            .any(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-15)
    }
}

/// Relative value iteration from `V⁰ = 0`:
/// `V⁽ᵗ⁺¹⁾(s) = T(V⁽ᵗ⁾)(s) − T(V⁽ᵗ⁾)(s*)`.
pub fn relative_value_iteration(config: &SystemConfig, options: &RviOptions) -> Result<RviResult> {
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidArgument("RVI tolerance must be positive".into()));
    }
    let space = StateSpace::new(config);
    if options.reference_state >= space.len() {
        return Err(Error::IndexOutOfRange {
            index: options.reference_state,
            len: space.len(),
        });
    }
    let exp = Expectation::new(config);
    let costs: Vec<f64> = space.iter().map(|s| s.cost() as f64).collect();
    let states: Vec<State> = space.iter().collect();

    let mut values = vec![0.0; space.len()];
    let mut next = vec![0.0; space.len()];
    let mut span_history = Vec::new();
    for iteration in 1..=options.max_iterations {
        for (i, s) in states.iter().enumerate() {
            next[i] = costs[i] + exp.best(*s, &values).0;
        }
        let average_cost = next[options.reference_state];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (n, v) in next.iter_mut().zip(&values) {
            *n -= average_cost;
            let d = *n - v;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        std::mem::swap(&mut values, &mut next);
        let sp = hi - lo;
        span_history.push(sp);
        if sp <= options.tolerance {
            let table = ValueTable {
                values,
                reference_state: options.reference_state,
            };
            let policy = greedy_policy(&table, config);
            return Ok(RviResult {
                values: table,
                policy,
                iterations: iteration,
                average_cost,
                span_history,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: options.max_iterations,
        span: span_history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Greedy policy `argmin_a c(s) + Σ P(s′|s,a) V(s′)` for a value table.
pub fn greedy_policy(values: &ValueTable, config: &SystemConfig) -> TabularPolicy {
    let exp = Expectation::new(config);
    TabularPolicy {
        actions: StateSpace::new(config)
            .iter()
            .map(|s| exp.best(s, &values.values).1)
            .collect(),
    }
}
