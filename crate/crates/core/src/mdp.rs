//! The uniformized discrete-time MDP: states, actions, costs and exact
//! transition distributions.
//!
//! Within an epoch the routing action is applied first, then exactly one
//! event is drawn: an arrival with probability `λ/Λ` or a departure at server
//! `i` with probability `μ_i/Λ`. A departure at an idle server is fictitious
//! and leaves the state unchanged; an arrival at a full buffer is dropped.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Queue length plus per-server busy flags. Bit `i` of `busy` is set when
/// server `i` (0-based, fastest first) is serving a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub queue_len: usize,
    pub busy: u32,
}

impl State {
    pub const fn new(queue_len: usize, busy: u32) -> Self {
        State { queue_len, busy }
    }

    pub fn empty() -> Self {
        State::new(0, 0)
    }

    pub fn from_flags(queue_len: usize, flags: &[bool]) -> Self {
        let busy = flags
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .fold(0u32, |acc, (i, _)| acc | (1 << i));
        State::new(queue_len, busy)
    }

    pub fn is_busy(&self, server: usize) -> bool {
        self.busy & (1 << server) != 0
    }

    pub fn busy_flags(&self, k: usize) -> Vec<bool> {
        (0..k).map(|i| self.is_busy(i)).collect()
    }

    pub fn busy_count(&self) -> usize {
        self.busy.count_ones() as usize
    }

    /// Jobs in the system: `L + Σ B_j`.
    pub fn cost(&self) -> usize {
        self.queue_len + self.busy_count()
    }

    /// Busy pattern as a string of `0`/`1`, server 1 first.
    pub fn pattern(&self, k: usize) -> String {
        busy_pattern_string(self.busy, k)
    }
}

pub(crate) fn busy_pattern_string(busy: u32, k: usize) -> String {
    (0..k)
        .map(|i| if busy & (1 << i) != 0 { '1' } else { '0' })
        .collect()
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(L={}, busy={:#b})", self.queue_len, self.busy)
    }
}

/// Routing decision for one epoch. Server indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Wait,
    Route(usize),
}

impl Action {
    /// Integer code `a` with `0` for waiting and `i` (1-based) for routing to
    /// server `i`. This is the encoding used in CSV output.
    pub fn code(&self) -> usize {
        match self {
            Action::Wait => 0,
            Action::Route(i) => i + 1,
        }
    }

    pub fn from_code(code: usize) -> Self {
        match code {
            0 => Action::Wait,
            i => Action::Route(i - 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Wait => write!(f, "wait"),
            Action::Route(i) => write!(f, "route({})", i + 1),
        }
    }
}

/// Index of the fastest idle server: the smallest index whose busy flag is
/// clear. Rates are sorted, so ties in rate go to the smaller index.
pub fn fastest_available(state: &State, config: &SystemConfig) -> Option<usize> {
    let k = config.num_servers();
    let idle = !state.busy & mask(k);
    (idle != 0).then(|| idle.trailing_zeros() as usize)
}

pub(crate) fn mask(k: usize) -> u32 {
    if k >= 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

pub fn is_feasible(state: &State, action: Action, config: &SystemConfig) -> bool {
    match action {
        Action::Wait => true,
        Action::Route(i) => {
            i < config.num_servers() && state.queue_len > 0 && !state.is_busy(i)
        }
    }
}

/// `Wait` plus `Route(i)` for every idle server when the queue is nonempty.
pub fn valid_actions(state: &State, config: &SystemConfig) -> Vec<Action> {
    let mut actions = vec![Action::Wait];
    if state.queue_len > 0 {
        actions.extend(
            (0..config.num_servers())
                .filter(|i| !state.is_busy(*i))
                .map(Action::Route),
        );
    }
    actions
}

pub fn cost(state: &State) -> usize {
    state.cost()
}

/// State after the routing action, before the event.
pub fn post_action(state: &State, action: Action, config: &SystemConfig) -> Result<State> {
    if !is_feasible(state, action, config) {
        return Err(Error::InfeasibleAction {
            state: *state,
            action,
        });
    }
    Ok(match action {
        Action::Wait => *state,
        Action::Route(i) => State::new(state.queue_len - 1, state.busy | (1 << i)),
    })
}

/// Applies an event to a post-action state. `None` is an arrival.
pub(crate) fn apply_event(post: State, event: Option<usize>, buffer_capacity: usize) -> State {
    match event {
        None => State::new((post.queue_len + 1).min(buffer_capacity), post.busy),
        Some(j) => State::new(post.queue_len, post.busy & !(1 << j)),
    }
}

/// Sparse successor distribution with merged duplicate successors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDist {
    entries: Vec<(State, f64)>,
}

impl TransitionDist {
    pub fn entries(&self) -> &[(State, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob_of(&self, state: &State) -> f64 {
        self.entries
            .iter()
            .find(|(s, _)| s == state)
            .map_or(0.0, |(_, p)| *p)
    }

    fn push_merged(&mut self, state: State, prob: f64) {
        if prob <= 0.0 {
            return;
        }
        match self.entries.iter_mut().find(|(s, _)| *s == state) {
            Some((_, p)) => *p += prob,
            None => self.entries.push((state, prob)),
        }
    }
}

/// Exact one-epoch successor distribution. The arrival successor is listed
/// first, followed by departure successors in server order.
pub fn transition(state: &State, action: Action, config: &SystemConfig) -> Result<TransitionDist> {
    let post = post_action(state, action, config)?;
    let (arrival, departures) = config.event_probs();
    let mut dist = TransitionDist {
        entries: Vec::with_capacity(config.num_servers() + 1),
    };
    dist.push_merged(apply_event(post, None, config.buffer_capacity()), arrival);
    for (j, p) in departures.into_iter().enumerate() {
        dist.push_merged(apply_event(post, Some(j), config.buffer_capacity()), p);
    }
    Ok(dist)
}

/// One draw from [`transition`]. Consumes exactly one uniform variate.
pub fn sample_next(
    state: &State,
    action: Action,
    config: &SystemConfig,
    rng: &mut dyn RngCore,
) -> Result<State> {
    let post = post_action(state, action, config)?;
    let u: f64 = rng.random();
    Ok(apply_event(post, config.event_for(u), config.buffer_capacity()))
}

/// Bijection between states and `0..(l_M + 1)·2^k`, with
/// `index = queue_len · 2^k + busy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    num_servers: usize,
    buffer_capacity: usize,
}

impl StateSpace {
    pub fn new(config: &SystemConfig) -> Self {
        StateSpace {
            num_servers: config.num_servers(),
            buffer_capacity: config.buffer_capacity(),
        }
    }

    pub fn len(&self) -> usize {
        (self.buffer_capacity + 1) << self.num_servers
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// States per queue level, `2^k`.
    pub fn level_size(&self) -> usize {
        1 << self.num_servers
    }

    pub fn num_levels(&self) -> usize {
        self.buffer_capacity + 1
    }

    pub fn index_of(&self, state: &State) -> usize {
        debug_assert!(state.queue_len <= self.buffer_capacity);
        (state.queue_len << self.num_servers) | state.busy as usize
    }

    pub fn state_of(&self, index: usize) -> Result<State> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(self.state_at(index))
    }

    pub(crate) fn state_at(&self, index: usize) -> State {
        State::new(
            index >> self.num_servers,
            (index & (self.level_size() - 1)) as u32,
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(move |i| self.state_at(i))
    }
}

/// All states in index order.
pub fn enumerate_states(config: &SystemConfig) -> Vec<State> {
    StateSpace::new(config).iter().collect()
}
