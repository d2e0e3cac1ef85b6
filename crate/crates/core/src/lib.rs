//! Routing control for a central queue that feeds heterogeneous parallel
//! servers.
//!
//! The continuous-time system is uniformized into a discrete-time MDP over
//! states `(L, B_1, …, B_k)`: queue length plus one busy flag per server,
//! fastest server first. On top of that model the crate provides
//!
//! * exact tabular solvers (relative value iteration, stationary
//!   distributions, Poisson and discounted linear solves),
//! * threshold policies and their soft relaxation,
//! * the actor-critic trainer for soft thresholds,
//! * a Monte Carlo simulator,
//! * numerical checks of the two-server structure.

pub mod achq;
pub mod config;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod mdp;
pub mod policy;
pub mod sim;
pub mod two_server;

pub use config::{linspace_rates, SystemConfig};
pub use error::{Error, Result};
pub use mdp::{Action, State, StateSpace};
pub use policy::{ActionDist, PowerOfD, RoutingPolicy, SoftThresholdParams, SoftThresholdPolicy, ThresholdPolicy};
