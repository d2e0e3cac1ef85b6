//! Two-timescale actor-critic over soft-threshold policies with a linear
//! critic, an average-cost tracker and a projected critic update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::{apply_event, post_action, Action, State};
use crate::policy::{grad_log_pi, mask_view, rsrt_thresholds, sample_servers, soft_decision, SoftDecision, SoftThresholdParams};

/// Critic features `φ(s) = (L, B_1, …, B_k) / (l_M + k)`.
pub fn features(state: &State, config: &SystemConfig) -> Vec<f64> {
    let mut out = vec![0.0; config.num_servers() + 1];
    write_features(state, config, &mut out);
    out
}

fn write_features(state: &State, config: &SystemConfig, out: &mut [f64]) {
    let scale = 1.0 / config.max_cost() as f64;
    out[0] = state.queue_len as f64 * scale;
    for (j, o) in out[1..].iter_mut().enumerate() {
        *o = if state.busy & (1 << j) != 0 { scale } else { 0.0 };
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Average-cost TD error `c − η + φ(s′)ᵀω − φ(s)ᵀω`.
pub fn td_error(cost: f64, eta: f64, phi_next: &[f64], phi_now: &[f64], weights: &[f64]) -> f64 {
    cost - eta + dot(phi_next, weights) - dot(phi_now, weights)
}

/// Discounted TD error `c + γ φ(s′)ᵀω − φ(s)ᵀω`.
pub fn td_error_discounted(cost: f64, gamma: f64, phi_next: &[f64], phi_now: &[f64], weights: &[f64]) -> f64 {
    cost + gamma * dot(phi_next, weights) - dot(phi_now, weights)
}

/// Radial projection onto the Euclidean ball of the given radius.
pub fn project(weights: &mut [f64], radius: f64) {
    let n = norm(weights);
    if n > radius {
        let s = radius / n;
        weights.iter_mut().for_each(|w| *w *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { value: f64 },
    /// `base / (1 + t)^exponent`.
    Decay { base: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn value(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::Decay { base, exponent } => base / (1.0 + t as f64).powf(exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { value } => value.is_finite() && value >= 0.0,
            StepSchedule::Decay { base, exponent } => base > 0.0 && (0.0..1.0).contains(&exponent),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid step schedule {self:?}")))
        }
    }
}

/// Step sizes for the actor (α), critic (β) and average-cost tracker (ζ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub actor: StepSchedule,
    pub critic: StepSchedule,
    pub cost: StepSchedule,
}

impl Schedules {
    pub fn constant(alpha: f64, beta: f64, zeta: f64) -> Self {
        Schedules {
            actor: StepSchedule::Constant { value: alpha },
            critic: StepSchedule::Constant { value: beta },
            cost: StepSchedule::Constant { value: zeta },
        }
    }

    /// `α₀/(1+t)^{3/5}`, `β₀/(1+t)^{2/5}`, `ζ₀/(1+t)^{2/5}`.
    pub fn decay(alpha: f64, beta: f64, zeta: f64) -> Self {
        Schedules {
            actor: StepSchedule::Decay { base: alpha, exponent: 0.6 },
            critic: StepSchedule::Decay { base: beta, exponent: 0.4 },
            cost: StepSchedule::Decay { base: zeta, exponent: 0.4 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    pub weights: Vec<f64>,
    pub projection_radius: f64,
    pub avg_cost_estimate: f64,
    pub step: u64,
}

impl CriticState {
    pub fn new(config: &SystemConfig, projection_radius: f64) -> Self {
        CriticState {
            weights: vec![0.0; config.num_servers() + 1],
            projection_radius,
            avg_cost_estimate: 0.0,
            step: 0,
        }
    }

    pub fn weight_norm(&self) -> f64 {
        norm(&self.weights)
    }

    /// Critic estimate `φ(s)ᵀω`.
    pub fn value(&self, state: &State, config: &SystemConfig) -> f64 {
        dot(&features(state, config), &self.weights)
    }
}

/// Default projection radius `10 · (l_M + k)`.
pub fn default_radius(config: &SystemConfig) -> f64 {
    10.0 * config.max_cost() as f64
}

/// Which cost the critic tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    Average,
    Discounted { gamma: f64 },
}

/// What one [`achq_step`] observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub action: Action,
    pub next_state: State,
    pub cost: f64,
    pub delta: f64,
}

/// One actor-critic update from `state`, in place.
///
/// Draws the action from `π_θ(·|state)` and then the event, each from one
/// uniform variate. `state` is whatever the agent observes; under
/// power-of-d the caller passes the masked view and uses
/// [`achq_step_observed`] instead.
pub fn achq_step(
    actor: &mut SoftThresholdParams,
    critic: &mut CriticState,
    state: &State,
    config: &SystemConfig,
    schedules: &Schedules,
    objective: Objective,
    rng: &mut dyn rand::RngCore,
) -> Result<StepOutcome> {
    achq_step_observed(actor, critic, state, state, config, schedules, objective, None, rng).map(|(o, _)| o)
}

fn sample_soft(actor: &SoftThresholdParams, view: &State, config: &SystemConfig, u: f64) -> Action {
    match soft_decision(actor, view, config) {
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

/// General step: the true `state` drives cost and dynamics, the agent acts
/// and learns on `view`. With `pod = Some(d)` the next view is a fresh
/// `d`-subset mask of the next state, drawn after the event. Returns the
/// outcome and the next view.
#[allow(clippy::too_many_arguments)]
pub fn achq_step_observed(
    actor: &mut SoftThresholdParams,
    critic: &mut CriticState,
    state: &State,
    view: &State,
    config: &SystemConfig,
    schedules: &Schedules,
    objective: Objective,
    pod: Option<usize>,
    rng: &mut dyn rand::RngCore,
) -> Result<(StepOutcome, State)> {
    let k = config.num_servers();
    let t = critic.step;

    let action = sample_soft(actor, view, config, rng.random());
    let cost = state.cost() as f64;
    let post = post_action(state, action, config)?;
    let next_state = apply_event(post, config.event_for(rng.random()), config.buffer_capacity());
    let next_view = match pod {
        Some(d) => mask_view(&next_state, sample_servers(k, d, rng)?, k),
        None => next_state,
    };

    let phi_now = features(view, config);
    let phi_next = features(&next_view, config);
    let delta = match objective {
        Objective::Average => td_error(cost, critic.avg_cost_estimate, &phi_next, &phi_now, &critic.weights),
        Objective::Discounted { gamma } => td_error_discounted(cost, gamma, &phi_next, &phi_now, &critic.weights),
    };
    if objective == Objective::Average {
        critic.avg_cost_estimate += schedules.cost.value(t) * (cost - critic.avg_cost_estimate);
    }
    let beta = schedules.critic.value(t);
    for (w, p) in critic.weights.iter_mut().zip(&phi_now) {
        *w += beta * delta * p;
    }
    project(&mut critic.weights, critic.projection_radius);
    debug_assert!(critic.weight_norm() <= critic.projection_radius * (1.0 + 1e-12));

    let grad = grad_log_pi(actor, view, action, config)?;
    let alpha = schedules.actor.value(t);
    for (th, g) in actor.thresholds.iter_mut().zip(grad) {
        *th -= alpha * delta * g;
    }
    critic.step += 1;

    Ok((
        StepOutcome {
            action,
            next_state,
            cost,
            delta,
        },
        next_view,
    ))
}

/// Initial thresholds for servers `2..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaInit {
    /// RSRT thresholds clipped to `[0, l_M]`.
    Rsrt,
    Zero,
    /// Uniform on `[0, l_M]`, drawn from a stream derived from the seed.
    Random,
    Given(Vec<f64>),
}

impl ThetaInit {
    pub fn resolve(&self, config: &SystemConfig, seed: u64) -> Vec<f64> {
        let k = config.num_servers();
        let cap = config.buffer_capacity() as f64;
        match self {
            ThetaInit::Rsrt => rsrt_thresholds(config)[1..].iter().map(|t| t.clamp(0.0, cap)).collect(),
            ThetaInit::Zero => vec![0.0; k - 1],
            ThetaInit::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                (1..k).map(|_| rng.random::<f64>() * cap).collect()
            }
            ThetaInit::Given(v) => v.clone(),
        }
    }
}

fn default_sigma() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1e-3
}
fn default_beta() -> f64 {
    1e-3
}
fn default_zeta() -> f64 {
    1e-2
}
fn default_horizon() -> u64 {
    10_000_000
}
fn default_log_interval() -> u64 {
    10_000
}
fn default_init() -> ThetaInit {
    ThetaInit::Rsrt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    Decay,
}

/// Training hyperparameters. Unset fields take the defaults of the
/// `default_*` helpers: `σ = 1`, `α = β = 10⁻³`, `ζ = 10⁻²`, `10⁷` epochs,
/// RSRT warm start, `R_ω = 10(l_M + k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_init")]
    pub init: ThetaInit,
    /// Power-of-d sample size; `None` observes every server.
    #[serde(default)]
    pub pod_d: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            sigma: default_sigma(),
            alpha: default_alpha(),
            beta: default_beta(),
            zeta: default_zeta(),
            radius: None,
            horizon: default_horizon(),
            seed: 0,
            gamma: None,
            schedule: ScheduleKind::Constant,
            log_interval: default_log_interval(),
            init: ThetaInit::Rsrt,
            pod_d: None,
        }
    }
}

impl Hyperparams {
    pub fn schedules(&self) -> Schedules {
        match self.schedule {
            ScheduleKind::Constant => Schedules::constant(self.alpha, self.beta, self.zeta),
            ScheduleKind::Decay => Schedules::decay(self.alpha, self.beta, self.zeta),
        }
    }

    pub fn radius_for(&self, config: &SystemConfig) -> f64 {
        self.radius.unwrap_or_else(|| default_radius(config))
    }

    pub fn initial_actor(&self, config: &SystemConfig) -> Result<SoftThresholdParams> {
        SoftThresholdParams::new(self.init.resolve(config, self.seed), self.sigma)
    }

    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        let s = self.schedules();
        s.actor.validate()?;
        s.critic.validate()?;
        s.cost.validate()?;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sharpness must be positive, got {}", self.sigma)));
        }
        if !(self.radius_for(config) > 0.0) {
            return Err(Error::InvalidArgument("projection radius must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {g}")));
            }
        }
        if let Some(d) = self.pod_d {
            if d == 0 || d > config.num_servers() {
                return Err(Error::InvalidArgument(format!("power-of-d size {d} out of range")));
            }
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidArgument("log interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    pub step: u64,
    pub avg_cost_running: f64,
    pub eta: f64,
    pub thetas: Vec<f64>,
    pub omega_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    pub snapshots: Vec<TrainSnapshot>,
}

impl TrainRecord {
    /// CSV rows `(step, avg_cost_running, eta, theta_2 … theta_k, omega_norm)`.
    pub fn write_csv<W: std::io::Write>(&self, num_servers: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string(), "avg_cost_running".into(), "eta".into()];
        header.extend((2..=num_servers).map(|i| format!("theta_{i}")));
        header.push("omega_norm".into());
        w.write_record(&header)?;
        for s in &self.snapshots {
            let mut row = vec![s.step.to_string(), format!("{:.10}", s.avg_cost_running), format!("{:.10}", s.eta)];
            row.extend(s.thetas.iter().map(|t| format!("{t:.10}")));
            row.push(format!("{:.10}", s.omega_norm));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Relative change of a series between the start and end of the last
    /// quarter of the record: `|x_end − x_q| / max(|x_end|, ε)`.
    pub fn last_quarter_drift(&self, series: impl Fn(&TrainSnapshot) -> f64) -> Option<f64> {
        let n = self.snapshots.len();
        if n < 4 {
            return None;
        }
        let a = series(&self.snapshots[(3 * n) / 4 - 1]);
        let b = series(&self.snapshots[n - 1]);
        Some((b - a).abs() / b.abs().max(1e-12))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor: SoftThresholdParams,
    pub critic: CriticState,
    pub record: TrainRecord,
}

/// Runs the actor-critic loop for `hp.horizon` epochs from the empty state.
/// The discount in `hp.gamma`, when set, selects the discounted critic.
pub fn train(config: &SystemConfig, actor0: &SoftThresholdParams, hp: &Hyperparams) -> Result<TrainOutput> {
    train_from(config, actor0, hp, State::empty())
}

/// Discounted-cost variant: `δ = c + γ φ(s′)ᵀω − φ(s)ᵀω`, no `η` update.
pub fn train_discounted(
    config: &SystemConfig,
    actor0: &SoftThresholdParams,
    hp: &Hyperparams,
    gamma: f64,
) -> Result<TrainOutput> {
    let hp = Hyperparams {
        gamma: Some(gamma),
        ..hp.clone()
    };
    train_from(config, actor0, &hp, State::empty())
}

pub fn train_from(
    config: &SystemConfig,
    actor0: &SoftThresholdParams,
    hp: &Hyperparams,
    initial: State,
) -> Result<TrainOutput> {
    hp.validate(config)?;
    actor0.validate()?;
    if actor0.num_servers() != config.num_servers() {
        return Err(Error::InvalidArgument(format!(
            "actor has {} thresholds for {} servers",
            actor0.thresholds.len(),
            config.num_servers()
        )));
    }
    let k = config.num_servers();
    let schedules = hp.schedules();
    let objective = match hp.gamma {
        Some(gamma) => Objective::Discounted { gamma },
        None => Objective::Average,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut actor = actor0.clone();
    let mut critic = CriticState::new(config, hp.radius_for(config));
    let mut record = TrainRecord::default();

    let mut state = initial;
    let mut view = match hp.pod_d {
        Some(d) => mask_view(&state, sample_servers(k, d, &mut rng)?, k),
        None => state,
    };
    let mut cost_sum = 0.0;
    for t in 1..=hp.horizon {
        let (out, next_view) = achq_step_observed(
            &mut actor,
            &mut critic,
            &state,
            &view,
            config,
            &schedules,
            objective,
            hp.pod_d,
            &mut rng,
        )?;
        cost_sum += out.cost;
        state = out.next_state;
        view = next_view;
        if t % hp.log_interval == 0 || t == hp.horizon {
            record.snapshots.push(TrainSnapshot {
                step: t,
                avg_cost_running: cost_sum / t as f64,
                eta: critic.avg_cost_estimate,
                thetas: actor.thresholds.clone(),
                omega_norm: critic.weight_norm(),
            });
        }
    }
    Ok(TrainOutput { actor, critic, record })
}

/// Exact TD(0) fixed point of the average-cost linear critic for a frozen
/// actor: solves `Φᵀ D_ν (c − g + P_θ Φ ω − Φ ω) = 0`.
pub fn td_fixed_point(actor: &SoftThresholdParams, config: &SystemConfig) -> Result<Vec<f64>> {
    use crate::exact::{cost_vector, policy_matrix, stationary_from_matrix};
    use crate::policy::SoftThresholdPolicy;
    use nalgebra::{DMatrix, DVector};

    let p = policy_matrix(&SoftThresholdPolicy(actor.clone()), config)?;
    let nu = stationary_from_matrix(&p, config)?;
    let cost = cost_vector(config);
    let g: f64 = nu.iter().zip(&cost).map(|(a, b)| a * b).sum();
    let phi: Vec<Vec<f64>> = crate::mdp::StateSpace::new(config).iter().map(|s| features(&s, config)).collect();
    let d = config.num_servers() + 1;
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for (i, w) in nu.iter().enumerate().filter(|(_, w)| **w > 0.0) {
        let mut pphi = vec![0.0; d];
        for (j, v) in p.row(i) {
            for (acc, x) in pphi.iter_mut().zip(&phi[j]) {
                *acc += v * x;
            }
        }
        for r in 0..d {
            for c in 0..d {
                a[(r, c)] += w * phi[i][r] * (phi[i][c] - pphi[c]);
            }
            b[r] += w * phi[i][r] * (cost[i] - g);
        }
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("TD fixed-point system is singular".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Exact stationary mean of the actor increment direction `E[δ ∇_θ log π]`
/// when the TD error uses the value estimate `values` (one entry per state)
/// and the true average cost. With the differential value function of the
/// actor this is the average-cost gradient.
pub fn expected_actor_direction(actor: &SoftThresholdParams, config: &SystemConfig, values: &[f64]) -> Result<Vec<f64>> {
    use crate::exact::{cost_vector, policy_matrix, stationary_from_matrix};
    use crate::mdp::{transition, StateSpace};
    use crate::policy::{soft_threshold_dist, SoftThresholdPolicy};

    let p = policy_matrix(&SoftThresholdPolicy(actor.clone()), config)?;
    let nu = stationary_from_matrix(&p, config)?;
    let cost = cost_vector(config);
    let g: f64 = nu.iter().zip(&cost).map(|(a, b)| a * b).sum();
    let space = StateSpace::new(config);
    let mut dir = vec![0.0; actor.thresholds.len()];
    for (i, s) in space.iter().enumerate() {
        if nu[i] == 0.0 {
            continue;
        }
        for (a, pa) in soft_threshold_dist(actor, &s, config).entries() {
            let next: f64 = transition(&s, *a, config)?
                .entries()
                .iter()
                .map(|(t, q)| q * values[space.index_of(t)])
                .sum();
            let delta = cost[i] - g + next - values[i];
            for (d, gr) in dir.iter_mut().zip(grad_log_pi(actor, &s, *a, config)?) {
                *d += nu[i] * pa * delta * gr;
            }
        }
    }
    Ok(dir)
}

/// Critic values `φ(s)ᵀω` for every enumerated state.
pub fn critic_values(weights: &[f64], config: &SystemConfig) -> Vec<f64> {
    crate::mdp::StateSpace::new(config)
        .iter()
        .map(|s| dot(&features(&s, config), weights))
        .collect()
}
