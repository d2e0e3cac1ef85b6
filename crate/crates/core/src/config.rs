//! System parameterization: arrival rate, per-server service rates and the
//! buffer size of the central queue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported server count. Busy flags are packed into a `u32` and the
/// tabular state space is `(l_M + 1) * 2^k`, so anything near this bound is
/// only usable by the simulator and the trainer.
pub const MAX_SERVERS: usize = 24;

/// Parameters of the central-queue system.
///
/// Service rates are kept sorted non-increasing so that server `0` is always
/// the fastest. The uniformization constant `Λ = λ + Σμ` and the cumulative
/// event distribution are cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct SystemConfig {
    arrival_rate: f64,
    service_rates: Vec<f64>,
    buffer_capacity: usize,
    event_cdf: Vec<f64>,
}

/// JSON shape accepted for a [`SystemConfig`]. Exactly one of `arrival_rate`
/// and `load` must be present; with `load`, `λ = load · Σμ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arrival_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load: Option<f64>,
    service_rates: Vec<f64>,
    buffer_capacity: usize,
}

impl TryFrom<RawConfig> for SystemConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        match (raw.arrival_rate, raw.load) {
            (Some(rate), None) => SystemConfig::new(rate, raw.service_rates, raw.buffer_capacity),
            (None, Some(load)) => {
                SystemConfig::with_load(load, raw.service_rates, raw.buffer_capacity)
            }
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "give either arrival_rate or load, not both".into(),
            )),
            (None, None) => Err(Error::InvalidConfig(
                "missing arrival_rate (or load)".into(),
            )),
        }
    }
}

impl From<SystemConfig> for RawConfig {
    fn from(config: SystemConfig) -> Self {
        RawConfig {
            arrival_rate: Some(config.arrival_rate),
            load: None,
            service_rates: config.service_rates,
            buffer_capacity: config.buffer_capacity,
        }
    }
}

impl SystemConfig {
    pub fn new(arrival_rate: f64, service_rates: Vec<f64>, buffer_capacity: usize) -> Result<Self> {
        Self::build(arrival_rate, service_rates, buffer_capacity, true)
    }

    /// Skips the stability check. The finite buffer keeps the kernel well
    /// defined for any load; only kernel tests use this.
    #[cfg(test)]
    pub(crate) fn new_overloaded(arrival_rate: f64, service_rates: Vec<f64>, buffer_capacity: usize) -> Result<Self> {
        Self::build(arrival_rate, service_rates, buffer_capacity, false)
    }

    fn build(arrival_rate: f64, service_rates: Vec<f64>, buffer_capacity: usize, stable: bool) -> Result<Self> {
        if service_rates.is_empty() {
            return Err(Error::InvalidConfig("at least one server is required".into()));
        }
        if service_rates.len() > MAX_SERVERS {
            return Err(Error::InvalidConfig(format!(
                "{} servers exceeds the supported maximum of {MAX_SERVERS}",
                service_rates.len()
            )));
        }
        if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "arrival rate must be positive and finite, got {arrival_rate}"
            )));
        }
        if let Some(bad) = service_rates.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "service rates must be positive and finite, got {bad}"
            )));
        }
        if service_rates.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "service rates must be sorted non-increasing (fastest server first)".into(),
            ));
        }
        if buffer_capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be at least 1".into()));
        }
        let capacity: f64 = service_rates.iter().sum();
        if stable && arrival_rate >= capacity {
            return Err(Error::InvalidConfig(format!(
                "unstable system: arrival rate {arrival_rate} >= total service rate {capacity}"
            )));
        }

        let total = arrival_rate + capacity;
        let mut event_cdf = Vec::with_capacity(service_rates.len() + 1);
        let mut acc = arrival_rate / total;
        event_cdf.push(acc);
        for mu in &service_rates {
            acc += mu / total;
            event_cdf.push(acc);
        }

        Ok(SystemConfig {
            arrival_rate,
            service_rates,
            buffer_capacity,
            event_cdf,
        })
    }

    /// Builds a configuration from the load `ρ = λ / Σμ`.
    pub fn with_load(load: f64, service_rates: Vec<f64>, buffer_capacity: usize) -> Result<Self> {
        if !(load.is_finite() && load > 0.0 && load < 1.0) {
            return Err(Error::InvalidConfig(format!("load must lie in (0, 1), got {load}")));
        }
        let capacity: f64 = service_rates.iter().sum();
        SystemConfig::new(load * capacity, service_rates, buffer_capacity)
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn service_rates(&self) -> &[f64] {
        &self.service_rates
    }

    pub fn service_rate(&self, server: usize) -> f64 {
        self.service_rates[server]
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_capacity
    }

    /// Number of servers `k`.
    pub fn num_servers(&self) -> usize {
        self.service_rates.len()
    }

    pub fn total_service_rate(&self) -> f64 {
        self.service_rates.iter().sum()
    }

    /// Uniformization rate `Λ = λ + Σμ`.
    pub fn uniformization_rate(&self) -> f64 {
        self.arrival_rate + self.total_service_rate()
    }

    pub fn load(&self) -> f64 {
        self.arrival_rate / self.total_service_rate()
    }

    /// Number of tabular states `(l_M + 1) · 2^k`.
    pub fn num_states(&self) -> usize {
        (self.buffer_capacity + 1) << self.num_servers()
    }

    /// Largest possible cost `l_M + k`.
    pub fn max_cost(&self) -> usize {
        self.buffer_capacity + self.num_servers()
    }

    /// Per-epoch event probabilities of the uniformized chain: the arrival
    /// probability `λ/Λ` and one departure probability `μ_i/Λ` per server.
    /// Departures at idle servers are fictitious.
    pub fn event_probs(&self) -> (f64, Vec<f64>) {
        let total = self.uniformization_rate();
        (
            self.arrival_rate / total,
            self.service_rates.iter().map(|mu| mu / total).collect(),
        )
    }

    /// Maps a uniform variate in `[0, 1)` to an event: `None` for an arrival,
    /// `Some(i)` for a (possibly fictitious) departure at server `i`.
    pub(crate) fn event_for(&self, u: f64) -> Option<usize> {
        if u < self.event_cdf[0] {
            return None;
        }
        let k = self.num_servers();
        for i in 0..k {
            if u < self.event_cdf[i + 1] {
                return Some(i);
            }
        }
        // Rounding can leave the last cumulative value a hair below 1.
        Some(k - 1)
    }

    /// Same rates with a different arrival rate (used by load sweeps).
    pub fn with_arrival_rate(&self, arrival_rate: f64) -> Result<Self> {
        SystemConfig::new(arrival_rate, self.service_rates.clone(), self.buffer_capacity)
    }
}

/// `n` service rates linearly spaced from `fastest` down to `slowest`.
pub fn linspace_rates(fastest: f64, slowest: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![fastest],
        _ => (0..n)
            .map(|i| fastest + (slowest - fastest) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
