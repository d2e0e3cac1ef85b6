use serde::Serialize;

use crate::config::SystemConfig;
use crate::exact::rvi::TabularPolicy;
use crate::mdp::{busy_pattern_string, mask, Action, State, StateSpace};

/// Threshold read off one busy pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternThreshold {
    pub busy: u32,
    pub fastest_idle: usize,
    /// Largest queue length that still waits. `None` means the pattern never
    /// routes; `Some(0)` means it routes at every nonzero queue length.
    pub threshold: Option<usize>,
    /// Wait below, route to the fastest idle server above.
    pub is_threshold: bool,
    /// Smallest queue length whose action breaks that shape.
    pub first_violation: Option<usize>,
}

impl PatternThreshold {
    pub fn threshold_f64(&self) -> f64 {
        self.threshold.map_or(f64::INFINITY, |t| t as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub num_servers: usize,
    pub patterns: Vec<PatternThreshold>,
    pub is_threshold_type: bool,
}

/// Inspects every busy pattern that has an idle server.
pub fn extract_thresholds(policy: &TabularPolicy, config: &SystemConfig) -> ThresholdReport {
    let k = config.num_servers();
    let space = StateSpace::new(config);
    let mut patterns = Vec::new();
    for busy in 0..mask(k) {
        let f = (!busy).trailing_zeros() as usize;
        let mut first_route = None;
        let mut first_violation = None;
        for l in 1..=config.buffer_capacity() {
            let a = policy.actions[space.index_of(&State::new(l, busy))];
            match (a, first_route) {
                (Action::Wait, None) => {}
                (Action::Route(i), None) if i == f => first_route = Some(l),
                (Action::Route(i), Some(_)) if i == f => {}
                _ => {
                    first_violation.get_or_insert(l);
                }
            }
        }
        patterns.push(PatternThreshold {
            busy,
            fastest_idle: f,
            threshold: first_route.map(|l| l - 1),
            is_threshold: first_violation.is_none(),
            first_violation,
        });
    }
    let is_threshold_type = patterns.iter().all(|p| p.is_threshold);
    ThresholdReport {
        num_servers: k,
        patterns,
        is_threshold_type,
    }
}

impl ThresholdReport {
    pub fn get(&self, busy: u32) -> Option<&PatternThreshold> {
        self.patterns.iter().find(|p| p.busy == busy)
    }

    /// Threshold for the pattern where servers `0..f` are busy and the rest
    /// idle.
    pub fn prefix_threshold(&self, f: usize) -> Option<&PatternThreshold> {
        self.get((1u32 << f) - 1)
    }

    /// Pairs of patterns that violate "faster idle server, lower threshold":
    /// `a` and `b` with `busy_a ⊆ busy_b` and `f_a < f_b` but
    /// `θ_a > θ_b`.
    pub fn speed_order_violations(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for a in &self.patterns {
            for b in &self.patterns {
                if a.busy & b.busy == a.busy
                    && a.fastest_idle < b.fastest_idle
                    && a.threshold_f64() > b.threshold_f64()
                {
                    out.push((a.busy, b.busy));
                }
            }
        }
        out
    }

    /// Pairs of patterns whose thresholds should coincide by symmetry but do
    /// not: the fastest idle servers have equal rates, the same number of
    /// equal-rate servers are busy and all other servers agree.
    pub fn equal_rate_violations(&self, config: &SystemConfig) -> Vec<(u32, u32)> {
        let rates = config.service_rates();
        let mut out = Vec::new();
        for a in &self.patterns {
            for b in &self.patterns {
                if a.busy >= b.busy || rates[a.fastest_idle] != rates[b.fastest_idle] {
                    continue;
                }
                let peers: u32 = (0..rates.len())
                    .filter(|&i| rates[i] == rates[a.fastest_idle])
                    .fold(0, |m, i| m | (1 << i));
                let same_others = a.busy & !peers == b.busy & !peers;
                let same_count = (a.busy & peers).count_ones() == (b.busy & peers).count_ones();
                if same_others && same_count && a.threshold != b.threshold {
                    out.push((a.busy, b.busy));
                }
            }
        }
        out
    }

    /// CSV rows `(busy_pattern, fastest_idle, threshold)`; servers are
    /// numbered from 1 and a pattern that never routes reports `inf`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> crate::error::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["busy_pattern", "fastest_idle", "threshold"])?;
        for p in &self.patterns {
            w.write_record([
                busy_pattern_string(p.busy, self.num_servers),
                (p.fastest_idle + 1).to_string(),
                p.threshold.map_or("inf".to_string(), |t| t.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ThresholdPolicy;

    fn cfg() -> SystemConfig {
        SystemConfig::with_load(0.4, vec![100.0, 25.0, 5.0], 10).unwrap()
    }

    #[test]
    fn fas_has_zero_thresholds() {
        let c = cfg();
        let fas = TabularPolicy::from_policy(&ThresholdPolicy::fas(&c), &c).unwrap();
        let r = extract_thresholds(&fas, &c);
        assert!(r.is_threshold_type);
        assert_eq!(r.patterns.len(), 7);
        assert!(r.patterns.iter().all(|p| p.threshold == Some(0)));
    }

    #[test]
    fn hard_thresholds_are_recovered() {
        let c = cfg();
        let pol = ThresholdPolicy::new(vec![0.0, 2.0, 6.5]).unwrap();
        let r = extract_thresholds(&TabularPolicy::from_policy(&pol, &c).unwrap(), &c);
        assert!(r.is_threshold_type);
        assert_eq!(r.get(0b001).unwrap().threshold, Some(2));
        assert_eq!(r.get(0b011).unwrap().threshold, Some(6));
        assert_eq!(r.prefix_threshold(2).unwrap().fastest_idle, 2);
        assert!(r.speed_order_violations().is_empty());
    }

    #[test]
    fn alternating_policy_is_not_threshold() {
        let c = cfg();
        let space = StateSpace::new(&c);
        let actions = space
            .iter()
            .map(|s| {
                let f = (!s.busy).trailing_zeros() as usize;
                if s.queue_len > 0 && f < 3 && s.queue_len % 2 == 0 {
                    Action::Route(f)
                } else {
                    Action::Wait
                }
            })
            .collect();
        let r = extract_thresholds(&TabularPolicy { actions }, &c);
        assert!(!r.is_threshold_type);
    }

    #[test]
    fn never_routing_reports_infinity() {
        let c = cfg();
        let pol = ThresholdPolicy::new(vec![0.0, 1e9, 1e9]).unwrap();
        let r = extract_thresholds(&TabularPolicy::from_policy(&pol, &c).unwrap(), &c);
        assert_eq!(r.get(0b001).unwrap().threshold, None);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("busy_pattern,fastest_idle,threshold\n"));
        assert!(text.contains(",2,inf"));
    }
}
