//! Experiment specifications as read from JSON.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use hetroute_core::achq::Hyperparams;
use hetroute_core::SystemConfig;
use serde::{Deserialize, Deserializer, Serialize};

pub const DEFAULT_HORIZON: u64 = 10_000_000;
pub const DEFAULT_SEED_COUNT: u64 = 10;
pub const DEFAULT_GAMMA: f64 = 0.99;

/// A problem with the spec itself. Maps to exit status 2.
#[derive(Debug)]
pub struct SpecError(pub String);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid spec: {}", self.0)
    }
}

impl std::error::Error for SpecError {}

pub fn spec_err(msg: impl Into<String>) -> anyhow::Error {
    SpecError(msg.into()).into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Rvi(RviSpec),
    Train(TrainSpec),
    TrainDiscounted(TrainSpec),
    Simulate(SimulateSpec),
    Compare(CompareSpec),
    Verify2(VerifySpec),
    Sweep(SweepSpec),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Rvi(_) => "rvi",
            ExperimentSpec::Train(_) => "train",
            ExperimentSpec::TrainDiscounted(_) => "train-discounted",
            ExperimentSpec::Simulate(_) => "simulate",
            ExperimentSpec::Compare(_) => "compare",
            ExperimentSpec::Verify2(_) => "verify2",
            ExperimentSpec::Sweep(_) => "sweep",
        }
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            ExperimentSpec::Rvi(s) => s.out.as_ref(),
            ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => s.out.as_ref(),
            ExperimentSpec::Simulate(s) => s.out.as_ref(),
            ExperimentSpec::Compare(s) => s.out.as_ref(),
            ExperimentSpec::Verify2(s) => s.out.as_ref(),
            ExperimentSpec::Sweep(s) => s.out.as_ref(),
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        let slot = match self {
            ExperimentSpec::Rvi(s) => &mut s.out,
            ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => &mut s.out,
            ExperimentSpec::Simulate(s) => &mut s.out,
            ExperimentSpec::Compare(s) => &mut s.out,
            ExperimentSpec::Verify2(s) => &mut s.out,
            ExperimentSpec::Sweep(s) => &mut s.out,
        };
        *slot = Some(out);
    }

    /// Applies `--seed`; returns false when the kind takes no seeds.
    pub fn set_seeds(&mut self, seeds: Vec<u64>) -> bool {
        match self {
            ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => s.seeds = Some(seeds),
            ExperimentSpec::Simulate(s) => s.seeds = seeds,
            ExperimentSpec::Compare(s) => s.seeds = seeds,
            ExperimentSpec::Sweep(s) => s.seeds = seeds,
            ExperimentSpec::Rvi(_) | ExperimentSpec::Verify2(_) => return false,
        }
        true
    }

    /// Applies `--horizon`: the training horizon for train kinds, the
    /// evaluation horizon otherwise. Returns false when the kind has none.
    pub fn set_horizon(&mut self, horizon: u64) -> bool {
        match self {
            ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => s.hyperparams.horizon = horizon,
            ExperimentSpec::Simulate(s) => s.horizon = horizon,
            ExperimentSpec::Compare(s) => s.horizon = horizon,
            ExperimentSpec::Sweep(s) => s.horizon = horizon,
            ExperimentSpec::Rvi(_) | ExperimentSpec::Verify2(_) => return false,
        }
        true
    }

    /// Fills defaults that depend on other fields so the manifest records
    /// the values actually used.
    pub fn resolve(&mut self) {
        match self {
            ExperimentSpec::Train(s) => {
                s.seeds.get_or_insert_with(|| vec![s.hyperparams.seed]);
            }
            ExperimentSpec::TrainDiscounted(s) => {
                s.seeds.get_or_insert_with(|| vec![s.hyperparams.seed]);
                s.hyperparams.gamma.get_or_insert(DEFAULT_GAMMA);
            }
            ExperimentSpec::Simulate(s) => s.burn_in = Some(s.eval().burn_in),
            ExperimentSpec::Compare(s) => {
                s.burn_in = Some(s.eval().burn_in);
                if s.reference.is_none() {
                    s.reference = s.policies.first().map(PolicyEntry::name);
                }
            }
            ExperimentSpec::Sweep(s) => s.burn_in = Some(s.eval().burn_in),
            ExperimentSpec::Rvi(_) | ExperimentSpec::Verify2(_) => {}
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> anyhow::Result<()> {
        match self {
            ExperimentSpec::Rvi(s) => {
                if !(s.tolerance > 0.0) {
                    return Err(spec_err("tolerance must be positive"));
                }
                if s.max_iterations == 0 {
                    return Err(spec_err("max_iterations must be at least 1"));
                }
            }
            ExperimentSpec::Train(s) | ExperimentSpec::TrainDiscounted(s) => {
                if matches!(self, ExperimentSpec::Train(_)) && s.hyperparams.gamma.is_some() {
                    return Err(spec_err("hyperparams.gamma selects the discounted critic; use kind train-discounted"));
                }
                check_seeds(s.seeds.as_deref().unwrap_or(&[s.hyperparams.seed]))?;
                s.hyperparams.validate(&s.system).map_err(|e| spec_err(e.to_string()))?;
                s.hyperparams
                    .initial_actor(&s.system)
                    .and_then(|a| a.validate().map(|_| a))
                    .map_err(|e| spec_err(e.to_string()))?;
                if s.hyperparams.init.resolve(&s.system, 0).len() + 1 != s.system.num_servers() {
                    return Err(spec_err("initial thresholds must have one entry per server after the first"));
                }
            }
            ExperimentSpec::Simulate(s) => {
                check_eval(s.eval())?;
                check_seeds(&s.seeds)?;
                s.policy.validate(&s.system)?;
            }
            ExperimentSpec::Compare(s) => {
                check_eval(s.eval())?;
                check_seeds(&s.seeds)?;
                if s.policies.is_empty() {
                    return Err(spec_err("compare needs at least one policy"));
                }
                let mut names = HashSet::new();
                for p in &s.policies {
                    p.validate(&s.system)?;
                    if !names.insert(p.name()) {
                        return Err(spec_err(format!("duplicate policy name {}", p.name())));
                    }
                }
                if let Some(r) = &s.reference {
                    if !names.contains(r) {
                        return Err(spec_err(format!("reference {r} is not one of the policies")));
                    }
                }
            }
            ExperimentSpec::Verify2(s) => s.validate()?,
            ExperimentSpec::Sweep(s) => s.validate()?,
        }
        Ok(())
    }
}

fn check_seeds(seeds: &[u64]) -> anyhow::Result<()> {
    if seeds.is_empty() {
        return Err(spec_err("seeds must be nonempty"));
    }
    let unique: HashSet<_> = seeds.iter().collect();
    if unique.len() != seeds.len() {
        return Err(spec_err("seeds must be distinct"));
    }
    Ok(())
}

/// Accepts a single seed or a list.
fn seed_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(u64),
        Many(Vec<u64>),
    }
    Raw::deserialize(d).map(|r| match r {
        Raw::One(s) => vec![s],
        Raw::Many(v) => v,
    })
}

fn opt_seed_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u64>>, D::Error> {
    seed_list(d).map(Some)
}

pub fn default_seeds() -> Vec<u64> {
    (0..DEFAULT_SEED_COUNT).collect()
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

fn default_rvi_tolerance() -> f64 {
    1e-9
}

fn default_max_iterations() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RviSpec {
    pub system: SystemConfig,
    #[serde(default = "default_rvi_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub system: SystemConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    /// One training run per seed; defaults to `hyperparams.seed`.
    #[serde(default, deserialize_with = "opt_seed_list")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Horizon and burn-in of Monte Carlo evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Eval {
    pub horizon: u64,
    pub burn_in: u64,
}

fn eval_of(horizon: u64, burn_in: Option<u64>) -> Eval {
    Eval {
        horizon,
        burn_in: burn_in.unwrap_or_else(|| hetroute_core::sim::default_burn_in(horizon)),
    }
}

fn check_eval(e: Eval) -> anyhow::Result<()> {
    if e.horizon <= e.burn_in {
        return Err(spec_err(format!("horizon {} must exceed burn-in {}", e.horizon, e.burn_in)));
    }
    Ok(())
}

macro_rules! eval_accessors {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn eval(&self) -> Eval {
                eval_of(self.horizon, self.burn_in)
            }
        }
    )*};
}

eval_accessors!(SimulateSpec, CompareSpec, SweepSpec);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub system: SystemConfig,
    pub policy: PolicyEntry,
    #[serde(default = "default_seeds", deserialize_with = "seed_list")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub system: SystemConfig,
    pub policies: Vec<PolicyEntry>,
    /// Baseline for the improvement column; defaults to the first policy.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default = "default_seeds", deserialize_with = "seed_list")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_gammas() -> Vec<f64> {
    vec![0.9, 0.99, 0.999]
}

fn default_sigmas() -> Vec<f64> {
    vec![10.0, 50.0]
}

fn default_offsets() -> Vec<f64> {
    vec![-2.0, -1.0, 0.0, 1.0, 2.0]
}

fn default_grid_step() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Two-server system; `loads` re-scales its arrival rate.
    pub system: SystemConfig,
    #[serde(default)]
    pub loads: Option<Vec<f64>>,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    /// Base thresholds are `h + 0.5 + offset` for the discounted-optimal `h`.
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Upper end of the scan; defaults to three times the largest base
    /// threshold (at least 3).
    #[serde(default)]
    pub grid_max: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl VerifySpec {
    pub fn loads(&self) -> Vec<f64> {
        self.loads.clone().unwrap_or_else(|| vec![self.system.load()])
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.system.num_servers() != 2 {
            return Err(spec_err("verify2 needs exactly two servers"));
        }
        if self.loads().iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(spec_err("loads must lie in (0, 1)"));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(spec_err("gammas must be nonempty and lie in (0, 1)"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(spec_err("sigmas must be nonempty and positive"));
        }
        if self.offsets.is_empty() || self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(spec_err("offsets must be nonempty and finite"));
        }
        if !(self.grid_step > 0.0) {
            return Err(spec_err("grid_step must be positive"));
        }
        if let Some(m) = self.grid_max {
            if !(m >= 2.0 * self.grid_step) {
                return Err(spec_err("grid_max must leave at least three grid points"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Rates linearly spaced between the base system's fastest and slowest.
    NumServers,
    /// Load with the base rates.
    Load,
    /// Ratio fastest/slowest: rates linearly spaced from the base fastest
    /// rate down to fastest/ratio, base server count and load.
    Heterogeneity,
    /// Power-of-d sample size applied to every policy.
    PodD,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::NumServers => "num_servers",
            Axis::Load => "load",
            Axis::Heterogeneity => "heterogeneity",
            Axis::PodD => "pod_d",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub system: SystemConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    /// ACHQ training settings used at every point.
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default = "default_seeds", deserialize_with = "seed_list")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl SweepSpec {
    fn validate(&self) -> anyhow::Result<()> {
        check_eval(self.eval())?;
        check_seeds(&self.seeds)?;
        if self.values.is_empty() {
            return Err(spec_err("sweep needs at least one axis value"));
        }
        if self.hyperparams.pod_d.is_some() {
            return Err(spec_err("set power-of-d through the pod_d axis, not hyperparams"));
        }
        let k = self.system.num_servers() as f64;
        for v in &self.values {
            let ok = match self.axis {
                Axis::NumServers => v.fract() == 0.0 && *v >= 1.0 && *v <= hetroute_core::config::MAX_SERVERS as f64,
                Axis::Load => *v > 0.0 && *v < 1.0,
                Axis::Heterogeneity => v.is_finite() && *v >= 1.0,
                Axis::PodD => v.fract() == 0.0 && *v >= 1.0 && *v <= k,
            };
            if !ok {
                return Err(spec_err(format!("{} is not a valid {} value", v, self.axis.as_str())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fas,
    Rsrt,
    Rvi,
    Threshold,
    Soft,
    Achq,
}

impl PolicyKind {
    fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Fas => "fas",
            PolicyKind::Rsrt => "rsrt",
            PolicyKind::Rvi => "rvi",
            PolicyKind::Threshold => "threshold",
            PolicyKind::Soft => "soft",
            PolicyKind::Achq => "achq",
        }
    }
}

/// A policy selection. In JSON either a bare type name such as `"fas"` or
/// an object with a `type` field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFields {
    #[serde(rename = "type")]
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Thresholds of servers `2..=k` for `threshold` and `soft`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Training settings for `achq`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pod_d: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct PolicyEntry(pub PolicyFields);

impl<'de> Deserialize<'de> for PolicyEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let value = serde_json::Value::deserialize(d)?;
        let fields = match value {
            serde_json::Value::String(s) => {
                let kind = serde_json::from_value(serde_json::Value::String(s.clone()))
                    .map_err(|_| D::Error::custom(format!("unknown policy type {s:?}")))?;
                PolicyFields {
                    kind,
                    name: None,
                    thresholds: None,
                    sigma: None,
                    hyperparams: None,
                    pod_d: None,
                }
            }
            other => serde_json::from_value(other).map_err(D::Error::custom)?,
        };
        Ok(PolicyEntry(fields))
    }
}

impl PolicyEntry {
    pub fn simple(kind: PolicyKind) -> Self {
        PolicyEntry(PolicyFields {
            kind,
            name: None,
            thresholds: None,
            sigma: None,
            hyperparams: None,
            pod_d: None,
        })
    }

    /// Explicit name, else the type name with a `-pod<d>` suffix.
    pub fn name(&self) -> String {
        let f = &self.0;
        f.name.clone().unwrap_or_else(|| match f.pod_d {
            Some(d) => format!("{}-pod{d}", f.kind.as_str()),
            None => f.kind.as_str().to_string(),
        })
    }

    pub fn validate(&self, config: &SystemConfig) -> anyhow::Result<()> {
        let f = &self.0;
        let name = self.name();
        let k = config.num_servers();
        if let Some(d) = f.pod_d {
            if d == 0 || d > k {
                return Err(spec_err(format!("{name}: pod_d must lie in 1..={k}")));
            }
        }
        let needs_thresholds = matches!(f.kind, PolicyKind::Threshold | PolicyKind::Soft);
        match (&f.thresholds, needs_thresholds) {
            (Some(t), true) => {
                if t.len() + 1 != k {
                    return Err(spec_err(format!("{name}: expected {} thresholds, got {}", k - 1, t.len())));
                }
                if t.iter().any(|x| !x.is_finite()) {
                    return Err(spec_err(format!("{name}: thresholds must be finite")));
                }
            }
            (None, true) => return Err(spec_err(format!("{name}: thresholds are required"))),
            (Some(_), false) => return Err(spec_err(format!("{name}: thresholds only apply to threshold and soft"))),
            (None, false) => {}
        }
        match (f.sigma, f.kind) {
            (Some(s), PolicyKind::Soft) if !(s.is_finite() && s > 0.0) => {
                return Err(spec_err(format!("{name}: sigma must be positive")))
            }
            (None, PolicyKind::Soft) => return Err(spec_err(format!("{name}: sigma is required"))),
            (Some(_), kind) if kind != PolicyKind::Soft => {
                return Err(spec_err(format!("{name}: sigma only applies to soft")))
            }
            _ => {}
        }
        match (&f.hyperparams, f.kind) {
            (Some(_), kind) if kind != PolicyKind::Achq => {
                return Err(spec_err(format!("{name}: hyperparams only apply to achq")))
            }
            (_, PolicyKind::Achq) => {
                let hp = self.achq_hyperparams()?;
                hp.validate(config).map_err(|e| spec_err(format!("{name}: {e}")))?;
                if hp.init.resolve(config, hp.seed).len() + 1 != k {
                    return Err(spec_err(format!("{name}: initial thresholds must have {} entries", k - 1)));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Training settings with the entry's `pod_d` folded in.
    pub fn achq_hyperparams(&self) -> anyhow::Result<Hyperparams> {
        let f = &self.0;
        let mut hp = f.hyperparams.clone().unwrap_or_default();
        match (hp.pod_d, f.pod_d) {
            (Some(a), Some(b)) if a != b => {
                return Err(spec_err(format!("{}: pod_d {b} disagrees with hyperparams.pod_d {a}", self.name())))
            }
            (None, Some(b)) => hp.pod_d = Some(b),
            _ => {}
        }
        Ok(hp)
    }
}

/// Parses `--seed`: a single integer or a comma-separated list.
pub fn parse_seed_arg(arg: &str) -> anyhow::Result<Vec<u64>> {
    let seeds = arg
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| spec_err(format!("bad seed {s:?}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    check_seeds(&seeds)?;
    Ok(seeds)
}

/// Parses a spec from JSON text. `kind`, when given, is inserted if the
/// document has none and must match otherwise.
pub fn parse_spec(text: &str, kind: Option<&[&str]>) -> anyhow::Result<ExperimentSpec> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| spec_err(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| spec_err("spec must be a JSON object"))?;
    if let Some(allowed) = kind {
        match obj.get("kind").and_then(|k| k.as_str()) {
            Some(k) if !allowed.contains(&k) => {
                return Err(spec_err(format!("spec kind {k:?} does not match subcommand {}", allowed[0])))
            }
            Some(_) => {}
            None if obj.contains_key("kind") => return Err(spec_err("kind must be a string")),
            None => {
                obj.insert("kind".into(), allowed[0].into());
            }
        }
    }
    serde_json::from_value(value).map_err(|e| spec_err(e.to_string()))
}
