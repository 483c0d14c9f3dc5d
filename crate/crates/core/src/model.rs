//! Network data model and validated ingestion from the JSON network file.
//!
//! All quantities are stored in MW, radians and $/MWh. Susceptances are kept
//! in MW per radian so that nodal balances hold without a per-unit base.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Probability level applied to feeders that do not specify one.
pub const DEFAULT_ALPHA: f64 = 0.98;

/// Default voltage angle bound magnitude (30 degrees), rounded as in the bundled data.
#[allow(clippy::approx_constant)]
pub const DEFAULT_ANGLE_BOUND: f64 = 0.5236;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    #[serde(rename = "slack")]
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feeder {
    #[serde(rename = "from")]
    pub from_bus: BusId,
    #[serde(rename = "to")]
    pub to_bus: BusId,
    #[serde(rename = "susceptance_mw_per_rad")]
    pub susceptance: f64,
    #[serde(rename = "p_max_mw")]
    pub p_max: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Feeder {
    pub fn label(&self) -> String {
        format!("({},{})", self.from_bus, self.to_bus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: BusId,
    #[serde(rename = "price_per_mwh")]
    pub price: f64,
    #[serde(rename = "p_min_mw")]
    pub p_min: f64,
    #[serde(rename = "p_max_mw")]
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackSource {
    pub bus: BusId,
    #[serde(rename = "price_per_mwh")]
    pub price: f64,
    #[serde(rename = "p_min_mw")]
    pub p_min: f64,
    #[serde(rename = "p_max_mw")]
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindFarm {
    pub bus: BusId,
    #[serde(rename = "p_max_mw")]
    pub p_max: f64,
    #[serde(rename = "forecast_mw")]
    pub forecast: f64,
    #[serde(rename = "dist")]
    pub distribution: DistributionSpec,
}

impl WindFarm {
    /// Re-targets the farm to a new forecast with a Beta law on `[0, p_max]`
    /// whose mean equals the forecast. The first shape parameter is `shape_a`;
    /// the second follows from the forecast/capacity ratio.
    pub fn with_mean_matched_beta(&self, forecast: f64, shape_a: f64) -> Result<WindFarm, ModelError> {
        let ratio = forecast / self.p_max;
        if !(ratio > 0.0 && ratio < 1.0) || !(shape_a > 0.0) {
            return Err(ModelError::Invariant(vec![Violation::new(
                ViolationKind::Distribution,
                format!(
                    "wind farm at bus {}: mean-matched Beta needs 0 < forecast < p_max and a > 0 (forecast {forecast}, p_max {}, a {shape_a})",
                    self.bus, self.p_max
                ),
            )]));
        }
        let shape_b = shape_a * (1.0 - ratio) / ratio;
        Ok(WindFarm {
            bus: self.bus,
            p_max: self.p_max,
            forecast,
            distribution: DistributionSpec {
                kind: Distribution::Beta { a: shape_a, b: shape_b },
                support: Support { lo: 0.0, hi: self.p_max },
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: BusId,
    #[serde(rename = "mean_mw")]
    pub mean: f64,
    #[serde(rename = "dist")]
    pub distribution: DistributionSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Beta(a, b) scaled onto the support interval.
    Beta {
        a: f64,
        b: f64,
    },
    /// Normal(mean, sigma) truncated to the support interval.
    TruncatedNormal {
        mean: f64,
        sigma: f64,
    },
    PointMass {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DistributionSpec {
    pub kind: Distribution,
    pub support: Support,
}

impl DistributionSpec {
    pub fn point(value: f64) -> Self {
        DistributionSpec { kind: Distribution::PointMass { value }, support: Support { lo: value, hi: value } }
    }

    /// Analytic mean, in MW.
    pub fn mean(&self) -> f64 {
        let Support { lo, hi } = self.support;
        match self.kind {
            Distribution::Beta { a, b } => lo + (hi - lo) * a / (a + b),
            Distribution::TruncatedNormal { mean, sigma } => {
                let (alpha, beta) = ((lo - mean) / sigma, (hi - mean) / sigma);
                let z = std_normal_cdf(beta) - std_normal_cdf(alpha);
                mean + sigma * (std_normal_pdf(alpha) - std_normal_pdf(beta)) / z
            }
            Distribution::PointMass { value } => value,
        }
    }

    /// Analytic variance, in MW².
    pub fn variance(&self) -> f64 {
        let Support { lo, hi } = self.support;
        match self.kind {
            Distribution::Beta { a, b } => {
                let w = hi - lo;
                w * w * a * b / ((a + b) * (a + b) * (a + b + 1.0))
            }
            Distribution::TruncatedNormal { mean, sigma } => {
                let (alpha, beta) = ((lo - mean) / sigma, (hi - mean) / sigma);
                let z = std_normal_cdf(beta) - std_normal_cdf(alpha);
                let (pa, pb) = (std_normal_pdf(alpha), std_normal_pdf(beta));
                let t1 = (alpha * pa - beta * pb) / z;
                let t2 = (pa - pb) / z;
                sigma * sigma * (1.0 + t1 - t2 * t2)
            }
            Distribution::PointMass { .. } => 0.0,
        }
    }

    fn violations(&self, owner: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let Support { lo, hi } = self.support;
        let mut push = |msg: String| out.push(Violation::new(ViolationKind::Distribution, format!("{owner}: {msg}")));
        if !lo.is_finite() || !hi.is_finite() {
            push("support bounds must be finite".into());
        }
        match self.kind {
            Distribution::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
                    push(format!("beta shape parameters must be positive (a = {a}, b = {b})"));
                }
                if !(lo < hi) {
                    push(format!("beta support must satisfy lo < hi (got [{lo}, {hi}])"));
                }
            }
            Distribution::TruncatedNormal { mean, sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() || !mean.is_finite() {
                    push(format!("truncated normal needs finite mean and sigma > 0 (sigma = {sigma})"));
                }
                if !(lo < hi) {
                    push(format!("truncated normal support must satisfy lo < hi (got [{lo}, {hi}])"));
                }
            }
            Distribution::PointMass { value } => {
                if !(lo <= value && value <= hi) {
                    push(format!("point mass {value} outside support [{lo}, {hi}]"));
                }
            }
        }
        out
    }
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistribution {
    #[serde(rename = "type")]
    kind: String,
    params: RawParams,
    support_mw: [f64; 2],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

impl TryFrom<RawDistribution> for DistributionSpec {
    type Error = String;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        let p = &raw.params;
        let only = |allowed: &[&str]| -> Result<(), String> {
            let present = [("a", p.a), ("b", p.b), ("mean", p.mean), ("sigma", p.sigma), ("value", p.value)];
            for (name, v) in present {
                if v.is_some() && !allowed.contains(&name) {
                    return Err(format!("parameter `{name}` is not valid for distribution type `{}`", raw.kind));
                }
            }
            Ok(())
        };
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| format!("distribution type `{}` requires parameter `{name}`", raw.kind));
        let kind = match raw.kind.as_str() {
            "beta" => {
                only(&["a", "b"])?;
                Distribution::Beta { a: need("a", p.a)?, b: need("b", p.b)? }
            }
            "truncated_normal" => {
                only(&["mean", "sigma"])?;
                Distribution::TruncatedNormal { mean: need("mean", p.mean)?, sigma: need("sigma", p.sigma)? }
            }
            "point" => {
                only(&["value"])?;
                Distribution::PointMass { value: need("value", p.value)? }
            }
            other => return Err(format!("unsupported distribution type `{other}` (expected beta, truncated_normal or point)")),
        };
        Ok(DistributionSpec { kind, support: Support { lo: raw.support_mw[0], hi: raw.support_mw[1] } })
    }
}

impl From<DistributionSpec> for RawDistribution {
    fn from(d: DistributionSpec) -> Self {
        let (kind, params) = match d.kind {
            Distribution::Beta { a, b } => ("beta", RawParams { a: Some(a), b: Some(b), ..Default::default() }),
            Distribution::TruncatedNormal { mean, sigma } => {
                ("truncated_normal", RawParams { mean: Some(mean), sigma: Some(sigma), ..Default::default() })
            }
            Distribution::PointMass { value } => ("point", RawParams { value: Some(value), ..Default::default() }),
        };
        RawDistribution { kind: kind.to_string(), params, support_mw: [d.support.lo, d.support.hi] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AngleBounds {
    fn default() -> Self {
        AngleBounds { min: -DEFAULT_ANGLE_BOUND, max: DEFAULT_ANGLE_BOUND }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub feeders: Vec<Feeder>,
    pub generators: Vec<Generator>,
    pub slack_source: SlackSource,
    #[serde(rename = "wind")]
    pub wind_farms: Vec<WindFarm>,
    pub loads: Vec<Load>,
    #[serde(rename = "angle_bounds_rad", default)]
    pub angle_bounds: AngleBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    SlackCount,
    DuplicateBus,
    UnknownBus,
    SelfLoop,
    DuplicateFeeder,
    FeederParameter,
    AlphaRange,
    GeneratorLimits,
    DuplicateDevice,
    SlackSource,
    WindFarm,
    Load,
    Distribution,
    Disconnected,
    AngleBounds,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation { kind, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn join(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read network file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("network parse error at `{field}` (line {line}, column {column}): {message}")]
    Parse { field: String, line: usize, column: usize, message: String },
    #[error("duplicate feeder: {}", join(.0))]
    DuplicateFeeder(Vec<Violation>),
    #[error("reference error: {}", join(.0))]
    Reference(Vec<Violation>),
    #[error("network invariant violated: {}", join(.0))]
    Invariant(Vec<Violation>),
}

impl ModelError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::DuplicateFeeder(v) | ModelError::Reference(v) | ModelError::Invariant(v) => v,
            _ => &[],
        }
    }
}

impl Network {
    pub fn slack_bus(&self) -> BusId {
        self.slack_source.bus
    }

    pub fn bus_ids(&self) -> Vec<BusId> {
        let mut ids: Vec<BusId> = self.buses.iter().map(|b| b.id).collect();
        ids.sort();
        ids
    }

    pub fn feeder_index(&self, a: BusId, b: BusId) -> Option<usize> {
        self.feeders.iter().position(|f| (f.from_bus == a && f.to_bus == b) || (f.from_bus == b && f.to_bus == a))
    }

    /// Wind farm buses in ascending order.
    pub fn wind_buses(&self) -> Vec<BusId> {
        let mut v: Vec<BusId> = self.wind_farms.iter().map(|w| w.bus).collect();
        v.sort();
        v
    }

    /// Load buses in ascending order.
    pub fn load_buses(&self) -> Vec<BusId> {
        let mut v: Vec<BusId> = self.loads.iter().map(|l| l.bus).collect();
        v.sort();
        v
    }

    /// Generator buses in ascending order.
    pub fn generator_buses(&self) -> Vec<BusId> {
        let mut v: Vec<BusId> = self.generators.iter().map(|g| g.bus).collect();
        v.sort();
        v
    }

    pub fn wind_farm(&self, bus: BusId) -> Option<&WindFarm> {
        self.wind_farms.iter().find(|w| w.bus == bus)
    }

    pub fn load(&self, bus: BusId) -> Option<&Load> {
        self.loads.iter().find(|l| l.bus == bus)
    }

    pub fn generator(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    /// Sets every feeder's probability level.
    pub fn with_alpha(mut self, alpha: f64) -> Network {
        for f in &mut self.feeders {
            f.alpha = alpha;
        }
        self
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("network serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a network from JSON text and validates it.
pub fn parse_network(text: &str) -> Result<Network, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let net: Network = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ModelError::Parse { field, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })?;
    let violations = validate_network(&net);
    if violations.is_empty() {
        return Ok(net);
    }
    if violations.iter().any(|v| v.kind == ViolationKind::DuplicateFeeder) {
        Err(ModelError::DuplicateFeeder(violations))
    } else if violations.iter().any(|v| v.kind == ViolationKind::UnknownBus) {
        Err(ModelError::Reference(violations))
    } else {
        Err(ModelError::Invariant(violations))
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    parse_network(&text)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut text = net.to_json_string();
    text.push('\n');
    std::fs::write(path, text)
}

/// Returns every violated network invariant; empty when the network is valid.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |kind, msg: String| out.push(Violation::new(kind, msg));

    if net.buses.is_empty() {
        v(ViolationKind::Empty, "network has no buses".into());
    }

    let mut ids = BTreeSet::new();
    for b in &net.buses {
        if !ids.insert(b.id) {
            v(ViolationKind::DuplicateBus, format!("duplicate bus id {}", b.id));
        }
    }
    let slack: Vec<BusId> = net.buses.iter().filter(|b| b.is_slack).map(|b| b.id).collect();
    if slack.len() != 1 {
        v(ViolationKind::SlackCount, format!("exactly one slack bus required, found {}", slack.len()));
    }
    let known = |id: BusId| ids.contains(&id);

    let mut pairs = BTreeSet::new();
    for f in &net.feeders {
        let label = f.label();
        for end in [f.from_bus, f.to_bus] {
            if !known(end) {
                v(ViolationKind::UnknownBus, format!("feeder {label} references absent bus {end}"));
            }
        }
        if f.from_bus == f.to_bus {
            v(ViolationKind::SelfLoop, format!("feeder {label} connects a bus to itself"));
        } else {
            let key = (f.from_bus.min(f.to_bus), f.from_bus.max(f.to_bus));
            if !pairs.insert(key) {
                v(ViolationKind::DuplicateFeeder, format!("more than one feeder between buses {} and {}", key.0, key.1));
            }
        }
        if !(f.susceptance > 0.0) || !f.susceptance.is_finite() {
            v(ViolationKind::FeederParameter, format!("feeder {label}: susceptance must be positive"));
        }
        if !(f.p_max > 0.0) || !f.p_max.is_finite() {
            v(ViolationKind::FeederParameter, format!("feeder {label}: p_max must be positive"));
        }
        if f.alpha < 0.5 {
            v(ViolationKind::AlphaRange, format!("feeder {label}: alpha below 0.5 ({})", f.alpha));
        } else if !(f.alpha <= 1.0) {
            v(ViolationKind::AlphaRange, format!("feeder {label}: alpha above 1 ({})", f.alpha));
        }
    }

    let mut gen_buses = BTreeSet::new();
    for g in &net.generators {
        if !known(g.bus) {
            v(ViolationKind::UnknownBus, format!("generator references absent bus {}", g.bus));
        }
        if !gen_buses.insert(g.bus) {
            v(ViolationKind::DuplicateDevice, format!("more than one generator at bus {}", g.bus));
        }
        if !(0.0 <= g.p_min && g.p_min <= g.p_max) || !g.p_max.is_finite() {
            v(ViolationKind::GeneratorLimits, format!("generator at bus {}: need 0 <= p_min <= p_max", g.bus));
        }
        if !g.price.is_finite() {
            v(ViolationKind::GeneratorLimits, format!("generator at bus {}: price must be finite", g.bus));
        }
    }

    let s = &net.slack_source;
    if !known(s.bus) {
        v(ViolationKind::UnknownBus, format!("slack source references absent bus {}", s.bus));
    } else if slack.len() == 1 && slack[0] != s.bus {
        v(ViolationKind::SlackSource, format!("slack source at bus {} but slack bus is {}", s.bus, slack[0]));
    }
    if !(s.p_min <= s.p_max) || !s.p_min.is_finite() || !s.p_max.is_finite() || !s.price.is_finite() {
        v(ViolationKind::SlackSource, "slack source: need finite p_min <= p_max and price".into());
    }

    let mut wind_buses = BTreeSet::new();
    for w in &net.wind_farms {
        if !known(w.bus) {
            v(ViolationKind::UnknownBus, format!("wind farm references absent bus {}", w.bus));
        }
        if !wind_buses.insert(w.bus) {
            v(ViolationKind::DuplicateDevice, format!("more than one wind farm at bus {}", w.bus));
        }
        if !(0.0 <= w.forecast && w.forecast <= w.p_max) {
            v(ViolationKind::WindFarm, format!("wind farm at bus {}: need 0 <= forecast <= p_max", w.bus));
        }
    }
    let mut load_buses = BTreeSet::new();
    for l in &net.loads {
        if !known(l.bus) {
            v(ViolationKind::UnknownBus, format!("load references absent bus {}", l.bus));
        }
        if !load_buses.insert(l.bus) {
            v(ViolationKind::DuplicateDevice, format!("more than one load at bus {}", l.bus));
        }
        if !(l.mean >= 0.0) {
            v(ViolationKind::Load, format!("load at bus {}: mean must be non-negative", l.bus));
        }
    }

    let ab = net.angle_bounds;
    if !(ab.min < 0.0 && 0.0 < ab.max) {
        v(ViolationKind::AngleBounds, format!("angle bounds must satisfy min < 0 < max (got [{}, {}])", ab.min, ab.max));
    }

    for w in &net.wind_farms {
        out.extend(w.distribution.violations(&format!("wind farm at bus {}", w.bus)));
    }
    for l in &net.loads {
        out.extend(l.distribution.violations(&format!("load at bus {}", l.bus)));
    }

    if !ids.is_empty() && !is_connected(&ids, &net.feeders) {
        out.push(Violation::new(ViolationKind::Disconnected, "graph not connected"));
    }
    out
}

fn is_connected(ids: &BTreeSet<BusId>, feeders: &[Feeder]) -> bool {
    let mut adj: BTreeMap<BusId, Vec<BusId>> = ids.iter().map(|&i| (i, Vec::new())).collect();
    for f in feeders {
        if ids.contains(&f.from_bus) && ids.contains(&f.to_bus) {
            adj.get_mut(&f.from_bus).unwrap().push(f.to_bus);
            adj.get_mut(&f.to_bus).unwrap().push(f.from_bus);
        }
    }
    let start = *ids.iter().next().unwrap();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(b) = queue.pop_front() {
        for &n in &adj[&b] {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == ids.len()
}
