//! Scenario files.
//!
//! Durations are seconds. A minimal scenario:
//!
//! ```json
//! {
//!   "seed": 7, "duration": 3600, "probe_period": 10,
//!   "regions": [{"name": "eu", "country": "DE", "asns": [64500]}],
//!   "platforms": [{"alias": "cdnA", "perf": {"eu": {"latency_ms": 20}}}],
//!   "apps": [{"customer": "446b", "app": "0001", "policy": {"kind": "optimal_rtt"},
//!             "candidates": ["cdnA"], "cname_ttl_s": 20, "domain": "www.shop.test"}],
//!   "resolvers": [{"name": "r1", "ip": "192.0.2.53", "region": "eu", "asn": 64500}],
//!   "clients": [{"name": "c1", "region": "eu", "asn": 64500, "resolver": "r1"}]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AppId, CountryCode, CustomerId, Metric, PlatformKind, PolicySpec, Target};
use crate::openmix::OpenmixConfig;
use crate::radar::{ProbeKind, RadarConfig, DEFAULT_DELAY_MS};
use crate::sentinel::SentinelConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario {path}: {reason}")]
    Load { path: String, reason: String },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub country: CountryCode,
    pub asns: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perf {
    pub latency_ms: f64,
    #[serde(default = "default_throughput")]
    pub throughput_kbps: f64,
    #[serde(default = "one")]
    pub availability: f64,
}

fn default_throughput() -> f64 {
    10_000.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPlatform {
    pub alias: String,
    #[serde(default = "default_kind")]
    pub kind: PlatformKind,
    /// Defaults to a CNAME `{alias}.edge.test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default = "default_answer_ttl")]
    pub answer_ttl_s: u32,
    /// Per region name.
    pub perf: BTreeMap<String, Perf>,
}

fn default_kind() -> PlatformKind {
    PlatformKind::Cdn
}

fn default_answer_ttl() -> u32 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimApp {
    pub customer: CustomerId,
    pub app: AppId,
    pub policy: PolicySpec,
    pub candidates: Vec<String>,
    pub cname_ttl_s: u32,
    /// Customer-side name that CNAMEs to the portal name.
    pub domain: String,
    /// TTL of that customer-side CNAME.
    #[serde(default = "default_domain_ttl")]
    pub domain_ttl_s: u32,
}

fn default_domain_ttl() -> u32 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResolver {
    pub name: String,
    pub ip: Ipv4Addr,
    /// Whether the resolver forwards the client's /24 as EDNS client subnet.
    #[serde(default)]
    pub ecs: bool,
    pub region: String,
    pub asn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimClient {
    pub name: String,
    pub region: String,
    pub asn: u32,
    pub resolver: String,
    /// Defaults to `10.x.y.10`, one /24 per client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<Ipv4Addr>,
    /// Domains this client resolves; empty means all apps.
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default = "yes")]
    pub resolves: bool,
    #[serde(default = "yes")]
    pub probes: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub platform: String,
    /// All regions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    pub metric: Metric,
    /// Exactly one of `multiplier` and `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(with = "crate::openmix::secs")]
    pub start: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub duration: Duration,
}

impl Fault {
    pub fn active(&self, now_ms: u64) -> bool {
        let start = self.start.as_millis() as u64;
        now_ms >= start && now_ms < start + self.duration.as_millis() as u64
    }

    pub fn applies(&self, platform: &str, region: &str, metric: Metric) -> bool {
        self.platform == platform
            && self.metric == metric
            && self.region.as_deref().is_none_or(|r| r == region)
    }

    pub fn apply(&self, v: f64) -> f64 {
        match (self.multiplier, self.value) {
            (Some(m), _) => v * m,
            (None, Some(x)) => x,
            (None, None) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(with = "crate::openmix::secs")]
    pub duration: Duration,
    #[serde(default = "default_zone")]
    pub zone: String,
    pub regions: Vec<Region>,
    pub platforms: Vec<SimPlatform>,
    pub apps: Vec<SimApp>,
    pub resolvers: Vec<SimResolver>,
    pub clients: Vec<SimClient>,
    #[serde(with = "crate::openmix::secs", default = "default_resolve_period")]
    pub resolve_period: Duration,
    #[serde(with = "crate::openmix::secs")]
    pub probe_period: Duration,
    #[serde(default = "default_probe_kinds")]
    pub probe_kinds: Vec<ProbeKind>,
    #[serde(default = "default_delay")]
    pub probe_delay_ms: u64,
    #[serde(default)]
    pub radar: RadarConfig,
    #[serde(default)]
    pub openmix: OpenmixConfig,
    #[serde(default)]
    pub sentinel: SentinelConfig,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Relative half-width of the uniform latency jitter.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_zone() -> String {
    "cdx.metacdn.test".into()
}

fn default_resolve_period() -> Duration {
    Duration::from_secs(15 * 60)
}

fn default_probe_kinds() -> Vec<ProbeKind> {
    vec![ProbeKind::Latency, ProbeKind::Availability]
}

fn default_delay() -> u64 {
    DEFAULT_DELAY_MS
}

fn default_jitter() -> f64 {
    0.05
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Load {
            path: "<inline>".into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let err = |reason: String| ScenarioError::Load {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn client_ip(&self, idx: usize) -> Ipv4Addr {
        self.clients[idx].ip.unwrap_or_else(|| {
            let i = idx + 1;
            Ipv4Addr::new(10, ((i >> 8) & 0xff) as u8, (i & 0xff) as u8, 10)
        })
    }

    /// Checks cross references and ranges. Routing config is checked again when the world is built.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration.is_zero() {
            return Err(invalid("duration must be positive"));
        }
        if self.probe_period.is_zero() || self.resolve_period.is_zero() {
            return Err(invalid("periods must be positive"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(invalid("jitter must be in [0, 1)"));
        }
        let mut names = BTreeSet::new();
        for r in &self.regions {
            if !names.insert(r.name.as_str()) {
                return Err(invalid(format!("duplicate region {:?}", r.name)));
            }
        }
        let mut aliases = BTreeSet::new();
        for p in &self.platforms {
            if !aliases.insert(p.alias.as_str()) {
                return Err(invalid(format!("duplicate platform {:?}", p.alias)));
            }
            for r in &self.regions {
                let perf = p.perf.get(&r.name).ok_or_else(|| {
                    invalid(format!("platform {:?} has no perf for region {:?}", p.alias, r.name))
                })?;
                if !(perf.latency_ms > 0.0 && perf.throughput_kbps > 0.0)
                    || !(0.0..=1.0).contains(&perf.availability)
                {
                    return Err(invalid(format!("platform {:?}: bad perf in {:?}", p.alias, r.name)));
                }
            }
            if let Some(r) = p.perf.keys().find(|r| self.region(r).is_none()) {
                return Err(invalid(format!("platform {:?}: unknown region {r:?}", p.alias)));
            }
        }
        let mut domains = BTreeSet::new();
        for a in &self.apps {
            if !domains.insert(a.domain.to_ascii_lowercase()) {
                return Err(invalid(format!("duplicate domain {:?}", a.domain)));
            }
            if a.domain_ttl_s == 0 {
                return Err(invalid(format!("{}: domain_ttl_s must be positive", a.domain)));
            }
        }
        let resolvers: BTreeSet<&str> = self.resolvers.iter().map(|r| r.name.as_str()).collect();
        if resolvers.len() != self.resolvers.len() {
            return Err(invalid("duplicate resolver name"));
        }
        for r in &self.resolvers {
            if self.region(&r.region).is_none() {
                return Err(invalid(format!("resolver {:?}: unknown region", r.name)));
            }
        }
        let mut clients = BTreeSet::new();
        for c in &self.clients {
            if !clients.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate client {:?}", c.name)));
            }
            let region = self
                .region(&c.region)
                .ok_or_else(|| invalid(format!("client {:?}: unknown region", c.name)))?;
            if !region.asns.contains(&c.asn) {
                return Err(invalid(format!("client {:?}: AS{} not in {:?}", c.name, c.asn, c.region)));
            }
            if !resolvers.contains(c.resolver.as_str()) {
                return Err(invalid(format!("client {:?}: unknown resolver", c.name)));
            }
            if let Some(d) = c.domains.iter().find(|d| !domains.contains(&d.to_ascii_lowercase())) {
                return Err(invalid(format!("client {:?}: unknown domain {d:?}", c.name)));
            }
        }
        for f in &self.faults {
            if !aliases.contains(f.platform.as_str()) {
                return Err(invalid(format!("fault on unknown platform {:?}", f.platform)));
            }
            if let Some(r) = &f.region {
                if self.region(r).is_none() {
                    return Err(invalid(format!("fault in unknown region {r:?}")));
                }
            }
            if f.multiplier.is_some() == f.value.is_some() {
                return Err(invalid("a fault needs exactly one of multiplier and value"));
            }
            if f.start + f.duration > self.duration {
                return Err(invalid(format!("fault on {:?} outlasts the scenario", f.platform)));
            }
        }
        Ok(())
    }
}
