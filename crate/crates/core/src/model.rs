//! Domain types shared by every part of the routing stack.
//!
//! Identifiers follow the portal-name grammar: a customer id and an
//! application id, each exactly four hexadecimal characters. All ids are
//! normalized to lowercase when they enter the system.

use std::fmt;
use std::net::Ipv4Addr;
use std::ops::{Add, Sub};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::openmix::rules::RuleProgram;

/// Number of distinct values of a single 4-hex-character identifier.
pub const ID_SPACE: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed id {0:?}: expected 4 hexadecimal characters")]
    MalformedId(String),
    #[error("malformed CIDR {0:?}")]
    MalformedCidr(String),
    #[error("malformed country code {0:?}")]
    MalformedCountry(String),
    #[error("invalid platform {alias:?}: {reason}")]
    InvalidPlatform { alias: String, reason: String },
    #[error("invalid app {customer}-{app}: {reason}")]
    InvalidApp {
        customer: CustomerId,
        app: AppId,
        reason: String,
    },
    #[error("invalid probe report: {0}")]
    InvalidReport(String),
}

/// Validates a raw 4-hex-character identifier and returns its numeric value.
///
/// Upper-case digits are accepted and normalized.
pub fn validate_id(raw: &str) -> Result<u16, ModelError> {
    if raw.len() != 4 || !raw.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ModelError::MalformedId(raw.to_string()));
    }
    u16::from_str_radix(raw, 16).map_err(|_| ModelError::MalformedId(raw.to_string()))
}

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(u16);

        impl $name {
            pub const fn new(value: u16) -> Self {
                Self(value)
            }

            pub const fn value(self) -> u16 {
                self.0
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                validate_id(s).map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:04x}", self.0)
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// Customer identifier, rendered as four lowercase hex characters.
    CustomerId
);
hex_id!(
    /// Per-customer application identifier, rendered as four lowercase hex characters.
    AppId
);

/// A point in (virtual or wall-clock) time, in milliseconds since an arbitrary epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        Timestamp(s * 1000)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }

    pub fn saturating_sub(self, d: Duration) -> Timestamp {
        Timestamp(self.0.saturating_sub(d.as_millis() as u64))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0 + d.as_millis() as u64)
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;

    fn sub(self, d: Duration) -> Timestamp {
        self.saturating_sub(d)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// An IPv4 prefix such as `203.0.113.0/24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4Cidr {
    addr: Ipv4Addr,
    prefix: u8,
}

impl Ipv4Cidr {
    pub fn new(addr: Ipv4Addr, prefix: u8) -> Result<Self, ModelError> {
        if prefix > 32 {
            return Err(ModelError::MalformedCidr(format!("{addr}/{prefix}")));
        }
        Ok(Self { addr, prefix })
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    fn mask(&self) -> u32 {
        if self.prefix == 0 {
            0
        } else {
            u32::MAX << (32 - self.prefix)
        }
    }

    /// The prefix with host bits cleared.
    pub fn network(&self) -> Ipv4Cidr {
        Ipv4Cidr {
            addr: Ipv4Addr::from(u32::from(self.addr) & self.mask()),
            prefix: self.prefix,
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & self.mask() == u32::from(self.addr) & self.mask()
    }
}

impl FromStr for Ipv4Cidr {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::MalformedCidr(s.to_string());
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => (a, p.parse::<u8>().map_err(|_| bad())?),
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| bad())?;
        Ipv4Cidr::new(addr, prefix).map_err(|_| bad())
    }
}

impl fmt::Display for Ipv4Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix)
    }
}

impl Serialize for Ipv4Cidr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Cidr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// ISO-3166 alpha-2 country code, stored upper-case. `ZZ` marks an unknown location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub const UNKNOWN: CountryCode = CountryCode(*b"ZZ");

    pub fn as_str(&self) -> &str {
        // Only ASCII letters are ever stored.
        std::str::from_utf8(&self.0).unwrap_or("ZZ")
    }
}

impl FromStr for CountryCode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() != 2 || !b.iter().all(u8::is_ascii_alphabetic) {
            return Err(ModelError::MalformedCountry(s.to_string()));
        }
        Ok(CountryCode([
            b[0].to_ascii_uppercase(),
            b[1].to_ascii_uppercase(),
        ]))
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformKind {
    Cdn,
    Cloud,
    Origin,
}

/// Where a platform sends traffic: either another name to chase or a fixed address set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Cname(String),
    Addresses(Vec<Ipv4Addr>),
}

/// A content delivery infrastructure that apps can route to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub alias: String,
    pub kind: PlatformKind,
    pub target: Target,
    /// TTL the platform's own name servers put on their answers.
    pub answer_ttl_s: u32,
}

impl Platform {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: &str| ModelError::InvalidPlatform {
            alias: self.alias.clone(),
            reason: reason.to_string(),
        };
        if self.alias.is_empty() {
            return Err(invalid("empty alias"));
        }
        match &self.target {
            Target::Cname(name) if name.trim_end_matches('.').is_empty() => {
                Err(invalid("empty cname target"))
            }
            Target::Addresses(addrs) if addrs.is_empty() => Err(invalid("empty address list")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    OptimalRtt,
    RoundRobin,
    Throughput,
    Static,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<RuleProgram>,
}

impl PolicySpec {
    pub fn simple(kind: PolicyKind) -> Self {
        PolicySpec { kind, rules: None }
    }

    pub fn rules(program: RuleProgram) -> Self {
        PolicySpec {
            kind: PolicyKind::Rules,
            rules: Some(program),
        }
    }
}

/// One customer application: its candidate platforms, routing policy and answer TTL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub customer: CustomerId,
    pub app: AppId,
    pub policy: PolicySpec,
    pub candidates: Vec<String>,
    pub cname_ttl_s: u32,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidApp {
            customer: self.customer,
            app: self.app,
            reason,
        };
        if self.candidates.is_empty() {
            return Err(invalid("no candidates".into()));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if self.candidates[..i].contains(c) {
                return Err(invalid(format!("duplicate candidate {c:?}")));
            }
        }
        if self.cname_ttl_s < 1 {
            return Err(invalid("cname_ttl_s must be at least 1".into()));
        }
        match (self.policy.kind, &self.policy.rules) {
            (PolicyKind::Rules, None) => Err(invalid("rules policy without a program".into())),
            (PolicyKind::Rules, Some(_)) => Ok(()),
            (_, Some(_)) => Err(invalid("rule program given for a non-rules policy".into())),
            (_, None) => Ok(()),
        }
    }
}

/// Where a query comes from, as far as routing is concerned.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientContext {
    pub resolver_ip: Ipv4Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecs_subnet: Option<Ipv4Cidr>,
    pub asn: u32,
    pub country: CountryCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyMs,
    ThroughputKbps,
    Availability,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::LatencyMs, Metric::ThroughputKbps, Metric::Availability];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LatencyMs => "latency_ms",
            Metric::ThroughputKbps => "throughput_kbps",
            Metric::Availability => "availability",
        }
    }

    /// Whether `value` is in this metric's admissible range.
    pub fn admits(self, value: f64) -> bool {
        match self {
            Metric::LatencyMs | Metric::ThroughputKbps => value.is_finite() && value > 0.0,
            Metric::Availability => (0.0..=1.0).contains(&value),
        }
    }
}

/// One real-user measurement sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub platform: String,
    pub metric: Metric,
    pub value: f64,
    pub client: ClientContext,
    pub timestamp: Timestamp,
}

impl ProbeReport {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.metric.admits(self.value) {
            return Err(ModelError::InvalidReport(format!(
                "{} value {} out of range",
                self.metric.name(),
                self.value
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ids_normalize_to_lowercase() {
        assert_eq!("446B".parse::<CustomerId>().unwrap().to_string(), "446b");
        assert_eq!("0001".parse::<AppId>().unwrap().to_string(), "0001");
        assert_eq!(
            "44g1".parse::<CustomerId>(),
            Err(ModelError::MalformedId("44g1".into()))
        );
        assert!("123".parse::<AppId>().is_err());
        assert!("12345".parse::<AppId>().is_err());
        assert!("".parse::<AppId>().is_err());
    }

    #[test]
    fn id_space_size() {
        assert_eq!(ID_SPACE, 65_536);
        assert_eq!(u64::from(ID_SPACE).pow(2), 16u64.pow(8));
    }

    #[test]
    fn cidr_parsing_and_containment() {
        let c: Ipv4Cidr = "203.0.113.77/24".parse().unwrap();
        assert_eq!(c.network().to_string(), "203.0.113.0/24");
        assert!(c.contains("203.0.113.1".parse().unwrap()));
        assert!(!c.contains("203.0.114.1".parse().unwrap()));
        assert!("10.0.0.0/33".parse::<Ipv4Cidr>().is_err());
        let all: Ipv4Cidr = "0.0.0.0/0".parse().unwrap();
        assert!(all.contains("8.8.8.8".parse().unwrap()));
    }

    #[test]
    fn app_validation() {
        let mut app = AppConfig {
            customer: CustomerId::new(1),
            app: AppId::new(1),
            policy: PolicySpec::simple(PolicyKind::Static),
            candidates: vec!["a".into(), "b".into()],
            cname_ttl_s: 20,
        };
        assert!(app.validate().is_ok());
        app.candidates.push("a".into());
        assert!(app.validate().is_err());
        app.candidates = vec![];
        assert!(app.validate().is_err());
        app.candidates = vec!["a".into()];
        app.cname_ttl_s = 0;
        assert!(app.validate().is_err());
        app.cname_ttl_s = 1;
        app.policy.kind = PolicyKind::Rules;
        assert!(app.validate().is_err());
    }

    #[test]
    fn report_ranges() {
        assert!(Metric::Availability.admits(0.0));
        assert!(Metric::Availability.admits(1.0));
        assert!(!Metric::Availability.admits(1.7));
        assert!(!Metric::LatencyMs.admits(0.0));
        assert!(Metric::ThroughputKbps.admits(9000.0));
        assert!(!Metric::LatencyMs.admits(f64::NAN));
    }

    proptest! {
        #[test]
        fn validate_id_accepts_exactly_hex4(s in "[0-9a-zA-Z]{0,6}") {
            let is_hex4 = s.len() == 4 && s.chars().all(|c| c.is_ascii_hexdigit());
            prop_assert_eq!(validate_id(&s).is_ok(), is_hex4);
            if is_hex4 {
                let id: CustomerId = s.parse().unwrap();
                prop_assert_eq!(id.to_string(), s.to_lowercase());
            }
        }
    }
}
