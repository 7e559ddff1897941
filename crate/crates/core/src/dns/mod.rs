//! The authoritative side of the meta-CDN zone.
//!
//! A portal name `2-01-{customer}-{app}.{zone}` identifies one customer
//! application. Queries for it are answered with the platform the policy
//! engine picks: a CNAME when the platform is reached through its own name, an
//! A record set when it is a fixed set of addresses.

pub mod edge;
pub mod geo;
pub mod wire;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AppConfig, AppId, CustomerId, Platform, Target};

pub use edge::{DnsEdge, EdgeConfig, EdgeDecision, StatsSource};
pub use geo::GeoTable;

/// Fixed first label prefix of every portal name.
pub const PORTAL_PREFIX: &str = "2-01";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PortalError {
    #[error("{0:?} is not under our zone")]
    NotOurs(String),
    #[error("malformed portal name {0:?}")]
    MalformedPortalName(String),
}

/// Lowercase, without the trailing root dot.
pub fn normalize_name(name: &str) -> String {
    name.trim_end_matches('.').to_ascii_lowercase()
}

pub fn encode_portal_name(customer: CustomerId, app: AppId, zone: &str) -> String {
    format!("{PORTAL_PREFIX}-{customer}-{app}.{}", normalize_name(zone))
}

/// Inverse of [`encode_portal_name`]; case-insensitive.
pub fn decode_portal_name(name: &str, zone: &str) -> Result<(CustomerId, AppId), PortalError> {
    let lname = normalize_name(name);
    let zone = normalize_name(zone);
    let label = lname
        .strip_suffix(&zone)
        .and_then(|rest| rest.strip_suffix('.'))
        .ok_or_else(|| PortalError::NotOurs(name.to_string()))?;
    let malformed = || PortalError::MalformedPortalName(name.to_string());
    let rest = label
        .strip_prefix(PORTAL_PREFIX)
        .and_then(|r| r.strip_prefix('-'))
        .ok_or_else(malformed)?;
    let (c, a) = rest.split_once('-').ok_or_else(malformed)?;
    if c.len() != 4 || a.len() != 4 {
        return Err(malformed());
    }
    Ok((
        c.parse().map_err(|_| malformed())?,
        a.parse().map_err(|_| malformed())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerData {
    Cname(String),
    Addresses(Vec<Ipv4Addr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerType {
    A,
    Cname,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerRcode {
    NoError,
    NxDomain,
    ServFail,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsAnswer {
    pub name: String,
    pub ttl_s: u32,
    pub data: AnswerData,
    pub rcode: AnswerRcode,
}

impl DnsAnswer {
    pub fn rtype(&self) -> AnswerType {
        match self.data {
            AnswerData::Cname(_) => AnswerType::Cname,
            AnswerData::Addresses(_) => AnswerType::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("internal inconsistency: {0}")]
pub struct Inconsistent(pub String);

/// Answer for `name` routing to `decision`, carrying the app's TTL.
pub fn build_answer(
    name: &str,
    decision: &str,
    app: &AppConfig,
    registry: &BTreeMap<String, Platform>,
) -> Result<DnsAnswer, Inconsistent> {
    if !app.candidates.iter().any(|c| c == decision) {
        return Err(Inconsistent(format!("{decision:?} is not a candidate of {}-{}", app.customer, app.app)));
    }
    let platform = registry
        .get(decision)
        .ok_or_else(|| Inconsistent(format!("platform {decision:?} not registered")))?;
    let data = match &platform.target {
        Target::Cname(t) => AnswerData::Cname(t.trim_end_matches('.').to_string()),
        Target::Addresses(a) => AnswerData::Addresses(a.clone()),
    };
    Ok(DnsAnswer {
        name: name.to_string(),
        ttl_s: app.cname_ttl_s,
        data,
        rcode: AnswerRcode::NoError,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PlatformKind, PolicyKind, PolicySpec};
    use proptest::prelude::*;

    fn ids(c: &str, a: &str) -> (CustomerId, AppId) {
        (c.parse().unwrap(), a.parse().unwrap())
    }

    #[test]
    fn encode_examples() {
        let (c, a) = ids("446b", "0004");
        assert_eq!(encode_portal_name(c, a, "cdx.metacdn.test"), "2-01-446b-0004.cdx.metacdn.test");
        let (c, a) = ids("0000", "0001");
        assert_eq!(encode_portal_name(c, a, "cdx.metacdn.test"), "2-01-0000-0001.cdx.metacdn.test");
        let (c, a) = ids("FFFF", "ffff");
        assert_eq!(encode_portal_name(c, a, "Z.example."), "2-01-ffff-ffff.z.example");
    }

    #[test]
    fn decode_examples() {
        let z = "cdx.metacdn.test";
        assert_eq!(decode_portal_name("2-01-446b-0004.cdx.metacdn.test", z), Ok(ids("446b", "0004")));
        assert_eq!(decode_portal_name("2-01-446B-0004.CDX.metacdn.test.", z), Ok(ids("446b", "0004")));
        assert!(matches!(decode_portal_name("www.other.test", z), Err(PortalError::NotOurs(_))));
        assert!(matches!(decode_portal_name("cdx.metacdn.test", z), Err(PortalError::NotOurs(_))));
        assert!(matches!(decode_portal_name("xcdx.metacdn.test", z), Err(PortalError::NotOurs(_))));
        for bad in [
            "2-02-446b-0004.cdx.metacdn.test",
            "2-01-446b-00045.cdx.metacdn.test",
            "2-01-446g-0004.cdx.metacdn.test",
            "a.2-01-446b-0004.cdx.metacdn.test",
            "2-01-446b.cdx.metacdn.test",
            "2-01-+46b-0004.cdx.metacdn.test",
        ] {
            assert!(
                matches!(decode_portal_name(bad, z), Err(PortalError::MalformedPortalName(_))),
                "{bad}"
            );
        }
    }

    fn app(ttl: u32) -> AppConfig {
        AppConfig {
            customer: "446b".parse().unwrap(),
            app: "0004".parse().unwrap(),
            policy: PolicySpec::simple(PolicyKind::Static),
            candidates: vec!["cdnA".into(), "origin".into()],
            cname_ttl_s: ttl,
        }
    }

    fn registry() -> BTreeMap<String, Platform> {
        [
            Platform {
                alias: "cdnA".into(),
                kind: PlatformKind::Cdn,
                target: Target::Cname("gw.cdna.test.".into()),
                answer_ttl_s: 60,
            },
            Platform {
                alias: "origin".into(),
                kind: PlatformKind::Origin,
                target: Target::Addresses(vec!["198.51.100.7".parse().unwrap()]),
                answer_ttl_s: 60,
            },
        ]
        .into_iter()
        .map(|p| (p.alias.clone(), p))
        .collect()
    }

    #[test]
    fn answers_follow_target_shape_and_app_ttl() {
        let r = registry();
        let a = build_answer("n", "cdnA", &app(20), &r).unwrap();
        assert_eq!(a.rtype(), AnswerType::Cname);
        assert_eq!(a.data, AnswerData::Cname("gw.cdna.test".into()));
        assert_eq!(a.ttl_s, 20);
        let a = build_answer("n", "origin", &app(300), &r).unwrap();
        assert_eq!(a.rtype(), AnswerType::A);
        assert_eq!(a.data, AnswerData::Addresses(vec!["198.51.100.7".parse().unwrap()]));
        assert_eq!(a.ttl_s, 300);
        assert!(build_answer("n", "cdnB", &app(20), &r).is_err());
        let mut r2 = r.clone();
        r2.remove("origin");
        assert!(build_answer("n", "origin", &app(20), &r2).is_err());
    }

    proptest! {
        #[test]
        fn portal_roundtrip(c in any::<u16>(), a in any::<u16>(), zone in "[a-z]{1,10}(\\.[a-z0-9-]{1,10}){0,3}") {
            let (c, a) = (CustomerId::new(c), AppId::new(a));
            let name = encode_portal_name(c, a, &zone);
            prop_assert_eq!(decode_portal_name(&name, &zone), Ok((c, a)));
            prop_assert_eq!(decode_portal_name(&name.to_uppercase(), &zone), Ok((c, a)));
        }
    }
}
