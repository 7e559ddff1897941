//! The simulated deployment: every authority a resolver can reach, plus the
//! platform performance model.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, ScenarioError};
use crate::dns::wire::{Edns, Header, Message, Rcode, Record, MAX_UDP_PAYLOAD, TYPE_A};
use crate::dns::{encode_portal_name, normalize_name, DnsEdge, EdgeConfig, EdgeDecision, GeoTable};
use crate::dns::geo::GeoEntry;
use crate::fusion::{FusionStore, FusionView};
use crate::model::{AppConfig, AppId, CustomerId, Ipv4Cidr, Metric, Platform, Target, Timestamp};
use crate::openmix::Openmix;
use crate::radar::Radar;
use crate::sentinel::Sentinel;

/// What was provisioned, for checking discovery and TTL analyses against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub customer: CustomerId,
    pub app: AppId,
    pub domain: String,
    pub portal: String,
    pub cname_ttl_s: u32,
    pub candidates: Vec<String>,
}

struct Host {
    alias: String,
    addresses: Vec<Ipv4Addr>,
    ttl_s: u32,
}

pub struct World {
    scenario: Scenario,
    pub edge: DnsEdge,
    pub radar: Arc<Radar>,
    pub sentinel: Arc<Mutex<Sentinel>>,
    platforms: BTreeMap<String, Platform>,
    /// Customer domain → (portal name, TTL).
    domains: BTreeMap<String, (String, u32)>,
    /// Platform host name → addresses.
    hosts: BTreeMap<String, Host>,
    manifest: Vec<ManifestEntry>,
}

impl World {
    pub fn build(s: &Scenario) -> Result<World, ScenarioError> {
        s.validate()?;
        let mut platforms = Vec::new();
        let mut hosts = BTreeMap::new();
        for (i, p) in s.platforms.iter().enumerate() {
            let target = p
                .target
                .clone()
                .unwrap_or_else(|| Target::Cname(format!("{}.edge.test", p.alias.to_ascii_lowercase())));
            if let Target::Cname(name) = &target {
                let idx = u8::try_from(i + 1)
                    .map_err(|_| ScenarioError::Invalid("at most 255 platforms".into()))?;
                hosts.insert(
                    normalize_name(name),
                    Host {
                        alias: p.alias.clone(),
                        addresses: vec![Ipv4Addr::new(198, 18, idx, 1)],
                        ttl_s: p.answer_ttl_s,
                    },
                );
            }
            platforms.push(Platform {
                alias: p.alias.clone(),
                kind: p.kind,
                target,
                answer_ttl_s: p.answer_ttl_s,
            });
        }
        let apps: Vec<AppConfig> = s
            .apps
            .iter()
            .map(|a| AppConfig {
                customer: a.customer,
                app: a.app,
                policy: a.policy.clone(),
                candidates: a.candidates.clone(),
                cname_ttl_s: a.cname_ttl_s,
            })
            .collect();
        let edge_cfg = EdgeConfig::new(&s.zone, platforms.clone(), apps)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let mut geo = Vec::new();
        for (i, c) in s.clients.iter().enumerate() {
            let country = s.region(&c.region).expect("validated").country;
            let net = Ipv4Cidr::new(s.client_ip(i), 24).expect("24 is a valid prefix").network();
            geo.push(GeoEntry { cidr: net, asn: c.asn, country });
        }
        for r in &s.resolvers {
            let country = s.region(&r.region).expect("validated").country;
            let cidr = Ipv4Cidr::new(r.ip, 32).expect("32 is a valid prefix");
            geo.push(GeoEntry { cidr, asn: r.asn, country });
        }

        let kinds = platforms.iter().map(|p| (p.alias.clone(), p.kind));
        let sentinel = Arc::new(Mutex::new(Sentinel::new(s.sentinel.clone(), kinds)));
        let radar = Arc::new(
            Radar::new(s.radar, platforms.iter().map(|p| p.alias.clone()))
                .with_sentinel(sentinel.clone()),
        );
        let edge = DnsEdge::new(
            edge_cfg,
            GeoTable::new(geo),
            Openmix::new(s.openmix),
            radar.clone(),
            Arc::new(FusionStore::new(FusionView::default())),
        );
        let mut domains = BTreeMap::new();
        let mut manifest = Vec::new();
        for a in &s.apps {
            let portal = encode_portal_name(a.customer, a.app, &s.zone);
            domains.insert(normalize_name(&a.domain), (portal.clone(), a.domain_ttl_s));
            manifest.push(ManifestEntry {
                customer: a.customer,
                app: a.app,
                domain: normalize_name(&a.domain),
                portal,
                cname_ttl_s: a.cname_ttl_s,
                candidates: a.candidates.clone(),
            });
        }
        Ok(World {
            scenario: s.clone(),
            edge,
            radar,
            sentinel,
            platforms: platforms.into_iter().map(|p| (p.alias.clone(), p)).collect(),
            domains,
            hosts,
            manifest,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    /// Answers a query for any name in the simulated internet: customer
    /// domains, the meta-CDN zone, or platform hosts.
    pub fn answer(&self, packet: &[u8], src: SocketAddrV4, now: Timestamp) -> (Vec<u8>, Option<EdgeDecision>) {
        let Ok(query) = Message::parse(packet) else {
            return self.edge.handle_query_traced(packet, src, now);
        };
        let Some(q) = query.questions.first() else {
            return self.edge.handle_query_traced(packet, src, now);
        };
        let name = normalize_name(&q.name);
        let zone = self.edge.config().zone().to_string();
        if name == zone || name.ends_with(&format!(".{zone}")) || query.header.qr {
            return self.edge.handle_query_traced(packet, src, now);
        }
        let mut resp = Message {
            header: Header {
                id: query.header.id,
                qr: true,
                aa: true,
                rd: query.header.rd,
                ..Default::default()
            },
            questions: query.questions.clone(),
            edns: query.edns.as_ref().map(|_| Edns::new(MAX_UDP_PAYLOAD as u16)),
            ..Default::default()
        };
        if let Some((portal, ttl)) = self.domains.get(&name) {
            resp.answers.push(Record::cname(&q.name, *ttl, portal));
        } else if let Some(host) = self.hosts.get(&name) {
            if q.qtype == TYPE_A {
                resp.answers
                    .extend(host.addresses.iter().map(|a| Record::a(&q.name, host.ttl_s, *a)));
            }
        } else {
            resp.header.aa = false;
            resp.header.rcode = Rcode::Refused as u8;
        }
        (resp.to_bytes(), None)
    }

    /// The platform a final hop lands on: by CNAME target, else by address.
    pub fn platform_of(&self, last_cname: Option<&str>, addresses: &[Ipv4Addr]) -> Option<String> {
        if let Some(host) = last_cname.and_then(|n| self.hosts.get(&normalize_name(n))) {
            return Some(host.alias.clone());
        }
        self.platforms
            .values()
            .find(|p| match &p.target {
                Target::Addresses(a) => addresses.iter().any(|x| a.contains(x)),
                Target::Cname(_) => false,
            })
            .map(|p| p.alias.clone())
    }

    /// Fault-adjusted value of `metric` for `platform` seen from `region`, without jitter.
    pub fn model_metric(&self, region: &str, platform: &str, metric: Metric, now: Timestamp) -> f64 {
        let sp = self
            .scenario
            .platforms
            .iter()
            .find(|p| p.alias == platform)
            .expect("known platform");
        let perf = sp.perf[region];
        let base = match metric {
            Metric::LatencyMs => perf.latency_ms,
            Metric::ThroughputKbps => perf.throughput_kbps,
            Metric::Availability => perf.availability,
        };
        let v = self
            .scenario
            .faults
            .iter()
            .filter(|f| f.active(now.as_millis()) && f.applies(platform, region, metric))
            .fold(base, |v, f| f.apply(v));
        match metric {
            Metric::Availability => v.clamp(0.0, 1.0),
            _ => v,
        }
    }

    pub fn model_latency(&self, region: &str, platform: &str, now: Timestamp) -> f64 {
        self.model_metric(region, platform, Metric::LatencyMs, now)
    }

    /// Argmin of model latency; ties go to the lexicographically smaller alias.
    pub fn ground_truth_best(&self, region: &str, candidates: &[String], now: Timestamp) -> String {
        let mut best: Option<(f64, &String)> = None;
        for c in candidates {
            let v = self.model_latency(region, c, now);
            best = match best {
                Some((bv, b)) if bv < v || (bv == v && b <= c) => Some((bv, b)),
                _ => Some((v, c)),
            };
        }
        best.expect("candidates non-empty").1.clone()
    }

    /// One jittered measurement; `None` when the availability draw fails.
    /// Always consumes two draws so the random stream does not depend on outcomes.
    pub fn sample_metric(
        &self,
        region: &str,
        platform: &str,
        metric: Metric,
        now: Timestamp,
        rng: &mut impl Rng,
    ) -> Option<f64> {
        let avail = self.model_metric(region, platform, Metric::Availability, now);
        let draw: f64 = rng.random();
        let u: f64 = rng.random_range(-1.0..=1.0);
        if draw >= avail {
            return None;
        }
        Some(self.model_metric(region, platform, metric, now) * (1.0 + self.scenario.jitter * u))
    }

    pub fn sample_latency(&self, region: &str, platform: &str, now: Timestamp, rng: &mut impl Rng) -> Option<f64> {
        self.sample_metric(region, platform, Metric::LatencyMs, now, rng)
    }
}
