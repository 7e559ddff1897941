//! Query handling for the meta-CDN zone.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use super::geo::GeoTable;
use super::wire::{
    ClientSubnet, Edns, Header, Message, RData, Rcode, Record, CLASS_IN, MAX_UDP_PAYLOAD,
    TYPE_A, TYPE_AAAA, TYPE_CNAME, TYPE_SOA,
};
use super::{build_answer, decode_portal_name, normalize_name, AnswerData, DnsAnswer, PortalError};
use crate::config::ConfigError;
use crate::fusion::FusionStore;
use crate::model::{AppConfig, AppId, ClientContext, CustomerId, Ipv4Cidr, Platform, Timestamp};
use crate::openmix::{Decision, Openmix, StatsView};
use crate::radar::Radar;

/// TTL of negative answers and of the SOA that carries them.
pub const NEGATIVE_TTL: u32 = 60;
/// Client-subnet scope returned for every ECS query.
pub const ECS_SCOPE: u8 = 24;

/// Where the edge reads its aggregated measurements from.
pub trait StatsSource: Send + Sync {
    fn stats_view(&self, now: Timestamp) -> Arc<StatsView>;
}

impl StatsSource for Radar {
    fn stats_view(&self, now: Timestamp) -> Arc<StatsView> {
        Radar::stats_view(self, now)
    }
}

/// A frozen view, for tests and tools.
impl StatsSource for Arc<StatsView> {
    fn stats_view(&self, _now: Timestamp) -> Arc<StatsView> {
        self.clone()
    }
}

/// Validated routing configuration: zone, platform registry and apps.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConfig {
    zone: String,
    platforms: BTreeMap<String, Platform>,
    apps: BTreeMap<(CustomerId, AppId), AppConfig>,
}

impl EdgeConfig {
    pub fn new(
        zone: &str,
        platforms: impl IntoIterator<Item = Platform>,
        apps: impl IntoIterator<Item = AppConfig>,
    ) -> Result<EdgeConfig, ConfigError> {
        let zone = normalize_name(zone);
        if zone.is_empty() || zone.split('.').any(|l| l.is_empty() || l.len() > 63) {
            return Err(ConfigError::Zone(zone));
        }
        let mut registry = BTreeMap::new();
        for p in platforms {
            p.validate()?;
            if registry.contains_key(&p.alias) {
                return Err(ConfigError::DuplicatePlatform(p.alias));
            }
            registry.insert(p.alias.clone(), p);
        }
        let aliases: BTreeSet<String> = registry.keys().cloned().collect();
        let mut by_id = BTreeMap::new();
        for app in apps {
            app.validate()?;
            let label = format!("{}-{}", app.customer, app.app);
            if let Some(alias) = app.candidates.iter().find(|c| !aliases.contains(*c)) {
                return Err(ConfigError::UnknownCandidate {
                    app: label,
                    alias: alias.clone(),
                });
            }
            if let Some(prog) = &app.policy.rules {
                prog.validate(&aliases, &app.candidates)
                    .map_err(|source| ConfigError::Rules {
                        app: label.clone(),
                        source,
                    })?;
            }
            if by_id.insert((app.customer, app.app), app).is_some() {
                return Err(ConfigError::DuplicateApp(label));
            }
        }
        Ok(EdgeConfig {
            zone,
            platforms: registry,
            apps: by_id,
        })
    }

    pub fn zone(&self) -> &str {
        &self.zone
    }

    pub fn platforms(&self) -> &BTreeMap<String, Platform> {
        &self.platforms
    }

    pub fn app(&self, customer: CustomerId, app: AppId) -> Option<&AppConfig> {
        self.apps.get(&(customer, app))
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppConfig> {
        self.apps.values()
    }
}

/// What the edge decided for one portal-name query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeDecision {
    pub customer: CustomerId,
    pub app: AppId,
    pub ctx: ClientContext,
    pub decision: Decision,
    pub answer: DnsAnswer,
}

pub struct DnsEdge {
    config: RwLock<Arc<EdgeConfig>>,
    geo: RwLock<Arc<GeoTable>>,
    openmix: Openmix,
    stats: Arc<dyn StatsSource>,
    fusion: Arc<FusionStore>,
}

impl DnsEdge {
    pub fn new(
        config: EdgeConfig,
        geo: GeoTable,
        openmix: Openmix,
        stats: Arc<dyn StatsSource>,
        fusion: Arc<FusionStore>,
    ) -> DnsEdge {
        DnsEdge {
            config: RwLock::new(Arc::new(config)),
            geo: RwLock::new(Arc::new(geo)),
            openmix,
            stats,
            fusion,
        }
    }

    pub fn config(&self) -> Arc<EdgeConfig> {
        self.config.read().expect("config lock poisoned").clone()
    }

    /// Atomically swaps the routing configuration.
    pub fn reload(&self, config: EdgeConfig) {
        *self.config.write().expect("config lock poisoned") = Arc::new(config);
    }

    pub fn set_geo(&self, geo: GeoTable) {
        *self.geo.write().expect("geo lock poisoned") = Arc::new(geo);
    }

    pub fn openmix(&self) -> &Openmix {
        &self.openmix
    }

    /// One response per query. Returns an empty buffer only for packets that
    /// are themselves responses, which are never answered.
    pub fn handle_query(&self, packet: &[u8], source: SocketAddrV4, now: Timestamp) -> Vec<u8> {
        self.handle_query_traced(packet, source, now).0
    }

    /// Like [`handle_query`](Self::handle_query), also returning the routing decision if one was made.
    pub fn handle_query_traced(
        &self,
        packet: &[u8],
        source: SocketAddrV4,
        now: Timestamp,
    ) -> (Vec<u8>, Option<EdgeDecision>) {
        let query = match Message::parse(packet) {
            Ok(q) => q,
            Err(_) => return (formerr(packet), None),
        };
        if query.header.qr {
            return (Vec::new(), None);
        }
        let mut resp = Message {
            header: Header {
                id: query.header.id,
                qr: true,
                opcode: query.header.opcode,
                aa: true,
                rd: query.header.rd,
                ..Default::default()
            },
            questions: query.questions.clone(),
            edns: query.edns.as_ref().map(|e| Edns {
                client_subnet: e.client_subnet.map(|s| ClientSubnet {
                    scope_prefix: ECS_SCOPE,
                    ..s
                }),
                ..Edns::new(MAX_UDP_PAYLOAD as u16)
            }),
            ..Default::default()
        };
        if query.header.opcode != 0 {
            resp.header.aa = false;
            resp.header.rcode = Rcode::NotImp as u8;
            return (finish(resp), None);
        }
        if query.questions.len() != 1 {
            resp.header.rcode = Rcode::FormErr as u8;
            return (finish(resp), None);
        }
        let q = &query.questions[0];
        let config = self.config();
        let zone = config.zone().to_string();
        if q.qclass != CLASS_IN {
            resp.header.aa = false;
            resp.header.rcode = Rcode::Refused as u8;
            return (finish(resp), None);
        }
        let (customer, app_id) = match decode_portal_name(&q.name, &zone) {
            Ok(ids) => ids,
            Err(PortalError::NotOurs(_)) if normalize_name(&q.name) == zone => {
                if q.qtype == TYPE_SOA {
                    resp.answers.push(soa_record(&q.name, &zone));
                } else {
                    resp.authority.push(soa_record(&zone, &zone));
                }
                return (finish(resp), None);
            }
            Err(PortalError::NotOurs(_)) => {
                resp.header.aa = false;
                resp.header.rcode = Rcode::Refused as u8;
                return (finish(resp), None);
            }
            Err(PortalError::MalformedPortalName(_)) => return (nxdomain(resp, &zone), None),
        };
        let Some(app) = config.app(customer, app_id) else {
            return (nxdomain(resp, &zone), None);
        };
        if !matches!(q.qtype, TYPE_A | TYPE_AAAA | TYPE_CNAME) {
            resp.authority.push(soa_record(&zone, &zone));
            return (finish(resp), None);
        }
        let ctx = self.client_context(&query, source);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let stats = self.stats.stats_view(now);
            let fusion = self.fusion.snapshot();
            let decision = self.openmix.evaluate(app, &ctx, &stats, &fusion, now);
            build_answer(&q.name, &decision.chosen, app, config.platforms())
                .map(|answer| (decision, answer))
        }));
        let (decision, answer) = match outcome {
            Ok(Ok(pair)) => pair,
            Ok(Err(e)) => {
                log::error!("{e}");
                resp.header.rcode = Rcode::ServFail as u8;
                return (finish(resp), None);
            }
            Err(_) => {
                log::error!("policy evaluation panicked for {customer}-{app_id}");
                resp.header.rcode = Rcode::ServFail as u8;
                return (finish(resp), None);
            }
        };
        match &answer.data {
            AnswerData::Cname(target) => {
                resp.answers.push(Record::cname(&q.name, answer.ttl_s, target));
            }
            AnswerData::Addresses(addrs) if q.qtype == TYPE_A => {
                resp.answers
                    .extend(addrs.iter().map(|a| Record::a(&q.name, answer.ttl_s, *a)));
            }
            AnswerData::Addresses(_) => resp.authority.push(soa_record(&zone, &zone)),
        }
        let traced = EdgeDecision {
            customer,
            app: app_id,
            ctx,
            decision,
            answer,
        };
        (finish(resp), Some(traced))
    }

    /// ECS subnet if present, else the resolver address, mapped through the geo table.
    fn client_context(&self, query: &Message, source: SocketAddrV4) -> ClientContext {
        let ecs = query
            .edns
            .as_ref()
            .and_then(|e| e.client_subnet)
            .and_then(|s| Ipv4Cidr::new(s.address, s.source_prefix.min(32)).ok())
            .map(|c| c.network());
        let locate: Ipv4Addr = ecs.map_or(*source.ip(), |c| c.addr());
        let (asn, country) = self.geo.read().expect("geo lock poisoned").lookup(locate);
        ClientContext {
            resolver_ip: *source.ip(),
            ecs_subnet: ecs,
            asn,
            country,
        }
    }
}

fn soa_record(owner: &str, zone: &str) -> Record {
    Record {
        name: owner.to_string(),
        rtype: TYPE_SOA,
        class: CLASS_IN,
        ttl: NEGATIVE_TTL,
        data: RData::Soa {
            mname: format!("ns1.{zone}"),
            rname: format!("hostmaster.{zone}"),
            serial: 1,
            refresh: 3600,
            retry: 600,
            expire: 86400,
            minimum: NEGATIVE_TTL,
        },
    }
}

fn nxdomain(mut resp: Message, zone: &str) -> Vec<u8> {
    resp.header.rcode = Rcode::NxDomain as u8;
    resp.authority.push(soa_record(zone, zone));
    finish(resp)
}

/// Encodes, enforcing the plain-UDP size limit by truncation.
fn finish(mut resp: Message) -> Vec<u8> {
    let bytes = resp.to_bytes();
    if bytes.len() <= MAX_UDP_PAYLOAD {
        return bytes;
    }
    resp.header.tc = true;
    resp.answers.clear();
    resp.authority.clear();
    let bytes = resp.to_bytes();
    if bytes.len() <= MAX_UDP_PAYLOAD {
        return bytes;
    }
    resp.edns = None;
    resp.to_bytes()
}

/// FORMERR for an unparseable packet, echoing what of the header survived.
fn formerr(packet: &[u8]) -> Vec<u8> {
    let id = match packet {
        [a, b, ..] => u16::from_be_bytes([*a, *b]),
        _ => 0,
    };
    let (opcode, rd) = match packet.get(2) {
        Some(f) => ((f >> 3) & 0x0f, f & 0x01 != 0),
        None => (0, false),
    };
    Message {
        header: Header {
            id,
            qr: true,
            opcode,
            rd,
            rcode: Rcode::FormErr as u8,
            ..Default::default()
        },
        ..Default::default()
    }
    .to_bytes()
}
