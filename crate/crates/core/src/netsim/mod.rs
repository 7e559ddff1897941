//! Deterministic discrete-event simulation of a multi-CDN deployment.
//!
//! Clients periodically resolve their domains through caching resolvers,
//! following the full chain (customer CNAME → portal name → platform host →
//! addresses) over real DNS wire messages, then ping every candidate platform.
//! Probe clients run the measurement cycle against all platforms and feed the
//! radar, which the edge reads its statistics from. All randomness comes from
//! one seeded stream consumed in event order, so a scenario always produces the
//! same log.

pub mod cache;
pub mod log;
pub mod scenario;
pub mod world;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::{Ipv4Addr, SocketAddrV4};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dns::edge::NEGATIVE_TTL;
use crate::dns::normalize_name;
use crate::dns::wire::{build_query, ClientSubnet, Message, RData, TYPE_A};
use crate::model::{ClientContext, CustomerId, Ipv4Cidr, Metric, ProbeReport, Timestamp};
use crate::radar::{issue_instructions, ProbeConfig, ProbeKind, ProbeTarget};
use crate::sentinel::NetworkEvent;

pub use cache::ResolverCache;
pub use log::{ChainStage, DecisionRecord, ProbeRecord, ResolutionRecord, SampleRecord, SimLog, SimRecord};
pub use scenario::{Scenario, ScenarioError};
pub use world::{ManifestEntry, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Resolve(usize),
    Probe(usize),
    Measure(usize),
}

pub struct SimOutput {
    pub log: SimLog,
    pub events: Vec<NetworkEvent>,
    pub manifest: Vec<ManifestEntry>,
}

impl SimOutput {
    /// Event feed as line-delimited JSON.
    pub fn events_jsonl(&self) -> String {
        crate::sentinel::feed_jsonl(&self.events)
    }
}

struct Sim<'w> {
    world: &'w World,
    rng: ChaCha8Rng,
    caches: Vec<ResolverCache>,
    resolver_of: Vec<usize>,
    domains_of: Vec<Vec<usize>>,
    customer_of: Vec<CustomerId>,
    probe_cfg: ProbeConfig,
    queue: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    query_id: u16,
    next_resolution: u64,
    log: SimLog,
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> Result<SimOutput, ScenarioError> {
    let world = World::build(scenario)?;
    Ok(run_world(&world))
}

/// Runs the simulation on an already built world (whose edge and radar keep their state).
pub fn run_world(world: &World) -> SimOutput {
    let s = world.scenario();
    let resolver_of = s
        .clients
        .iter()
        .map(|c| s.resolvers.iter().position(|r| r.name == c.resolver).expect("validated"))
        .collect();
    let app_index = |d: &str| {
        let d = normalize_name(d);
        s.apps.iter().position(|a| normalize_name(&a.domain) == d).expect("validated")
    };
    let domains_of: Vec<Vec<usize>> = s
        .clients
        .iter()
        .map(|c| {
            if c.domains.is_empty() {
                (0..s.apps.len()).collect()
            } else {
                c.domains.iter().map(|d| app_index(d)).collect()
            }
        })
        .collect();
    let default_customer = s.apps.first().map_or(CustomerId::new(0), |a| a.customer);
    let customer_of = domains_of
        .iter()
        .map(|d| d.first().map_or(default_customer, |&i| s.apps[i].customer))
        .collect();
    let probe_cfg = ProbeConfig {
        delay_ms: s.probe_delay_ms,
        targets: s
            .platforms
            .iter()
            .map(|p| ProbeTarget {
                platform: p.alias.clone(),
                kinds: s.probe_kinds.clone(),
                owner: None,
                base_url: format!("http://probe.{}.test", p.alias.to_ascii_lowercase()),
            })
            .collect(),
        community: s.apps.iter().map(|a| a.customer).chain([default_customer]).collect(),
    };
    let mut sim = Sim {
        world,
        rng: ChaCha8Rng::seed_from_u64(s.seed),
        caches: s.resolvers.iter().map(|_| ResolverCache::new()).collect(),
        resolver_of,
        domains_of,
        customer_of,
        probe_cfg,
        queue: BinaryHeap::new(),
        seq: 0,
        query_id: 0,
        next_resolution: 1,
        log: SimLog::default(),
    };
    let resolve_ms = s.resolve_period.as_millis() as u64;
    let probe_ms = s.probe_period.as_millis() as u64;
    for (i, c) in s.clients.iter().enumerate() {
        if c.resolves {
            let at = sim.rng.random_range(0..resolve_ms);
            sim.schedule(at, Ev::Resolve(i));
        }
        if c.probes {
            let at = sim.rng.random_range(0..probe_ms);
            sim.schedule(at, Ev::Probe(i));
        }
    }
    let end = s.duration.as_millis() as u64;
    while let Some(Reverse((at, _, ev))) = sim.queue.pop() {
        if at >= end {
            break;
        }
        let now = Timestamp(at);
        match ev {
            Ev::Resolve(c) => {
                for app in sim.domains_of[c].clone() {
                    sim.resolve_and_sample(c, app, now);
                }
                sim.schedule(at + resolve_ms, ev);
            }
            Ev::Probe(c) => {
                sim.schedule(at + s.probe_delay_ms, Ev::Measure(c));
                sim.schedule(at + probe_ms, ev);
            }
            Ev::Measure(c) => sim.measure(c, now),
        }
    }
    let mut sentinel = world.sentinel.lock().expect("sentinel lock poisoned");
    sentinel.tick(Timestamp(end));
    SimOutput {
        log: sim.log,
        events: sentinel.emit_feed(Timestamp::ZERO),
        manifest: world.manifest().to_vec(),
    }
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    fn ctx(&self, c: usize) -> (ClientContext, Ipv4Cidr) {
        let s = self.world.scenario();
        let client = &s.clients[c];
        let subnet = Ipv4Cidr::new(s.client_ip(c), 24).expect("valid prefix").network();
        let ctx = ClientContext {
            resolver_ip: s.resolvers[self.resolver_of[c]].ip,
            ecs_subnet: Some(subnet),
            asn: client.asn,
            country: s.region(&client.region).expect("validated").country,
        };
        (ctx, subnet)
    }

    /// One radar cycle: fetch instructions, measure, report.
    fn measure(&mut self, c: usize, now: Timestamp) {
        let s = self.world.scenario();
        let region = s.clients[c].region.clone();
        let (ctx, _) = self.ctx(c);
        for ins in issue_instructions(self.customer_of[c], &self.probe_cfg) {
            let metric = match ins.kind {
                ProbeKind::Latency => Metric::LatencyMs,
                ProbeKind::Throughput => Metric::ThroughputKbps,
                ProbeKind::Availability => Metric::Availability,
            };
            let sample = self.world.sample_metric(&region, &ins.platform, metric, now, &mut self.rng);
            let value = match (metric, sample) {
                (Metric::Availability, s) => f64::from(u8::from(s.is_some())),
                (_, Some(v)) => v,
                (_, None) => continue,
            };
            let report = ProbeReport {
                platform: ins.platform.clone(),
                metric,
                value,
                client: ctx.clone(),
                timestamp: now,
            };
            if self.world.radar.ingest_report(report).is_ok() {
                self.log.push(SimRecord::Probe(ProbeRecord {
                    t: now,
                    client: s.clients[c].name.clone(),
                    platform: ins.platform,
                    metric,
                    value,
                }));
            }
        }
    }

    fn resolve_and_sample(&mut self, c: usize, app_idx: usize, now: Timestamp) {
        let s = self.world.scenario();
        let app = &s.apps[app_idx];
        let client = &s.clients[c];
        let id = self.next_resolution;
        self.next_resolution += 1;
        let outcome = self.resolve(c, &app.domain, now);
        let platform = outcome
            .error
            .is_none()
            .then(|| self.world.platform_of(outcome.last_cname.as_deref(), &outcome.addresses))
            .flatten();
        let country = s.region(&client.region).expect("validated").country;
        self.log.push(SimRecord::Resolution(ResolutionRecord {
            t: now,
            id,
            client: client.name.clone(),
            region: client.region.clone(),
            asn: client.asn,
            country,
            resolver: s.resolvers[self.resolver_of[c]].name.clone(),
            domain: normalize_name(&app.domain),
            chain: outcome.chain,
            addresses: outcome.addresses,
            platform: platform.clone(),
            error: outcome.error,
        }));
        let Some(chosen) = platform else { return };
        let mut latency = BTreeMap::new();
        let mut model = BTreeMap::new();
        for cand in &app.candidates {
            let v = self.world.sample_latency(&client.region, cand, now, &mut self.rng);
            latency.insert(cand.clone(), v);
            model.insert(cand.clone(), self.world.model_latency(&client.region, cand, now));
        }
        self.log.push(SimRecord::Sample(SampleRecord {
            t: now,
            resolution: id,
            client: client.name.clone(),
            domain: normalize_name(&app.domain),
            chosen,
            ground_truth_best: self.world.ground_truth_best(&client.region, &app.candidates, now),
            latency_ms: latency,
            model_ms: model,
        }));
    }

    /// Follows the chain for `domain` through client `c`'s resolver.
    fn resolve(&mut self, c: usize, domain: &str, now: Timestamp) -> Outcome {
        let s = self.world.scenario();
        let ri = self.resolver_of[c];
        let resolver = &s.resolvers[ri];
        let (_, subnet) = self.ctx(c);
        let mut out = Outcome::default();
        let mut name = domain.to_string();
        for _ in 0..8 {
            let lname = normalize_name(&name);
            let cache = &self.caches[ri];
            let hit = resolver
                .ecs
                .then(|| cache.get(&(lname.clone(), Some(subnet)), now))
                .flatten()
                .or_else(|| cache.get(&(lname.clone(), None), now))
                .cloned();
            let (rcode, records, ttl, remaining, cached) = match hit {
                Some(e) => {
                    let ttl = (e.expiry.as_millis() - e.inserted.as_millis()) / 1000;
                    let left = (e.expiry.as_millis() - now.as_millis()) / 1000;
                    (e.rcode, e.records, ttl as u32, left as u32, true)
                }
                None => {
                    self.query_id = self.query_id.wrapping_add(1);
                    let ecs = resolver.ecs.then(|| ClientSubnet {
                        source_prefix: 24,
                        scope_prefix: 0,
                        address: subnet.addr(),
                    });
                    let q = build_query(self.query_id, &name, TYPE_A, ecs);
                    let (bytes, decision) =
                        self.world.answer(&q, SocketAddrV4::new(resolver.ip, 53), now);
                    if let Some(d) = decision {
                        self.log.push(SimRecord::Decision(DecisionRecord {
                            t: now,
                            resolver: resolver.name.clone(),
                            customer: d.customer,
                            app: d.app,
                            asn: d.ctx.asn,
                            country: d.ctx.country,
                            ecs: d.ctx.ecs_subnet,
                            chosen: d.decision.chosen,
                            reason: d.decision.reason,
                            ttl_s: d.answer.ttl_s,
                        }));
                    }
                    let msg = match Message::parse(&bytes) {
                        Ok(m) => m,
                        Err(e) => {
                            out.error = Some(format!("unparseable response: {e}"));
                            return out;
                        }
                    };
                    let scoped = msg
                        .edns
                        .as_ref()
                        .and_then(|e| e.client_subnet)
                        .is_some_and(|cs| cs.scope_prefix > 0);
                    let ttl = if msg.header.rcode != 0 || msg.answers.is_empty() {
                        NEGATIVE_TTL
                    } else {
                        msg.answers.iter().map(|r| r.ttl).min().unwrap_or(0)
                    };
                    let key = (lname, scoped.then_some(subnet));
                    self.caches[ri].insert(key, msg.header.rcode, msg.answers.clone(), ttl, now);
                    (msg.header.rcode, msg.answers, ttl, ttl, false)
                }
            };
            if rcode != 0 {
                out.error = Some(format!("rcode {rcode}"));
                return out;
            }
            if let Some(target) = records.iter().find_map(|r| match &r.data {
                RData::Cname(t) => Some(t.clone()),
                _ => None,
            }) {
                out.chain.push(ChainStage {
                    name: name.clone(),
                    rtype: "CNAME".into(),
                    data: vec![target.clone()],
                    ttl_s: ttl,
                    remaining_s: remaining,
                    cached,
                });
                out.last_cname = Some(target.clone());
                name = target;
                continue;
            }
            let addrs: Vec<Ipv4Addr> = records
                .iter()
                .filter_map(|r| match r.data {
                    RData::A(a) => Some(a),
                    _ => None,
                })
                .collect();
            if addrs.is_empty() {
                out.error = Some("no data".into());
                return out;
            }
            out.chain.push(ChainStage {
                name,
                rtype: "A".into(),
                data: addrs.iter().map(|a| a.to_string()).collect(),
                ttl_s: ttl,
                remaining_s: remaining,
                cached,
            });
            out.addresses = addrs;
            return out;
        }
        out.error = Some("chain too long".into());
        out
    }
}

#[derive(Default)]
struct Outcome {
    chain: Vec<ChainStage>,
    addresses: Vec<Ipv4Addr>,
    last_cname: Option<String>,
    error: Option<String>,
}
