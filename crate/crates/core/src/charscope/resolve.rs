//! Chasing a name's CNAME chain and recording every stage's TTL.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::transport::{DnsTransport, RateLimiter};
use crate::dns::wire::{build_query, Message, RData, Record, TYPE_A};
use crate::dns::{decode_portal_name, normalize_name};

const MAX_QUERIES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    /// `CNAME` or `A`.
    pub rtype: String,
    pub data: Vec<String>,
    pub ttl_s: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainResolution {
    pub domain: String,
    pub chain: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Index of the stage owned by a portal name of the measured zone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_stage: Option<usize>,
}

impl DomainResolution {
    pub fn is_meta_cdn(&self) -> bool {
        self.meta_stage.is_some()
    }

    /// The meta-CDN stage itself.
    pub fn meta(&self) -> Option<&Stage> {
        self.meta_stage.and_then(|i| self.chain.get(i))
    }

    /// What the meta-CDN routed to: the next CNAME target or the first address.
    pub fn routed_to(&self) -> Option<&str> {
        self.meta().and_then(|s| s.data.first()).map(String::as_str)
    }

    pub fn addresses(&self) -> &[String] {
        match self.chain.last() {
            Some(s) if s.rtype == "A" => &s.data,
            _ => &[],
        }
    }
}

/// Resolves one name by querying `transport` for each hop.
pub fn resolve_domain(
    domain: &str,
    zone: &str,
    transport: &mut dyn DnsTransport,
    limiter: &mut RateLimiter,
    query_id: &mut u16,
) -> DomainResolution {
    let mut res = DomainResolution {
        domain: normalize_name(domain),
        chain: Vec::new(),
        error: None,
        meta_stage: None,
    };
    let mut name = domain.to_string();
    for _ in 0..MAX_QUERIES {
        limiter.acquire();
        *query_id = query_id.wrapping_add(1);
        let reply = match transport.exchange(&build_query(*query_id, &name, TYPE_A, None)) {
            Ok(r) => r,
            Err(e) => {
                res.error = Some(e.to_string());
                return res;
            }
        };
        let msg = match Message::parse(&reply) {
            Ok(m) => m,
            Err(e) => {
                res.error = Some(format!("bad response: {e}"));
                return res;
            }
        };
        if msg.header.rcode != 0 {
            res.error = Some(rcode_name(msg.header.rcode).to_string());
            return res;
        }
        let before = res.chain.len();
        match follow(&msg.answers, &mut name, &mut res, zone) {
            Walk::Done => return res,
            Walk::NeedMore if res.chain.len() > before => continue,
            Walk::NeedMore => {
                res.error = Some("no data".into());
                return res;
            }
        }
    }
    res.error = Some("chain too long".into());
    res
}

enum Walk {
    Done,
    NeedMore,
}

/// Consumes the records of one response, which may already hold several hops.
fn follow(answers: &[Record], name: &mut String, res: &mut DomainResolution, zone: &str) -> Walk {
    loop {
        let owner = normalize_name(name);
        let owned: Vec<&Record> = answers
            .iter()
            .filter(|r| normalize_name(&r.name) == owner)
            .collect();
        let is_portal = decode_portal_name(&owner, zone).is_ok();
        if let Some((target, ttl)) = owned.iter().find_map(|r| match &r.data {
            RData::Cname(t) => Some((t.clone(), r.ttl)),
            _ => None,
        }) {
            if is_portal && res.meta_stage.is_none() {
                res.meta_stage = Some(res.chain.len());
            }
            res.chain.push(Stage {
                name: owner,
                rtype: "CNAME".into(),
                data: vec![normalize_name(&target)],
                ttl_s: ttl,
            });
            *name = target;
            continue;
        }
        let addrs: Vec<(String, u32)> = owned
            .iter()
            .filter_map(|r| match r.data {
                RData::A(a) => Some((a.to_string(), r.ttl)),
                _ => None,
            })
            .collect();
        if addrs.is_empty() {
            return Walk::NeedMore;
        }
        if is_portal && res.meta_stage.is_none() {
            res.meta_stage = Some(res.chain.len());
        }
        res.chain.push(Stage {
            name: owner,
            rtype: "A".into(),
            ttl_s: addrs.iter().map(|(_, t)| *t).min().unwrap_or(0),
            data: addrs.into_iter().map(|(a, _)| a).collect(),
        });
        return Walk::Done;
    }
}

fn rcode_name(rcode: u8) -> &'static str {
    match rcode {
        1 => "FORMERR",
        2 => "SERVFAIL",
        3 => "NXDOMAIN",
        4 => "NOTIMP",
        5 => "REFUSED",
        _ => "error",
    }
}

/// Errors are recorded per domain and never abort the batch.
pub fn resolve_domains(
    domains: &[String],
    zone: &str,
    transport: &mut dyn DnsTransport,
    limiter: &mut RateLimiter,
) -> Vec<DomainResolution> {
    let mut id = 0u16;
    domains
        .iter()
        .map(|d| resolve_domain(d, zone, transport, limiter, &mut id))
        .collect()
}

/// Plain-text domain list: one per line, `#` comments and blanks ignored.
pub fn read_domain_list(input: impl BufRead) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let d = line.split('#').next().unwrap_or("").trim();
        if !d.is_empty() {
            out.push(d.to_string());
        }
    }
    Ok(out)
}

pub fn write_resolutions(records: &[DomainResolution], mut out: impl Write) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_resolutions(input: impl BufRead) -> io::Result<Vec<DomainResolution>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charscope::transport::InProcess;
    use crate::dns::wire::{Header, Question};

    /// A toy authority: www.a.test → portal → gw.cdn.test → A; direct.test → A; rest NXDOMAIN.
    fn toy(q: &[u8]) -> Vec<u8> {
        let q = Message::parse(q).unwrap();
        let name = q.questions[0].name.to_ascii_lowercase();
        let mut m = Message {
            header: Header {
                id: q.header.id,
                qr: true,
                aa: true,
                ..Default::default()
            },
            questions: vec![Question { ..q.questions[0].clone() }],
            ..Default::default()
        };
        match name.as_str() {
            "www.a.test" => m.answers.push(Record::cname(&name, 300, "2-01-0001-0002.cdx.metacdn.test")),
            "2-01-0001-0002.cdx.metacdn.test" => m.answers.push(Record::cname(&name, 20, "gw.cdn.test")),
            "gw.cdn.test" => m.answers.push(Record::a(&name, 60, "192.0.2.1".parse().unwrap())),
            "direct.test" => m.answers.push(Record::a(&name, 3600, "192.0.2.9".parse().unwrap())),
            "empty.test" => {}
            _ => m.header.rcode = 3,
        }
        m.to_bytes()
    }

    fn run(domains: &[&str]) -> Vec<DomainResolution> {
        let domains: Vec<String> = domains.iter().map(|s| s.to_string()).collect();
        resolve_domains(
            &domains,
            "cdx.metacdn.test",
            &mut InProcess(toy),
            &mut RateLimiter::new(1e6),
        )
    }

    #[test]
    fn three_stage_chain() {
        let r = &run(&["WWW.a.test"])[0];
        assert_eq!(r.error, None);
        assert_eq!(r.chain.len(), 3);
        let ttls: Vec<u32> = r.chain.iter().map(|s| s.ttl_s).collect();
        assert_eq!(ttls, [300, 20, 60]);
        assert_eq!(r.meta_stage, Some(1));
        assert_eq!(r.routed_to(), Some("gw.cdn.test"));
        assert_eq!(r.addresses(), ["192.0.2.1"]);
    }

    #[test]
    fn direct_and_failing_names() {
        let rs = run(&["direct.test", "nope.test", "empty.test"]);
        assert_eq!(rs[0].chain.len(), 1);
        assert!(!rs[0].is_meta_cdn());
        assert_eq!(rs[1].error.as_deref(), Some("NXDOMAIN"));
        assert_eq!(rs[2].error.as_deref(), Some("no data"));
    }

    #[test]
    fn whole_chain_in_one_response() {
        let mut t = InProcess(|q: &[u8]| {
            let q = Message::parse(q).unwrap();
            let n = q.questions[0].name.clone();
            Message {
                header: Header {
                    id: q.header.id,
                    qr: true,
                    ..Default::default()
                },
                questions: q.questions.clone(),
                answers: vec![
                    Record::cname(&n, 300, "2-01-0001-0002.cdx.metacdn.test"),
                    Record::cname("2-01-0001-0002.cdx.metacdn.test", 20, "gw.cdn.test"),
                    Record::a("gw.cdn.test", 60, "192.0.2.1".parse().unwrap()),
                ],
                ..Default::default()
            }
            .to_bytes()
        });
        let mut id = 0;
        let r = resolve_domain("www.a.test", "cdx.metacdn.test", &mut t, &mut RateLimiter::new(1e6), &mut id);
        assert_eq!(r.chain.len(), 3);
        assert_eq!(id, 1);
    }

    #[test]
    fn domain_list_and_log_roundtrip() {
        let list = read_domain_list("# top\nwww.a.test\n\n direct.test # x\n".as_bytes()).unwrap();
        assert_eq!(list, ["www.a.test", "direct.test"]);
        let rs = run(&["www.a.test", "nope.test"]);
        let mut buf = Vec::new();
        write_resolutions(&rs, &mut buf).unwrap();
        assert_eq!(read_resolutions(buf.as_slice()).unwrap(), rs);
    }
}
