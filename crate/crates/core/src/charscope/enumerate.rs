//! Brute-force discovery of provisioned portal names.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::resolve::DomainResolution;
use super::transport::{DnsTransport, RateLimiter};
use crate::dns::wire::{build_query, Message, TYPE_A};
use crate::dns::{decode_portal_name, encode_portal_name};
use crate::model::{AppId, CustomerId, ID_SPACE};

#[derive(Debug, Error)]
pub enum EnumerateError {
    #[error("app id cap must be in 1..=65536, got {0}")]
    BadCap(u32),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Enumeration,
    DomainList,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub customer: CustomerId,
    pub app: AppId,
    pub source: Source,
    pub domains: Vec<String>,
}

/// Every (customer, app) pair to try, in order. For each customer the first
/// `cap` app ids are `0001, 0002, ...` (wrapping to `0000` only at the full cap).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationPlan {
    pub first_customer: u16,
    pub last_customer: u16,
    pub cap: u32,
}

impl EnumerationPlan {
    pub fn new(customers: RangeInclusive<u16>, cap: u32) -> Result<EnumerationPlan, EnumerateError> {
        if cap == 0 || cap > ID_SPACE {
            return Err(EnumerateError::BadCap(cap));
        }
        Ok(EnumerationPlan {
            first_customer: *customers.start(),
            last_customer: *customers.end(),
            cap,
        })
    }

    pub fn apps_per_customer(&self) -> u64 {
        u64::from(self.cap.min(ID_SPACE))
    }

    /// `|customers| × min(cap, 65536)`.
    pub fn size(&self) -> u64 {
        let customers = if self.last_customer < self.first_customer {
            0
        } else {
            u64::from(self.last_customer - self.first_customer) + 1
        };
        customers * self.apps_per_customer()
    }

    pub fn get(&self, index: u64) -> Option<(CustomerId, AppId)> {
        if index >= self.size() {
            return None;
        }
        let per = self.apps_per_customer();
        let c = u64::from(self.first_customer) + index / per;
        let a = (index % per + 1) % u64::from(ID_SPACE);
        Some((CustomerId::new(c as u16), AppId::new(a as u16)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (CustomerId, AppId)> + '_ {
        (0..self.size()).map(move |i| self.get(i).expect("in range"))
    }
}

/// Resumable state, written to disk periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub zone: String,
    pub plan: EnumerationPlan,
    pub next: u64,
    pub found: Vec<DiscoveryRecord>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Option<Checkpoint>, EnumerateError> {
        let err = |reason: String| EnumerateError::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| err(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(err(e.to_string())),
        }
    }

    /// Written to a sibling temp file first, then renamed over.
    pub fn save(&self, path: &Path) -> Result<(), EnumerateError> {
        let err = |reason: String| EnumerateError::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub records: Vec<DiscoveryRecord>,
    /// Plan index to resume from.
    pub next: u64,
    pub complete: bool,
    /// Why the run stopped early.
    pub aborted: Option<String>,
}

pub struct EnumerateOptions<'a> {
    pub zone: &'a str,
    pub checkpoint: Option<&'a Path>,
    pub checkpoint_every: u64,
    /// Stop after this many queries in this run (for slicing long runs).
    pub budget: Option<u64>,
}

/// Queries every portal name in `plan`; NOERROR with a CNAME or A answer
/// counts as provisioned. A transport failure aborts with what was found so far.
pub fn enumerate_customers(
    plan: &EnumerationPlan,
    opts: &EnumerateOptions,
    transport: &mut dyn DnsTransport,
    limiter: &mut RateLimiter,
) -> Result<EnumerationResult, EnumerateError> {
    let mut state = Checkpoint {
        zone: opts.zone.to_string(),
        plan: plan.clone(),
        next: 0,
        found: Vec::new(),
    };
    if let Some(path) = opts.checkpoint {
        if let Some(cp) = Checkpoint::load(path)? {
            if cp.plan != *plan || cp.zone != opts.zone {
                return Err(EnumerateError::Checkpoint {
                    path: path.display().to_string(),
                    reason: "belongs to a different plan or zone".into(),
                });
            }
            state = cp;
        }
    }
    let every = opts.checkpoint_every.max(1);
    let mut aborted = None;
    let mut spent = 0u64;
    let mut qid = (state.next & 0xffff) as u16;
    while state.next < plan.size() {
        if opts.budget.is_some_and(|b| spent >= b) {
            break;
        }
        let (c, a) = plan.get(state.next).expect("in range");
        limiter.acquire();
        qid = qid.wrapping_add(1);
        let name = encode_portal_name(c, a, opts.zone);
        match transport.exchange(&build_query(qid, &name, TYPE_A, None)) {
            Ok(bytes) => {
                if Message::parse(&bytes)
                    .is_ok_and(|m| m.header.rcode == 0 && !m.answers.is_empty())
                {
                    state.found.push(DiscoveryRecord {
                        customer: c,
                        app: a,
                        source: Source::Enumeration,
                        domains: Vec::new(),
                    });
                }
            }
            Err(e) => {
                aborted = Some(format!("{name}: {e}"));
                break;
            }
        }
        state.next += 1;
        spent += 1;
        if let Some(path) = opts.checkpoint {
            if state.next.is_multiple_of(every) {
                state.save(path)?;
            }
        }
    }
    if let Some(path) = opts.checkpoint {
        state.save(path)?;
    }
    Ok(EnumerationResult {
        complete: state.next >= plan.size(),
        next: state.next,
        records: state.found,
        aborted,
    })
}

/// Folds domain-list resolutions into the enumeration results: every
/// resolution that passes through a portal name attaches its domain.
pub fn merge_discoveries(
    enumerated: &[DiscoveryRecord],
    resolutions: &[DomainResolution],
    zone: &str,
) -> Vec<DiscoveryRecord> {
    let mut by_id: BTreeMap<(CustomerId, AppId), DiscoveryRecord> = enumerated
        .iter()
        .map(|r| ((r.customer, r.app), r.clone()))
        .collect();
    for res in resolutions {
        let Some(meta) = res.meta() else { continue };
        let Ok((c, a)) = decode_portal_name(&meta.name, zone) else { continue };
        let rec = by_id.entry((c, a)).or_insert_with(|| DiscoveryRecord {
            customer: c,
            app: a,
            source: Source::DomainList,
            domains: Vec::new(),
        });
        if rec.source == Source::Enumeration {
            rec.source = Source::Both;
        }
        if !rec.domains.contains(&res.domain) {
            rec.domains.push(res.domain.clone());
            rec.domains.sort();
        }
    }
    by_id.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charscope::resolve::Stage;
    use crate::charscope::transport::{InProcess, TransportError};
    use crate::dns::wire::{Header, Record};
    use proptest::prelude::*;

    #[test]
    fn plan_sizes() {
        assert_eq!(EnumerationPlan::new(0..=0xffff, 256).unwrap().size(), 16_777_216);
        assert_eq!(EnumerationPlan::new(5..=6, 3).unwrap().size(), 6);
        assert_eq!(EnumerationPlan::new(0..=0, 65_536).unwrap().size(), 65_536);
        assert!(EnumerationPlan::new(0..=1, 0).is_err());
        assert!(EnumerationPlan::new(0..=1, 65_537).is_err());
    }

    #[test]
    fn plan_order() {
        let p = EnumerationPlan::new(0x446b..=0x446c, 2).unwrap();
        let got: Vec<String> = p.iter().map(|(c, a)| format!("{c}-{a}")).collect();
        assert_eq!(got, ["446b-0001", "446b-0002", "446c-0001", "446c-0002"]);
        let full = EnumerationPlan::new(0..=0, 65_536).unwrap();
        assert_eq!(full.get(65_535).unwrap().1, AppId::new(0));
    }

    proptest! {
        #[test]
        fn plan_size_formula(a in any::<u16>(), b in any::<u16>(), cap in 1u32..=65_536) {
            let (lo, hi) = (a.min(b), a.max(b));
            let p = EnumerationPlan::new(lo..=hi, cap).unwrap();
            prop_assert_eq!(p.size(), (u64::from(hi - lo) + 1) * u64::from(cap));
        }

        #[test]
        fn plan_ids_are_distinct(cap in 1u32..300) {
            let p = EnumerationPlan::new(1..=2, cap).unwrap();
            let ids: std::collections::BTreeSet<_> = p.iter().collect();
            prop_assert_eq!(ids.len() as u64, p.size());
        }
    }

    /// Answers only for 0001-0002 and 0002-0001.
    fn authority(q: &[u8]) -> Vec<u8> {
        let q = Message::parse(q).unwrap();
        let name = q.questions[0].name.clone();
        let known = ["2-01-0001-0002.z.test", "2-01-0002-0001.z.test"].contains(&name.as_str());
        let mut m = Message {
            header: Header {
                id: q.header.id,
                qr: true,
                rcode: if known { 0 } else { 3 },
                ..Default::default()
            },
            questions: q.questions.clone(),
            ..Default::default()
        };
        if known {
            m.answers.push(Record::cname(&name, 20, "gw.cdn.test"));
        }
        m.to_bytes()
    }

    fn opts<'a>(cp: Option<&'a Path>, budget: Option<u64>) -> EnumerateOptions<'a> {
        EnumerateOptions {
            zone: "z.test",
            checkpoint: cp,
            checkpoint_every: 2,
            budget,
        }
    }

    #[test]
    fn finds_provisioned_apps() {
        let plan = EnumerationPlan::new(1..=2, 4).unwrap();
        let r = enumerate_customers(&plan, &opts(None, None), &mut InProcess(authority), &mut RateLimiter::new(1e6))
            .unwrap();
        assert!(r.complete);
        let ids: Vec<String> = r.records.iter().map(|d| format!("{}-{}", d.customer, d.app)).collect();
        assert_eq!(ids, ["0001-0002", "0002-0001"]);
    }

    #[test]
    fn resumes_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join("cp.json");
        let plan = EnumerationPlan::new(1..=2, 4).unwrap();
        let mut lim = RateLimiter::new(1e6);
        let first = enumerate_customers(&plan, &opts(Some(&cp), Some(3)), &mut InProcess(authority), &mut lim).unwrap();
        assert!(!first.complete);
        assert_eq!(first.next, 3);
        let mut seen = Vec::new();
        let second = enumerate_customers(
            &plan,
            &opts(Some(&cp), None),
            &mut InProcess(|q: &[u8]| {
                seen.push(Message::parse(q).unwrap().questions[0].name.clone());
                authority(q)
            }),
            &mut lim,
        )
        .unwrap();
        assert!(second.complete);
        assert_eq!(second.records.len(), 2);
        assert_eq!(seen.len(), 5);
        let other = EnumerationPlan::new(1..=3, 4).unwrap();
        assert!(enumerate_customers(&other, &opts(Some(&cp), None), &mut InProcess(authority), &mut lim).is_err());
    }

    struct Flaky(u32);

    impl DnsTransport for Flaky {
        fn exchange(&mut self, q: &[u8]) -> Result<Vec<u8>, TransportError> {
            if self.0 == 0 {
                return Err(TransportError::Timeout(1));
            }
            self.0 -= 1;
            Ok(authority(q))
        }
    }

    #[test]
    fn unreachable_resolver_aborts_with_partial_results() {
        let plan = EnumerationPlan::new(1..=2, 4).unwrap();
        let r = enumerate_customers(&plan, &opts(None, None), &mut Flaky(3), &mut RateLimiter::new(1e6)).unwrap();
        assert!(!r.complete);
        assert!(r.aborted.is_some());
        assert_eq!(r.next, 3);
        assert_eq!(r.records.len(), 1);
    }

    #[test]
    fn merge_sets_sources() {
        let enumerated = vec![DiscoveryRecord {
            customer: CustomerId::new(1),
            app: AppId::new(2),
            source: Source::Enumeration,
            domains: vec![],
        }];
        let res = |domain: &str, portal: &str| DomainResolution {
            domain: domain.into(),
            chain: vec![
                Stage { name: domain.into(), rtype: "CNAME".into(), data: vec![portal.into()], ttl_s: 300 },
                Stage { name: portal.into(), rtype: "CNAME".into(), data: vec!["gw".into()], ttl_s: 20 },
            ],
            error: None,
            meta_stage: Some(1),
        };
        let merged = merge_discoveries(
            &enumerated,
            &[res("www.a.test", "2-01-0001-0002.z.test"), res("b.test", "2-01-0003-0001.z.test")],
            "z.test",
        );
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].source, Source::Both);
        assert_eq!(merged[0].domains, ["www.a.test"]);
        assert_eq!(merged[1].source, Source::DomainList);
    }
}
