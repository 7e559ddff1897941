//! TTL cache of a recursive resolver.

use std::collections::HashMap;
use std::time::Duration;

use crate::dns::wire::Record;
use crate::model::{Ipv4Cidr, Timestamp};

/// Name (lowercase) plus the client subnet the answer was scoped to, if any.
pub type CacheKey = (String, Option<Ipv4Cidr>);

#[derive(Debug, Clone, PartialEq)]
pub struct CachedAnswer {
    pub rcode: u8,
    pub records: Vec<Record>,
    pub inserted: Timestamp,
    pub expiry: Timestamp,
}

#[derive(Debug, Default)]
pub struct ResolverCache {
    entries: HashMap<CacheKey, CachedAnswer>,
}

impl ResolverCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Served only while `now < expiry`.
    pub fn get(&self, key: &CacheKey, now: Timestamp) -> Option<&CachedAnswer> {
        self.entries.get(key).filter(|e| now < e.expiry)
    }

    /// Stores with `expiry = now + ttl`.
    pub fn insert(&mut self, key: CacheKey, rcode: u8, records: Vec<Record>, ttl_s: u32, now: Timestamp) {
        let expiry = now + Duration::from_secs(u64::from(ttl_s));
        self.entries.insert(
            key,
            CachedAnswer {
                rcode,
                records,
                inserted: now,
                expiry,
            },
        );
    }

    /// Drops expired entries.
    pub fn purge(&mut self, now: Timestamp) {
        self.entries.retain(|_, e| now < e.expiry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
