//! Static CIDR → (ASN, country) table with longest-prefix lookup.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{CountryCode, Ipv4Cidr};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("geo table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("geo table line {line}: {reason}")]
    Parse { line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoEntry {
    pub cidr: Ipv4Cidr,
    pub asn: u32,
    pub country: CountryCode,
}

#[derive(Deserialize)]
struct Row {
    cidr: String,
    asn: u32,
    country: String,
}

/// Sorted by descending prefix so the first containing entry is the longest match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeoTable {
    entries: Vec<GeoEntry>,
}

impl GeoTable {
    pub fn new(entries: impl IntoIterator<Item = GeoEntry>) -> GeoTable {
        let mut entries: Vec<GeoEntry> = entries
            .into_iter()
            .map(|e| GeoEntry {
                cidr: e.cidr.network(),
                ..e
            })
            .collect();
        entries.sort_by_key(|e| std::cmp::Reverse(e.cidr.prefix()));
        GeoTable { entries }
    }

    /// Parses `cidr,asn,country` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<GeoTable, GeoError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| GeoError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let bad = |reason: String| GeoError::Parse { line: 0, reason };
            entries.push(GeoEntry {
                cidr: row.cidr.parse().map_err(|e| bad(format!("{e}")))?,
                asn: row.asn,
                country: row.country.parse().map_err(|e| bad(format!("{e}")))?,
            });
        }
        Ok(GeoTable::new(entries))
    }

    pub fn load(path: &Path) -> Result<GeoTable, GeoError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GeoTable::parse(&text)
    }

    /// Unknown addresses map to ASN 0 and country `ZZ`.
    pub fn lookup(&self, ip: Ipv4Addr) -> (u32, CountryCode) {
        self.entries
            .iter()
            .find(|e| e.cidr.contains(ip))
            .map_or((0, CountryCode::UNKNOWN), |e| (e.asn, e.country))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_prefix_wins() {
        let t = GeoTable::parse("# test\n10.0.0.0/8,100,DE\n10.1.0.0/16, 200 ,fr\n").unwrap();
        assert_eq!(t.lookup("10.1.2.3".parse().unwrap()), (200, "FR".parse().unwrap()));
        assert_eq!(t.lookup("10.2.2.3".parse().unwrap()), (100, "DE".parse().unwrap()));
        assert_eq!(t.lookup("192.0.2.1".parse().unwrap()), (0, CountryCode::UNKNOWN));
    }

    #[test]
    fn rejects_garbage() {
        assert!(GeoTable::parse("10.0.0.0/33,1,DE\n").is_err());
        assert!(GeoTable::parse("10.0.0.0/8,x,DE\n").is_err());
        assert!(GeoTable::parse("10.0.0.0/8,1,DEU\n").is_err());
    }
}
