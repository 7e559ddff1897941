//! The simulator's append-only output, one JSON object per line.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{AppId, CountryCode, CustomerId, Ipv4Cidr, Metric, Timestamp};
use crate::openmix::Reason;

/// One hop of a resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStage {
    pub name: String,
    /// `CNAME` or `A`.
    pub rtype: String,
    pub data: Vec<String>,
    /// TTL as handed out by the authority.
    pub ttl_s: u32,
    /// Seconds left when served; equals `ttl_s` on a fresh answer.
    pub remaining_s: u32,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub t: Timestamp,
    pub id: u64,
    pub client: String,
    pub region: String,
    pub asn: u32,
    pub country: CountryCode,
    pub resolver: String,
    pub domain: String,
    pub chain: Vec<ChainStage>,
    pub addresses: Vec<Ipv4Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ping of every candidate right after a resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: Timestamp,
    pub resolution: u64,
    pub client: String,
    pub domain: String,
    pub chosen: String,
    pub ground_truth_best: String,
    /// `None` is a lost probe.
    pub latency_ms: BTreeMap<String, Option<f64>>,
    /// Jitter-free model latency.
    pub model_ms: BTreeMap<String, f64>,
}

/// An authoritative routing decision at the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: Timestamp,
    pub resolver: String,
    pub customer: CustomerId,
    pub app: AppId,
    pub asn: u32,
    pub country: CountryCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecs: Option<Ipv4Cidr>,
    pub chosen: String,
    pub reason: Reason,
    pub ttl_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub t: Timestamp,
    pub client: String,
    pub platform: String,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimRecord {
    Resolution(ResolutionRecord),
    Sample(SampleRecord),
    Decision(DecisionRecord),
    Probe(ProbeRecord),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub records: Vec<SimRecord>,
}

impl SimLog {
    pub fn push(&mut self, r: SimRecord) {
        self.records.push(r);
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> io::Result<SimLog> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            records.push(rec);
        }
        Ok(SimLog { records })
    }

    pub fn load(path: &Path) -> io::Result<SimLog> {
        SimLog::read_jsonl(io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn resolutions(&self) -> impl Iterator<Item = &ResolutionRecord> {
        self.records.iter().filter_map(|r| match r {
            SimRecord::Resolution(x) => Some(x),
            _ => None,
        })
    }

    pub fn samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter_map(|r| match r {
            SimRecord::Sample(x) => Some(x),
            _ => None,
        })
    }

    pub fn decisions(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.records.iter().filter_map(|r| match r {
            SimRecord::Decision(x) => Some(x),
            _ => None,
        })
    }

    pub fn probes(&self) -> impl Iterator<Item = &ProbeRecord> {
        self.records.iter().filter_map(|r| match r {
            SimRecord::Probe(x) => Some(x),
            _ => None,
        })
    }
}
