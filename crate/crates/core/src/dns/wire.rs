//! A small RFC 1035 message codec: one question, A/CNAME/SOA records and an
//! EDNS0 OPT pseudo-record carrying the client-subnet option (RFC 7871).
//!
//! Names are kept as dotted strings without the trailing root dot. Casing is
//! preserved as received; comparisons elsewhere are case-insensitive.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use thiserror::Error;

pub const TYPE_A: u16 = 1;
pub const TYPE_NS: u16 = 2;
pub const TYPE_CNAME: u16 = 5;
pub const TYPE_SOA: u16 = 6;
pub const TYPE_AAAA: u16 = 28;
pub const TYPE_OPT: u16 = 41;
pub const CLASS_IN: u16 = 1;

pub const OPTION_CLIENT_SUBNET: u16 = 8;

/// Largest plain-UDP payload.
pub const MAX_UDP_PAYLOAD: usize = 512;

const MAX_NAME_LEN: usize = 255;
const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("bad label at offset {0}")]
    BadLabel(usize),
    #[error("compression pointer loop at offset {0}")]
    PointerLoop(usize),
    #[error("name too long")]
    NameTooLong,
    #[error("malformed option: {0}")]
    BadOption(&'static str),
    #[error("more than one OPT record")]
    DuplicateOpt,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Rcode {
    NoError = 0,
    FormErr = 1,
    ServFail = 2,
    NxDomain = 3,
    NotImp = 4,
    Refused = 5,
}

impl Rcode {
    pub fn from_u8(v: u8) -> Option<Rcode> {
        Some(match v {
            0 => Rcode::NoError,
            1 => Rcode::FormErr,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            4 => Rcode::NotImp,
            5 => Rcode::Refused,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Header {
    pub id: u16,
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    pub rcode: u8,
}

impl Header {
    fn flags(&self) -> u16 {
        (u16::from(self.qr) << 15)
            | (u16::from(self.opcode & 0x0f) << 11)
            | (u16::from(self.aa) << 10)
            | (u16::from(self.tc) << 9)
            | (u16::from(self.rd) << 8)
            | (u16::from(self.ra) << 7)
            | u16::from(self.rcode & 0x0f)
    }

    fn from_flags(id: u16, f: u16) -> Header {
        Header {
            id,
            qr: f & 0x8000 != 0,
            opcode: ((f >> 11) & 0x0f) as u8,
            aa: f & 0x0400 != 0,
            tc: f & 0x0200 != 0,
            rd: f & 0x0100 != 0,
            ra: f & 0x0080 != 0,
            rcode: (f & 0x0f) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RData {
    A(Ipv4Addr),
    Cname(String),
    Soa {
        mname: String,
        rname: String,
        serial: u32,
        refresh: u32,
        retry: u32,
        expire: u32,
        minimum: u32,
    },
    Other(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub data: RData,
}

impl Record {
    pub fn a(name: &str, ttl: u32, addr: Ipv4Addr) -> Record {
        Record {
            name: name.to_string(),
            rtype: TYPE_A,
            class: CLASS_IN,
            ttl,
            data: RData::A(addr),
        }
    }

    pub fn cname(name: &str, ttl: u32, target: &str) -> Record {
        Record {
            name: name.to_string(),
            rtype: TYPE_CNAME,
            class: CLASS_IN,
            ttl,
            data: RData::Cname(target.to_string()),
        }
    }
}

/// EDNS0 client-subnet option (IPv4 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientSubnet {
    pub source_prefix: u8,
    pub scope_prefix: u8,
    pub address: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edns {
    pub udp_size: u16,
    pub ext_rcode: u8,
    pub version: u8,
    pub flags: u16,
    pub client_subnet: Option<ClientSubnet>,
    /// Options other than client-subnet, as (code, data). Kept for parsing only.
    pub other_options: Vec<(u16, Vec<u8>)>,
}

impl Edns {
    pub fn new(udp_size: u16) -> Edns {
        Edns {
            udp_size,
            ext_rcode: 0,
            version: 0,
            flags: 0,
            client_subnet: None,
            other_options: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Message {
    pub header: Header,
    pub questions: Vec<Question>,
    pub answers: Vec<Record>,
    pub authority: Vec<Record>,
    pub additional: Vec<Record>,
    pub edns: Option<Edns>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, WireError> {
        let v = *self.buf.get(self.pos).ok_or(WireError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(v)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes([self.u8()?, self.u8()?, self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated(self.pos))?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn name(&mut self) -> Result<String, WireError> {
        let (name, next) = read_name(self.buf, self.pos)?;
        self.pos = next;
        Ok(name)
    }
}

/// Reads a possibly-compressed name at `start`, returning it and the offset just past it.
fn read_name(buf: &[u8], start: usize) -> Result<(String, usize), WireError> {
    let mut labels: Vec<String> = Vec::new();
    let mut pos = start;
    let mut resume = None;
    let mut jumps = 0;
    let mut wire_len = 1;
    loop {
        let len = *buf.get(pos).ok_or(WireError::Truncated(pos))?;
        match len & 0xc0 {
            0x00 => {
                if len == 0 {
                    pos += 1;
                    break;
                }
                let len = len as usize;
                let label = buf
                    .get(pos + 1..pos + 1 + len)
                    .ok_or(WireError::Truncated(pos))?;
                if label.contains(&b'.') || !label.is_ascii() {
                    return Err(WireError::BadLabel(pos));
                }
                wire_len += len + 1;
                if wire_len > MAX_NAME_LEN {
                    return Err(WireError::NameTooLong);
                }
                labels.push(String::from_utf8_lossy(label).into_owned());
                pos += 1 + len;
            }
            0xc0 => {
                let lo = *buf.get(pos + 1).ok_or(WireError::Truncated(pos))?;
                let target = (usize::from(len & 0x3f) << 8) | usize::from(lo);
                if resume.is_none() {
                    resume = Some(pos + 2);
                }
                jumps += 1;
                if jumps > 64 || target >= buf.len() {
                    return Err(WireError::PointerLoop(pos));
                }
                pos = target;
            }
            _ => return Err(WireError::BadLabel(pos)),
        }
    }
    Ok((labels.join("."), resume.unwrap_or(pos)))
}

impl Message {
    pub fn parse(buf: &[u8]) -> Result<Message, WireError> {
        let mut r = Reader { buf, pos: 0 };
        let id = r.u16()?;
        let flags = r.u16()?;
        let qd = r.u16()?;
        let an = r.u16()?;
        let ns = r.u16()?;
        let ar = r.u16()?;
        let mut msg = Message {
            header: Header::from_flags(id, flags),
            ..Default::default()
        };
        for _ in 0..qd {
            let name = r.name()?;
            msg.questions.push(Question {
                name,
                qtype: r.u16()?,
                qclass: r.u16()?,
            });
        }
        for section in 0..3 {
            let count = [an, ns, ar][section];
            for _ in 0..count {
                let name = r.name()?;
                let rtype = r.u16()?;
                let class = r.u16()?;
                let ttl = r.u32()?;
                let rdlen = usize::from(r.u16()?);
                let rd_start = r.pos;
                let raw = r.bytes(rdlen)?;
                if rtype == TYPE_OPT {
                    if section != 2 || msg.edns.is_some() {
                        return Err(WireError::DuplicateOpt);
                    }
                    msg.edns = Some(parse_opt(class, ttl, raw)?);
                    continue;
                }
                let data = match rtype {
                    TYPE_A if rdlen == 4 => RData::A(Ipv4Addr::new(raw[0], raw[1], raw[2], raw[3])),
                    TYPE_CNAME => RData::Cname(read_name(buf, rd_start)?.0),
                    TYPE_SOA => {
                        let mut sr = Reader { buf, pos: rd_start };
                        let mname = sr.name()?;
                        let rname = sr.name()?;
                        RData::Soa {
                            mname,
                            rname,
                            serial: sr.u32()?,
                            refresh: sr.u32()?,
                            retry: sr.u32()?,
                            expire: sr.u32()?,
                            minimum: sr.u32()?,
                        }
                    }
                    _ => RData::Other(raw.to_vec()),
                };
                let rec = Record {
                    name,
                    rtype,
                    class,
                    ttl,
                    data,
                };
                match section {
                    0 => msg.answers.push(rec),
                    1 => msg.authority.push(rec),
                    _ => msg.additional.push(rec),
                }
            }
        }
        if r.pos != buf.len() {
            return Err(WireError::TrailingBytes(buf.len() - r.pos));
        }
        Ok(msg)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        let ar = self.additional.len() + usize::from(self.edns.is_some());
        w.u16(self.header.id);
        w.u16(self.header.flags());
        w.u16(self.questions.len() as u16);
        w.u16(self.answers.len() as u16);
        w.u16(self.authority.len() as u16);
        w.u16(ar as u16);
        for q in &self.questions {
            w.name(&q.name);
            w.u16(q.qtype);
            w.u16(q.qclass);
        }
        for rec in self.answers.iter().chain(&self.authority).chain(&self.additional) {
            w.record(rec);
        }
        if let Some(edns) = &self.edns {
            w.opt(edns);
        }
        w.buf
    }

    /// Byte length of the encoded message.
    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }
}

fn parse_opt(class: u16, ttl: u32, raw: &[u8]) -> Result<Edns, WireError> {
    let mut edns = Edns {
        udp_size: class,
        ext_rcode: (ttl >> 24) as u8,
        version: (ttl >> 16) as u8,
        flags: ttl as u16,
        client_subnet: None,
        other_options: Vec::new(),
    };
    let mut r = Reader { buf: raw, pos: 0 };
    while r.pos < raw.len() {
        let code = r.u16()?;
        let len = usize::from(r.u16()?);
        let data = r.bytes(len)?;
        if code == OPTION_CLIENT_SUBNET {
            if data.len() < 4 {
                return Err(WireError::BadOption("client subnet too short"));
            }
            let family = u16::from_be_bytes([data[0], data[1]]);
            let source = data[2];
            let scope = data[3];
            let addr = &data[4..];
            if family != 1 {
                // Only IPv4 subnets are understood; anything else is carried opaquely.
                edns.other_options.push((code, data.to_vec()));
                continue;
            }
            if source > 32 || addr.len() != usize::from(source).div_ceil(8) {
                return Err(WireError::BadOption("client subnet address length"));
            }
            let mut octets = [0u8; 4];
            octets[..addr.len()].copy_from_slice(addr);
            edns.client_subnet = Some(ClientSubnet {
                source_prefix: source,
                scope_prefix: scope,
                address: Ipv4Addr::from(octets),
            });
        } else {
            edns.other_options.push((code, data.to_vec()));
        }
    }
    Ok(edns)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
    /// Lower-cased name suffix -> offset of its first occurrence.
    suffixes: HashMap<String, u16>,
}

impl Writer {
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn name(&mut self, name: &str) {
        let name = name.trim_end_matches('.');
        if name.is_empty() {
            self.buf.push(0);
            return;
        }
        let labels: Vec<&str> = name.split('.').collect();
        for i in 0..labels.len() {
            let suffix = labels[i..].join(".").to_ascii_lowercase();
            if let Some(&off) = self.suffixes.get(&suffix) {
                self.u16(0xc000 | off);
                return;
            }
            if self.buf.len() <= 0x3fff {
                self.suffixes.insert(suffix, self.buf.len() as u16);
            }
            let label = &labels[i].as_bytes()[..labels[i].len().min(MAX_LABEL_LEN)];
            self.buf.push(label.len() as u8);
            self.buf.extend_from_slice(label);
        }
        self.buf.push(0);
    }

    fn record(&mut self, rec: &Record) {
        self.name(&rec.name);
        self.u16(rec.rtype);
        self.u16(rec.class);
        self.u32(rec.ttl);
        let len_at = self.buf.len();
        self.u16(0);
        match &rec.data {
            RData::A(addr) => self.buf.extend_from_slice(&addr.octets()),
            RData::Cname(target) => self.name(target),
            RData::Soa {
                mname,
                rname,
                serial,
                refresh,
                retry,
                expire,
                minimum,
            } => {
                self.name(mname);
                self.name(rname);
                for v in [serial, refresh, retry, expire, minimum] {
                    self.u32(*v);
                }
            }
            RData::Other(raw) => self.buf.extend_from_slice(raw),
        }
        let rdlen = (self.buf.len() - len_at - 2) as u16;
        self.buf[len_at..len_at + 2].copy_from_slice(&rdlen.to_be_bytes());
    }

    fn opt(&mut self, edns: &Edns) {
        self.buf.push(0);
        self.u16(TYPE_OPT);
        self.u16(edns.udp_size);
        self.u32((u32::from(edns.ext_rcode) << 24) | (u32::from(edns.version) << 16) | u32::from(edns.flags));
        let mut rdata = Vec::new();
        if let Some(ecs) = &edns.client_subnet {
            let n = usize::from(ecs.source_prefix.min(32)).div_ceil(8);
            rdata.extend_from_slice(&OPTION_CLIENT_SUBNET.to_be_bytes());
            rdata.extend_from_slice(&((4 + n) as u16).to_be_bytes());
            rdata.extend_from_slice(&1u16.to_be_bytes());
            rdata.push(ecs.source_prefix);
            rdata.push(ecs.scope_prefix);
            rdata.extend_from_slice(&ecs.address.octets()[..n]);
        }
        for (code, data) in &edns.other_options {
            rdata.extend_from_slice(&code.to_be_bytes());
            rdata.extend_from_slice(&(data.len() as u16).to_be_bytes());
            rdata.extend_from_slice(data);
        }
        self.u16(rdata.len() as u16);
        self.buf.extend_from_slice(&rdata);
    }
}

/// Builds a recursion-desired query for `name`, optionally carrying a client subnet.
pub fn build_query(id: u16, name: &str, qtype: u16, ecs: Option<ClientSubnet>) -> Vec<u8> {
    let msg = Message {
        header: Header {
            id,
            rd: true,
            ..Default::default()
        },
        questions: vec![Question {
            name: name.to_string(),
            qtype,
            qclass: CLASS_IN,
        }],
        edns: ecs.map(|subnet| Edns {
            client_subnet: Some(subnet),
            ..Edns::new(1232)
        }),
        ..Default::default()
    };
    msg.to_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compression_reuses_suffixes_case_insensitively() {
        let msg = Message {
            header: Header {
                id: 1,
                qr: true,
                ..Default::default()
            },
            questions: vec![Question {
                name: "Www.Example.Test".into(),
                qtype: TYPE_A,
                qclass: CLASS_IN,
            }],
            answers: vec![Record::cname("Www.Example.Test", 5, "cdn.example.test")],
            ..Default::default()
        };
        let bytes = msg.to_bytes();
        // owner is a pointer to the question name
        assert_eq!(&bytes[34..36], &[0xc0, 0x0c]);
        let back = Message::parse(&bytes).unwrap();
        assert_eq!(back.answers[0].data, RData::Cname("cdn.Example.Test".into()));
    }

    #[test]
    fn rejects_pointer_loops_and_truncation() {
        let mut q = build_query(7, "a.test", TYPE_A, None);
        assert!(Message::parse(&q[..q.len() - 1]).is_err());
        // replace the name with a self-referencing pointer
        q.truncate(12);
        q.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1]);
        assert!(matches!(Message::parse(&q), Err(WireError::PointerLoop(_))));
        assert!(Message::parse(&[0u8; 5]).is_err());
    }

    #[test]
    fn client_subnet_roundtrip() {
        let ecs = ClientSubnet {
            source_prefix: 20,
            scope_prefix: 0,
            address: Ipv4Addr::new(198, 51, 96, 0),
        };
        let q = build_query(9, "x.test", TYPE_A, Some(ecs));
        let parsed = Message::parse(&q).unwrap();
        assert_eq!(parsed.edns.unwrap().client_subnet, Some(ecs));
    }

    fn arb_label() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9-]{1,12}"
    }

    fn arb_name() -> impl Strategy<Value = String> {
        prop::collection::vec(arb_label(), 1..5).prop_map(|l| l.join("."))
    }

    proptest! {
        #[test]
        fn encode_parse_roundtrip(
            id in any::<u16>(),
            qname in arb_name(),
            targets in prop::collection::vec(arb_name(), 0..4),
            addrs in prop::collection::vec(any::<u32>(), 0..4),
            ttl in any::<u32>(),
        ) {
            let mut answers: Vec<Record> =
                targets.iter().map(|t| Record::cname(&qname, ttl, t)).collect();
            answers.extend(addrs.iter().map(|a| Record::a(&qname, ttl, Ipv4Addr::from(*a))));
            let msg = Message {
                header: Header { id, qr: true, aa: true, rd: true, ..Default::default() },
                questions: vec![Question { name: qname.clone(), qtype: TYPE_A, qclass: CLASS_IN }],
                answers,
                ..Default::default()
            };
            let parsed = Message::parse(&msg.to_bytes()).unwrap();
            prop_assert_eq!(parsed.header, msg.header);
            prop_assert_eq!(parsed.answers.len(), msg.answers.len());
            for (a, b) in parsed.answers.iter().zip(&msg.answers) {
                prop_assert!(a.name.eq_ignore_ascii_case(&b.name));
                prop_assert_eq!(a.ttl, b.ttl);
                match (&a.data, &b.data) {
                    (RData::Cname(x), RData::Cname(y)) => prop_assert!(x.eq_ignore_ascii_case(y)),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }

        #[test]
        fn parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = Message::parse(&bytes);
        }
    }
}
