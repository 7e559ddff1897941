//! Declarative rule programs for customer-defined routing.
//!
//! A program is an ordered list of rules plus a program-wide fallback:
//!
//! ```json
//! {
//!   "rules": [
//!     { "filter": "availability >= 0.9 and fusion.healthy", "score": "latency", "fallback": "cdnA" }
//!   ],
//!   "fallback": "cdnA"
//! }
//! ```
//!
//! Expressions support numbers, string literals, `+ - * /`, comparisons,
//! `and`/`or`/`not` (also `&&`, `||`, `!`), parentheses and `min(a, b)` /
//! `max(a, b)`. Identifiers evaluated per candidate:
//!
//! | identifier                  | meaning                                        |
//! |-----------------------------|------------------------------------------------|
//! | `latency`, `latency_ms`     | aggregated latency of the candidate            |
//! | `throughput`, `throughput_kbps` | aggregated throughput of the candidate     |
//! | `availability`              | aggregated availability of the candidate       |
//! | `headroom`                  | remaining quota fraction from the fusion feed  |
//! | `fusion.<key>`              | any fusion metric (booleans read as 1/0)       |
//! | `platform`                  | the candidate alias (compare with `"alias"`)   |
//! | `asn`, `country`            | the client's AS number and country code        |
//!
//! A reference to missing data makes the whole expression undefined: a filter
//! that is undefined rejects the candidate, an undefined score removes it from
//! ranking. Scores are lower-is-better.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClientContext, CountryCode, Metric};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("unknown identifier {0:?}")]
    UnknownIdentifier(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("unknown platform {0:?}")]
    UnknownPlatform(String),
    #[error("invalid country literal {0:?}")]
    BadCountry(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("fallback {0:?} is not a candidate")]
    FallbackNotCandidate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Metric(Metric),
    Headroom,
    Platform,
    Asn,
    Country,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(String),
    Bool(bool),
    Var(Var),
    Fusion(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Num,
    Bool,
    Str,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    Dot,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, RuleError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: &str| RuleError::Syntax {
        col: col + 1,
        msg: msg.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                out.push((start, Tok::Dot));
                i += 1;
            }
            b'"' | b'\'' => {
                let end = src[i + 1..]
                    .find(c as char)
                    .ok_or_else(|| err(start, "unterminated string"))?;
                out.push((start, Tok::Str(src[i + 1..i + 1 + end].to_string())));
                i += end + 2;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let n: f64 = src[start..i]
                    .parse()
                    .map_err(|_| err(start, "bad number"))?;
                out.push((start, Tok::Num(n)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => {
                const OPS: [&str; 15] = [
                    "<=", ">=", "==", "!=", "&&", "||", "<", ">", "+", "-", "*", "/", "!", "=", "%",
                ];
                let op = OPS
                    .iter()
                    .find(|op| src[i..].starts_with(**op))
                    .ok_or_else(|| err(start, "unexpected character"))?;
                if *op == "=" || *op == "%" {
                    return Err(err(start, "unsupported operator"));
                }
                out.push((start, Tok::Op(op)));
                i += op.len();
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |(c, _)| *c) + 1
    }

    fn fail<T>(&self, msg: &str) -> Result<T, RuleError> {
        Err(RuleError::Syntax {
            col: self.col(),
            msg: msg.to_string(),
        })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn eat_op(&mut self, ops: &[&str]) -> Option<&'static str> {
        match self.peek() {
            Some(Tok::Op(op)) if ops.contains(op) => {
                let op = *op;
                self.pos += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.and()?;
        while self.eat_word("or") || self.eat_op(&["||"]).is_some() {
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.not()?;
        while self.eat_word("and") || self.eat_op(&["&&"]).is_some() {
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, RuleError> {
        if self.eat_word("not") || self.eat_op(&["!"]).is_some() {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, RuleError> {
        let lhs = self.sum()?;
        let op = match self.eat_op(&["<=", ">=", "==", "!=", "<", ">"]) {
            Some("<") => BinOp::Lt,
            Some("<=") => BinOp::Le,
            Some(">") => BinOp::Gt,
            Some(">=") => BinOp::Ge,
            Some("==") => BinOp::Eq,
            Some("!=") => BinOp::Ne,
            _ => return Ok(lhs),
        };
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(self.sum()?)))
    }

    fn sum(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.prod()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.prod()?));
        }
        Ok(lhs)
    }

    fn prod(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, RuleError> {
        if self.eat_op(&["-"]).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, RuleError> {
        match self.bump() {
            Some(Tok::Num(n)) => Ok(Expr::Num(n)),
            Some(Tok::Str(s)) => Ok(Expr::Str(s)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    _ => {
                        self.pos -= 1;
                        self.fail("expected ')'")
                    }
                }
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    let func = match name.as_str() {
                        "min" => Func::Min,
                        "max" => Func::Max,
                        _ => return Err(RuleError::UnknownFunction(name)),
                    };
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(Tok::Comma)) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    if self.bump() != Some(Tok::RParen) {
                        self.pos -= 1;
                        return self.fail("expected ')'");
                    }
                    return Ok(Expr::Call(func, args));
                }
                if name == "fusion" {
                    if self.bump() != Some(Tok::Dot) {
                        self.pos -= 1;
                        return self.fail("expected '.' after fusion");
                    }
                    return match self.bump() {
                        Some(Tok::Ident(key)) => Ok(Expr::Fusion(key)),
                        _ => {
                            self.pos -= 1;
                            self.fail("expected fusion metric name")
                        }
                    };
                }
                let var = match name.as_str() {
                    "true" => return Ok(Expr::Bool(true)),
                    "false" => return Ok(Expr::Bool(false)),
                    "latency" | "latency_ms" | "rtt" => Var::Metric(Metric::LatencyMs),
                    "throughput" | "throughput_kbps" => Var::Metric(Metric::ThroughputKbps),
                    "availability" => Var::Metric(Metric::Availability),
                    "headroom" => Var::Headroom,
                    "platform" => Var::Platform,
                    "asn" => Var::Asn,
                    "country" => Var::Country,
                    _ => return Err(RuleError::UnknownIdentifier(name)),
                };
                Ok(Expr::Var(var))
            }
            Some(_) => {
                self.pos -= 1;
                self.fail("unexpected token")
            }
            None => self.fail("unexpected end of expression"),
        }
    }
}

/// Parses one expression.
pub fn parse_expr(src: &str) -> Result<Expr, RuleError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: src.len(),
    };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return p.fail("trailing input");
    }
    Ok(e)
}

fn type_of(e: &Expr, platforms: &BTreeSet<String>) -> Result<Ty, RuleError> {
    Ok(match e {
        Expr::Num(_) | Expr::Fusion(_) => Ty::Num,
        Expr::Str(_) => Ty::Str,
        Expr::Bool(_) => Ty::Bool,
        Expr::Var(Var::Platform | Var::Country) => Ty::Str,
        Expr::Var(_) => Ty::Num,
        Expr::Neg(x) => {
            expect(type_of(x, platforms)?, Ty::Num, "negation")?;
            Ty::Num
        }
        Expr::Not(x) => {
            truthy(type_of(x, platforms)?, "not")?;
            Ty::Bool
        }
        Expr::Call(_, args) => {
            if args.len() != 2 {
                return Err(RuleError::Type("min/max take two arguments".into()));
            }
            for a in args {
                expect(type_of(a, platforms)?, Ty::Num, "min/max")?;
            }
            Ty::Num
        }
        Expr::Bin(op, l, r) => {
            let (lt, rt) = (type_of(l, platforms)?, type_of(r, platforms)?);
            match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                    expect(lt, Ty::Num, "arithmetic")?;
                    expect(rt, Ty::Num, "arithmetic")?;
                    Ty::Num
                }
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    expect(lt, Ty::Num, "ordering")?;
                    expect(rt, Ty::Num, "ordering")?;
                    Ty::Bool
                }
                BinOp::Eq | BinOp::Ne => {
                    if lt != rt {
                        return Err(RuleError::Type("comparing values of different types".into()));
                    }
                    check_string_literals(l, r, platforms)?;
                    check_string_literals(r, l, platforms)?;
                    Ty::Bool
                }
                BinOp::And | BinOp::Or => {
                    truthy(lt, "and/or")?;
                    truthy(rt, "and/or")?;
                    Ty::Bool
                }
            }
        }
    })
}

/// String literals compared against `platform` or `country` must name something real.
fn check_string_literals(
    var: &Expr,
    lit: &Expr,
    platforms: &BTreeSet<String>,
) -> Result<(), RuleError> {
    match (var, lit) {
        (Expr::Var(Var::Platform), Expr::Str(s)) if !platforms.contains(s) => {
            Err(RuleError::UnknownPlatform(s.clone()))
        }
        (Expr::Var(Var::Country), Expr::Str(s)) => s
            .parse::<CountryCode>()
            .map(|_| ())
            .map_err(|_| RuleError::BadCountry(s.clone())),
        _ => Ok(()),
    }
}

fn expect(got: Ty, want: Ty, ctx: &str) -> Result<(), RuleError> {
    if got == want {
        Ok(())
    } else {
        Err(RuleError::Type(format!("{ctx} expects {want:?}, got {got:?}")))
    }
}

fn truthy(got: Ty, ctx: &str) -> Result<(), RuleError> {
    if got == Ty::Str {
        Err(RuleError::Type(format!("{ctx} expects a condition, got a string")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    fn truth(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            Value::Num(n) => *n != 0.0,
            Value::Str(s) => !s.is_empty(),
        }
    }

    fn num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            Value::Bool(b) => Some(f64::from(u8::from(*b))),
            Value::Str(_) => None,
        }
    }
}

/// Data an expression can read while being evaluated for one candidate.
pub trait Bindings {
    fn metric(&self, platform: &str, metric: Metric) -> Option<f64>;
    fn fusion(&self, platform: &str, key: &str) -> Option<f64>;
    fn headroom(&self, platform: &str) -> Option<f64>;
    fn client(&self) -> &ClientContext;
}

impl Expr {
    /// Evaluates for `platform`; `None` means some referenced datum is missing.
    pub fn eval(&self, platform: &str, b: &dyn Bindings) -> Option<Value> {
        Some(match self {
            Expr::Num(n) => Value::Num(*n),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Bool(v) => Value::Bool(*v),
            Expr::Var(Var::Metric(m)) => Value::Num(b.metric(platform, *m)?),
            Expr::Var(Var::Headroom) => Value::Num(b.headroom(platform)?),
            Expr::Var(Var::Platform) => Value::Str(platform.to_string()),
            Expr::Var(Var::Asn) => Value::Num(f64::from(b.client().asn)),
            Expr::Var(Var::Country) => Value::Str(b.client().country.to_string()),
            Expr::Fusion(key) => Value::Num(b.fusion(platform, key)?),
            Expr::Neg(x) => Value::Num(-x.eval(platform, b)?.num()?),
            Expr::Not(x) => Value::Bool(!x.eval(platform, b)?.truth()),
            Expr::Call(f, args) => {
                let x = args.first()?.eval(platform, b)?.num()?;
                let y = args.get(1)?.eval(platform, b)?.num()?;
                Value::Num(match f {
                    Func::Min => x.min(y),
                    Func::Max => x.max(y),
                })
            }
            Expr::Bin(op, l, r) => {
                // and/or short-circuit so that missing data on the unused side does not matter
                if let BinOp::And | BinOp::Or = op {
                    let lv = l.eval(platform, b).map(|v| v.truth());
                    return match (op, lv) {
                        (BinOp::And, Some(false)) => Some(Value::Bool(false)),
                        (BinOp::Or, Some(true)) => Some(Value::Bool(true)),
                        (_, lv) => {
                            let rv = r.eval(platform, b)?.truth();
                            lv.map(|_| Value::Bool(rv))
                        }
                    };
                }
                let lv = l.eval(platform, b)?;
                let rv = r.eval(platform, b)?;
                match op {
                    BinOp::Eq => Value::Bool(values_eq(&lv, &rv)),
                    BinOp::Ne => Value::Bool(!values_eq(&lv, &rv)),
                    _ => {
                        let (x, y) = (lv.num()?, rv.num()?);
                        match op {
                            BinOp::Add => Value::Num(x + y),
                            BinOp::Sub => Value::Num(x - y),
                            BinOp::Mul => Value::Num(x * y),
                            BinOp::Div => {
                                if y == 0.0 {
                                    return None;
                                }
                                Value::Num(x / y)
                            }
                            BinOp::Lt => Value::Bool(x < y),
                            BinOp::Le => Value::Bool(x <= y),
                            BinOp::Gt => Value::Bool(x > y),
                            BinOp::Ge => Value::Bool(x >= y),
                            BinOp::Eq | BinOp::Ne | BinOp::And | BinOp::Or => unreachable!(),
                        }
                    }
                }
            }
        })
    }
}

fn values_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => x.eq_ignore_ascii_case(y),
        _ => match (a.num(), b.num()) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSource {
    #[serde(default = "default_filter")]
    pub filter: String,
    #[serde(default = "default_score")]
    pub score: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

fn default_filter() -> String {
    "true".into()
}

fn default_score() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleProgramSource {
    pub rules: Vec<RuleSource>,
    pub fallback: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub filter: Expr,
    pub score: Expr,
    pub fallback: Option<String>,
}

/// A parsed rule program. Parsing checks syntax; [`RuleProgram::validate`]
/// checks it against the deployment's platforms and the app's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleProgramSource", into = "RuleProgramSource")]
pub struct RuleProgram {
    source: RuleProgramSource,
    pub rules: Vec<Rule>,
    pub fallback: String,
}

impl TryFrom<RuleProgramSource> for RuleProgram {
    type Error = RuleError;

    fn try_from(source: RuleProgramSource) -> Result<Self, RuleError> {
        let rules = source
            .rules
            .iter()
            .map(|r| {
                Ok(Rule {
                    filter: parse_expr(&r.filter)?,
                    score: parse_expr(&r.score)?,
                    fallback: r.fallback.clone(),
                })
            })
            .collect::<Result<_, RuleError>>()?;
        Ok(RuleProgram {
            fallback: source.fallback.clone(),
            source,
            rules,
        })
    }
}

impl From<RuleProgram> for RuleProgramSource {
    fn from(p: RuleProgram) -> Self {
        p.source
    }
}

impl fmt::Display for RuleProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let json = serde_json::to_string(&self.source).map_err(|_| fmt::Error)?;
        f.write_str(&json)
    }
}

impl RuleProgram {
    pub fn parse(json: &str) -> Result<RuleProgram, RuleError> {
        let source: RuleProgramSource = serde_json::from_str(json).map_err(|e| RuleError::Syntax {
            col: e.column(),
            msg: e.to_string(),
        })?;
        source.try_into()
    }

    /// Load-time checks: types, referenced platforms, and that every fallback is a candidate.
    pub fn validate(
        &self,
        platforms: &BTreeSet<String>,
        candidates: &[String],
    ) -> Result<(), RuleError> {
        let is_candidate = |alias: &String| candidates.iter().any(|c| c == alias);
        if !is_candidate(&self.fallback) {
            return Err(RuleError::FallbackNotCandidate(self.fallback.clone()));
        }
        for rule in &self.rules {
            truthy(type_of(&rule.filter, platforms)?, "filter")?;
            expect(type_of(&rule.score, platforms)?, Ty::Num, "score")?;
            if let Some(fb) = &rule.fallback {
                if !is_candidate(fb) {
                    return Err(RuleError::FallbackNotCandidate(fb.clone()));
                }
            }
        }
        Ok(())
    }

    /// Whether the filter admits `platform`. Undefined filters reject.
    pub fn admits(rule: &Rule, platform: &str, b: &dyn Bindings) -> bool {
        rule.filter.eval(platform, b).is_some_and(|v| v.truth())
    }

    pub fn score(rule: &Rule, platform: &str, b: &dyn Bindings) -> Option<f64> {
        rule.score
            .eval(platform, b)
            .and_then(|v| v.num())
            .filter(|s| !s.is_nan())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn platforms() -> BTreeSet<String> {
        ["cdnA", "cdnB"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_precedence() {
        let e = parse_expr("1 + 2 * 3 < 8 and not false").unwrap();
        struct Nothing(ClientContext);
        impl Bindings for Nothing {
            fn metric(&self, _: &str, _: Metric) -> Option<f64> {
                None
            }
            fn fusion(&self, _: &str, _: &str) -> Option<f64> {
                None
            }
            fn headroom(&self, _: &str) -> Option<f64> {
                None
            }
            fn client(&self) -> &ClientContext {
                &self.0
            }
        }
        let b = Nothing(ClientContext {
            resolver_ip: "10.0.0.1".parse().unwrap(),
            ecs_subnet: None,
            asn: 1,
            country: "DE".parse().unwrap(),
        });
        assert_eq!(e.eval("x", &b), Some(Value::Bool(true)));
        let e = parse_expr("-(2 - 5) * 2").unwrap();
        assert_eq!(e.eval("x", &b), Some(Value::Num(6.0)));
        assert_eq!(parse_expr("latency").unwrap().eval("x", &b), None);
        // short-circuit hides missing data on the right
        let e = parse_expr("false and latency < 3").unwrap();
        assert_eq!(e.eval("x", &b), Some(Value::Bool(false)));
        let e = parse_expr("country == 'de' && asn == 1").unwrap();
        assert_eq!(e.eval("x", &b), Some(Value::Bool(true)));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_expr("1 +"), Err(RuleError::Syntax { .. })));
        assert!(matches!(parse_expr("(1"), Err(RuleError::Syntax { .. })));
        assert!(matches!(parse_expr("a = 1"), Err(RuleError::Syntax { .. })));
        assert!(matches!(parse_expr("latency = 1"), Err(RuleError::Syntax { .. })));
        assert!(matches!(parse_expr("bogus"), Err(RuleError::UnknownIdentifier(_))));
        assert!(matches!(parse_expr("sqrt(2)"), Err(RuleError::UnknownFunction(_))));
        assert!(matches!(parse_expr("1 2"), Err(RuleError::Syntax { .. })));
    }

    #[test]
    fn load_time_validation() {
        let cands = vec!["cdnA".to_string(), "cdnB".to_string()];
        let ok = RuleProgram::parse(
            r#"{"rules":[{"filter":"availability >= 0.9 and platform != \"cdnB\"","score":"latency"}],"fallback":"cdnA"}"#,
        )
        .unwrap();
        assert!(ok.validate(&platforms(), &cands).is_ok());

        let unknown = RuleProgram::parse(
            r#"{"rules":[{"filter":"platform == \"cdnZ\""}],"fallback":"cdnA"}"#,
        )
        .unwrap();
        assert_eq!(
            unknown.validate(&platforms(), &cands),
            Err(RuleError::UnknownPlatform("cdnZ".into()))
        );

        let bad_fallback = RuleProgram::parse(r#"{"rules":[],"fallback":"cdnZ"}"#).unwrap();
        assert!(matches!(
            bad_fallback.validate(&platforms(), &cands),
            Err(RuleError::FallbackNotCandidate(_))
        ));

        let bad_score =
            RuleProgram::parse(r#"{"rules":[{"score":"latency < 3"}],"fallback":"cdnA"}"#).unwrap();
        assert!(matches!(bad_score.validate(&platforms(), &cands), Err(RuleError::Type(_))));

        let bad_type =
            RuleProgram::parse(r#"{"rules":[{"filter":"platform < 3"}],"fallback":"cdnA"}"#)
                .unwrap();
        assert!(matches!(bad_type.validate(&platforms(), &cands), Err(RuleError::Type(_))));

        assert!(RuleProgram::parse(r#"{"rules":[{"filter":"latency <"}],"fallback":"cdnA"}"#).is_err());
    }

    #[test]
    fn serde_roundtrip_keeps_source() {
        let src = r#"{"rules":[{"filter":"true","score":"latency / 2"}],"fallback":"cdnA"}"#;
        let p = RuleProgram::parse(src).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: RuleProgram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
