use std::fmt;
use std::str::FromStr;

use crate::{Error, Key, Result, MAX_KEY};

/// One index operation of a trace. Ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceOp {
    Search(Key),
    Insert(Key),
    Delete(Key),
    Update(Key),
    Range(Key, Key),
}

impl TraceOp {
    pub fn key(&self) -> Key {
        match *self {
            TraceOp::Search(k)
            | TraceOp::Insert(k)
            | TraceOp::Delete(k)
            | TraceOp::Update(k)
            | TraceOp::Range(k, _) => k,
        }
    }

    pub fn code(&self) -> char {
        match self {
            TraceOp::Search(_) => 's',
            TraceOp::Insert(_) => 'i',
            TraceOp::Delete(_) => 'd',
            TraceOp::Update(_) => 'u',
            TraceOp::Range(..) => 'r',
        }
    }
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceOp::Range(a, b) => write!(f, "r {a} {b}"),
            op => write!(f, "{} {}", op.code(), op.key()),
        }
    }
}

impl FromStr for TraceOp {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidInput(format!("trace line {line:?}: {why}"));
        let mut parts = line.split_whitespace();
        let op = parts.next().ok_or_else(|| bad("empty"))?;
        let mut key = || -> Result<Key> {
            let k: Key = parts
                .next()
                .ok_or_else(|| bad("missing key"))?
                .parse()
                .map_err(|_| bad("bad key"))?;
            if k > MAX_KEY {
                return Err(bad("key out of range"));
            }
            Ok(k)
        };
        let parsed = match op {
            "s" => TraceOp::Search(key()?),
            "i" => TraceOp::Insert(key()?),
            "d" => TraceOp::Delete(key()?),
            "u" => TraceOp::Update(key()?),
            "r" => {
                let (a, b) = (key()?, key()?);
                if a > b {
                    return Err(bad("range start after end"));
                }
                TraceOp::Range(a, b)
            }
            _ => return Err(bad("unknown op")),
        };
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        Ok(parsed)
    }
}

/// Parses a trace, skipping blank lines and `#` comments.
pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut out = String::with_capacity(ops.len() * 10);
    for op in ops {
        out.push_str(&op.to_string());
        out.push('\n');
    }
    out
}
