//! Line-oriented run traces.
//!
//! Every line reads `tick=<n> host=<id> kind=<KIND> k=v ...`. Within a tick,
//! lines are ordered by host, then kind (in [`TraceKind`] order), then
//! emission order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{HostId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    Ctx,
    Evt,
    Cmd,
    Qos,
    Flow,
    Net,
}

impl TraceKind {
    pub const ALL: [TraceKind; 6] =
        [TraceKind::Ctx, TraceKind::Evt, TraceKind::Cmd, TraceKind::Qos, TraceKind::Flow, TraceKind::Net];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Ctx => "CTX",
            TraceKind::Evt => "EVT",
            TraceKind::Cmd => "CMD",
            TraceKind::Qos => "QOS",
            TraceKind::Flow => "FLOW",
            TraceKind::Net => "NET",
        }
    }
}

impl Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown kind `{s}`"))
    }
}

/// Lines emitted during the current tick, not yet ordered.
#[derive(Debug, Clone, Default)]
pub struct TraceBuffer {
    lines: Vec<(HostId, TraceKind, String)>,
}

impl TraceBuffer {
    pub fn push(&mut self, host: &HostId, kind: TraceKind, body: impl Display) {
        let body: String = body.to_string().chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
        self.lines.push((host.clone(), kind, body));
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.lines.truncate(n);
    }

    /// Renders and clears the buffer.
    pub fn flush(&mut self, tick: Tick) -> Vec<String> {
        let mut lines = std::mem::take(&mut self.lines);
        lines.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        lines.into_iter().map(|(h, k, body)| format!("tick={tick} host={h} kind={k} {body}")).collect()
    }
}

/// Replaces whitespace so a value stays one token.
pub fn token(s: &str) -> String {
    let t: String = s.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
    if t.is_empty() {
        "-".into()
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub tick: Tick,
    pub host: String,
    pub kind: TraceKind,
    pub fields: Vec<(String, String)>,
}

impl TraceLine {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trace line {line}: {reason}")]
pub struct TraceError {
    pub line: usize,
    pub reason: String,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.')
}

pub fn parse_line(s: &str) -> Result<TraceLine, String> {
    let mut parts = s.split(' ');
    let mut head = |name: &str| -> Result<&str, String> {
        let p = parts.next().ok_or_else(|| format!("missing `{name}`"))?;
        p.strip_prefix(name)
            .and_then(|r| r.strip_prefix('='))
            .filter(|v| !v.is_empty())
            .ok_or_else(|| format!("expected `{name}=...`, got `{p}`"))
    };
    let tick = head("tick")?.parse::<Tick>().map_err(|e| format!("bad tick: {e}"))?;
    let host = head("host")?.to_owned();
    let kind = head("kind")?.parse::<TraceKind>()?;
    let mut fields = Vec::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("field `{p}` has no `=`"))?;
        if !valid_key(k) || v.is_empty() {
            return Err(format!("malformed field `{p}`"));
        }
        fields.push((k.to_owned(), v.to_owned()));
    }
    Ok(TraceLine { tick, host, kind, fields })
}

/// Parses a whole trace and checks the (tick, host, kind) ordering.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, TraceError> {
    let mut out: Vec<TraceLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let line = parse_line(raw).map_err(|reason| TraceError { line: i + 1, reason })?;
        if let Some(prev) = out.last() {
            if (prev.tick, &prev.host, prev.kind) > (line.tick, &line.host, line.kind) {
                return Err(TraceError { line: i + 1, reason: "line out of order".into() });
            }
        }
        out.push(line);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectQuery {
    Qos,
    Events,
    Commands,
    Flows,
}

impl FromStr for InspectQuery {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qos" => Ok(Self::Qos),
            "events" => Ok(Self::Events),
            "commands" => Ok(Self::Commands),
            "flows" => Ok(Self::Flows),
            _ => Err(format!("unknown query `{s}` (qos|events|commands|flows)")),
        }
    }
}

/// Loss, reordering and duplication seen by one sink of one connector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowSummary {
    pub pushed: usize,
    pub delivered: usize,
    /// Pushed samples that never arrived although a later one did.
    pub loss: usize,
    /// Steps where a delivered seq is lower than its predecessor.
    pub reorder: usize,
    pub dup: usize,
}

pub fn flow_summaries(lines: &[TraceLine]) -> BTreeMap<(String, String), FlowSummary> {
    let mut pushed: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    let mut delivered: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
    for l in lines.iter().filter(|l| l.kind == TraceKind::Flow) {
        let (Some(conn), Some(op), Some(seq)) = (l.get("conn"), l.get("op"), l.get("seq")) else { continue };
        let Ok(seq) = seq.parse::<u64>() else { continue };
        match op {
            "push" if l.get("result") != Some("blocked") => {
                pushed.entry(conn).or_default().insert(seq);
            }
            "deliver" => {
                if let Some(sink) = l.get("sink") {
                    delivered.entry((conn, sink)).or_default().push(seq);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    for ((conn, sink), seqs) in delivered {
        let unique: BTreeSet<u64> = seqs.iter().copied().collect();
        let max = unique.last().copied().unwrap_or(0);
        let sent = pushed.get(conn).cloned().unwrap_or_default();
        let loss = sent.iter().filter(|s| **s < max && !unique.contains(s)).count();
        let reorder = seqs.windows(2).filter(|w| w[1] < w[0]).count();
        out.insert(
            (conn.to_owned(), sink.to_owned()),
            FlowSummary { pushed: sent.len(), delivered: seqs.len(), loss, reorder, dup: seqs.len() - unique.len() },
        );
    }
    out
}

pub fn inspect(lines: &[TraceLine], query: InspectQuery) -> String {
    let mut out = String::new();
    let field = |l: &TraceLine, k: &str| l.get(k).unwrap_or("-").to_owned();
    match query {
        InspectQuery::Qos => {
            for l in lines.iter().filter(|l| l.kind == TraceKind::Qos) {
                let _ = writeln!(out, "tick={} global={}", l.tick, field(l, "global"));
            }
        }
        InspectQuery::Events => {
            let mut n = 0;
            for l in lines.iter().filter(|l| l.kind == TraceKind::Evt) {
                n += 1;
                let _ = writeln!(
                    out,
                    "tick={} host={} event={} prio={} to={}",
                    l.tick,
                    l.host,
                    field(l, "event"),
                    field(l, "prio"),
                    field(l, "to")
                );
            }
            let _ = writeln!(out, "events={n}");
        }
        InspectQuery::Commands => {
            let mut by_origin: BTreeMap<String, usize> = BTreeMap::new();
            for l in lines.iter().filter(|l| l.kind == TraceKind::Cmd) {
                *by_origin.entry(field(l, "origin")).or_default() += 1;
                let rest: Vec<String> = l
                    .fields
                    .iter()
                    .filter(|(k, _)| k != "origin")
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                let _ = writeln!(out, "tick={} origin={} {}", l.tick, field(l, "origin"), rest.join(" "));
            }
            let count = |o: &str| by_origin.get(o).copied().unwrap_or(0);
            let _ = writeln!(
                out,
                "commands={} platform={} app={} deploy={}",
                by_origin.values().sum::<usize>(),
                count("platform"),
                count("app"),
                count("deploy")
            );
        }
        InspectQuery::Flows => {
            for ((conn, sink), s) in flow_summaries(lines) {
                let _ = writeln!(
                    out,
                    "conn={conn} sink={sink} pushed={} delivered={} loss={} reorder={} dup={}",
                    s.pushed, s.delivered, s.loss, s.reorder, s.dup
                );
            }
        }
    }
    out
}
