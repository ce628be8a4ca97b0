//! First-class flow connectors.
//!
//! A connector carries samples from exactly one source port to one or more
//! sink ports. Each sink owns a single FIFO of pending samples; a sample is
//! in flight until its `ready_at` tick, and buffered afterwards. Only the
//! head of the FIFO can be delivered, so per-sink order holds even when
//! route delays change. Under `KeepLatest` a sink holds at most one
//! arrived sample; samples in flight are never overwritten.
//!
//! Connectors have no event entry point: platform events go to containers
//! only.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ids::{ComponentId, ConnectorId, HostId, Tick};

pub const DEFAULT_LOSSLESS_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowMode {
    Push,
    ClientServerPull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SyncPolicy {
    /// A full lossless buffer stalls the producing container.
    Synchronized,
    /// The producer keeps running; refused samples wait in its output unit.
    Unsynchronized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum LossPolicy {
    Lossless {
        #[serde(default = "default_capacity")]
        capacity: usize,
    },
    KeepLatest,
}

fn default_capacity() -> usize {
    DEFAULT_LOSSLESS_CAPACITY
}

impl Default for LossPolicy {
    fn default() -> Self {
        LossPolicy::Lossless { capacity: DEFAULT_LOSSLESS_CAPACITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub mode: FlowMode,
    pub sync: SyncPolicy,
    pub loss: LossPolicy,
    pub bw_demand: f64,
}

impl Default for FlowPolicy {
    fn default() -> Self {
        Self { mode: FlowMode::Push, sync: SyncPolicy::Synchronized, loss: LossPolicy::default(), bw_demand: 1.0 }
    }
}

impl FlowPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if let LossPolicy::Lossless { capacity: 0 } = self.loss {
            return Err("lossless capacity must be >= 1".into());
        }
        if self.bw_demand.is_nan() || self.bw_demand < 0.0 {
            return Err(format!("bw_demand {} must be >= 0", self.bw_demand));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub seq: u64,
    pub payload: Value,
    pub produced_at: Tick,
    pub producer: ComponentId,
}

/// A component port, `component.port`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub component: ComponentId,
    pub port: String,
}

impl PortRef {
    pub fn new(component: impl Into<ComponentId>, port: impl Into<String>) -> Self {
        Self { component: component.into(), port: port.into() }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (c, p) = s.rsplit_once('.')?;
        if c.is_empty() || p.is_empty() {
            return None;
        }
        Some(Self::new(c, p))
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub port: PortRef,
    pub host: HostId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlState {
    Active,
    Paused,
    Draining,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PushResult {
    Accepted,
    Blocked,
    Overwrote,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("connector {0} is not active")]
    FlowPaused(ConnectorId),
    #[error("binding error: {0}")]
    Binding(String),
    #[error("connector {0} must be paused before rebinding")]
    MustPause(ConnectorId),
    #[error("connector {id}: illegal control transition from {from:?}")]
    Control { id: ConnectorId, from: ControlState },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EndpointChange {
    MoveSink { sink: PortRef, host: HostId },
    MoveSource { host: HostId },
    AddSink(Endpoint),
    RemoveSink(PortRef),
}

/// What happened on the wire, for tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FlowNote {
    Push { seq: u64, result: PushResult },
    Drop { seq: u64, sink: PortRef },
    Deliver { seq: u64, sink: PortRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    sample: FlowSample,
    ready_at: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SinkQueue {
    endpoint: Endpoint,
    /// Transit delay from the source host; `None` while unreachable.
    delay: Option<Tick>,
    pending: VecDeque<Pending>,
}

/// Keeps only the newest sample that has reached the sink; samples still in
/// transit are untouched. True if anything was dropped.
fn collapse(q: &mut SinkQueue, now: Tick, notes: &mut Vec<FlowNote>) -> bool {
    let arrived = q.pending.iter().filter(|p| p.ready_at.is_some_and(|t| t <= now)).count();
    let mut dropped = false;
    for _ in 1..arrived {
        let i = q.pending.iter().position(|p| p.ready_at.is_some_and(|t| t <= now)).expect("counted");
        let old = q.pending.remove(i).expect("in range");
        notes.push(FlowNote::Drop { seq: old.sample.seq, sink: q.endpoint.port.clone() });
        dropped = true;
    }
    dropped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorInstance {
    id: ConnectorId,
    source: Endpoint,
    sinks: Vec<SinkQueue>,
    policy: FlowPolicy,
    state: ControlState,
    next_seq: u64,
    pushed_since_report: u64,
    #[serde(skip)]
    notes: Vec<FlowNote>,
}

impl ConnectorInstance {
    /// A new connector starts Paused; the kernel resumes it once it has
    /// computed the sink delays.
    pub fn new(id: ConnectorId, source: Endpoint, sinks: Vec<Endpoint>, policy: FlowPolicy) -> Result<Self, FlowError> {
        if sinks.is_empty() {
            return Err(FlowError::Binding(format!("connector {id} needs at least one sink")));
        }
        policy.validate().map_err(FlowError::Binding)?;
        let sinks = sinks
            .into_iter()
            .map(|endpoint| SinkQueue { endpoint, delay: None, pending: VecDeque::new() })
            .collect();
        Ok(Self {
            id,
            source,
            sinks,
            policy,
            state: ControlState::Paused,
            next_seq: 1,
            pushed_since_report: 0,
            notes: Vec::new(),
        })
    }

    pub fn id(&self) -> &ConnectorId {
        &self.id
    }

    pub fn source(&self) -> &Endpoint {
        &self.source
    }

    pub fn sinks(&self) -> impl Iterator<Item = &Endpoint> {
        self.sinks.iter().map(|s| &s.endpoint)
    }

    pub fn policy(&self) -> &FlowPolicy {
        &self.policy
    }

    pub fn state(&self) -> ControlState {
        self.state
    }

    pub fn depth(&self) -> usize {
        self.sinks.iter().map(|s| s.pending.len()).sum()
    }

    pub fn sink_depth(&self, sink: &PortRef) -> Option<usize> {
        self.sinks.iter().find(|s| &s.endpoint.port == sink).map(|s| s.pending.len())
    }

    /// True when a push right now would be accepted or would overwrite.
    pub fn can_accept(&self) -> bool {
        if self.state != ControlState::Active {
            return false;
        }
        match self.policy.loss {
            LossPolicy::KeepLatest => true,
            LossPolicy::Lossless { capacity } => self.sinks.iter().all(|s| s.pending.len() < capacity),
        }
    }

    pub fn take_notes(&mut self) -> Vec<FlowNote> {
        std::mem::take(&mut self.notes)
    }

    pub fn take_pushed_count(&mut self) -> u64 {
        std::mem::take(&mut self.pushed_since_report)
    }

    pub fn push(&mut self, caller: &ComponentId, payload: Value, now: Tick) -> Result<PushResult, FlowError> {
        if caller != &self.source.port.component {
            return Err(FlowError::Binding(format!("{caller} is not the source of connector {}", self.id)));
        }
        if self.state != ControlState::Active {
            return Err(FlowError::FlowPaused(self.id.clone()));
        }
        if let LossPolicy::Lossless { capacity } = self.policy.loss {
            if self.sinks.iter().any(|s| s.pending.len() >= capacity) {
                return Ok(PushResult::Blocked);
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pushed_since_report += 1;
        let sample = FlowSample { seq, payload, produced_at: now, producer: caller.clone() };
        let mut overwrote = false;
        let keep_latest = self.policy.loss == LossPolicy::KeepLatest;
        for sink in &mut self.sinks {
            let ready_at = sink.delay.map(|d| now + d);
            if keep_latest && ready_at.is_none() {
                while sink.pending.back().is_some_and(|p| p.ready_at.is_none()) {
                    let old = sink.pending.pop_back().unwrap();
                    overwrote = true;
                    self.notes.push(FlowNote::Drop { seq: old.sample.seq, sink: sink.endpoint.port.clone() });
                }
            }
            sink.pending.push_back(Pending { sample: sample.clone(), ready_at });
            if keep_latest {
                overwrote |= collapse(sink, now, &mut self.notes);
            }
        }
        let result = if overwrote { PushResult::Overwrote } else { PushResult::Accepted };
        self.notes.push(FlowNote::Push { seq, result });
        Ok(result)
    }

    /// Samples that have reached `sink` by `now`, head first, at most `max`.
    pub fn deliver(&mut self, sink: &PortRef, now: Tick, max: usize) -> Result<Vec<FlowSample>, FlowError> {
        let active = self.state == ControlState::Active;
        let q = self
            .sinks
            .iter_mut()
            .find(|s| &s.endpoint.port == sink)
            .ok_or_else(|| FlowError::Binding(format!("{sink} is not a sink of connector {}", self.id)))?;
        let mut out = Vec::new();
        if !active {
            return Ok(out);
        }
        if self.policy.loss == LossPolicy::KeepLatest {
            collapse(q, now, &mut self.notes);
        }
        while out.len() < max && q.pending.front().is_some_and(|p| p.ready_at.is_some_and(|t| t <= now)) {
            let p = q.pending.pop_front().unwrap();
            self.notes.push(FlowNote::Deliver { seq: p.sample.seq, sink: sink.clone() });
            out.push(p.sample);
        }
        Ok(out)
    }

    pub fn pause(&mut self) -> Result<(), FlowError> {
        match self.state {
            ControlState::Active | ControlState::Paused => {
                self.state = ControlState::Paused;
                Ok(())
            }
            from => Err(FlowError::Control { id: self.id.clone(), from }),
        }
    }

    pub fn resume(&mut self) -> Result<(), FlowError> {
        match self.state {
            ControlState::Paused | ControlState::Active if !self.sinks.is_empty() => {
                self.state = ControlState::Active;
                Ok(())
            }
            from => Err(FlowError::Control { id: self.id.clone(), from }),
        }
    }

    pub fn begin_drain(&mut self) -> Result<(), FlowError> {
        match self.state {
            ControlState::Paused | ControlState::Draining => {
                self.state = ControlState::Draining;
                Ok(())
            }
            from => Err(FlowError::Control { id: self.id.clone(), from }),
        }
    }

    pub fn end_drain(&mut self) -> Result<(), FlowError> {
        match self.state {
            ControlState::Draining => {
                self.state = ControlState::Paused;
                Ok(())
            }
            from => Err(FlowError::Control { id: self.id.clone(), from }),
        }
    }

    /// Removes every in-flight and buffered sample, per sink, in seq order.
    pub fn drain(&mut self) -> Result<BTreeMap<PortRef, Vec<FlowSample>>, FlowError> {
        if self.state != ControlState::Draining {
            return Err(FlowError::Control { id: self.id.clone(), from: self.state });
        }
        Ok(self
            .sinks
            .iter_mut()
            .map(|s| (s.endpoint.port.clone(), s.pending.drain(..).map(|p| p.sample).collect()))
            .collect())
    }

    /// Like [`drain`](Self::drain), restricted to one sink.
    pub fn drain_sink(&mut self, sink: &PortRef) -> Result<Vec<FlowSample>, FlowError> {
        if self.state != ControlState::Draining {
            return Err(FlowError::Control { id: self.id.clone(), from: self.state });
        }
        let q = self.sink_mut(sink)?;
        Ok(q.pending.drain(..).map(|p| p.sample).collect())
    }

    /// Puts drained samples back at the head of `sink`'s queue; they are
    /// re-sent from the source host.
    pub fn requeue(&mut self, sink: &PortRef, samples: Vec<FlowSample>, now: Tick) -> Result<(), FlowError> {
        let q = self.sink_mut(sink)?;
        let ready_at = q.delay.map(|d| now + d);
        for sample in samples.into_iter().rev() {
            q.pending.push_front(Pending { sample, ready_at });
        }
        Ok(())
    }

    pub fn rebind(&mut self, change: EndpointChange) -> Result<(), FlowError> {
        if !matches!(self.state, ControlState::Paused | ControlState::Disconnected) {
            return Err(FlowError::MustPause(self.id.clone()));
        }
        match change {
            EndpointChange::MoveSink { sink, host } => {
                let q = self.sink_mut(&sink)?;
                q.endpoint.host = host;
                q.delay = None;
                for p in &mut q.pending {
                    p.ready_at = None;
                }
            }
            EndpointChange::MoveSource { host } => {
                self.source.host = host;
            }
            EndpointChange::AddSink(endpoint) => {
                if self.sinks.iter().any(|s| s.endpoint.port == endpoint.port) {
                    return Err(FlowError::Binding(format!("{} already bound to {}", endpoint.port, self.id)));
                }
                self.sinks.push(SinkQueue { endpoint, delay: None, pending: VecDeque::new() });
                if self.state == ControlState::Disconnected {
                    self.state = ControlState::Paused;
                }
            }
            EndpointChange::RemoveSink(sink) => {
                let idx = self
                    .sinks
                    .iter()
                    .position(|s| s.endpoint.port == sink)
                    .ok_or_else(|| FlowError::Binding(format!("{sink} is not a sink of connector {}", self.id)))?;
                self.sinks.remove(idx);
                if self.sinks.is_empty() {
                    self.state = ControlState::Disconnected;
                }
            }
        }
        Ok(())
    }

    /// Updates the transit delay to `sink`. Losing the route turns every
    /// sample still in flight back into an unsent one; regaining it re-sends
    /// them from `now`.
    pub fn set_route_delay(&mut self, sink: &PortRef, delay: Option<Tick>, now: Tick) -> Result<(), FlowError> {
        let q = self.sink_mut(sink)?;
        match (q.delay, delay) {
            (Some(_), None) => {
                for p in &mut q.pending {
                    if p.ready_at.is_some_and(|t| t > now) {
                        p.ready_at = None;
                    }
                }
            }
            (_, Some(d)) => {
                for p in &mut q.pending {
                    if p.ready_at.is_none() {
                        p.ready_at = Some(now + d);
                    }
                }
            }
            (None, None) => {}
        }
        q.delay = delay;
        Ok(())
    }

    pub fn route_delay(&self, sink: &PortRef) -> Option<Tick> {
        self.sinks.iter().find(|s| &s.endpoint.port == sink).and_then(|s| s.delay)
    }

    fn sink_mut(&mut self, sink: &PortRef) -> Result<&mut SinkQueue, FlowError> {
        let id = &self.id;
        self.sinks
            .iter_mut()
            .find(|s| &s.endpoint.port == sink)
            .ok_or_else(|| FlowError::Binding(format!("{sink} is not a sink of connector {id}")))
    }
}
