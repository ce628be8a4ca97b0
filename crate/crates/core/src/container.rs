//! Component containers.
//!
//! A container wraps one business component. Its control unit enforces the
//! lifecycle below; its exchange unit holds one input buffer per in-port and
//! one output buffer per out-port, and moves samples to and from connectors.
//!
//! ```text
//! Created -> Connected -> Running <-> Stopped -> Migrating -> Connected
//!               |                        |
//!               +------> Destroyed <-----+
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adaptation::QoSReport;
use crate::behavior::{AppAction, BehaviorCatalog, CatalogError, StepContext};
use crate::connector::{ConnectorInstance, FlowError, FlowMode, FlowPolicy, FlowSample, PortRef, PushResult, SyncPolicy};
use crate::context::ContextObject;
use crate::ids::{ComponentId, ConnectorId, HostId, Tick};
use crate::kernel::HostTier;

pub const EVENT_QUEUE_BOUND: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub tier: HostTier,
    pub cpu_demand: f64,
    pub mem_demand: f64,
    pub behavior: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDescriptor {
    pub id: ComponentId,
    pub in_ports: Vec<String>,
    pub out_ports: Vec<String>,
    pub variants: Vec<Variant>,
    pub listener: bool,
    pub initial_host: HostId,
}

impl ComponentDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.as_str().is_empty() {
            return Err("empty component id".into());
        }
        if self.variants.is_empty() {
            return Err(format!("component {} has no variant", self.id));
        }
        let mut seen = BTreeSet::new();
        for p in self.in_ports.iter().chain(&self.out_ports) {
            if p.is_empty() || p.contains('.') {
                return Err(format!("component {}: bad port name `{p}`", self.id));
            }
            if !seen.insert(p) {
                return Err(format!("component {}: duplicate port `{p}`", self.id));
            }
        }
        for v in &self.variants {
            if [v.cpu_demand, v.mem_demand].iter().any(|x| x.is_nan() || *x < 0.0) {
                return Err(format!("component {}: negative demand", self.id));
            }
        }
        Ok(())
    }

    /// The most capable variant a host of `tier` can run.
    pub fn variant_for(&self, tier: HostTier) -> Option<&Variant> {
        self.variants.iter().filter(|v| v.tier <= tier).max_by_key(|v| v.tier)
    }

    pub fn variant(&self, tier: HostTier) -> Option<&Variant> {
        self.variants.iter().find(|v| v.tier == tier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Lifecycle {
    Created,
    Connected,
    Running,
    Stopped,
    Migrating,
    Destroyed,
}

impl Lifecycle {
    pub fn can_go(self, target: Lifecycle) -> bool {
        use Lifecycle::*;
        matches!(
            (self, target),
            (Created, Connected)
                | (Connected, Running)
                | (Running, Stopped)
                | (Stopped, Running)
                | (Stopped, Migrating)
                | (Migrating, Connected)
                | (Stopped, Destroyed)
                | (Connected, Destroyed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ContextChanged,
    QoSAlert,
    Reconfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventPayload {
    Context(ContextObject),
    QoS(QoSReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformEvent {
    pub kind: EventKind,
    pub payload: EventPayload,
    pub priority: u8,
}

impl PlatformEvent {
    pub fn new(kind: EventKind, payload: EventPayload, priority: u8) -> Self {
        Self { kind, payload, priority: priority.min(9) }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContainerError {
    #[error("illegal lifecycle transition {from:?} -> {to:?}")]
    Lifecycle { from: Lifecycle, to: Lifecycle },
    #[error("component {0} has unbound ports")]
    Unbound(ComponentId),
    #[error("component {component} has no variant for tier {tier:?}")]
    Variant { component: ComponentId, tier: HostTier },
    #[error("component {component} faulted: {reason}")]
    Fault { component: ComponentId, reason: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("port {0} is already bound")]
    AlreadyBound(String),
    #[error("unknown port {0}")]
    UnknownPort(String),
}

/// Everything a migrating container carries to its new host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSnapshot {
    pub component: ComponentId,
    pub state: Value,
    pub inputs: BTreeMap<String, Vec<FlowSample>>,
    pub outputs: BTreeMap<String, Vec<Value>>,
    pub events: Vec<PlatformEvent>,
    pub behavior_override: Option<String>,
}

impl ContainerSnapshot {
    /// Wire size in transfer units.
    pub fn size(&self) -> u64 {
        serde_json::to_vec(self).map_or(1, |b| (b.len() as u64).div_ceil(64).max(1))
    }
}

/// Connector access for the exchange unit.
pub trait FlowIo {
    fn policy(&self, id: &ConnectorId) -> Option<&FlowPolicy>;
    fn can_accept(&self, id: &ConnectorId) -> bool;
    fn push(&mut self, id: &ConnectorId, caller: &ComponentId, payload: Value, now: Tick) -> Result<PushResult, FlowError>;
    fn pull(&mut self, id: &ConnectorId, sink: &PortRef, now: Tick, max: usize) -> Result<Vec<FlowSample>, FlowError>;
}

impl FlowIo for BTreeMap<ConnectorId, ConnectorInstance> {
    fn policy(&self, id: &ConnectorId) -> Option<&FlowPolicy> {
        self.get(id).map(ConnectorInstance::policy)
    }

    fn can_accept(&self, id: &ConnectorId) -> bool {
        self.get(id).is_some_and(ConnectorInstance::can_accept)
    }

    fn push(&mut self, id: &ConnectorId, caller: &ComponentId, payload: Value, now: Tick) -> Result<PushResult, FlowError> {
        let k = self.get_mut(id).ok_or_else(|| FlowError::Binding(format!("no connector {id}")))?;
        k.push(caller, payload, now)
    }

    fn pull(&mut self, id: &ConnectorId, sink: &PortRef, now: Tick, max: usize) -> Result<Vec<FlowSample>, FlowError> {
        let k = self.get_mut(id).ok_or_else(|| FlowError::Binding(format!("no connector {id}")))?;
        k.deliver(sink, now, max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Not running, or not ready this tick.
    Idle,
    /// A synchronized output is blocked; nothing was consumed.
    Stalled,
    Fired { emitted: BTreeMap<String, Vec<Value>>, actions: Vec<AppAction> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueuedEvent {
    seq: u64,
    event: PlatformEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerInstance {
    descriptor: ComponentDescriptor,
    active_tier: HostTier,
    behavior_override: Option<String>,
    lifecycle: Lifecycle,
    in_bindings: BTreeMap<String, Option<ConnectorId>>,
    out_bindings: BTreeMap<String, Option<ConnectorId>>,
    inputs: BTreeMap<String, VecDeque<FlowSample>>,
    outputs: BTreeMap<String, VecDeque<Value>>,
    state: Value,
    /// Kept ordered: priority descending, then arrival.
    events: Vec<QueuedEvent>,
    event_seq: u64,
    faulted: bool,
}

impl ContainerInstance {
    pub fn new(descriptor: ComponentDescriptor, host_tier: HostTier) -> Result<Self, ContainerError> {
        let active_tier = descriptor
            .variant_for(host_tier)
            .ok_or_else(|| ContainerError::Variant { component: descriptor.id.clone(), tier: host_tier })?
            .tier;
        let in_bindings = descriptor.in_ports.iter().map(|p| (p.clone(), None)).collect();
        let out_bindings = descriptor.out_ports.iter().map(|p| (p.clone(), None)).collect();
        let inputs = descriptor.in_ports.iter().map(|p| (p.clone(), VecDeque::new())).collect();
        let outputs = descriptor.out_ports.iter().map(|p| (p.clone(), VecDeque::new())).collect();
        Ok(Self {
            descriptor,
            active_tier,
            behavior_override: None,
            lifecycle: Lifecycle::Created,
            in_bindings,
            out_bindings,
            inputs,
            outputs,
            state: Value::Null,
            events: Vec::new(),
            event_seq: 0,
            faulted: false,
        })
    }

    pub fn id(&self) -> &ComponentId {
        &self.descriptor.id
    }

    pub fn descriptor(&self) -> &ComponentDescriptor {
        &self.descriptor
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn active_tier(&self) -> HostTier {
        self.active_tier
    }

    pub fn active_variant(&self) -> &Variant {
        self.descriptor.variant(self.active_tier).expect("active tier always names a variant")
    }

    pub fn behavior(&self) -> &str {
        self.behavior_override.as_deref().unwrap_or(&self.active_variant().behavior)
    }

    pub fn state(&self) -> &Value {
        &self.state
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn all_ports_bound(&self) -> bool {
        self.in_bindings.values().chain(self.out_bindings.values()).all(Option::is_some)
    }

    pub fn in_bindings(&self) -> impl Iterator<Item = (&String, &Option<ConnectorId>)> {
        self.in_bindings.iter()
    }

    pub fn out_bindings(&self) -> impl Iterator<Item = (&String, &Option<ConnectorId>)> {
        self.out_bindings.iter()
    }

    pub fn buffered_inputs(&self) -> usize {
        self.inputs.values().map(VecDeque::len).sum()
    }

    pub fn transition(&mut self, target: Lifecycle) -> Result<(), ContainerError> {
        if !self.lifecycle.can_go(target) {
            return Err(ContainerError::Lifecycle { from: self.lifecycle, to: target });
        }
        if target == Lifecycle::Running && !self.all_ports_bound() {
            return Err(ContainerError::Unbound(self.id().clone()));
        }
        self.lifecycle = target;
        Ok(())
    }

    pub fn bind_input(&mut self, port: &str, connector: Option<ConnectorId>) -> Result<(), ContainerError> {
        Self::bind(&mut self.in_bindings, port, connector)
    }

    pub fn bind_output(&mut self, port: &str, connector: Option<ConnectorId>) -> Result<(), ContainerError> {
        Self::bind(&mut self.out_bindings, port, connector)
    }

    fn bind(
        slots: &mut BTreeMap<String, Option<ConnectorId>>,
        port: &str,
        connector: Option<ConnectorId>,
    ) -> Result<(), ContainerError> {
        let slot = slots.get_mut(port).ok_or_else(|| ContainerError::UnknownPort(port.to_owned()))?;
        if connector.is_some() && slot.is_some() {
            return Err(ContainerError::AlreadyBound(port.to_owned()));
        }
        *slot = connector;
        Ok(())
    }

    /// Switches the running variant; state is kept verbatim.
    pub fn select_variant(&mut self, tier: HostTier) -> Result<(), ContainerError> {
        if self.descriptor.variant(tier).is_none() {
            return Err(ContainerError::Variant { component: self.id().clone(), tier });
        }
        self.active_tier = tier;
        Ok(())
    }

    pub fn set_behavior_override(&mut self, behavior: Option<String>) {
        self.behavior_override = behavior;
    }

    pub fn clear_fault(&mut self) {
        self.faulted = false;
    }

    /// Queues an event for the business component. Only listeners in
    /// Connected or Running accept events. On overflow the lowest-priority,
    /// oldest event is dropped; returns false if that was `e` itself.
    pub fn deliver_event(&mut self, e: PlatformEvent) -> bool {
        if !self.descriptor.listener || !matches!(self.lifecycle, Lifecycle::Connected | Lifecycle::Running) {
            return false;
        }
        let seq = self.event_seq;
        self.event_seq += 1;
        let at = self.events.partition_point(|q| q.event.priority >= e.priority);
        self.events.insert(at, QueuedEvent { seq, event: e });
        if self.events.len() > EVENT_QUEUE_BOUND {
            let lowest = self.events.iter().map(|q| q.event.priority).min().unwrap();
            let victim = self.events.iter().position(|q| q.event.priority == lowest).unwrap();
            let dropped = self.events.remove(victim);
            return dropped.seq != seq;
        }
        true
    }

    pub fn snapshot(&self) -> Result<ContainerSnapshot, ContainerError> {
        if !matches!(self.lifecycle, Lifecycle::Stopped | Lifecycle::Migrating) {
            return Err(ContainerError::Lifecycle { from: self.lifecycle, to: Lifecycle::Migrating });
        }
        Ok(ContainerSnapshot {
            component: self.id().clone(),
            state: self.state.clone(),
            inputs: self.inputs.iter().map(|(p, q)| (p.clone(), q.iter().cloned().collect())).collect(),
            outputs: self.outputs.iter().map(|(p, q)| (p.clone(), q.iter().cloned().collect())).collect(),
            events: self.events.iter().map(|q| q.event.clone()).collect(),
            behavior_override: self.behavior_override.clone(),
        })
    }

    /// Rebuilds state and pending samples from a snapshot, selecting the
    /// most capable variant for `host_tier`.
    pub fn restore(&mut self, snap: &ContainerSnapshot, host_tier: HostTier) -> Result<(), ContainerError> {
        if !matches!(self.lifecycle, Lifecycle::Created | Lifecycle::Connected) {
            return Err(ContainerError::Lifecycle { from: self.lifecycle, to: Lifecycle::Connected });
        }
        let tier = self
            .descriptor
            .variant_for(host_tier)
            .ok_or_else(|| ContainerError::Variant { component: self.id().clone(), tier: host_tier })?
            .tier;
        self.active_tier = tier;
        self.state = snap.state.clone();
        self.behavior_override = snap.behavior_override.clone();
        for (p, q) in &mut self.inputs {
            *q = snap.inputs.get(p).cloned().unwrap_or_default().into();
        }
        for (p, q) in &mut self.outputs {
            *q = snap.outputs.get(p).cloned().unwrap_or_default().into();
        }
        self.events.clear();
        for e in &snap.events {
            let seq = self.event_seq;
            self.event_seq += 1;
            self.events.push(QueuedEvent { seq, event: e.clone() });
        }
        Ok(())
    }

    /// Push-mode delivery into empty input buffers of a running container.
    /// Runs whether or not the component fires this tick.
    pub fn prefetch(&mut self, io: &mut dyn FlowIo, now: Tick) -> Result<(), ContainerError> {
        if self.lifecycle != Lifecycle::Running {
            return Ok(());
        }
        let id = self.descriptor.id.clone();
        for (port, binding) in &self.in_bindings {
            let Some(k) = binding else { continue };
            if io.policy(k).map(|p| p.mode) != Some(FlowMode::Push) {
                continue;
            }
            let buf = self.inputs.get_mut(port).expect("input buffer per port");
            if buf.is_empty() {
                buf.extend(io.pull(k, &PortRef::new(id.clone(), port.clone()), now, 1)?);
            }
        }
        Ok(())
    }

    /// Moves pending outputs into connectors until one refuses.
    fn flush(&mut self, io: &mut dyn FlowIo, now: Tick) -> Result<(), ContainerError> {
        let id = self.descriptor.id.clone();
        for (port, binding) in &self.out_bindings {
            let Some(k) = binding else { continue };
            let buf = self.outputs.get_mut(port).expect("output buffer per port");
            while let Some(v) = buf.front() {
                match io.push(k, &id, v.clone(), now) {
                    Ok(PushResult::Accepted | PushResult::Overwrote) => {
                        buf.pop_front();
                    }
                    Ok(PushResult::Blocked) | Err(FlowError::FlowPaused(_)) => break,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(())
    }

    fn blocked(&self, io: &dyn FlowIo) -> bool {
        self.out_bindings.iter().any(|(port, binding)| {
            let Some(k) = binding else { return false };
            let sync = io.policy(k).is_some_and(|p| p.sync == SyncPolicy::Synchronized);
            sync && (!self.outputs[port].is_empty() || !io.can_accept(k))
        })
    }

    /// Fires the business component once. A failing behavior stops the
    /// container and returns [`ContainerError::Fault`]; consumed inputs are
    /// put back.
    pub fn process_step(
        &mut self,
        now: Tick,
        io: &mut dyn FlowIo,
        catalog: &BehaviorCatalog,
    ) -> Result<StepOutcome, ContainerError> {
        if self.lifecycle != Lifecycle::Running {
            return Ok(StepOutcome::Idle);
        }
        self.flush(io, now)?;
        if self.blocked(io) {
            return Ok(StepOutcome::Stalled);
        }
        let behavior = catalog.resolve(self.behavior())?;
        if !behavior.ready(now) {
            return Ok(StepOutcome::Idle);
        }

        let id = self.descriptor.id.clone();
        let mut inputs = BTreeMap::new();
        for (port, binding) in &self.in_bindings {
            let buf = self.inputs.get_mut(port).expect("input buffer per port");
            if buf.is_empty() {
                if let Some(k) = binding {
                    buf.extend(io.pull(k, &PortRef::new(id.clone(), port.clone()), now, 1)?);
                }
            }
            if let Some(s) = buf.pop_front() {
                inputs.insert(port.clone(), s);
            }
        }
        let events: Vec<PlatformEvent> = self.events.drain(..).map(|q| q.event).collect();

        let mut state = self.state.clone();
        let mut ctx = StepContext {
            now,
            component: &id,
            tier: self.active_tier,
            variants: &self.descriptor.variants,
            out_ports: &self.descriptor.out_ports,
            inputs,
            events,
            state: &mut state,
            outputs: Vec::new(),
            actions: Vec::new(),
        };
        if let Err(reason) = behavior.step(&mut ctx) {
            let StepContext { inputs, .. } = ctx;
            for (port, s) in inputs {
                self.inputs.get_mut(&port).expect("input buffer per port").push_front(s);
            }
            self.lifecycle = Lifecycle::Stopped;
            self.faulted = true;
            return Err(ContainerError::Fault { component: id, reason });
        }
        let StepContext { outputs, actions, .. } = ctx;
        self.state = state;
        let mut emitted: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for (port, v) in outputs {
            let Some(buf) = self.outputs.get_mut(&port) else { continue };
            buf.push_back(v.clone());
            emitted.entry(port).or_default().push(v);
        }
        self.flush(io, now)?;
        Ok(StepOutcome::Fired { emitted, actions })
    }
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connector::{Endpoint, LossPolicy};
    use crate::context::{stamp, ContextInformation, ContextNature, ContextValue, Location};
    use serde_json::json;

    fn descriptor(id: &str, ins: &[&str], outs: &[&str], behavior: &str, listener: bool) -> ComponentDescriptor {
        ComponentDescriptor {
            id: id.into(),
            in_ports: ins.iter().map(|s| s.to_string()).collect(),
            out_ports: outs.iter().map(|s| s.to_string()).collect(),
            variants: vec![
                Variant { tier: HostTier::Full, cpu_demand: 2.0, mem_demand: 2.0, behavior: behavior.into() },
                Variant { tier: HostTier::LightStd, cpu_demand: 1.0, mem_demand: 1.0, behavior: behavior.into() },
            ],
            listener,
            initial_host: "h1".into(),
        }
    }

    fn event(prio: u8) -> PlatformEvent {
        let info = ContextInformation::new(ContextNature::Hardware, "x", ContextValue::number(prio as f64, ""), "p")
            .unwrap();
        let obj = stamp(info, 0, Location::host("h1"), "platform", 1.0).unwrap();
        PlatformEvent::new(EventKind::ContextChanged, EventPayload::Context(obj), prio)
    }

    fn wire(c: &mut ContainerInstance, k_in: Option<&str>, k_out: Option<&str>) {
        for p in c.descriptor.in_ports.clone() {
            c.bind_input(&p, k_in.map(ConnectorId::from)).unwrap();
        }
        for p in c.descriptor.out_ports.clone() {
            c.bind_output(&p, k_out.map(ConnectorId::from)).unwrap();
        }
    }

    /// Connectors `kin` (feeder -> c.in) and `kout` (c.out -> drain.in), same host.
    fn rig(behavior: &str) -> (ContainerInstance, BTreeMap<ConnectorId, ConnectorInstance>) {
        let mut io = BTreeMap::new();
        for (k, src, dst) in [("kin", "feeder", "c"), ("kout", "c", "drain")] {
            let mut conn = ConnectorInstance::new(
                k.into(),
                Endpoint { port: PortRef::new(src, if src == "c" { "out" } else { "o" }), host: "h1".into() },
                vec![Endpoint { port: PortRef::new(dst, if dst == "c" { "in" } else { "i" }), host: "h1".into() }],
                FlowPolicy::default(),
            )
            .unwrap();
            let sink = conn.sinks().next().unwrap().port.clone();
            conn.set_route_delay(&sink, Some(0), 0).unwrap();
            conn.resume().unwrap();
            io.insert(ConnectorId::from(k), conn);
        }
        let mut c = ContainerInstance::new(descriptor("c", &["in"], &["out"], behavior, true), HostTier::Full).unwrap();
        wire(&mut c, Some("kin"), Some("kout"));
        c.transition(Lifecycle::Connected).unwrap();
        c.transition(Lifecycle::Running).unwrap();
        (c, io)
    }

    fn feed(io: &mut BTreeMap<ConnectorId, ConnectorInstance>, v: Value, now: Tick) {
        io.get_mut(&ConnectorId::from("kin")).unwrap().push(&"feeder".into(), v, now).unwrap();
    }

    fn drained(io: &mut BTreeMap<ConnectorId, ConnectorInstance>, now: Tick) -> Vec<Value> {
        io.get_mut(&ConnectorId::from("kout"))
            .unwrap()
            .deliver(&PortRef::new("drain", "i"), now, usize::MAX)
            .unwrap()
            .into_iter()
            .map(|s| s.payload)
            .collect()
    }

    #[test]
    fn legal_chain() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", false), HostTier::Full).unwrap();
        c.transition(Lifecycle::Connected).unwrap();
        c.transition(Lifecycle::Running).unwrap();
        assert_eq!(c.lifecycle(), Lifecycle::Running);
    }

    #[test]
    fn illegal_edge() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", false), HostTier::Full).unwrap();
        assert_eq!(
            c.transition(Lifecycle::Running),
            Err(ContainerError::Lifecycle { from: Lifecycle::Created, to: Lifecycle::Running })
        );
    }

    #[test]
    fn migration_path() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", false), HostTier::Full).unwrap();
        for s in [
            Lifecycle::Connected,
            Lifecycle::Running,
            Lifecycle::Stopped,
            Lifecycle::Migrating,
            Lifecycle::Connected,
            Lifecycle::Running,
        ] {
            c.transition(s).unwrap();
        }
        assert_eq!(c.lifecycle(), Lifecycle::Running);
    }

    #[test]
    fn running_needs_bound_ports() {
        let mut c =
            ContainerInstance::new(descriptor("c", &["in"], &[], "identity", false), HostTier::Full).unwrap();
        c.transition(Lifecycle::Connected).unwrap();
        assert_eq!(c.transition(Lifecycle::Running), Err(ContainerError::Unbound("c".into())));
    }

    #[test]
    fn identity_forwards() {
        let (mut c, mut io) = rig("identity");
        let catalog = BehaviorCatalog::standard();
        feed(&mut io, json!("s1"), 0);
        let out = c.process_step(0, &mut io, &catalog).unwrap();
        assert!(matches!(out, StepOutcome::Fired { .. }));
        assert_eq!(drained(&mut io, 0), vec![json!("s1")]);
    }

    #[test]
    fn stopped_container_does_nothing() {
        let (mut c, mut io) = rig("identity");
        c.transition(Lifecycle::Stopped).unwrap();
        feed(&mut io, json!(1), 0);
        let out = c.process_step(0, &mut io, &BehaviorCatalog::standard()).unwrap();
        assert_eq!(out, StepOutcome::Idle);
        assert!(drained(&mut io, 0).is_empty());
    }

    #[test]
    fn counter_over_five_steps() {
        let (mut c, mut io) = rig("counter");
        let catalog = BehaviorCatalog::standard();
        let mut outputs = Vec::new();
        for t in 0..5 {
            feed(&mut io, json!(t), t);
            c.process_step(t, &mut io, &catalog).unwrap();
            outputs.extend(drained(&mut io, t));
        }
        assert_eq!(c.state(), &json!(5));
        assert_eq!(outputs, (1..=5).map(|n| json!(n)).collect::<Vec<_>>());
    }

    #[test]
    fn one_sample_per_port_per_tick() {
        let (mut c, mut io) = rig("identity");
        let catalog = BehaviorCatalog::standard();
        feed(&mut io, json!(1), 0);
        feed(&mut io, json!(2), 0);
        c.process_step(0, &mut io, &catalog).unwrap();
        assert_eq!(drained(&mut io, 0), vec![json!(1)]);
    }

    #[test]
    fn fault_stops_container_and_keeps_input() {
        let (mut c, mut io) = rig("crash:2");
        let catalog = BehaviorCatalog::standard();
        feed(&mut io, json!(1), 0);
        c.process_step(0, &mut io, &catalog).unwrap();
        feed(&mut io, json!(2), 1);
        let err = c.process_step(1, &mut io, &catalog).unwrap_err();
        assert!(matches!(err, ContainerError::Fault { .. }));
        assert_eq!(c.lifecycle(), Lifecycle::Stopped);
        assert!(c.is_faulted());
        assert_eq!(c.buffered_inputs(), 1);
    }

    #[test]
    fn synchronized_output_stalls_producer() {
        let (mut c, mut io) = rig("identity");
        let catalog = BehaviorCatalog::standard();
        // fill kout to capacity without consuming
        for t in 0..DEFAULT_CAP as u64 {
            feed(&mut io, json!(t), t);
            c.process_step(t, &mut io, &catalog).unwrap();
        }
        feed(&mut io, json!("late"), 100);
        assert_eq!(c.process_step(100, &mut io, &catalog).unwrap(), StepOutcome::Stalled);
    }

    const DEFAULT_CAP: usize = crate::connector::DEFAULT_LOSSLESS_CAPACITY;

    #[test]
    fn unsynchronized_output_queues_instead() {
        let (mut c, mut io) = rig("identity");
        let k = io.get_mut(&ConnectorId::from("kout")).unwrap();
        *k = {
            let mut n = ConnectorInstance::new(
                "kout".into(),
                Endpoint { port: PortRef::new("c", "out"), host: "h1".into() },
                vec![Endpoint { port: PortRef::new("drain", "i"), host: "h1".into() }],
                FlowPolicy {
                    sync: SyncPolicy::Unsynchronized,
                    loss: LossPolicy::Lossless { capacity: 1 },
                    ..FlowPolicy::default()
                },
            )
            .unwrap();
            n.set_route_delay(&PortRef::new("drain", "i"), Some(0), 0).unwrap();
            n.resume().unwrap();
            n
        };
        let catalog = BehaviorCatalog::standard();
        for t in 0..3 {
            feed(&mut io, json!(t), t);
            assert!(matches!(c.process_step(t, &mut io, &catalog).unwrap(), StepOutcome::Fired { .. }));
        }
        // one in the connector, two waiting in the output unit; nothing lost
        let mut got = Vec::new();
        for t in 3..6 {
            got.extend(drained(&mut io, t));
            c.process_step(t, &mut io, &catalog).unwrap();
        }
        got.extend(drained(&mut io, 6));
        assert_eq!(got, vec![json!(0), json!(1), json!(2)]);
    }

    #[test]
    fn events_need_listener() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", false), HostTier::Full).unwrap();
        c.transition(Lifecycle::Connected).unwrap();
        assert!(!c.deliver_event(event(5)));
    }

    #[test]
    fn events_gated_by_lifecycle() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", true), HostTier::Full).unwrap();
        assert!(!c.deliver_event(event(5)));
        c.transition(Lifecycle::Connected).unwrap();
        c.transition(Lifecycle::Destroyed).unwrap();
        assert!(!c.deliver_event(event(5)));
    }

    #[test]
    fn events_consumed_by_priority() {
        let (mut c, _) = rig("identity");
        assert!(c.deliver_event(event(2)));
        assert!(c.deliver_event(event(9)));
        assert!(c.deliver_event(event(2)));
        let order: Vec<_> = c.events.iter().map(|q| (q.event.priority, q.seq)).collect();
        assert_eq!(order, vec![(9, 1), (2, 0), (2, 2)]);
    }

    #[test]
    fn event_queue_overflow_drops_lowest_oldest() {
        let (mut c, _) = rig("identity");
        assert!(c.deliver_event(event(1)));
        for _ in 0..EVENT_QUEUE_BOUND - 1 {
            assert!(c.deliver_event(event(5)));
        }
        assert!(c.deliver_event(event(7)));
        assert_eq!(c.pending_events(), EVENT_QUEUE_BOUND);
        assert!(c.events.iter().all(|q| q.event.priority >= 5));
        assert!(!c.deliver_event(event(0)));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut c = ContainerInstance::new(descriptor("c", &[], &[], "counter", false), HostTier::Full).unwrap();
        c.state = json!(7);
        c.transition(Lifecycle::Connected).unwrap();
        c.transition(Lifecycle::Running).unwrap();
        assert!(matches!(c.snapshot(), Err(ContainerError::Lifecycle { .. })));
        c.transition(Lifecycle::Stopped).unwrap();
        let snap = c.snapshot().unwrap();
        let mut d = ContainerInstance::new(c.descriptor().clone(), HostTier::LightStd).unwrap();
        d.restore(&snap, HostTier::LightStd).unwrap();
        assert_eq!(d.state(), &json!(7));
        assert_eq!(d.active_tier(), HostTier::LightStd);
        assert!(matches!(d.restore(&snap, HostTier::LightMin), Err(ContainerError::Variant { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const ALL: [Lifecycle; 6] = [
            Lifecycle::Created,
            Lifecycle::Connected,
            Lifecycle::Running,
            Lifecycle::Stopped,
            Lifecycle::Migrating,
            Lifecycle::Destroyed,
        ];
        const EDGES: [(Lifecycle, Lifecycle); 8] = [
            (Lifecycle::Created, Lifecycle::Connected),
            (Lifecycle::Connected, Lifecycle::Running),
            (Lifecycle::Running, Lifecycle::Stopped),
            (Lifecycle::Stopped, Lifecycle::Running),
            (Lifecycle::Stopped, Lifecycle::Migrating),
            (Lifecycle::Migrating, Lifecycle::Connected),
            (Lifecycle::Stopped, Lifecycle::Destroyed),
            (Lifecycle::Connected, Lifecycle::Destroyed),
        ];

        proptest! {
            #[test]
            fn only_listed_edges_are_taken(targets in proptest::collection::vec(0usize..6, 1..100)) {
                let mut c = ContainerInstance::new(descriptor("c", &[], &[], "identity", false), HostTier::Full).unwrap();
                for t in targets {
                    let from = c.lifecycle();
                    let to = ALL[t];
                    let ok = c.transition(to).is_ok();
                    prop_assert_eq!(ok, EDGES.contains(&(from, to)));
                    prop_assert_eq!(c.lifecycle(), if ok { to } else { from });
                }
            }

            // Interrupting a counter with snapshot/restore must not change its output.
            #[test]
            fn migration_is_transparent(n in 1u64..30, cut in 0u64..30) {
                let catalog = BehaviorCatalog::standard();
                let run = |interrupt: Option<u64>| {
                    let (mut c, mut io) = rig("counter");
                    let mut out = Vec::new();
                    for t in 0..n {
                        feed(&mut io, json!(t), t);
                        if interrupt == Some(t) {
                            c.transition(Lifecycle::Stopped).unwrap();
                            c.transition(Lifecycle::Migrating).unwrap();
                            let snap = c.snapshot().unwrap();
                            let mut d = ContainerInstance::new(c.descriptor().clone(), HostTier::LightStd).unwrap();
                            wire(&mut d, Some("kin"), Some("kout"));
                            d.restore(&snap, HostTier::LightStd).unwrap();
                            d.transition(Lifecycle::Connected).unwrap();
                            d.transition(Lifecycle::Running).unwrap();
                            c = d;
                        }
                        c.process_step(t, &mut io, &catalog).unwrap();
                        out.extend(drained(&mut io, t));
                    }
                    out
                };
                prop_assert_eq!(run(None), run(Some(cut)));
            }
        }
    }
}
