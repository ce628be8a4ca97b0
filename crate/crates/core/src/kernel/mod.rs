//! Per-host platforms and the kernel that drives them.
//!
//! The kernel owns every platform (one per host), the connector instances,
//! the in-flight messages and the architecture model. Commands mutate the
//! runtime and the model in the same step; see [`Kernel::apply`].

mod commands;
mod services;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use commands::{CommandResult, Origin, ReconfigurationCommand, ReplaceTarget};
pub use services::{Service, ServiceError, ServiceMatrix, ServiceRequest, ServiceResponse};

use crate::adaptation::{AdaptationMode, ArchitectureModel, ModelComponent, ModelConnector, QoSReport};
use crate::behavior::{AppAction, BehaviorCatalog};
use crate::connector::{ConnectorInstance, FlowNote, PortRef, PushResult};
use crate::container::{ContainerError, ContainerInstance, EventKind, EventPayload, Lifecycle, PlatformEvent, StepOutcome};
use crate::context::{stamp, ContextInformation, ContextNature, ContextObject, ContextValue, Location, ValidityPolicy};
use crate::ids::{ComponentId, ConnectorId, HostId, Tick};
use crate::simnet::{NetError, NetMessage, Network};
use crate::store::{ContextStore, StoreConfig};
use crate::trace::{token, TraceBuffer, TraceKind};

/// Capability class of a host, lightest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HostTier {
    LightMin,
    LightStd,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Power {
    Mains,
    Battery { level: f64, drain_per_tick: f64 },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostDescriptor {
    pub id: HostId,
    pub tier: HostTier,
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub power: Power,
    pub location: (f64, f64),
    #[serde(default = "yes")]
    pub up: bool,
}

impl HostDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.as_str().is_empty() {
            return Err("empty host id".into());
        }
        if [self.cpu_capacity, self.mem_capacity].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return Err(format!("host {}: capacities must be > 0", self.id));
        }
        if let Power::Battery { level, drain_per_tick } = self.power {
            if !(0.0..=1.0).contains(&level) {
                return Err(format!("host {}: battery level {level} outside [0,1]", self.id));
            }
            if drain_per_tick.is_nan() || drain_per_tick < 0.0 {
                return Err(format!("host {}: negative drain", self.id));
            }
        }
        Ok(())
    }

    pub fn battery(&self) -> Option<f64> {
        match self.power {
            Power::Mains => None,
            Power::Battery { level, .. } => Some(level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntrusionLevel {
    Open,
    /// Platform commands on a component wait until the application has left
    /// it alone for this many ticks.
    Guarded(Tick),
    /// Platform commands are deferred unless the component's host is down.
    Locked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub kinds: BTreeSet<EventKind>,
    pub min_priority: u8,
    /// Applied to context payloads.
    pub filter: ValidityPolicy,
}

impl Default for Subscription {
    fn default() -> Self {
        Self {
            kinds: [EventKind::ContextChanged, EventKind::QoSAlert, EventKind::Reconfigured].into(),
            min_priority: 0,
            filter: ValidityPolicy::pass_all(),
        }
    }
}

impl Subscription {
    pub fn matches(&self, e: &PlatformEvent, now: Tick) -> bool {
        self.kinds.contains(&e.kind)
            && e.priority >= self.min_priority
            && match &e.payload {
                EventPayload::Context(obj) => crate::context::is_valid(obj, now, &self.filter),
                EventPayload::QoS(_) => true,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosWeights {
    pub resource: f64,
    pub link: f64,
    pub battery: f64,
}

impl Default for QosWeights {
    fn default() -> Self {
        Self { resource: 0.4, link: 0.4, battery: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    /// Per listener; listeners without an entry receive everything.
    pub subscriptions: BTreeMap<ComponentId, Subscription>,
    pub intrusion: IntrusionLevel,
    pub reporting_interval: Tick,
    pub qos_threshold: f64,
    pub weights: QosWeights,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            subscriptions: BTreeMap::new(),
            intrusion: IntrusionLevel::Open,
            reporting_interval: 5,
            qos_threshold: 0.7,
            weights: QosWeights::default(),
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if !(0.0..=1.0).contains(&self.qos_threshold) {
            return Err(KernelError::Validation(format!("qos threshold {} outside [0,1]", self.qos_threshold)));
        }
        if self.reporting_interval == 0 {
            return Err(KernelError::Validation("reporting interval must be >= 1".into()));
        }
        let w = self.weights;
        if [w.resource, w.link, w.battery].iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(KernelError::Validation("qos weights must be >= 0".into()));
        }
        for s in self.subscriptions.values() {
            if s.min_priority > 9 {
                return Err(KernelError::Validation("min priority must be <= 9".into()));
            }
            s.filter.validate().map_err(|e| KernelError::Validation(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EndpointRole {
    Source,
    Sink,
}

/// A host-local record of a connector end attached to a local component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointRecord {
    pub connector: ConnectorId,
    pub role: EndpointRole,
    pub port: PortRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    host: HostId,
    tier: HostTier,
    store: ContextStore,
    containers: BTreeMap<ComponentId, ContainerInstance>,
    endpoints: BTreeSet<EndpointRecord>,
    config: PlatformConfig,
    export: Vec<String>,
    /// Restored containers whose state transfer has not arrived yet.
    awaiting: BTreeSet<ComponentId>,
}

impl Platform {
    fn new(host: HostId, tier: HostTier, config: PlatformConfig, store: StoreConfig) -> Self {
        Self {
            host,
            tier,
            store: ContextStore::new(store),
            containers: BTreeMap::new(),
            endpoints: BTreeSet::new(),
            config,
            export: Vec::new(),
            awaiting: BTreeSet::new(),
        }
    }

    pub fn host(&self) -> &HostId {
        &self.host
    }

    pub fn tier(&self) -> HostTier {
        self.tier
    }

    pub fn store(&self) -> &ContextStore {
        &self.store
    }

    pub fn containers(&self) -> &BTreeMap<ComponentId, ContainerInstance> {
        &self.containers
    }

    pub fn endpoints(&self) -> &BTreeSet<EndpointRecord> {
        &self.endpoints
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    /// Persistence export lines, oldest first.
    pub fn export_log(&self) -> &[String] {
        &self.export
    }

    pub fn is_awaiting(&self, c: &ComponentId) -> bool {
        self.awaiting.contains(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Transfer {
    component: ComponentId,
    src: HostId,
    dst: HostId,
    size: u64,
    attempts: u32,
}

/// Resends of a lost state transfer before the container is released.
pub const TRANSFER_RETRIES: u32 = 3;

/// Event priorities used by the kernel.
pub const PRIO_CONTEXT: u8 = 1;
pub const PRIO_RECONFIGURED: u8 = 3;
pub const PRIO_QOS: u8 = 5;
pub const PRIO_QOS_HARD: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowCounters {
    /// Flow C: events accepted by listener containers.
    pub events_delivered: u64,
    /// Flow D: platform-issued commands that were applied.
    pub platform_applied: u64,
    pub app_applied: u64,
    pub deferred: u64,
    pub aborted: u64,
}

#[derive(Debug, Clone, Default)]
pub struct KernelOptions {
    pub catalog: BehaviorCatalog,
    pub config: PlatformConfig,
    pub store: StoreConfig,
}

/// Stage of the move protocol, for fault injection in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveStage {
    Paused,
    Drained,
    Sent,
    Restored,
    Resumed,
}

#[derive(Clone)]
pub struct Kernel {
    now: Tick,
    mode: AdaptationMode,
    net: Network,
    mail: crate::simnet::MessageQueue,
    platforms: BTreeMap<HostId, Platform>,
    connectors: BTreeMap<ConnectorId, ConnectorInstance>,
    model: ArchitectureModel,
    catalog: BehaviorCatalog,
    transfers: BTreeMap<u64, Transfer>,
    last_app_change: BTreeMap<ComponentId, Tick>,
    latest_qos: Option<QoSReport>,
    counters: FlowCounters,
    trace: TraceBuffer,
    fail_at: Option<MoveStage>,
}

impl Kernel {
    pub fn new(net: Network, options: KernelOptions) -> Result<Self, KernelError> {
        options.config.validate()?;
        let platforms = net
            .hosts()
            .map(|h| (h.id.clone(), Platform::new(h.id.clone(), h.tier, options.config.clone(), options.store.clone())))
            .collect();
        Ok(Self {
            now: 0,
            mode: AdaptationMode::M3,
            net,
            mail: Default::default(),
            platforms,
            connectors: BTreeMap::new(),
            model: ArchitectureModel::default(),
            catalog: options.catalog,
            transfers: BTreeMap::new(),
            last_app_change: BTreeMap::new(),
            latest_qos: None,
            counters: FlowCounters::default(),
            trace: TraceBuffer::default(),
            fail_at: None,
        })
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn set_now(&mut self, now: Tick) {
        self.now = now;
    }

    pub fn mode(&self) -> AdaptationMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: AdaptationMode) {
        self.mode = mode;
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    /// Direct topology edits; call [`topology_changed`](Self::topology_changed) afterwards.
    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn platform(&self, h: &HostId) -> Option<&Platform> {
        self.platforms.get(h)
    }

    pub fn platforms(&self) -> impl Iterator<Item = &Platform> {
        self.platforms.values()
    }

    pub fn connector(&self, id: &ConnectorId) -> Option<&ConnectorInstance> {
        self.connectors.get(id)
    }

    pub fn connectors(&self) -> impl Iterator<Item = &ConnectorInstance> {
        self.connectors.values()
    }

    pub fn model(&self) -> &ArchitectureModel {
        &self.model
    }

    pub fn catalog(&self) -> &BehaviorCatalog {
        &self.catalog
    }

    pub fn counters(&self) -> FlowCounters {
        self.counters
    }

    pub fn latest_qos(&self) -> Option<&QoSReport> {
        self.latest_qos.as_ref()
    }

    pub fn transfers_pending(&self) -> bool {
        !self.transfers.is_empty()
    }

    /// The up host of the highest tier above LightMin, smallest id first.
    pub fn coordinator(&self) -> Option<HostId> {
        self.net
            .hosts()
            .filter(|h| h.up && h.tier > HostTier::LightMin)
            .max_by(|a, b| a.tier.cmp(&b.tier).then_with(|| b.id.cmp(&a.id)))
            .map(|h| h.id.clone())
    }

    pub fn host_of(&self, c: &ComponentId) -> Option<&HostId> {
        self.platforms.values().find(|p| p.containers.contains_key(c)).map(|p| &p.host)
    }

    pub fn container(&self, c: &ComponentId) -> Option<&ContainerInstance> {
        self.platforms.values().find_map(|p| p.containers.get(c))
    }

    /// Makes the next move protocol fail right after `stage`.
    #[doc(hidden)]
    pub fn inject_move_failure(&mut self, stage: MoveStage) {
        self.fail_at = Some(stage);
    }

    /// Serialized runtime state; equal fingerprints mean identical runtimes.
    pub fn fingerprint(&self) -> String {
        format!("{:?}", (&self.platforms, &self.connectors, &self.model, &self.mail, &self.transfers))
    }

    pub fn trace(&mut self, host: &HostId, kind: TraceKind, body: impl std::fmt::Display) {
        self.trace.push(host, kind, body);
    }

    pub fn flush_trace(&mut self) -> Vec<String> {
        self.trace.flush(self.now)
    }

    pub fn set_latest_qos(&mut self, q: QoSReport) {
        self.latest_qos = Some(q);
    }

    /// Stamps `info` on `host` and stores it.
    pub fn put_context(&mut self, host: &HostId, info: ContextInformation, owner: &str, confidence: f64) -> Option<ContextObject> {
        let loc = self.net.host(host).map(|h| Location::at(host.clone(), h.location.0, h.location.1))?;
        let obj = stamp(info, self.now, loc, owner, confidence).ok()?;
        let p = self.platforms.get_mut(host)?;
        p.store.put(obj.clone());
        self.trace.push(host, TraceKind::Ctx, &obj);
        Some(obj)
    }

    fn number(&mut self, host: &HostId, nature: ContextNature, key: &str, v: f64, unit: &str, producer: &str) {
        if let Ok(info) = ContextInformation::new(nature, key, ContextValue::number(v, unit), producer) {
            self.put_context(host, info, "platform", 1.0);
        }
    }

    pub fn sensor_reading(&mut self, host: &HostId, key: &str, value: f64, unit: &str, confidence: f64) {
        if !self.net.is_up(host) {
            return;
        }
        let Ok(info) = ContextInformation::new(ContextNature::Environment, key, ContextValue::number(value, unit), host.as_str())
        else {
            return;
        };
        if let Some(obj) = self.put_context(host, info, host.as_str(), confidence.clamp(0.0, 1.0)) {
            self.emit_event(host, PlatformEvent::new(EventKind::ContextChanged, EventPayload::Context(obj), PRIO_CONTEXT));
        }
    }

    pub fn user_profile(&mut self, host: &HostId, key: &str, value: &str) {
        if !self.net.is_up(host) {
            return;
        }
        let Ok(info) = ContextInformation::new(ContextNature::User, key, ContextValue::Text(value.to_owned()), "user")
        else {
            return;
        };
        if let Some(obj) = self.put_context(host, info, "user", 1.0) {
            self.emit_event(host, PlatformEvent::new(EventKind::ContextChanged, EventPayload::Context(obj), PRIO_CONTEXT));
        }
    }

    /// Delivers `e` to the matching listeners on `host`. Only modes with
    /// platform-to-application events deliver anything.
    pub fn emit_event(&mut self, host: &HostId, e: PlatformEvent) -> usize {
        if !self.mode.emits_events() || !self.net.is_up(host) {
            return 0;
        }
        let now = self.now;
        let Some(p) = self.platforms.get_mut(host) else { return 0 };
        let mut delivered = Vec::new();
        for (id, c) in p.containers.iter_mut() {
            if !c.descriptor().listener {
                continue;
            }
            let sub = p.config.subscriptions.get(id).cloned().unwrap_or_default();
            if sub.matches(&e, now) && c.deliver_event(e.clone()) {
                delivered.push(id.clone());
            }
        }
        for id in &delivered {
            self.trace.push(host, TraceKind::Evt, format_args!("event={:?} prio={} to={id}", e.kind, e.priority));
        }
        self.counters.events_delivered += delivered.len() as u64;
        delivered.len()
    }

    /// Emits `e` on every up host.
    pub fn broadcast_event(&mut self, e: PlatformEvent) -> usize {
        let hosts: Vec<HostId> = self.platforms.keys().cloned().collect();
        hosts.into_iter().map(|h| self.emit_event(&h, e.clone())).sum()
    }

    /// Re-reads a component from its registry into the model.
    fn sync_component(&mut self, c: &ComponentId) {
        let entry = self.platforms.values().find_map(|p| {
            p.containers.get(c).map(|ci| ModelComponent {
                host: p.host.clone(),
                tier: ci.active_tier(),
                lifecycle: ci.lifecycle(),
                variants: ci.descriptor().variants.clone(),
            })
        });
        match entry {
            Some(e) => self.model.set_component(c.clone(), e),
            None => self.model.remove_component(c),
        }
    }

    fn connector_hosts(&self, k: &ConnectorInstance) -> BTreeSet<HostId> {
        let src = &k.source().host;
        let mut hosts: BTreeSet<HostId> = [src.clone()].into();
        for s in k.sinks() {
            hosts.insert(s.host.clone());
            if let Some(path) = self.net.shortest_path(src, &s.host) {
                hosts.extend(path);
            }
        }
        hosts
    }

    fn sync_connector(&mut self, id: &ConnectorId) {
        match self.connectors.get(id) {
            Some(k) => {
                let mut sinks: Vec<_> = k.sinks().cloned().collect();
                sinks.sort();
                let entry = ModelConnector {
                    source: k.source().clone(),
                    sinks,
                    policy: k.policy().clone(),
                    hosts: self.connector_hosts(k),
                };
                self.model.set_connector(id.clone(), entry);
            }
            None => self.model.remove_connector(id),
        }
    }

    /// Recomputes every sink's transit delay from the current topology.
    fn refresh_connector(&mut self, id: &ConnectorId) {
        let now = self.now;
        let Some(k) = self.connectors.get(id) else { return };
        let src = k.source().host.clone();
        let delays: Vec<(PortRef, Option<Tick>)> = k
            .sinks()
            .map(|s| {
                let d = self.net.shortest_path(&src, &s.host).map(|p| self.net.path_latency(&p));
                (s.port.clone(), d)
            })
            .collect();
        let k = self.connectors.get_mut(id).expect("checked above");
        for (sink, d) in delays {
            k.set_route_delay(&sink, d, now).expect("sink listed by the connector");
        }
        self.sync_connector(id);
    }

    /// Reacts to host or link changes: loses broken messages and refreshes
    /// connector routes.
    pub fn topology_changed(&mut self) {
        for m in self.mail.take_broken(&self.net) {
            self.trace.push(
                &m.msg.src,
                TraceKind::Net,
                format_args!("op=lost msg={} to={} what={}", m.id, m.msg.dst, m.msg.payload),
            );
            if let Some(t) = self.transfers.remove(&m.id) {
                self.retry_transfer(t, &m.msg.payload);
            }
        }
        let ids: Vec<ConnectorId> = self.connectors.keys().cloned().collect();
        for id in &ids {
            self.refresh_connector(id);
        }
    }

    fn retry_transfer(&mut self, mut t: Transfer, payload: &str) {
        if t.attempts <= TRANSFER_RETRIES && self.net.is_up(&t.src) {
            let msg = NetMessage {
                src: t.src.clone(),
                dst: t.dst.clone(),
                payload: payload.to_owned(),
                size: t.size,
                enqueued_at: self.now,
            };
            if let Ok((id, due)) = self.mail.send(&self.net, msg) {
                self.trace.push(
                    &t.src,
                    TraceKind::Net,
                    format_args!("op=send msg={id} to={} what={payload} size={} due={due} retry={}", t.dst, t.size, t.attempts),
                );
                t.attempts += 1;
                self.transfers.insert(id, t);
                return;
            }
        }
        self.trace.push(&t.dst, TraceKind::Net, format_args!("op=release comp={}", t.component));
        self.finish_transfer(&t);
    }

    fn finish_transfer(&mut self, t: &Transfer) {
        if let Some(p) = self.platforms.get_mut(&t.dst) {
            p.awaiting.remove(&t.component);
        }
        self.autostart(&t.component);
    }

    pub fn deliver_messages(&mut self) {
        for m in self.mail.take_due(self.now) {
            self.trace.push(
                &m.msg.dst,
                TraceKind::Net,
                format_args!("op=recv msg={} from={} what={}", m.id, m.msg.src, m.msg.payload),
            );
            if let Some(t) = self.transfers.remove(&m.id) {
                self.finish_transfer(&t);
            }
        }
    }

    /// Starts a container once it is bound, healthy and settled on an up host.
    fn autostart(&mut self, c: &ComponentId) {
        let Some(h) = self.host_of(c).cloned() else { return };
        let up = self.net.is_up(&h);
        let p = self.platforms.get_mut(&h).expect("host_of names a platform");
        let awaiting = p.awaiting.contains(c);
        let ci = p.containers.get_mut(c).expect("host_of found it");
        if up
            && !awaiting
            && !ci.is_faulted()
            && ci.all_ports_bound()
            && matches!(ci.lifecycle(), Lifecycle::Connected | Lifecycle::Stopped)
        {
            ci.transition(Lifecycle::Running).expect("edge checked above");
            self.sync_component(c);
        }
    }

    /// Phase 4 of a tick: every up platform fires its containers, reports
    /// context when due, then queued application requests are applied.
    pub fn host_ticks(&mut self) {
        let now = self.now;
        let hosts: Vec<HostId> = self.platforms.keys().cloned().collect();
        let mut requests: Vec<(HostId, AppAction)> = Vec::new();
        let mut faults: Vec<(HostId, ComponentId, String)> = Vec::new();
        for h in &hosts {
            if !self.net.is_up(h) {
                continue;
            }
            let p = self.platforms.get_mut(h).expect("listed");
            let ids: Vec<ComponentId> = p.containers.keys().filter(|c| !p.awaiting.contains(*c)).cloned().collect();
            for id in &ids {
                if let Err(e) = p.containers.get_mut(id).expect("listed").prefetch(&mut self.connectors, now) {
                    faults.push((h.clone(), id.clone(), e.to_string()));
                }
            }
            for id in &ids {
                let c = p.containers.get_mut(id).expect("listed");
                match c.process_step(now, &mut self.connectors, &self.catalog) {
                    Ok(StepOutcome::Fired { actions, .. }) => {
                        requests.extend(actions.into_iter().map(|a| (h.clone(), a)));
                    }
                    Ok(_) => {}
                    Err(ContainerError::Fault { reason, .. }) => faults.push((h.clone(), id.clone(), reason)),
                    Err(e) => faults.push((h.clone(), id.clone(), e.to_string())),
                }
            }
        }
        for (h, c, reason) in faults {
            if let Ok(info) = ContextInformation::new(
                ContextNature::Hardware,
                "component.fault",
                ContextValue::Text(format!("{c}:{reason}")),
                c.as_str(),
            ) {
                self.put_context(&h, info, "platform", 1.0);
            }
            self.sync_component(&c);
        }
        for h in &hosts {
            let due = self.platforms[h].config.reporting_interval;
            if self.net.is_up(h) && now.is_multiple_of(due) {
                self.report(h, due);
            }
        }
        self.trace_flow_notes();
        for (h, action) in requests {
            match action {
                AppAction::Reconfigure(cmd) => {
                    self.apply(cmd, Origin::App);
                }
                AppAction::Persist(info) => {
                    let _ = self.service_call(&h, ServiceRequest::Persistence(info));
                }
            }
        }
    }

    /// Writes host, component and connector context into `h`'s store.
    fn report(&mut self, h: &HostId, interval: Tick) {
        use ContextNature::Hardware;
        let desc = self.net.host(h).expect("platform host exists").clone();
        let p = &self.platforms[h];
        let (cpu, mem) = p.containers.values().fold((0.0, 0.0), |(c, m), ci| {
            let v = ci.active_variant();
            (c + v.cpu_demand, m + v.mem_demand)
        });
        let alive: Vec<ComponentId> =
            p.containers.values().filter(|c| c.lifecycle() == Lifecycle::Running).map(|c| c.id().clone()).collect();
        self.number(h, Hardware, "cpu.free", desc.cpu_capacity - cpu, "u", h.as_str());
        self.number(h, Hardware, "mem.free", desc.mem_capacity - mem, "u", h.as_str());
        if let Some(level) = desc.battery() {
            self.number(h, Hardware, "battery.level", level, "", h.as_str());
        }
        for c in alive {
            self.number(h, Hardware, "component.alive", 1.0, "", c.as_str());
        }
        let local: Vec<ConnectorId> =
            self.connectors.values().filter(|k| &k.source().host == h).map(|k| k.id().clone()).collect();
        for id in local {
            let k = self.connectors.get_mut(&id).expect("listed");
            let rate = k.take_pushed_count() as f64 / interval as f64;
            let depth = k.depth() as f64;
            self.number(h, Hardware, "flow.rate", rate, "/t", id.as_str());
            self.number(h, Hardware, "flow.depth", depth, "", id.as_str());
        }
    }

    fn trace_flow_notes(&mut self) {
        let mut lines = Vec::new();
        for k in self.connectors.values_mut() {
            let notes = k.take_notes();
            let src = k.source().host.clone();
            for n in notes {
                let line = match n {
                    FlowNote::Push { seq, result } => {
                        let r = match result {
                            PushResult::Accepted => "accepted",
                            PushResult::Overwrote => "overwrote",
                            PushResult::Blocked => "blocked",
                        };
                        (src.clone(), format!("conn={} op=push seq={seq} result={r}", k.id()))
                    }
                    FlowNote::Drop { seq, sink } => (src.clone(), format!("conn={} op=drop seq={seq} sink={sink}", k.id())),
                    FlowNote::Deliver { seq, sink } => {
                        let host = k.sinks().find(|e| e.port == sink).map_or(src.clone(), |e| e.host.clone());
                        (host, format!("conn={} op=deliver seq={seq} sink={sink}", k.id()))
                    }
                };
                lines.push(line);
            }
        }
        for (h, body) in lines {
            self.trace.push(&h, TraceKind::Flow, body);
        }
    }

    fn cmd_line(&mut self, host: &HostId, origin: Origin, cmd: &ReconfigurationCommand, result: &CommandResult) {
        let tail = match result {
            CommandResult::Applied => "result=applied".to_owned(),
            CommandResult::Deferred => "result=deferred reason=intrusion".to_owned(),
            CommandResult::Aborted(r) => format!("result=aborted reason={}", token(r)),
        };
        self.trace.push(host, TraceKind::Cmd, format_args!("origin={origin} {cmd} {tail}"));
    }
}
