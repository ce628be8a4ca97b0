//! Reconfiguration commands and their atomic execution.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EndpointRecord, EndpointRole, HostTier, IntrusionLevel, Kernel, MoveStage, Transfer, PRIO_RECONFIGURED};
use crate::connector::{ConnectorInstance, ControlState, Endpoint, EndpointChange, FlowPolicy, FlowSample, PortRef};
use crate::container::{ComponentDescriptor, ContainerInstance, EventKind, EventPayload, Lifecycle, PlatformEvent};
use crate::context::{stamp, ContextInformation, ContextNature, ContextValue, Location};
use crate::ids::{ComponentId, ConnectorId, HostId};
use crate::simnet::NetMessage;
use crate::trace::TraceKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReplaceTarget {
    Behavior(String),
    Variant(HostTier),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReconfigurationCommand {
    Add { descriptor: ComponentDescriptor, host: HostId },
    Remove { component: ComponentId },
    Move { component: ComponentId, target: HostId },
    Connect { connector: ConnectorId, source: PortRef, sinks: Vec<PortRef>, policy: FlowPolicy },
    Disconnect { connector: ConnectorId },
    ReplaceBusiness { component: ComponentId, target: ReplaceTarget },
}

impl fmt::Display for ReconfigurationCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ReconfigurationCommand::*;
        match self {
            Add { descriptor, host } => write!(f, "cmd=add comp={} host={host}", descriptor.id),
            Remove { component } => write!(f, "cmd=remove comp={component}"),
            Move { component, target } => write!(f, "cmd=move comp={component} to={target}"),
            Connect { connector, source, sinks, .. } => {
                let to: Vec<String> = sinks.iter().map(ToString::to_string).collect();
                write!(f, "cmd=connect conn={connector} from={source} to={}", to.join(","))
            }
            Disconnect { connector } => write!(f, "cmd=disconnect conn={connector}"),
            ReplaceBusiness { component, target: ReplaceTarget::Behavior(b) } => {
                write!(f, "cmd=replace comp={component} behavior={}", crate::trace::token(b))
            }
            ReplaceBusiness { component, target: ReplaceTarget::Variant(t) } => {
                write!(f, "cmd=replace comp={component} variant={t:?}")
            }
        }
    }
}

/// Who issued a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    /// The adaptation manager (intrusive, flow D).
    Platform,
    /// A business component through the platform services.
    App,
    /// Initial deployment.
    Deploy,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Platform => "platform",
            Origin::App => "app",
            Origin::Deploy => "deploy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandResult {
    Applied,
    Aborted(String),
    Deferred,
}

type Step<T> = Result<T, String>;

struct Saved {
    platforms: std::collections::BTreeMap<HostId, super::Platform>,
    connectors: std::collections::BTreeMap<ConnectorId, ConnectorInstance>,
    model: crate::adaptation::ArchitectureModel,
    mail: crate::simnet::MessageQueue,
    transfers: std::collections::BTreeMap<u64, Transfer>,
    trace_len: usize,
}

impl Kernel {
    /// Executes `cmd` atomically: either every step succeeds and the model
    /// follows the runtime, or both are left exactly as they were.
    pub fn apply(&mut self, cmd: ReconfigurationCommand, origin: Origin) -> CommandResult {
        let subject_host = self.subject_host(&cmd);
        let line_host = match origin {
            Origin::Platform => self.coordinator().or_else(|| subject_host.clone()),
            _ => subject_host.clone(),
        }
        .unwrap_or_else(|| HostId::from("-"));

        let result = if origin == Origin::Platform && self.intrusion_defers(&cmd, subject_host.as_ref()) {
            CommandResult::Deferred
        } else {
            let saved = self.save();
            match self.execute(&cmd) {
                Ok(()) => CommandResult::Applied,
                Err(reason) => {
                    self.restore(saved);
                    CommandResult::Aborted(reason)
                }
            }
        };
        self.cmd_line(&line_host, origin, &cmd, &result);
        match (&result, origin) {
            (CommandResult::Applied, Origin::Platform) => {
                self.counters.platform_applied += 1;
                self.announce(&cmd);
            }
            (CommandResult::Applied, Origin::App) => {
                self.counters.app_applied += 1;
                if let Some(c) = subject(&cmd) {
                    self.last_app_change.insert(c, self.now);
                }
            }
            (CommandResult::Applied, Origin::Deploy) => {}
            (CommandResult::Deferred, _) => self.counters.deferred += 1,
            (CommandResult::Aborted(_), _) => self.counters.aborted += 1,
        }
        result
    }

    fn save(&self) -> Saved {
        Saved {
            platforms: self.platforms.clone(),
            connectors: self.connectors.clone(),
            model: self.model.clone(),
            mail: self.mail.clone(),
            transfers: self.transfers.clone(),
            trace_len: self.trace.len(),
        }
    }

    fn restore(&mut self, s: Saved) {
        self.platforms = s.platforms;
        self.connectors = s.connectors;
        self.model = s.model;
        self.mail = s.mail;
        self.transfers = s.transfers;
        self.trace.truncate(s.trace_len);
    }

    /// Tells listeners on the affected host that the architecture changed.
    fn announce(&mut self, cmd: &ReconfigurationCommand) {
        if self.mode != crate::adaptation::AdaptationMode::M4 {
            return;
        }
        let Some(h) = subject(cmd).and_then(|c| self.host_of(&c).cloned()) else { return };
        let Some(d) = self.net.host(&h) else { return };
        let loc = Location::at(h.clone(), d.location.0, d.location.1);
        let info = ContextInformation::new(
            ContextNature::Hardware,
            "architecture.version",
            ContextValue::number(self.model.version() as f64, ""),
            "platform",
        )
        .expect("non-empty key");
        let obj = stamp(info, self.now, loc, "platform", 1.0).expect("valid confidence");
        self.emit_event(&h, PlatformEvent::new(EventKind::Reconfigured, EventPayload::Context(obj), PRIO_RECONFIGURED));
    }

    fn subject_host(&self, cmd: &ReconfigurationCommand) -> Option<HostId> {
        use ReconfigurationCommand::*;
        match cmd {
            Add { host, .. } => Some(host.clone()),
            Connect { source, .. } => self.host_of(&source.component).cloned(),
            Disconnect { connector } => self.connectors.get(connector).map(|k| k.source().host.clone()),
            Remove { component } | Move { component, .. } | ReplaceBusiness { component, .. } => {
                self.host_of(component).cloned()
            }
        }
    }

    fn intrusion_defers(&self, cmd: &ReconfigurationCommand, host: Option<&HostId>) -> bool {
        let Some(host) = host else { return false };
        let Some(p) = self.platforms.get(host) else { return false };
        match p.config.intrusion {
            IntrusionLevel::Open => false,
            IntrusionLevel::Locked => self.net.is_up(host),
            IntrusionLevel::Guarded(w) => subject(cmd)
                .and_then(|c| self.last_app_change.get(&c))
                .is_some_and(|t| self.now.saturating_sub(*t) < w),
        }
    }

    fn execute(&mut self, cmd: &ReconfigurationCommand) -> Step<()> {
        use ReconfigurationCommand::*;
        match cmd {
            Add { descriptor, host } => self.add(descriptor, host),
            Remove { component } => self.remove(component),
            Move { component, target } => self.move_component(component, target),
            Connect { connector, source, sinks, policy } => self.connect(connector, source, sinks, policy),
            Disconnect { connector } => self.disconnect(connector),
            ReplaceBusiness { component, target } => self.replace(component, target),
        }
    }

    fn locate(&self, c: &ComponentId) -> Step<HostId> {
        self.host_of(c).cloned().ok_or_else(|| "unknown id".to_owned())
    }

    fn container_mut(&mut self, c: &ComponentId) -> &mut ContainerInstance {
        self.platforms
            .values_mut()
            .find_map(|p| p.containers.get_mut(c))
            .expect("component located before")
    }

    fn set_lifecycle(&mut self, c: &ComponentId, to: Lifecycle) -> Step<()> {
        self.container_mut(c).transition(to).map_err(|e| e.to_string())?;
        self.sync_component(c);
        Ok(())
    }

    fn add(&mut self, d: &ComponentDescriptor, host: &HostId) -> Step<()> {
        d.validate().map_err(|e| format!("invalid: {e}"))?;
        if self.host_of(&d.id).is_some() {
            return Err("duplicate id".into());
        }
        let h = self.net.host(host).ok_or("unknown id")?;
        if !h.up {
            return Err("host down".into());
        }
        let tier = h.tier;
        for v in &d.variants {
            self.catalog.resolve(&v.behavior).map_err(|_| format!("unknown behavior {}", v.behavior))?;
        }
        let mut c = ContainerInstance::new(d.clone(), tier).map_err(|_| "variant".to_owned())?;
        c.transition(Lifecycle::Connected).map_err(|e| e.to_string())?;
        self.platforms.get_mut(host).expect("net host has a platform").containers.insert(d.id.clone(), c);
        self.sync_component(&d.id);
        self.autostart(&d.id);
        Ok(())
    }

    fn remove(&mut self, c: &ComponentId) -> Step<()> {
        let h = self.locate(c)?;
        let p = &self.platforms[&h];
        let ci = &p.containers[c];
        if ci.in_bindings().chain(ci.out_bindings()).any(|(_, b)| b.is_some()) {
            return Err("connected".into());
        }
        if p.awaiting.contains(c) {
            return Err("busy".into());
        }
        match ci.lifecycle() {
            Lifecycle::Running => {
                self.set_lifecycle(c, Lifecycle::Stopped)?;
                self.set_lifecycle(c, Lifecycle::Destroyed)?;
            }
            Lifecycle::Connected | Lifecycle::Stopped => self.set_lifecycle(c, Lifecycle::Destroyed)?,
            Lifecycle::Created | Lifecycle::Destroyed => {}
            Lifecycle::Migrating => return Err("busy".into()),
        }
        self.platforms.get_mut(&h).expect("located").containers.remove(c);
        self.last_app_change.remove(c);
        self.sync_component(c);
        Ok(())
    }

    fn connect(&mut self, id: &ConnectorId, source: &PortRef, sinks: &[PortRef], policy: &FlowPolicy) -> Step<()> {
        if self.connectors.contains_key(id) {
            return Err("duplicate id".into());
        }
        policy.validate().map_err(|e| format!("invalid: {e}"))?;
        if sinks.is_empty() {
            return Err("invalid: no sink".into());
        }
        if sinks.iter().collect::<BTreeSet<_>>().len() != sinks.len() {
            return Err("invalid: duplicate sink".into());
        }
        let src_host = self.locate(&source.component)?;
        let sc = &self.platforms[&src_host].containers[&source.component];
        match sc.out_bindings().find(|(p, _)| **p == source.port) {
            None => return Err(format!("unknown port {source}")),
            Some((_, Some(_))) => return Err(format!("port bound {source}")),
            Some(_) => {}
        }
        let mut endpoints = Vec::new();
        for s in sinks {
            let h = self.locate(&s.component)?;
            let ci = &self.platforms[&h].containers[&s.component];
            match ci.in_bindings().find(|(p, _)| **p == s.port) {
                None => return Err(format!("unknown port {s}")),
                Some((_, Some(_))) => return Err(format!("port bound {s}")),
                Some(_) => {}
            }
            endpoints.push(Endpoint { port: s.clone(), host: h });
        }
        let k = ConnectorInstance::new(
            id.clone(),
            Endpoint { port: source.clone(), host: src_host.clone() },
            endpoints.clone(),
            policy.clone(),
        )
        .map_err(|e| e.to_string())?;
        self.container_mut(&source.component)
            .bind_output(&source.port, Some(id.clone()))
            .map_err(|e| e.to_string())?;
        self.platforms.get_mut(&src_host).expect("located").endpoints.insert(EndpointRecord {
            connector: id.clone(),
            role: EndpointRole::Source,
            port: source.clone(),
        });
        for e in &endpoints {
            self.container_mut(&e.port.component).bind_input(&e.port.port, Some(id.clone())).map_err(|e| e.to_string())?;
            self.platforms.get_mut(&e.host).expect("located").endpoints.insert(EndpointRecord {
                connector: id.clone(),
                role: EndpointRole::Sink,
                port: e.port.clone(),
            });
        }
        self.connectors.insert(id.clone(), k);
        self.refresh_connector(id);
        self.connectors.get_mut(id).expect("inserted").resume().map_err(|e| e.to_string())?;
        let mut involved: Vec<ComponentId> = endpoints.iter().map(|e| e.port.component.clone()).collect();
        involved.push(source.component.clone());
        for c in involved {
            self.autostart(&c);
        }
        Ok(())
    }

    fn disconnect(&mut self, id: &ConnectorId) -> Step<()> {
        let k = self.connectors.get(id).ok_or("unknown id")?.clone();
        let mut ends: Vec<(Endpoint, EndpointRole)> = vec![(k.source().clone(), EndpointRole::Source)];
        ends.extend(k.sinks().map(|e| (e.clone(), EndpointRole::Sink)));
        for (e, role) in &ends {
            let c = &e.port.component;
            if self.platforms.values().any(|p| p.awaiting.contains(c)) {
                return Err("busy".into());
            }
            if self.container_mut(c).lifecycle() == Lifecycle::Running {
                self.set_lifecycle(c, Lifecycle::Stopped)?;
            }
            let ci = self.container_mut(c);
            match role {
                EndpointRole::Source => ci.bind_output(&e.port.port, None),
                EndpointRole::Sink => ci.bind_input(&e.port.port, None),
            }
            .map_err(|e| e.to_string())?;
            let rec = EndpointRecord { connector: id.clone(), role: *role, port: e.port.clone() };
            for p in self.platforms.values_mut() {
                p.endpoints.remove(&rec);
            }
        }
        self.connectors.remove(id);
        self.sync_connector(id);
        Ok(())
    }

    fn replace(&mut self, c: &ComponentId, target: &ReplaceTarget) -> Step<()> {
        let h = self.locate(c)?;
        let host_tier = self.platforms[&h].tier;
        if self.platforms[&h].awaiting.contains(c) {
            return Err("busy".into());
        }
        let running = self.container_mut(c).lifecycle() == Lifecycle::Running;
        if running {
            self.set_lifecycle(c, Lifecycle::Stopped)?;
        }
        match target {
            ReplaceTarget::Behavior(b) => {
                self.catalog.resolve(b).map_err(|_| format!("unknown behavior {b}"))?;
                self.container_mut(c).set_behavior_override(Some(b.clone()));
            }
            ReplaceTarget::Variant(t) => {
                if *t > host_tier {
                    return Err("variant".into());
                }
                let ci = self.container_mut(c);
                ci.select_variant(*t).map_err(|_| "variant".to_owned())?;
                ci.set_behavior_override(None);
            }
        }
        self.container_mut(c).clear_fault();
        self.sync_component(c);
        self.autostart(c);
        Ok(())
    }

    fn checkpoint(&mut self, stage: MoveStage) -> Step<()> {
        if self.fail_at == Some(stage) {
            self.fail_at = None;
            return Err(format!("injected failure after {stage:?}"));
        }
        Ok(())
    }

    /// Connector ends attached to `c`: (connector, role, port).
    fn attachments(&self, c: &ComponentId) -> Vec<(ConnectorId, EndpointRole, PortRef)> {
        let ci = self.container(c).expect("located");
        let ins = ci.in_bindings().filter_map(|(p, b)| b.clone().map(|k| (k, EndpointRole::Sink, PortRef::new(c.clone(), p.clone()))));
        let outs =
            ci.out_bindings().filter_map(|(p, b)| b.clone().map(|k| (k, EndpointRole::Source, PortRef::new(c.clone(), p.clone()))));
        ins.chain(outs).collect()
    }

    fn move_component(&mut self, c: &ComponentId, target: &HostId) -> Step<()> {
        let from = self.locate(c)?;
        let t = self.net.host(target).ok_or("unknown id")?;
        if !t.up {
            return Err("host down".into());
        }
        if &from == target {
            return Err("same host".into());
        }
        let tier = t.tier;
        let ci = self.container(c).expect("located");
        let desc = ci.descriptor().clone();
        if desc.variant_for(tier).is_none() {
            return Err("variant".into());
        }
        if self.platforms[&from].awaiting.contains(c) {
            return Err("busy".into());
        }
        let lifecycle = ci.lifecycle();
        let attached = self.attachments(c);
        let touching: BTreeSet<ConnectorId> = attached.iter().map(|a| a.0.clone()).collect();

        // 1. pause feeding and fed connectors
        let was_active: Vec<ConnectorId> =
            touching.iter().filter(|k| self.connectors[*k].state() == ControlState::Active).cloned().collect();
        for k in &touching {
            self.connectors.get_mut(k).expect("bound").pause().map_err(|e| e.to_string())?;
        }
        self.checkpoint(MoveStage::Paused)?;

        let forced = !self.net.is_up(&from) || matches!(lifecycle, Lifecycle::Connected | Lifecycle::Created);
        let mut residue: Vec<(ConnectorId, PortRef, Vec<FlowSample>)> = Vec::new();
        let mut replacement = ContainerInstance::new(desc, tier).map_err(|_| "variant".to_owned())?;
        for (k, role, port) in &attached {
            match role {
                EndpointRole::Source => replacement.bind_output(&port.port, Some(k.clone())),
                EndpointRole::Sink => replacement.bind_input(&port.port, Some(k.clone())),
            }
            .map_err(|e| e.to_string())?;
        }

        if forced {
            // Nothing can be collected from a departed host: redeploy fresh.
            replacement.transition(Lifecycle::Connected).map_err(|e| e.to_string())?;
            self.platforms.get_mut(&from).expect("located").containers.remove(c);
            self.platforms.get_mut(target).expect("net host").containers.insert(c.clone(), replacement);
        } else {
            // 2. stop and mark migrating
            if lifecycle == Lifecycle::Running {
                self.set_lifecycle(c, Lifecycle::Stopped)?;
            }
            self.set_lifecycle(c, Lifecycle::Migrating)?;

            // 3. drain samples still owed to this component
            for (k, role, port) in &attached {
                if *role == EndpointRole::Sink {
                    let kc = self.connectors.get_mut(k).expect("bound");
                    kc.begin_drain().map_err(|e| e.to_string())?;
                    let samples = kc.drain_sink(port).map_err(|e| e.to_string())?;
                    kc.end_drain().map_err(|e| e.to_string())?;
                    residue.push((k.clone(), port.clone(), samples));
                }
            }
            self.checkpoint(MoveStage::Drained)?;

            // 4-5. snapshot and ship it
            let snap = self.container(c).expect("located").snapshot().map_err(|e| e.to_string())?;
            let size = snap.size();
            let payload = format!("snapshot:{c}");
            let msg = NetMessage {
                src: from.clone(),
                dst: target.clone(),
                payload: payload.clone(),
                size,
                enqueued_at: self.now,
            };
            let (id, due) = self.mail.send(&self.net, msg).map_err(|_| "unreachable".to_owned())?;
            self.trace.push(
                &from,
                TraceKind::Net,
                format_args!("op=send msg={id} to={target} what={payload} size={size} due={due}"),
            );
            self.transfers.insert(
                id,
                Transfer { component: c.clone(), src: from.clone(), dst: target.clone(), size, attempts: 1 },
            );
            self.checkpoint(MoveStage::Sent)?;

            // 6. restore on the target with its own variant
            replacement.restore(&snap, tier).map_err(|_| "variant".to_owned())?;
            replacement.transition(Lifecycle::Connected).map_err(|e| e.to_string())?;
            self.platforms.get_mut(&from).expect("located").containers.remove(c);
            let tp = self.platforms.get_mut(target).expect("net host");
            tp.containers.insert(c.clone(), replacement);
            tp.awaiting.insert(c.clone());
            self.checkpoint(MoveStage::Restored)?;
        }
        self.sync_component(c);

        // 7. rebind connector ends
        for (k, role, port) in &attached {
            let rec = EndpointRecord { connector: k.clone(), role: *role, port: port.clone() };
            self.platforms.get_mut(&from).expect("located").endpoints.remove(&rec);
            self.platforms.get_mut(target).expect("net host").endpoints.insert(rec);
            let change = match role {
                EndpointRole::Source => EndpointChange::MoveSource { host: target.clone() },
                EndpointRole::Sink => EndpointChange::MoveSink { sink: port.clone(), host: target.clone() },
            };
            self.connectors.get_mut(k).expect("bound").rebind(change).map_err(|e| e.to_string())?;
        }
        for k in &touching {
            self.refresh_connector(k);
        }

        // 8. hand back the drained samples and resume
        for (k, port, samples) in residue {
            self.connectors.get_mut(&k).expect("bound").requeue(&port, samples, self.now).map_err(|e| e.to_string())?;
        }
        for k in &was_active {
            self.connectors.get_mut(k).expect("bound").resume().map_err(|e| e.to_string())?;
        }
        self.checkpoint(MoveStage::Resumed)?;
        self.autostart(c);
        Ok(())
    }
}

fn subject(cmd: &ReconfigurationCommand) -> Option<ComponentId> {
    use ReconfigurationCommand::*;
    match cmd {
        Add { descriptor, .. } => Some(descriptor.id.clone()),
        Remove { component } | Move { component, .. } | ReplaceBusiness { component, .. } => Some(component.clone()),
        Connect { source, .. } => Some(source.component.clone()),
        Disconnect { .. } => None,
    }
}
