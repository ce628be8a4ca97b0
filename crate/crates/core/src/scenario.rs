//! Scenario descriptors, validation and runs.
//!
//! Three JSON documents describe a run: the application (components and
//! connectors), the network (hosts and links) and the script (timed world
//! events, duration, seed). Unknown fields are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{evaluate_qos, observe, AdaptationMode, ObservationMemory};
use crate::connector::{FlowMode, FlowPolicy, LossPolicy, PortRef, SyncPolicy};
use crate::container::ComponentDescriptor;
use crate::ids::{ConnectorId, HostId, Tick};
use crate::kernel::{CommandResult, HostDescriptor, Kernel, KernelOptions, Origin, ReconfigurationCommand};
use crate::simnet::{Link, Network, SimEvent, Simulation};

fn default_bw() -> f64 {
    1.0
}

fn default_mode() -> FlowMode {
    FlowMode::Push
}

fn default_sync() -> SyncPolicy {
    SyncPolicy::Synchronized
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorDescriptor {
    pub id: ConnectorId,
    /// `component.port`
    pub from: String,
    pub to: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: FlowMode,
    #[serde(default = "default_sync")]
    pub sync: SyncPolicy,
    #[serde(default)]
    pub loss: LossPolicy,
    #[serde(default = "default_bw")]
    pub bw_demand: f64,
}

impl ConnectorDescriptor {
    pub fn policy(&self) -> FlowPolicy {
        FlowPolicy { mode: self.mode, sync: self.sync, loss: self.loss, bw_demand: self.bw_demand }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDescriptor {
    pub components: Vec<ComponentDescriptor>,
    #[serde(default)]
    pub connectors: Vec<ConnectorDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDescriptor {
    pub hosts: Vec<HostDescriptor>,
    #[serde(default)]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    #[serde(default)]
    pub events: Vec<SimEvent>,
    pub duration: Tick,
    #[serde(default)]
    pub seed: u64,
}

/// One validation finding, located by a JSON-pointer-like path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{file}:{line}:{column}: {message}")]
    Parse { file: String, line: usize, column: usize, message: String },
    #[error("{} validation error(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("runtime: {0}")]
    Runtime(String),
}

impl ScenarioError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse { .. } | ScenarioError::Invalid(_) => 1,
            ScenarioError::Io { .. } | ScenarioError::Runtime(_) => 2,
        }
    }
}

pub fn parse_str<T: DeserializeOwned>(name: &str, text: &str) -> Result<T, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        file: name.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })?;
    parse_str(&path.display().to_string(), &text)
}

fn check_port(
    out: &mut Vec<Diagnostic>,
    comps: &BTreeMap<&str, &ComponentDescriptor>,
    path: String,
    s: &str,
    output: bool,
) {
    let Some(p) = PortRef::parse(s) else {
        out.push(Diagnostic::new(path, format!("`{s}` is not component.port")));
        return;
    };
    let Some(c) = comps.get(p.component.as_str()) else {
        out.push(Diagnostic::new(path, format!("unknown component `{}`", p.component)));
        return;
    };
    let ports = if output { &c.out_ports } else { &c.in_ports };
    if !ports.contains(&p.port) {
        let dir = if output { "output" } else { "input" };
        out.push(Diagnostic::new(path, format!("missing {dir} port `{s}`")));
    }
}

/// Checks descriptor invariants. Empty iff the application can be deployed.
pub fn validate(app: &AppDescriptor, net: &NetDescriptor) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut hosts = BTreeMap::new();
    for (i, h) in net.hosts.iter().enumerate() {
        if let Err(e) = h.validate() {
            out.push(Diagnostic::new(format!("net.hosts[{i}]"), e));
        }
        if hosts.insert(h.id.as_str(), h).is_some() {
            out.push(Diagnostic::new(format!("net.hosts[{i}]"), format!("duplicate host `{}`", h.id)));
        }
    }
    for (i, l) in net.links.iter().enumerate() {
        for e in [&l.endpoints.0, &l.endpoints.1] {
            if !hosts.contains_key(e.as_str()) {
                out.push(Diagnostic::new(format!("net.links[{i}]"), format!("unknown host `{e}`")));
            }
        }
    }
    if let Err(e) = Network::new(net.hosts.clone(), net.links.clone()) {
        if out.is_empty() {
            out.push(Diagnostic::new("net", e.to_string()));
        }
    }

    let catalog = crate::behavior::BehaviorCatalog::standard();
    let mut comps = BTreeMap::new();
    for (i, c) in app.components.iter().enumerate() {
        let path = format!("app.components[{i}]");
        if let Err(e) = c.validate() {
            out.push(Diagnostic::new(&path, e));
        }
        if comps.insert(c.id.as_str(), c).is_some() {
            out.push(Diagnostic::new(&path, format!("duplicate component `{}`", c.id)));
        }
        for v in &c.variants {
            if catalog.resolve(&v.behavior).is_err() {
                out.push(Diagnostic::new(&path, format!("unknown behavior `{}`", v.behavior)));
            }
        }
        match hosts.get(c.initial_host.as_str()) {
            None => out.push(Diagnostic::new(&path, format!("unknown initial host `{}`", c.initial_host))),
            Some(h) => {
                if c.variant_for(h.tier).is_none() {
                    out.push(Diagnostic::new(
                        &path,
                        format!("no variant of `{}` runs on {:?} host `{}`", c.id, h.tier, h.id),
                    ));
                }
                if !h.up {
                    out.push(Diagnostic::new(&path, format!("initial host `{}` is down", h.id)));
                }
            }
        }
    }

    let mut ids = BTreeSet::new();
    let mut bound = BTreeSet::new();
    for (i, k) in app.connectors.iter().enumerate() {
        let path = format!("app.connectors[{i}]");
        if !ids.insert(&k.id) {
            out.push(Diagnostic::new(&path, format!("duplicate connector `{}`", k.id)));
        }
        if let Err(e) = k.policy().validate() {
            out.push(Diagnostic::new(&path, e));
        }
        if k.to.is_empty() {
            out.push(Diagnostic::new(&path, "no sink"));
        }
        check_port(&mut out, &comps, format!("{path}.from"), &k.from, true);
        for (j, s) in k.to.iter().enumerate() {
            check_port(&mut out, &comps, format!("{path}.to[{j}]"), s, false);
        }
        for (j, s) in std::iter::once(&k.from).chain(&k.to).enumerate() {
            if !bound.insert(s.as_str()) {
                out.push(Diagnostic::new(format!("{path}[{j}]"), format!("port `{s}` bound twice")));
            }
        }
    }

    if out.is_empty() {
        match deploy(app, net, KernelOptions::default()) {
            Ok(mut k) => {
                let obs = observe(&k, 0, &mut ObservationMemory::default());
                let q = evaluate_qos(k.model(), &obs, &Default::default());
                if q.global.is_nan() || q.global < 0.0 {
                    out.push(Diagnostic::new("app", format!("initial qos {} not computable", q.global)));
                }
                k.flush_trace();
            }
            Err(ScenarioError::Invalid(d)) => out.extend(d),
            Err(e) => out.push(Diagnostic::new("app", e.to_string())),
        }
    }
    out
}

/// Event ticks must fall inside the run.
pub fn validate_script(script: &ScenarioScript, net: &NetDescriptor) -> Vec<Diagnostic> {
    let hosts: BTreeSet<&HostId> = net.hosts.iter().map(|h| &h.id).collect();
    let mut out = Vec::new();
    for (i, e) in script.events.iter().enumerate() {
        let path = format!("scenario.events[{i}]");
        if e.at() > script.duration {
            out.push(Diagnostic::new(&path, format!("tick {} after duration {}", e.at(), script.duration)));
        }
        for h in e.hosts() {
            if !hosts.contains(h) {
                out.push(Diagnostic::new(&path, format!("unknown host `{h}`")));
            }
        }
    }
    out
}

/// A kernel with the application deployed at tick 0.
pub fn deploy(app: &AppDescriptor, net: &NetDescriptor, options: KernelOptions) -> Result<Kernel, ScenarioError> {
    let network = Network::new(net.hosts.clone(), net.links.clone())
        .map_err(|e| ScenarioError::Invalid(vec![Diagnostic::new("net", e.to_string())]))?;
    let mut k = Kernel::new(network, options)
        .map_err(|e| ScenarioError::Invalid(vec![Diagnostic::new("config", e.to_string())]))?;
    let mut cmds = Vec::new();
    for c in &app.components {
        cmds.push(ReconfigurationCommand::Add { descriptor: c.clone(), host: c.initial_host.clone() });
    }
    for c in &app.connectors {
        let port = |s: &str| {
            PortRef::parse(s)
                .ok_or_else(|| ScenarioError::Invalid(vec![Diagnostic::new("app", format!("bad port `{s}`"))]))
        };
        cmds.push(ReconfigurationCommand::Connect {
            connector: c.id.clone(),
            source: port(&c.from)?,
            sinks: c.to.iter().map(|s| port(s)).collect::<Result<_, _>>()?,
            policy: c.policy(),
        });
    }
    for cmd in cmds {
        let shown = cmd.to_string();
        if let CommandResult::Aborted(reason) = k.apply(cmd, Origin::Deploy) {
            return Err(ScenarioError::Invalid(vec![Diagnostic::new("app", format!("{shown} aborted: {reason}"))]));
        }
    }
    Ok(k)
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<String>,
    /// Persisted context per host, in append order.
    pub persisted: BTreeMap<HostId, Vec<String>>,
    pub infeasible: bool,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        if self.infeasible {
            2
        } else {
            0
        }
    }

    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for l in &self.trace {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Builds the simulation for a script without running it.
pub fn simulation(
    app: &AppDescriptor,
    net: &NetDescriptor,
    script: &ScenarioScript,
    mode: AdaptationMode,
    seed: u64,
) -> Result<Simulation, ScenarioError> {
    let mut diags = validate(app, net);
    diags.extend(validate_script(script, net));
    if !diags.is_empty() {
        return Err(ScenarioError::Invalid(diags));
    }
    let k = deploy(app, net, KernelOptions::default())?;
    let mut sim = Simulation::new(k, mode, seed);
    for e in &script.events {
        sim.schedule(e.clone()).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
    }
    Ok(sim)
}

/// Simulates `script.duration` ticks.
pub fn run(
    app: &AppDescriptor,
    net: &NetDescriptor,
    script: &ScenarioScript,
    mode: AdaptationMode,
    seed: u64,
) -> Result<RunOutput, ScenarioError> {
    let mut sim = simulation(app, net, script, mode, seed)?;
    let trace = sim.run(script.duration).into_iter().flat_map(|r| r.lines).collect();
    let persisted = sim
        .kernel()
        .platforms()
        .filter(|p| !p.export_log().is_empty())
        .map(|p| (p.host().clone(), p.export_log().to_vec()))
        .collect();
    Ok(RunOutput { trace, persisted, infeasible: sim.manager().infeasible_outstanding() })
}

/// Writes the trace and one `persist-<host>.log` per persisting host next to it.
pub fn write_output(out: &RunOutput, trace_path: &Path) -> Result<(), ScenarioError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ScenarioError::Io { path, source }
    };
    fs::write(trace_path, out.trace_text()).map_err(io(trace_path))?;
    let dir = trace_path.parent().unwrap_or(Path::new("."));
    for (host, lines) in &out.persisted {
        let p = dir.join(format!("persist-{host}.log"));
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(&p, text).map_err(io(&p))?;
    }
    Ok(())
}
