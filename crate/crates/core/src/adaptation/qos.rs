//! Observation of the running system and the QoS heuristic.
//!
//! ```text
//! r(c)   = min(1, cpu_avail/cpu_demand, mem_avail/mem_demand)   0 if its host is down
//! l(k)   = min over sinks, over traversed links, of min(1, bw_avail/bw_demand)
//!          1 when source and sink share a host, 0 when no route exists
//! b      = min battery level over battery hosts carrying components (1 if none)
//! global = w_r * mean(r) + w_l * mean(l) + w_b * b
//! ```
//!
//! `cpu_avail` is the host capacity minus the demand of the other
//! components placed there; `bw_avail` is the link bandwidth minus the
//! demand of the other connectors routed over it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ArchitectureModel;
use crate::container::Lifecycle;
use crate::context::{effective_confidence, ContextObject};
use crate::ids::{ComponentId, ConnectorId, HostId, Tick};
use crate::kernel::{HostTier, Kernel, QosWeights};
use crate::simnet::{pair, shortest_path, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostObservation {
    pub up: bool,
    pub tier: HostTier,
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub cpu_free: Option<f64>,
    pub mem_free: Option<f64>,
    pub battery: Option<f64>,
    /// Effective confidence of the battery reading at observation time.
    pub battery_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkObservation {
    pub endpoints: (HostId, HostId),
    pub up: bool,
    pub latency: Tick,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentObservation {
    pub alive: bool,
    pub faulted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorObservation {
    pub rate: Option<f64>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub at: Tick,
    pub hosts: BTreeMap<HostId, HostObservation>,
    pub links: Vec<LinkObservation>,
    pub components: BTreeMap<ComponentId, ComponentObservation>,
    pub connectors: BTreeMap<ConnectorId, ConnectorObservation>,
}

impl Observation {
    /// Adjacency over hosts and links observed up.
    pub fn graph(&self) -> Graph {
        let mut g: Graph =
            self.hosts.iter().filter(|(_, h)| h.up).map(|(id, _)| (id.clone(), BTreeSet::new())).collect();
        for l in self.links.iter().filter(|l| l.up) {
            let (a, b) = &l.endpoints;
            if g.contains_key(a) && g.contains_key(b) {
                g.get_mut(a).unwrap().insert(b.clone());
                g.get_mut(b).unwrap().insert(a.clone());
            }
        }
        g
    }

    pub fn link(&self, a: &HostId, b: &HostId) -> Option<&LinkObservation> {
        let key = pair(a, b);
        self.links.iter().find(|l| pair(&l.endpoints.0, &l.endpoints.1) == key)
    }
}

/// Last values seen for each host, used when it stops answering.
#[derive(Debug, Clone, Default)]
pub struct ObservationMemory {
    hosts: BTreeMap<HostId, (HostObservation, Option<ContextObject>)>,
}

fn latest_number(k: &Kernel, h: &HostId, key: &str) -> Option<(f64, ContextObject)> {
    let obj = k.platform(h)?.store().latest(key)?.clone();
    obj.info().value.as_number().map(|v| (v, obj))
}

/// Collects the state of every host reachable from the coordinator.
/// Unreachable hosts are reported down with their last known values, the
/// battery confidence aged to `now`.
pub fn observe(k: &Kernel, now: Tick, memory: &mut ObservationMemory) -> Observation {
    let coord = k.coordinator();
    let mut hosts = BTreeMap::new();
    for d in k.net().hosts() {
        let reachable = d.up && coord.as_ref().is_some_and(|c| k.route(c, &d.id).is_ok());
        let half_life = k.platform(&d.id).map_or(crate::context::DEFAULT_HALF_LIFE, |p| p.store().config().default_half_life);
        let obs = if reachable {
            let battery = latest_number(k, &d.id, "battery.level");
            let o = HostObservation {
                up: true,
                tier: d.tier,
                cpu_capacity: d.cpu_capacity,
                mem_capacity: d.mem_capacity,
                cpu_free: latest_number(k, &d.id, "cpu.free").map(|x| x.0),
                mem_free: latest_number(k, &d.id, "mem.free").map(|x| x.0),
                battery: battery.as_ref().map(|b| b.0),
                battery_confidence: battery.as_ref().and_then(|b| effective_confidence(&b.1, now, half_life).ok()),
            };
            memory.hosts.insert(d.id.clone(), (o.clone(), battery.map(|b| b.1)));
            o
        } else {
            match memory.hosts.get(&d.id) {
                Some((last, obj)) => HostObservation {
                    up: false,
                    battery_confidence: obj.as_ref().and_then(|o| effective_confidence(o, now, half_life).ok()),
                    ..last.clone()
                },
                None => HostObservation {
                    up: false,
                    tier: d.tier,
                    cpu_capacity: d.cpu_capacity,
                    mem_capacity: d.mem_capacity,
                    cpu_free: None,
                    mem_free: None,
                    battery: None,
                    battery_confidence: None,
                },
            }
        };
        hosts.insert(d.id.clone(), obs);
    }
    let links = k
        .net()
        .links()
        .map(|l| LinkObservation { endpoints: l.endpoints.clone(), up: l.up, latency: l.latency, bandwidth: l.bandwidth })
        .collect();
    let mut components = BTreeMap::new();
    for p in k.platforms() {
        let up = hosts.get(p.host()).is_some_and(|h| h.up);
        for (id, c) in p.containers() {
            components.insert(
                id.clone(),
                ComponentObservation { alive: up && c.lifecycle() == Lifecycle::Running, faulted: c.is_faulted() },
            );
        }
    }
    let connectors = k
        .connectors()
        .map(|c| {
            let rate = k
                .platform(&c.source().host)
                .and_then(|p| p.store().history("flow.rate").filter(|o| o.info().producer == c.id().as_str()).last())
                .and_then(|o| o.info().value.as_number());
            (c.id().clone(), ConnectorObservation { rate, depth: c.depth() })
        })
        .collect();
    Observation { at: now, hosts, links, components, connectors }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoSReport {
    pub at: Tick,
    pub r: BTreeMap<ComponentId, f64>,
    pub l: BTreeMap<ConnectorId, f64>,
    pub b: f64,
    pub global: f64,
    /// A component sits on a down host or a connector has no route.
    pub hard_violation: bool,
}

impl fmt::Display for QoSReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list<K: fmt::Display>(m: &BTreeMap<K, f64>) -> String {
            if m.is_empty() {
                return "-".into();
            }
            m.iter().map(|(k, v)| format!("{k}:{v:.4}")).collect::<Vec<_>>().join(",")
        }
        write!(f, "global={:.4} r={} l={} b={:.4}", self.global, list(&self.r), list(&self.l), self.b)
    }
}

type LinkKey = (HostId, HostId);

fn ratio(avail: f64, demand: f64) -> f64 {
    if demand <= 0.0 {
        1.0
    } else {
        (avail / demand).clamp(0.0, 1.0)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        1.0
    } else {
        s / n as f64
    }
}

pub fn evaluate_qos(model: &ArchitectureModel, obs: &Observation, w: &QosWeights) -> QoSReport {
    let up = |h: &HostId| obs.hosts.get(h).is_some_and(|o| o.up);

    let mut load: BTreeMap<&HostId, (f64, f64)> = BTreeMap::new();
    for c in model.components.values() {
        let (cpu, mem) = c.demand();
        let e = load.entry(&c.host).or_default();
        e.0 += cpu;
        e.1 += mem;
    }
    let r: BTreeMap<ComponentId, f64> = model
        .components
        .iter()
        .map(|(id, c)| {
            let score = match obs.hosts.get(&c.host) {
                Some(h) if h.up => {
                    let (cpu, mem) = c.demand();
                    let (lc, lm) = load[&c.host];
                    ratio(h.cpu_capacity - (lc - cpu), cpu).min(ratio(h.mem_capacity - (lm - mem), mem))
                }
                _ => 0.0,
            };
            (id.clone(), score)
        })
        .collect();

    let g = obs.graph();
    // Per connector: per sink, None (no route), Some(empty) (local) or the links crossed.
    let mut routes: BTreeMap<&ConnectorId, Vec<Option<Vec<LinkKey>>>> = BTreeMap::new();
    let mut usage: BTreeMap<(HostId, HostId), f64> = BTreeMap::new();
    for (id, k) in &model.connectors {
        let mut per_sink = Vec::new();
        let mut crossed: BTreeSet<(HostId, HostId)> = BTreeSet::new();
        for s in &k.sinks {
            if s.host == k.source.host {
                per_sink.push(Some(Vec::new()));
                continue;
            }
            let links = shortest_path(&g, &k.source.host, &s.host)
                .map(|p| p.windows(2).map(|w| pair(&w[0], &w[1])).collect::<Vec<_>>());
            if let Some(ls) = &links {
                crossed.extend(ls.iter().cloned());
            }
            per_sink.push(links);
        }
        for l in crossed {
            *usage.entry(l).or_default() += k.policy.bw_demand;
        }
        routes.insert(id, per_sink);
    }
    let l: BTreeMap<ConnectorId, f64> = model
        .connectors
        .iter()
        .map(|(id, k)| {
            let demand = k.policy.bw_demand;
            let score = routes[id]
                .iter()
                .map(|sink| match sink {
                    None => 0.0,
                    Some(links) => links
                        .iter()
                        .map(|key| {
                            let bw = obs.link(&key.0, &key.1).map_or(0.0, |o| o.bandwidth);
                            ratio(bw - (usage[key] - demand), demand)
                        })
                        .fold(1.0, f64::min),
                })
                .fold(1.0, f64::min);
            (id.clone(), score)
        })
        .collect();

    let used: BTreeSet<&HostId> = model.components.values().map(|c| &c.host).collect();
    let b = used.iter().filter_map(|h| obs.hosts.get(*h).and_then(|o| o.battery)).fold(1.0, f64::min).clamp(0.0, 1.0);

    let no_route = routes.values().flatten().any(Option::is_none);
    let hard_violation = no_route || model.components.values().any(|c| !up(&c.host));
    let global = if model.components.is_empty() {
        1.0
    } else {
        (w.resource * mean(r.values().copied()) + w.link * mean(l.values().copied()) + w.battery * b).clamp(0.0, 1.0)
    };
    QoSReport { at: obs.at, r, l, b, global, hard_violation }
}
