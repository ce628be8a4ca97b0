//! Deterministic discrete-event substrate: hosts, links, messages, scripted
//! context events and the tick loop.
//!
//! One call to [`Simulation::step`] processes the pending tick in five
//! phases: due scripted events, due messages, battery drain, host platform
//! ticks, and the adaptation manager.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{AdaptationManager, AdaptationMode, CycleOutcome};
use crate::ids::{HostId, Tick};
use crate::kernel::{HostDescriptor, Kernel, Power};

/// Battery levels at or below this are empty.
pub const BATTERY_EPSILON: f64 = 1e-9;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub endpoints: (HostId, HostId),
    pub latency: Tick,
    pub bandwidth: f64,
    #[serde(default = "yes")]
    pub up: bool,
}

impl Link {
    /// Unordered pair key.
    pub fn key(&self) -> (HostId, HostId) {
        pair(&self.endpoints.0, &self.endpoints.1)
    }

    pub fn other(&self, h: &HostId) -> Option<&HostId> {
        if &self.endpoints.0 == h {
            Some(&self.endpoints.1)
        } else if &self.endpoints.1 == h {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

pub fn pair(a: &HostId, b: &HostId) -> (HostId, HostId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("unknown host {0}")]
    Address(HostId),
    #[error("no link between {0} and {1}")]
    NoLink(HostId, HostId),
    #[error("{0} is unreachable")]
    Unreachable(HostId),
}

/// Undirected adjacency over up hosts and up links.
pub type Graph = BTreeMap<HostId, BTreeSet<HostId>>;

/// Shortest path by hop count; among equally short paths, the
/// lexicographically smallest host sequence.
pub fn shortest_path(g: &Graph, src: &HostId, dst: &HostId) -> Option<Vec<HostId>> {
    if !g.contains_key(src) || !g.contains_key(dst) {
        return None;
    }
    // BFS from the destination, then a greedy walk from the source.
    let mut dist: BTreeMap<&HostId, usize> = BTreeMap::new();
    let mut frontier = vec![dst];
    dist.insert(dst, 0);
    let mut d = 0;
    while !frontier.is_empty() && !dist.contains_key(src) {
        d += 1;
        let mut next = Vec::new();
        for h in frontier {
            for n in &g[h] {
                if !dist.contains_key(n) {
                    dist.insert(n, d);
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    let mut at = src;
    let mut path = vec![src.clone()];
    let mut left = *dist.get(src)?;
    while left > 0 {
        left -= 1;
        at = g[at].iter().find(|n| dist.get(n) == Some(&left))?;
        path.push(at.clone());
    }
    Some(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    hosts: BTreeMap<HostId, HostDescriptor>,
    links: BTreeMap<(HostId, HostId), Link>,
}

impl Network {
    pub fn new(hosts: Vec<HostDescriptor>, links: Vec<Link>) -> Result<Self, NetError> {
        let mut hs = BTreeMap::new();
        for h in hosts {
            h.validate().map_err(NetError::Invalid)?;
            if hs.contains_key(&h.id) {
                return Err(NetError::Invalid(format!("duplicate host {}", h.id)));
            }
            hs.insert(h.id.clone(), h);
        }
        let mut ls = BTreeMap::new();
        for l in links {
            let (a, b) = &l.endpoints;
            for h in [a, b] {
                if !hs.contains_key(h) {
                    return Err(NetError::Invalid(format!("link endpoint {h} is not a host")));
                }
            }
            if a == b {
                return Err(NetError::Invalid(format!("self link on {a}")));
            }
            if l.bandwidth.is_nan() || l.bandwidth <= 0.0 {
                return Err(NetError::Invalid(format!("link {a}-{b}: bandwidth must be > 0")));
            }
            if ls.insert(l.key(), l.clone()).is_some() {
                return Err(NetError::Invalid(format!("duplicate link {a}-{b}")));
            }
        }
        Ok(Self { hosts: hs, links: ls })
    }

    pub fn host(&self, id: &HostId) -> Option<&HostDescriptor> {
        self.hosts.get(id)
    }

    pub fn host_mut(&mut self, id: &HostId) -> Option<&mut HostDescriptor> {
        self.hosts.get_mut(id)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &HostDescriptor> {
        self.hosts.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link(&self, a: &HostId, b: &HostId) -> Option<&Link> {
        self.links.get(&pair(a, b))
    }

    pub fn is_up(&self, h: &HostId) -> bool {
        self.hosts.get(h).is_some_and(|d| d.up)
    }

    pub fn set_host_up(&mut self, h: &HostId, up: bool) -> Result<(), NetError> {
        self.hosts.get_mut(h).ok_or_else(|| NetError::Address(h.clone()))?.up = up;
        Ok(())
    }

    pub fn set_link_up(&mut self, a: &HostId, b: &HostId, up: bool) -> Result<(), NetError> {
        self.links.get_mut(&pair(a, b)).ok_or_else(|| NetError::NoLink(a.clone(), b.clone()))?.up = up;
        Ok(())
    }

    pub fn graph(&self) -> Graph {
        let mut g: Graph = self.hosts.values().filter(|h| h.up).map(|h| (h.id.clone(), BTreeSet::new())).collect();
        for l in self.links.values().filter(|l| l.up) {
            let (a, b) = &l.endpoints;
            if g.contains_key(a) && g.contains_key(b) {
                g.get_mut(a).unwrap().insert(b.clone());
                g.get_mut(b).unwrap().insert(a.clone());
            }
        }
        g
    }

    /// Up neighbours over up links.
    pub fn neighbors(&self, h: &HostId) -> Vec<HostId> {
        self.graph().remove(h).map(|s| s.into_iter().collect()).unwrap_or_default()
    }

    pub fn shortest_path(&self, src: &HostId, dst: &HostId) -> Option<Vec<HostId>> {
        shortest_path(&self.graph(), src, dst)
    }

    pub fn path_latency(&self, path: &[HostId]) -> Tick {
        path.windows(2).filter_map(|w| self.link(&w[0], &w[1])).map(|l| l.latency).sum()
    }

    /// Per hop: latency plus ceil(size / bandwidth).
    pub fn transfer_time(&self, path: &[HostId], size: u64) -> Tick {
        path.windows(2)
            .filter_map(|w| self.link(&w[0], &w[1]))
            .map(|l| l.latency + (size as f64 / l.bandwidth).ceil() as Tick)
            .sum()
    }

    /// True while every host and link of `path` is up.
    pub fn path_intact(&self, path: &[HostId]) -> bool {
        path.iter().all(|h| self.is_up(h)) && path.windows(2).all(|w| self.link(&w[0], &w[1]).is_some_and(|l| l.up))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMessage {
    pub src: HostId,
    pub dst: HostId,
    pub payload: String,
    pub size: u64,
    pub enqueued_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InFlight {
    pub id: u64,
    pub msg: NetMessage,
    pub path: Vec<HostId>,
    pub due: Tick,
}

/// Messages in transit. Delivery is at most once and FIFO per
/// (source, destination) pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MessageQueue {
    next_id: u64,
    in_flight: Vec<InFlight>,
    last_due: BTreeMap<(HostId, HostId), Tick>,
}

impl MessageQueue {
    /// Enqueues `msg`, returning its id and delivery tick.
    pub fn send(&mut self, net: &Network, msg: NetMessage) -> Result<(u64, Tick), NetError> {
        for h in [&msg.src, &msg.dst] {
            if net.host(h).is_none() {
                return Err(NetError::Address(h.clone()));
            }
        }
        let path = net.shortest_path(&msg.src, &msg.dst).ok_or_else(|| NetError::Unreachable(msg.dst.clone()))?;
        let mut due = msg.enqueued_at + net.transfer_time(&path, msg.size.max(1));
        let key = (msg.src.clone(), msg.dst.clone());
        if let Some(prev) = self.last_due.get(&key) {
            due = due.max(*prev);
        }
        self.last_due.insert(key, due);
        let id = self.next_id;
        self.next_id += 1;
        self.in_flight.push(InFlight { id, msg, path, due });
        Ok((id, due))
    }

    pub fn len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    /// Removes and returns messages due by `now`, by (due, id).
    pub fn take_due(&mut self, now: Tick) -> Vec<InFlight> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.in_flight.drain(..).partition(|m| m.due <= now);
        self.in_flight = rest;
        due.sort_by_key(|m| (m.due, m.id));
        due
    }

    /// Removes and returns messages whose path lost a host or link.
    pub fn take_broken(&mut self, net: &Network) -> Vec<InFlight> {
        let (broken, rest): (Vec<_>, Vec<_>) = self.in_flight.drain(..).partition(|m| !net.path_intact(&m.path));
        self.in_flight = rest;
        broken
    }
}

/// A scripted change of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum SimEvent {
    LinkUp {
        at: Tick,
        endpoints: (HostId, HostId),
    },
    LinkDown {
        at: Tick,
        endpoints: (HostId, HostId),
    },
    HostJoin {
        at: Tick,
        host: HostId,
    },
    HostLeave {
        at: Tick,
        host: HostId,
    },
    /// Environment reading; `noise` scales a uniform draw in [-1, 1].
    SensorReading {
        at: Tick,
        host: HostId,
        key: String,
        value: f64,
        #[serde(default)]
        unit: String,
        #[serde(default)]
        noise: f64,
        #[serde(default = "full_confidence")]
        confidence: f64,
    },
    UserProfile {
        at: Tick,
        host: HostId,
        key: String,
        value: String,
    },
    BatterySet {
        at: Tick,
        host: HostId,
        level: f64,
    },
}

fn full_confidence() -> f64 {
    1.0
}

impl SimEvent {
    pub fn at(&self) -> Tick {
        match self {
            SimEvent::LinkUp { at, .. }
            | SimEvent::LinkDown { at, .. }
            | SimEvent::HostJoin { at, .. }
            | SimEvent::HostLeave { at, .. }
            | SimEvent::SensorReading { at, .. }
            | SimEvent::UserProfile { at, .. }
            | SimEvent::BatterySet { at, .. } => *at,
        }
    }

    /// Same-tick execution order.
    pub fn rank(&self) -> u8 {
        match self {
            SimEvent::LinkUp { .. } => 0,
            SimEvent::LinkDown { .. } => 1,
            SimEvent::HostJoin { .. } => 2,
            SimEvent::HostLeave { .. } => 3,
            SimEvent::SensorReading { .. } => 4,
            SimEvent::UserProfile { .. } => 5,
            SimEvent::BatterySet { .. } => 6,
        }
    }

    pub fn hosts(&self) -> Vec<&HostId> {
        match self {
            SimEvent::LinkUp { endpoints, .. } | SimEvent::LinkDown { endpoints, .. } => {
                vec![&endpoints.0, &endpoints.1]
            }
            SimEvent::HostJoin { host, .. }
            | SimEvent::HostLeave { host, .. }
            | SimEvent::SensorReading { host, .. }
            | SimEvent::UserProfile { host, .. }
            | SimEvent::BatterySet { host, .. } => vec![host],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("event at tick {at} is in the past (now {now})")]
    Past { at: Tick, now: Tick },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: Tick,
    pub lines: Vec<String>,
    pub cycle: Option<CycleOutcome>,
}

/// The world: kernel, adaptation manager, scripted events and the seeded
/// generator.
pub struct Simulation {
    now: Tick,
    kernel: Kernel,
    manager: AdaptationManager,
    pending: Vec<(Tick, u8, u64, SimEvent)>,
    next_seq: u64,
    rng: ChaCha8Rng,
}

impl Simulation {
    pub fn new(mut kernel: Kernel, mode: AdaptationMode, seed: u64) -> Self {
        kernel.set_mode(mode);
        Self {
            now: 0,
            kernel,
            manager: AdaptationManager::new(mode),
            pending: Vec::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The tick the next [`step`](Self::step) processes.
    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel {
        &mut self.kernel
    }

    pub fn manager(&self) -> &AdaptationManager {
        &self.manager
    }

    pub fn manager_mut(&mut self) -> &mut AdaptationManager {
        &mut self.manager
    }

    pub fn schedule(&mut self, e: SimEvent) -> Result<(), ScheduleError> {
        if e.at() < self.now {
            return Err(ScheduleError::Past { at: e.at(), now: self.now });
        }
        self.pending.push((e.at(), e.rank(), self.next_seq, e));
        self.next_seq += 1;
        Ok(())
    }

    pub fn step(&mut self) -> TickReport {
        let now = self.now;
        self.kernel.set_now(now);

        // (1) scripted events
        let mut due: Vec<_> = Vec::new();
        self.pending.retain(|p| {
            if p.0 <= now {
                due.push(p.clone());
                false
            } else {
                true
            }
        });
        due.sort_by_key(|p| (p.1, p.2));
        let mut topology = false;
        for (_, _, _, e) in due {
            topology |= self.fire(e);
        }
        if topology {
            self.kernel.topology_changed();
        }

        // (2) messages
        self.kernel.deliver_messages();

        // (3) batteries
        if now > 0 && self.drain_batteries() {
            self.kernel.topology_changed();
        }

        // (4) platforms
        self.kernel.host_ticks();

        // (5) adaptation
        let cycle = self.manager.tick(&mut self.kernel, now);

        let lines = self.kernel.flush_trace();
        self.now += 1;
        TickReport { tick: now, lines, cycle }
    }

    /// Applies one event; true if the topology changed.
    fn fire(&mut self, e: SimEvent) -> bool {
        let k = &mut self.kernel;
        match e {
            SimEvent::LinkUp { endpoints: (a, b), .. } => k.net_mut().set_link_up(&a, &b, true).is_ok(),
            SimEvent::LinkDown { endpoints: (a, b), .. } => k.net_mut().set_link_up(&a, &b, false).is_ok(),
            SimEvent::HostJoin { host, .. } => k.net_mut().set_host_up(&host, true).is_ok(),
            SimEvent::HostLeave { host, .. } => k.net_mut().set_host_up(&host, false).is_ok(),
            SimEvent::SensorReading { host, key, value, unit, noise, confidence, .. } => {
                let draw: f64 = self.rng.gen_range(-1.0..=1.0);
                k.sensor_reading(&host, &key, value + draw * noise, &unit, confidence);
                false
            }
            SimEvent::UserProfile { host, key, value, .. } => {
                k.user_profile(&host, &key, &value);
                false
            }
            SimEvent::BatterySet { host, level, .. } => {
                let level = level.clamp(0.0, 1.0);
                let Some(h) = k.net_mut().host_mut(&host) else { return false };
                if let Power::Battery { level: l, .. } = &mut h.power {
                    *l = level;
                }
                if level <= BATTERY_EPSILON && h.up {
                    h.up = false;
                    return true;
                }
                false
            }
        }
    }

    /// Drains every up battery host; empty ones leave. True if any left.
    fn drain_batteries(&mut self) -> bool {
        let mut left = false;
        let ids: Vec<HostId> = self.kernel.net().hosts().map(|h| h.id.clone()).collect();
        for id in ids {
            let h = self.kernel.net_mut().host_mut(&id).expect("listed host");
            if !h.up {
                continue;
            }
            if let Power::Battery { level, drain_per_tick } = &mut h.power {
                *level -= *drain_per_tick;
                if *level <= BATTERY_EPSILON {
                    *level = 0.0;
                    h.up = false;
                    left = true;
                }
            }
        }
        left
    }

    pub fn run(&mut self, ticks: Tick) -> Vec<TickReport> {
        (0..ticks).map(|_| self.step()).collect()
    }
}
