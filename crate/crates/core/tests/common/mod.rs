//! Fixtures and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use ctxadapt_core::adaptation::{ModelComponent, ModelConnector};
use ctxadapt_core::connector::FlowPolicy;
use ctxadapt_core::kernel::{HostDescriptor, HostTier, Kernel, KernelOptions, Power};
use ctxadapt_core::scenario::{self, AppDescriptor, NetDescriptor, ScenarioScript};
use ctxadapt_core::simnet::{Link, Network};
use ctxadapt_core::{ComponentDescriptor, ComponentId, ConnectorId, HostId, Variant};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn host(id: &str, tier: HostTier, cap: f64) -> HostDescriptor {
    HostDescriptor {
        id: id.into(),
        tier,
        cpu_capacity: cap,
        mem_capacity: cap,
        power: Power::Mains,
        location: (0.0, 0.0),
        up: true,
    }
}

pub fn link(a: &str, b: &str, latency: u64, bandwidth: f64) -> Link {
    Link { endpoints: (a.into(), b.into()), latency, bandwidth, up: true }
}

pub fn variant(tier: HostTier, demand: f64, behavior: &str) -> Variant {
    Variant { tier, cpu_demand: demand, mem_demand: demand, behavior: behavior.into() }
}

pub fn component(id: &str, ins: &[&str], outs: &[&str], variants: Vec<Variant>, host: &str) -> ComponentDescriptor {
    ComponentDescriptor {
        id: id.into(),
        in_ports: ins.iter().map(|s| s.to_string()).collect(),
        out_ports: outs.iter().map(|s| s.to_string()).collect(),
        variants,
        listener: true,
        initial_host: host.into(),
    }
}

pub fn kernel(hosts: Vec<HostDescriptor>, links: Vec<Link>) -> Kernel {
    Kernel::new(Network::new(hosts, links).unwrap(), KernelOptions::default()).unwrap()
}

pub fn reference_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference")
}

pub fn reference() -> (AppDescriptor, NetDescriptor, ScenarioScript) {
    let d = reference_dir();
    (
        scenario::load(&d.join("app.json")).unwrap(),
        scenario::load(&d.join("net.json")).unwrap(),
        scenario::load(&d.join("scenario.json")).unwrap(),
    )
}

/// Every shortest path from `src` to `dst` over `adj`, by exhaustive
/// layered search; the smallest in lexicographic order.
pub fn oracle_path(adj: &BTreeMap<HostId, BTreeSet<HostId>>, src: &HostId, dst: &HostId) -> Option<Vec<HostId>> {
    if !adj.contains_key(src) || !adj.contains_key(dst) {
        return None;
    }
    let mut dist: BTreeMap<&HostId, usize> = BTreeMap::new();
    let mut q = VecDeque::from([src]);
    dist.insert(src, 0);
    while let Some(h) = q.pop_front() {
        for n in &adj[h] {
            if !dist.contains_key(n) {
                dist.insert(n, dist[h] + 1);
                q.push_back(n);
            }
        }
    }
    let target = *dist.get(dst)?;
    let mut all = Vec::new();
    let mut stack = vec![vec![src.clone()]];
    while let Some(path) = stack.pop() {
        let last = path.last().unwrap();
        if path.len() - 1 == target {
            if last == dst {
                all.push(path);
            }
            continue;
        }
        for n in &adj[last] {
            if dist.get(n) == Some(&path.len()) {
                let mut p = path.clone();
                p.push(n.clone());
                stack.push(p);
            }
        }
    }
    all.into_iter().min()
}

/// Adjacency of the up part of a network.
pub fn up_graph(net: &Network) -> BTreeMap<HostId, BTreeSet<HostId>> {
    let mut g: BTreeMap<HostId, BTreeSet<HostId>> =
        net.hosts().filter(|h| h.up).map(|h| (h.id.clone(), BTreeSet::new())).collect();
    for l in net.links().filter(|l| l.up) {
        let (a, b) = &l.endpoints;
        if g.contains_key(a) && g.contains_key(b) {
            g.get_mut(a).unwrap().insert(b.clone());
            g.get_mut(b).unwrap().insert(a.clone());
        }
    }
    g
}

/// The architecture as found by walking every platform's registry and
/// every connector instance.
pub fn reconstruct(k: &Kernel) -> (BTreeMap<ComponentId, ModelComponent>, BTreeMap<ConnectorId, ModelConnector>) {
    let mut comps = BTreeMap::new();
    for p in k.platforms() {
        for (id, c) in p.containers() {
            comps.insert(
                id.clone(),
                ModelComponent {
                    host: p.host().clone(),
                    tier: c.active_tier(),
                    lifecycle: c.lifecycle(),
                    variants: c.descriptor().variants.clone(),
                },
            );
        }
    }
    let g = up_graph(k.net());
    let mut conns = BTreeMap::new();
    for c in k.connectors() {
        let mut sinks: Vec<_> = c.sinks().cloned().collect();
        sinks.sort();
        let src = &c.source().host;
        let mut hosts: BTreeSet<HostId> = [src.clone()].into();
        for s in &sinks {
            hosts.insert(s.host.clone());
            if let Some(p) = oracle_path(&g, src, &s.host) {
                hosts.extend(p);
            }
        }
        conns.insert(
            c.id().clone(),
            ModelConnector { source: c.source().clone(), sinks, policy: c.policy().clone(), hosts },
        );
    }
    (comps, conns)
}

const TIERS: [HostTier; 3] = [HostTier::LightMin, HostTier::LightStd, HostTier::Full];

/// Up to `max_hosts` hosts, at least one Full, on a random connected graph.
pub fn random_net(rng: &mut ChaCha8Rng, max_hosts: usize) -> (Vec<HostDescriptor>, Vec<Link>) {
    let n = rng.gen_range(1..=max_hosts);
    let mut hosts: Vec<HostDescriptor> = (0..n)
        .map(|i| host(&format!("h{i}"), TIERS[rng.gen_range(0..3)], rng.gen_range(1..=8) as f64))
        .collect();
    let full = rng.gen_range(0..n);
    hosts[full].tier = HostTier::Full;
    let mut links = Vec::new();
    let mut seen = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        seen.insert((j, i));
        links.push(link(&format!("h{j}"), &format!("h{i}"), rng.gen_range(1..=3), rng.gen_range(1..=6) as f64));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && seen.insert((a, b)) {
            links.push(link(&format!("h{a}"), &format!("h{b}"), rng.gen_range(1..=3), rng.gen_range(1..=6) as f64));
        }
    }
    (hosts, links)
}

/// A component with one input and one output port and 1..=3 variants.
pub fn random_component(rng: &mut ChaCha8Rng, id: &str, host: &str) -> ComponentDescriptor {
    let mut tiers = TIERS.to_vec();
    tiers.shuffle(rng);
    tiers.truncate(rng.gen_range(1..=3));
    let behaviors = ["identity", "counter", "adaptive", "sink", "source"];
    let variants = tiers
        .into_iter()
        .map(|t| variant(t, rng.gen_range(0..=4) as f64 * 0.5, behaviors[rng.gen_range(0..behaviors.len())]))
        .collect();
    component(id, &["in"], &["out"], variants, host)
}

pub fn default_policy() -> FlowPolicy {
    FlowPolicy::default()
}

/// A command over the current world; roughly a third are expected to fail.
pub fn random_command(rng: &mut ChaCha8Rng, k: &Kernel, fresh: &mut usize) -> ctxadapt_core::ReconfigurationCommand {
    use ctxadapt_core::kernel::ReplaceTarget;
    use ctxadapt_core::{PortRef, ReconfigurationCommand as C};
    let hosts: Vec<HostId> = k.net().hosts().map(|h| h.id.clone()).collect();
    let comps: Vec<ComponentId> = k.model().components.keys().cloned().collect();
    let conns: Vec<ConnectorId> = k.model().connectors.keys().cloned().collect();
    let any_host = |rng: &mut ChaCha8Rng| hosts[rng.gen_range(0..hosts.len())].clone();
    let any_comp = |rng: &mut ChaCha8Rng| -> ComponentId {
        if comps.is_empty() || rng.gen_bool(0.1) {
            "ghost".into()
        } else {
            comps[rng.gen_range(0..comps.len())].clone()
        }
    };
    match rng.gen_range(0..10) {
        0..=2 if comps.len() < 8 => {
            *fresh += 1;
            let h = any_host(rng);
            let d = random_component(rng, &format!("c{fresh}"), h.as_str());
            C::Add { descriptor: d, host: h }
        }
        3 => C::Remove { component: any_comp(rng) },
        4 | 5 => C::Move { component: any_comp(rng), target: any_host(rng) },
        6 | 7 => {
            *fresh += 1;
            let n = rng.gen_range(1..=2);
            C::Connect {
                connector: format!("k{fresh}").into(),
                source: PortRef::new(any_comp(rng), "out"),
                sinks: (0..n).map(|_| PortRef::new(any_comp(rng), "in")).collect(),
                policy: default_policy(),
            }
        }
        8 if !conns.is_empty() => C::Disconnect { connector: conns[rng.gen_range(0..conns.len())].clone() },
        _ => {
            let target = if rng.gen_bool(0.5) {
                ReplaceTarget::Behavior(["identity", "counter", "nope"][rng.gen_range(0..3)].into())
            } else {
                ReplaceTarget::Variant(TIERS[rng.gen_range(0..3)])
            };
            C::ReplaceBusiness { component: any_comp(rng), target }
        }
    }
}

/// Advances the world by one tick without an adaptation manager, possibly
/// taking a host down or bringing one back.
pub fn random_tick(rng: &mut ChaCha8Rng, k: &mut Kernel) {
    let now = k.now() + 1;
    k.set_now(now);
    if rng.gen_bool(0.15) {
        let hosts: Vec<(HostId, bool)> = k.net().hosts().map(|h| (h.id.clone(), h.up)).collect();
        let (h, up) = hosts[rng.gen_range(0..hosts.len())].clone();
        k.net_mut().set_host_up(&h, !up).unwrap();
        k.topology_changed();
    }
    k.deliver_messages();
    k.host_ticks();
    k.flush_trace();
}

/// Components a relocation may touch: on a down host, starved of
/// resources, or attached to a starved connector.
pub fn oracle_affected(
    model: &ctxadapt_core::ArchitectureModel,
    obs: &ctxadapt_core::adaptation::Observation,
    report: &ctxadapt_core::QoSReport,
) -> Vec<ComponentId> {
    let mut out = BTreeSet::new();
    for (id, c) in &model.components {
        if !obs.hosts[&c.host].up || report.r[id] < 0.5 {
            out.insert(id.clone());
        }
    }
    for (id, k) in &model.connectors {
        if report.l[id] < 0.5 {
            out.insert(k.source.port.component.clone());
            for s in &k.sinks {
                out.insert(s.port.component.clone());
            }
        }
    }
    out.into_iter().collect()
}

/// Best global QoS over every placement of the affected components, by
/// plain enumeration. `None` if some affected component cannot be placed.
pub fn oracle_best(
    model: &ctxadapt_core::ArchitectureModel,
    obs: &ctxadapt_core::adaptation::Observation,
    w: &ctxadapt_core::kernel::QosWeights,
) -> Option<f64> {
    use ctxadapt_core::adaptation::evaluate_qos;
    let report = evaluate_qos(model, obs, w);
    let affected = oracle_affected(model, obs, &report);
    let options: Vec<Vec<(HostId, HostTier)>> = affected
        .iter()
        .map(|c| {
            let mc = &model.components[c];
            obs.hosts
                .iter()
                .filter(|(_, h)| h.up)
                .filter_map(|(id, h)| {
                    mc.variants.iter().filter(|v| v.tier <= h.tier).map(|v| v.tier).max().map(|t| (id.clone(), t))
                })
                .collect()
        })
        .collect();
    if options.iter().any(Vec::is_empty) {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; affected.len()];
    loop {
        let mut m = model.clone();
        for (i, c) in affected.iter().enumerate() {
            let (h, t) = &options[i][idx[i]];
            let mc = m.components.get_mut(c).unwrap();
            if &mc.host != h {
                mc.host = h.clone();
                mc.tier = *t;
            }
        }
        for k in m.connectors.values_mut() {
            k.source.host = m.components[&k.source.port.component].host.clone();
            for s in &mut k.sinks {
                s.host = m.components[&s.port.component].host.clone();
            }
        }
        best = best.max(evaluate_qos(&m, obs, w).global);
        let mut i = 0;
        loop {
            if i == idx.len() {
                return Some(best);
            }
            idx[i] += 1;
            if idx[i] < options[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// A deployed random world with some hosts down, for placement checks.
pub fn random_placement_world(rng: &mut ChaCha8Rng, max_hosts: usize, max_comps: usize) -> Kernel {
    use ctxadapt_core::{Origin, PortRef, ReconfigurationCommand as C};
    let (hosts, links) = random_net(rng, max_hosts);
    let ids: Vec<HostId> = hosts.iter().map(|h| h.id.clone()).collect();
    let mut k = kernel(hosts, links);
    let n = rng.gen_range(1..=max_comps);
    let mut placed = Vec::new();
    for i in 0..n {
        let h = ids[rng.gen_range(0..ids.len())].clone();
        let mut d = random_component(rng, &format!("c{i}"), h.as_str());
        for v in &mut d.variants {
            v.behavior = "identity".into();
        }
        if k.apply(C::Add { descriptor: d, host: h }, Origin::Deploy) == ctxadapt_core::CommandResult::Applied {
            placed.push(format!("c{i}"));
        }
    }
    for i in 1..placed.len() {
        if rng.gen_bool(0.6) {
            let mut policy = default_policy();
            policy.bw_demand = rng.gen_range(0..=4) as f64;
            k.apply(
                C::Connect {
                    connector: format!("k{i}").into(),
                    source: PortRef::new(placed[i - 1].as_str(), "out"),
                    sinks: vec![PortRef::new(placed[i].as_str(), "in")],
                    policy,
                },
                Origin::Deploy,
            );
        }
    }
    let keep = rng.gen_range(0..ids.len());
    for (i, h) in ids.iter().enumerate() {
        if i != keep && rng.gen_bool(0.3) {
            k.net_mut().set_host_up(h, false).unwrap();
        }
    }
    k.topology_changed();
    k.flush_trace();
    k
}
