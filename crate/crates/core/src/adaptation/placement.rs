//! Deployment selection.
//!
//! Only affected components move: those on down hosts, those with r < 0.5,
//! and the endpoints of connectors with l < 0.5. Each may go to any observed
//! up host that can run one of its variants. Small search spaces are
//! enumerated; larger ones use best-single-move hill climbing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate_qos, ArchitectureModel, Observation, QoSReport};
use crate::ids::{ComponentId, HostId};
use crate::kernel::{QosWeights, ReconfigurationCommand};

/// Largest search space enumerated exhaustively.
pub const EXHAUSTIVE_LIMIT: u64 = 10_000;
/// Scores closer than this are equal.
pub const SCORE_EPSILON: f64 = 1e-12;
/// Components scoring below this are candidates for relocation.
pub const AFFECTED_BELOW: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub commands: Vec<ReconfigurationCommand>,
    pub expected_qos: f64,
    /// Chosen host of every affected component.
    pub assignment: BTreeMap<ComponentId, HostId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no up host can run component {0}")]
    Infeasible(ComponentId),
}

pub fn affected(model: &ArchitectureModel, obs: &Observation, report: &QoSReport) -> BTreeSet<ComponentId> {
    let mut out = BTreeSet::new();
    for (id, c) in &model.components {
        let down = !obs.hosts.get(&c.host).is_some_and(|h| h.up);
        if down || report.r.get(id).is_some_and(|r| *r < AFFECTED_BELOW) {
            out.insert(id.clone());
        }
    }
    for (id, k) in &model.connectors {
        if report.l.get(id).is_some_and(|l| *l < AFFECTED_BELOW) {
            out.insert(k.source.port.component.clone());
            out.extend(k.sinks.iter().map(|s| s.port.component.clone()));
        }
    }
    out.retain(|c| model.components.contains_key(c));
    out
}

/// Up hosts able to run `c`, in id order.
pub fn candidates(model: &ArchitectureModel, obs: &Observation, c: &ComponentId) -> Vec<HostId> {
    let Some(mc) = model.components.get(c) else { return Vec::new() };
    obs.hosts
        .iter()
        .filter(|(_, h)| h.up && mc.variant_for(h.tier).is_some())
        .map(|(id, _)| id.clone())
        .collect()
}

/// The model as it would be after moving components per `assignment`.
pub fn hypothetical(
    model: &ArchitectureModel,
    obs: &Observation,
    assignment: &BTreeMap<ComponentId, HostId>,
) -> ArchitectureModel {
    let mut m = model.clone();
    for (c, h) in assignment {
        let Some(mc) = m.components.get_mut(c) else { continue };
        if &mc.host == h {
            continue;
        }
        if let Some(v) = obs.hosts.get(h).and_then(|o| mc.variant_for(o.tier)) {
            mc.tier = v.tier;
        }
        mc.host = h.clone();
    }
    for k in m.connectors.values_mut() {
        if let Some(h) = assignment.get(&k.source.port.component) {
            k.source.host = h.clone();
        }
        for s in &mut k.sinks {
            if let Some(h) = assignment.get(&s.port.component) {
                s.host = h.clone();
            }
        }
    }
    m
}

struct Scored {
    score: f64,
    moves: usize,
    hosts: Vec<HostId>,
}

impl Scored {
    fn beats(&self, other: &Scored) -> bool {
        if self.score > other.score + SCORE_EPSILON {
            return true;
        }
        if (self.score - other.score).abs() <= SCORE_EPSILON {
            return (self.moves, &self.hosts) < (other.moves, &other.hosts);
        }
        false
    }
}

pub fn select_deployment(
    model: &ArchitectureModel,
    obs: &Observation,
    weights: &QosWeights,
) -> Result<DeploymentPlan, PlanError> {
    let report = evaluate_qos(model, obs, weights);
    let comps: Vec<ComponentId> = affected(model, obs, &report).into_iter().collect();
    let cands: Vec<Vec<HostId>> = comps.iter().map(|c| candidates(model, obs, c)).collect();
    if let Some(i) = cands.iter().position(Vec::is_empty) {
        return Err(PlanError::Infeasible(comps[i].clone()));
    }
    if comps.is_empty() {
        return Ok(DeploymentPlan { commands: Vec::new(), expected_qos: report.global, assignment: BTreeMap::new() });
    }

    let current: Vec<&HostId> = comps.iter().map(|c| &model.components[c].host).collect();
    let score = |choice: &[usize]| -> Scored {
        let assignment: BTreeMap<ComponentId, HostId> =
            comps.iter().zip(choice).enumerate().map(|(i, (c, j))| (c.clone(), cands[i][*j].clone())).collect();
        let hosts: Vec<HostId> = comps.iter().map(|c| assignment[c].clone()).collect();
        let moves = hosts.iter().zip(&current).filter(|(a, b)| a != *b).count();
        let s = evaluate_qos(&hypothetical(model, obs, &assignment), obs, weights).global;
        Scored { score: s, moves, hosts }
    };

    let space = cands.iter().try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64)).unwrap_or(u64::MAX);
    let best_choice = if space <= EXHAUSTIVE_LIMIT {
        let mut choice = vec![0usize; comps.len()];
        let mut best = (choice.clone(), score(&choice));
        'odometer: loop {
            let mut i = comps.len();
            loop {
                if i == 0 {
                    break 'odometer;
                }
                i -= 1;
                choice[i] += 1;
                if choice[i] < cands[i].len() {
                    break;
                }
                choice[i] = 0;
            }
            let s = score(&choice);
            if s.beats(&best.1) {
                best = (choice.clone(), s);
            }
        }
        best.0
    } else {
        let mut choice: Vec<usize> =
            comps.iter().enumerate().map(|(i, _)| cands[i].iter().position(|h| h == current[i]).unwrap_or(0)).collect();
        let mut here = score(&choice);
        loop {
            let mut step: Option<(Vec<usize>, Scored)> = None;
            for i in 0..comps.len() {
                for j in 0..cands[i].len() {
                    if j == choice[i] {
                        continue;
                    }
                    let mut next = choice.clone();
                    next[i] = j;
                    let s = score(&next);
                    if s.score > here.score + SCORE_EPSILON && step.as_ref().is_none_or(|(_, b)| s.beats(b)) {
                        step = Some((next, s));
                    }
                }
            }
            match step {
                Some((next, s)) => {
                    choice = next;
                    here = s;
                }
                None => break,
            }
        }
        choice
    };

    let assignment: BTreeMap<ComponentId, HostId> =
        comps.iter().enumerate().map(|(i, c)| (c.clone(), cands[i][best_choice[i]].clone())).collect();
    let expected_qos = evaluate_qos(&hypothetical(model, obs, &assignment), obs, weights).global;
    let commands = assignment
        .iter()
        .filter(|(c, h)| &model.components[*c].host != *h)
        .map(|(c, h)| ReconfigurationCommand::Move { component: c.clone(), target: h.clone() })
        .collect();
    Ok(DeploymentPlan { commands, expected_qos, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{HostObservation, LinkObservation, ModelComponent, ModelConnector};
    use crate::connector::{Endpoint, FlowPolicy, PortRef};
    use crate::container::{Lifecycle, Variant};
    use crate::kernel::HostTier;

    fn obs(hosts: &[(&str, HostTier, f64, bool)], links: &[(&str, &str, f64)]) -> Observation {
        Observation {
            at: 0,
            hosts: hosts
                .iter()
                .map(|(id, tier, cap, up)| {
                    let h = HostObservation {
                        up: *up,
                        tier: *tier,
                        cpu_capacity: *cap,
                        mem_capacity: *cap,
                        cpu_free: None,
                        mem_free: None,
                        battery: None,
                        battery_confidence: None,
                    };
                    (HostId::from(*id), h)
                })
                .collect(),
            links: links
                .iter()
                .map(|(a, b, bw)| LinkObservation { endpoints: ((*a).into(), (*b).into()), up: true, latency: 1, bandwidth: *bw })
                .collect(),
            components: BTreeMap::new(),
            connectors: BTreeMap::new(),
        }
    }

    fn comp(host: &str, demand: f64) -> ModelComponent {
        let v = Variant { tier: HostTier::LightMin, cpu_demand: demand, mem_demand: demand, behavior: "identity".into() };
        ModelComponent { host: host.into(), tier: HostTier::LightMin, lifecycle: Lifecycle::Running, variants: vec![v] }
    }

    fn model(comps: &[(&str, &str, f64)]) -> ArchitectureModel {
        let mut m = ArchitectureModel::default();
        for (id, h, d) in comps {
            m.set_component((*id).into(), comp(h, *d));
        }
        m
    }

    #[test]
    fn healthy_model_needs_no_plan() {
        let m = model(&[("a", "h1", 1.0)]);
        let o = obs(&[("h1", HostTier::Full, 4.0, true)], &[]);
        let p = select_deployment(&m, &o, &QosWeights::default()).unwrap();
        assert!(p.commands.is_empty());
        assert_eq!(p.expected_qos, 1.0);
    }

    #[test]
    fn component_on_down_host_moves() {
        let m = model(&[("a", "h1", 1.0)]);
        let o = obs(&[("h1", HostTier::Full, 4.0, false), ("h2", HostTier::Full, 4.0, true)], &[]);
        let p = select_deployment(&m, &o, &QosWeights::default()).unwrap();
        assert_eq!(p.commands, vec![ReconfigurationCommand::Move { component: "a".into(), target: "h2".into() }]);
    }

    #[test]
    fn no_compatible_host_is_infeasible() {
        let mut m = model(&[("a", "h1", 1.0)]);
        m.components.get_mut(&ComponentId::from("a")).unwrap().variants[0].tier = HostTier::Full;
        let o = obs(&[("h1", HostTier::Full, 4.0, false), ("h2", HostTier::LightStd, 4.0, true)], &[]);
        assert_eq!(select_deployment(&m, &o, &QosWeights::default()), Err(PlanError::Infeasible("a".into())));
    }

    #[test]
    fn ties_prefer_fewest_moves_then_smallest_hosts() {
        // a is starved on h2; h1 and h3 are equally good
        let m = model(&[("a", "h2", 4.0), ("b", "h2", 4.0)]);
        let o = obs(
            &[("h1", HostTier::Full, 4.0, true), ("h2", HostTier::Full, 4.0, true), ("h3", HostTier::Full, 4.0, true)],
            &[],
        );
        let p = select_deployment(&m, &o, &QosWeights::default()).unwrap();
        assert_eq!(p.expected_qos, 1.0);
        assert_eq!(p.commands, vec![ReconfigurationCommand::Move { component: "a".into(), target: "h1".into() }]);
    }

    #[test]
    fn large_spaces_climb_to_a_local_optimum() {
        // 8 starved components over 4 hosts: 4^8 > EXHAUSTIVE_LIMIT
        let ids: Vec<String> = (0..8).map(|i| format!("c{i}")).collect();
        let comps: Vec<(&str, &str, f64)> = ids.iter().map(|id| (id.as_str(), "h0", 1.0)).collect();
        let mut m = model(&comps);
        for i in 0..7 {
            let k = ModelConnector {
                source: Endpoint { port: PortRef::new(ids[i].as_str(), "out"), host: "h0".into() },
                sinks: vec![Endpoint { port: PortRef::new(ids[i + 1].as_str(), "in"), host: "h0".into() }],
                policy: FlowPolicy::default(),
                hosts: ["h0".into()].into(),
            };
            m.set_connector(format!("k{i}").into(), k);
        }
        let hosts: Vec<(&str, HostTier, f64, bool)> =
            ["h0", "h1", "h2", "h3"].iter().map(|h| (*h, HostTier::Full, 2.0, true)).collect();
        let o = obs(&hosts, &[("h0", "h1", 1.0), ("h1", "h2", 1.0), ("h2", "h3", 1.0), ("h0", "h3", 1.0)]);
        let w = QosWeights::default();
        let before = evaluate_qos(&m, &o, &w).global;
        let p = select_deployment(&m, &o, &w).unwrap();
        assert!(p.expected_qos > before);
        // no single move improves on the result
        for c in &ids {
            for h in ["h0", "h1", "h2", "h3"] {
                let mut a = p.assignment.clone();
                a.insert(c.as_str().into(), h.into());
                let s = evaluate_qos(&hypothetical(&m, &o, &a), &o, &w).global;
                assert!(s <= p.expected_qos + SCORE_EPSILON, "{c}->{h} gives {s} > {}", p.expected_qos);
            }
        }
        assert_eq!(p, select_deployment(&m, &o, &w).unwrap());
    }
}
