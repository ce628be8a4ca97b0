//! Observation, QoS evaluation, deployment selection and the control loop.
//!
//! | mode | platform events (C) | platform commands (D) |
//! |------|---------------------|-----------------------|
//! | M1   | no                  | no                    |
//! | M2   | yes                 | no                    |
//! | M3   | no                  | yes                   |
//! | M4   | yes                 | yes, after a grace period |

mod model;
mod placement;
mod qos;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use model::{ArchitectureModel, ModelComponent, ModelConnector};
pub use placement::{
    affected, candidates, hypothetical, select_deployment, DeploymentPlan, PlanError, AFFECTED_BELOW,
    EXHAUSTIVE_LIMIT, SCORE_EPSILON,
};
pub use qos::{
    evaluate_qos, observe, ComponentObservation, ConnectorObservation, HostObservation, LinkObservation, Observation,
    ObservationMemory, QoSReport,
};

use crate::container::{EventKind, EventPayload, PlatformEvent};
use crate::context::{ContextInformation, ContextNature, ContextValue};
use crate::ids::{ComponentId, Tick};
use crate::kernel::{CommandResult, Kernel, Origin, PlatformConfig, PRIO_QOS, PRIO_QOS_HARD};
use crate::trace::TraceKind;

pub const DEFAULT_CYCLE_INTERVAL: Tick = 5;
pub const DEFAULT_GRACE: Tick = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdaptationMode {
    M1,
    M2,
    M3,
    M4,
}

impl AdaptationMode {
    pub const ALL: [AdaptationMode; 4] = [Self::M1, Self::M2, Self::M3, Self::M4];

    pub fn emits_events(self) -> bool {
        matches!(self, Self::M2 | Self::M4)
    }

    pub fn applies_plans(self) -> bool {
        matches!(self, Self::M3 | Self::M4)
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for AdaptationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| format!("unknown mode `{s}` (M1..M4)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleOutcome {
    NoAction,
    EventsEmitted(usize),
    PlanApplied(DeploymentPlan),
    PlanDeferred,
    /// The kernel refused a command; the next cycle retries.
    PlanAborted(String),
    Infeasible(ComponentId),
}

/// The coordinator-side control loop.
#[derive(Debug, Clone)]
pub struct AdaptationManager {
    mode: AdaptationMode,
    interval: Tick,
    grace: Tick,
    alert_since: Option<Tick>,
    memory: ObservationMemory,
    infeasible: bool,
}

impl AdaptationManager {
    pub fn new(mode: AdaptationMode) -> Self {
        Self {
            mode,
            interval: DEFAULT_CYCLE_INTERVAL,
            grace: DEFAULT_GRACE,
            alert_since: None,
            memory: ObservationMemory::default(),
            infeasible: false,
        }
    }

    pub fn mode(&self) -> AdaptationMode {
        self.mode
    }

    pub fn with_grace(mut self, grace: Tick) -> Self {
        self.grace = grace;
        self
    }

    /// True when the last cycle found no feasible placement.
    pub fn infeasible_outstanding(&self) -> bool {
        self.infeasible
    }

    fn config(k: &Kernel) -> PlatformConfig {
        k.coordinator().and_then(|c| k.platform(&c).map(|p| p.config().clone())).unwrap_or_default()
    }

    /// Observes, evaluates and traces the QoS; runs a cycle when due.
    pub fn tick(&mut self, k: &mut Kernel, now: Tick) -> Option<CycleOutcome> {
        let (obs, report) = self.assess(k, now)?;
        (now.is_multiple_of(self.interval)).then(|| self.decide(k, now, obs, report))
    }

    /// One full cycle regardless of the interval.
    pub fn run_cycle(&mut self, k: &mut Kernel, now: Tick) -> CycleOutcome {
        match self.assess(k, now) {
            Some((obs, report)) => self.decide(k, now, obs, report),
            None => CycleOutcome::NoAction,
        }
    }

    fn assess(&mut self, k: &mut Kernel, now: Tick) -> Option<(Observation, QoSReport)> {
        let coord = k.coordinator()?;
        let obs = observe(k, now, &mut self.memory);
        let report = evaluate_qos(k.model(), &obs, &Self::config(k).weights);
        k.trace(&coord, TraceKind::Qos, &report);
        k.set_latest_qos(report.clone());
        Some((obs, report))
    }

    fn decide(&mut self, k: &mut Kernel, now: Tick, obs: Observation, report: QoSReport) -> CycleOutcome {
        let cfg = Self::config(k);
        if let Some(coord) = k.coordinator() {
            let info = ContextInformation::new(
                ContextNature::Hardware,
                "qos.global",
                ContextValue::number(report.global, ""),
                "adaptation",
            )
            .expect("non-empty key");
            k.put_context(&coord, info, "platform", 1.0);
        }
        if report.global >= cfg.qos_threshold && !report.hard_violation {
            self.alert_since = None;
            self.infeasible = false;
            return CycleOutcome::NoAction;
        }
        match self.mode {
            AdaptationMode::M1 => CycleOutcome::NoAction,
            AdaptationMode::M2 => CycleOutcome::EventsEmitted(alert(k, &report)),
            AdaptationMode::M3 => self.plan(k, &obs, &cfg),
            AdaptationMode::M4 => {
                let n = alert(k, &report);
                let since = *self.alert_since.get_or_insert(now);
                if now - since < self.grace {
                    return CycleOutcome::EventsEmitted(n);
                }
                let out = self.plan(k, &obs, &cfg);
                if matches!(out, CycleOutcome::PlanApplied(_)) {
                    self.alert_since = None;
                }
                out
            }
        }
    }

    fn plan(&mut self, k: &mut Kernel, obs: &Observation, cfg: &PlatformConfig) -> CycleOutcome {
        if k.transfers_pending() {
            return CycleOutcome::NoAction;
        }
        let plan = match select_deployment(k.model(), obs, &cfg.weights) {
            Ok(p) => p,
            Err(PlanError::Infeasible(c)) => {
                self.infeasible = true;
                return CycleOutcome::Infeasible(c);
            }
        };
        self.infeasible = false;
        if plan.commands.is_empty() {
            return CycleOutcome::NoAction;
        }
        let mut deferred = false;
        for cmd in plan.commands.clone() {
            match k.apply(cmd, Origin::Platform) {
                CommandResult::Applied => {}
                CommandResult::Deferred => deferred = true,
                CommandResult::Aborted(reason) => return CycleOutcome::PlanAborted(reason),
            }
        }
        if deferred {
            CycleOutcome::PlanDeferred
        } else {
            CycleOutcome::PlanApplied(plan)
        }
    }
}

fn alert(k: &mut Kernel, report: &QoSReport) -> usize {
    let prio = if report.hard_violation { PRIO_QOS_HARD } else { PRIO_QOS };
    k.broadcast_event(PlatformEvent::new(EventKind::QoSAlert, EventPayload::QoS(report.clone()), prio))
}
