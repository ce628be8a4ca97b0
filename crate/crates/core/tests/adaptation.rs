mod common;

use ctxadapt_core::adaptation::{evaluate_qos, observe, ObservationMemory};
use ctxadapt_core::kernel::{HostTier, Power, QosWeights};
use ctxadapt_core::{
    AdaptationManager, AdaptationMode, CommandResult, CycleOutcome, Kernel, Origin, PortRef, ReconfigurationCommand as C,
};

use common::*;

fn add(k: &mut Kernel, c: ctxadapt_core::ComponentDescriptor) {
    let host = c.initial_host.clone();
    assert_eq!(k.apply(C::Add { descriptor: c, host }, Origin::Deploy), CommandResult::Applied);
}

fn global(k: &Kernel, now: u64) -> f64 {
    let obs = observe(k, now, &mut ObservationMemory::default());
    evaluate_qos(k.model(), &obs, &QosWeights::default()).global
}

#[test]
fn half_the_components_down_scores_point_eight() {
    let mut k = kernel(vec![host("a", HostTier::Full, 8.0), host("b", HostTier::Full, 8.0)], vec![link("a", "b", 1, 10.0)]);
    add(&mut k, component("x", &["in"], &["out"], vec![variant(HostTier::LightMin, 1.0, "identity")], "a"));
    add(&mut k, component("z", &[], &[], vec![variant(HostTier::LightMin, 1.0, "identity")], "b"));
    let connect = C::Connect {
        connector: "loop".into(),
        source: PortRef::new("x", "out"),
        sinks: vec![PortRef::new("x", "in")],
        policy: default_policy(),
    };
    assert_eq!(k.apply(connect, Origin::Deploy), CommandResult::Applied);
    assert!((global(&k, 0) - 1.0).abs() < 1e-12);
    k.net_mut().set_host_up(&"b".into(), false).unwrap();
    k.topology_changed();
    // r = (1 + 0) / 2, l = 1, b = 1
    let want = 0.4 * 0.5 + 0.4 * 1.0 + 0.2 * 1.0;
    assert!((global(&k, 0) - want).abs() < 1e-12);
}

fn battery_world(level: f64) -> Kernel {
    let mut h = host("a", HostTier::Full, 8.0);
    h.power = Power::Battery { level, drain_per_tick: 0.0 };
    let mut k = kernel(vec![h], vec![]);
    add(&mut k, component("x", &[], &[], vec![variant(HostTier::LightMin, 1.0, "identity")], "a"));
    k.host_ticks();
    k
}

#[test]
fn half_battery_costs_a_tenth() {
    let k = battery_world(0.5);
    assert!((global(&k, 0) - (0.4 + 0.4 + 0.2 * 0.5)).abs() < 1e-12);
}

#[test]
fn battery_confidence_halves_every_half_life() {
    let k = battery_world(0.5);
    let reading = k.platform(&"a".into()).unwrap().store().latest("battery.level").unwrap().clone();
    let half_life = k.platform(&"a".into()).unwrap().store().config().default_half_life;
    let obs = observe(&k, 2 * half_life, &mut ObservationMemory::default());
    let conf = obs.hosts[&"a".into()].battery_confidence.unwrap();
    assert!((conf - 0.25 * reading.validity().base_confidence).abs() < 1e-12);
}

fn failing_pair() -> Kernel {
    let mut k = kernel(
        vec![host("a", HostTier::Full, 8.0), host("b", HostTier::Full, 8.0), host("c", HostTier::Full, 8.0)],
        vec![link("a", "b", 1, 10.0), link("a", "c", 1, 10.0)],
    );
    add(&mut k, component("x", &[], &[], vec![variant(HostTier::LightMin, 1.0, "identity")], "b"));
    k.net_mut().set_host_up(&"b".into(), false).unwrap();
    k.topology_changed();
    k
}

#[test]
fn plan_mode_moves_off_a_failed_host() {
    let mut k = failing_pair();
    k.set_mode(AdaptationMode::M3);
    let mut m = AdaptationManager::new(AdaptationMode::M3);
    match m.run_cycle(&mut k, 0) {
        CycleOutcome::PlanApplied(plan) => {
            assert!(!plan.commands.is_empty());
            assert!(plan.commands.iter().all(|c| matches!(c, C::Move { .. })));
        }
        other => panic!("{other:?}"),
    }
    assert_ne!(k.host_of(&"x".into()), Some(&"b".into()));
}

#[test]
fn observe_only_and_event_modes_leave_the_architecture_alone() {
    for mode in [AdaptationMode::M1, AdaptationMode::M2] {
        let mut k = failing_pair();
        k.set_mode(mode);
        let mut m = AdaptationManager::new(mode);
        let out = m.run_cycle(&mut k, 0);
        assert!(!matches!(out, CycleOutcome::PlanApplied(_)), "{mode}: {out:?}");
        assert_eq!(k.host_of(&"x".into()), Some(&"b".into()));
    }
}

#[test]
fn listeners_heal_before_the_grace_period_ends() {
    let mut k = kernel(vec![host("a", HostTier::Full, 2.0)], vec![]);
    k.set_mode(AdaptationMode::M4);
    for id in ["x", "y"] {
        let vs = vec![variant(HostTier::LightMin, 1.0, "adaptive"), variant(HostTier::Full, 4.0, "adaptive")];
        add(&mut k, component(id, &[], &[], vs, "a"));
    }
    let mut m = AdaptationManager::new(AdaptationMode::M4);
    let mut outcomes = Vec::new();
    for now in 0..30 {
        k.set_now(now);
        k.deliver_messages();
        k.host_ticks();
        outcomes.extend(m.tick(&mut k, now));
        k.flush_trace();
    }
    assert!(matches!(outcomes[0], CycleOutcome::EventsEmitted(n) if n > 0), "{outcomes:?}");
    assert!(!outcomes.iter().any(|o| matches!(o, CycleOutcome::PlanApplied(_))), "{outcomes:?}");
    assert!(k.counters().app_applied >= 1);
    assert!((global(&k, 29) - 1.0).abs() < 1e-12);
}
