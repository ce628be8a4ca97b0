//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use ctxadapt_core::kernel::{HostDescriptor, HostTier, KernelOptions, Power};
use ctxadapt_core::scenario::{self, AppDescriptor, NetDescriptor, ScenarioScript};
use ctxadapt_core::{
    ComponentDescriptor, FlowPolicy, Kernel, Link, Network, Origin, PortRef, ReconfigurationCommand as C, Variant,
};

/// `comps` chained components crowded onto `h0` of a ring of `hosts` Full
/// hosts, each with room for two of them.
pub fn crowded_ring(comps: usize, hosts: usize) -> Kernel {
    let descs = (0..hosts)
        .map(|i| HostDescriptor {
            id: format!("h{i}").into(),
            tier: HostTier::Full,
            cpu_capacity: 2.0,
            mem_capacity: 2.0,
            power: Power::Mains,
            location: (i as f64, 0.0),
            up: true,
        })
        .collect();
    let links = (0..hosts)
        .map(|i| Link {
            endpoints: (format!("h{i}").into(), format!("h{}", (i + 1) % hosts).into()),
            latency: 1,
            bandwidth: 4.0,
            up: true,
        })
        .collect();
    let mut k = Kernel::new(Network::new(descs, links).expect("ring"), KernelOptions::default()).expect("kernel");
    for i in 0..comps {
        let d = ComponentDescriptor {
            id: format!("c{i}").into(),
            in_ports: vec!["in".into()],
            out_ports: vec!["out".into()],
            variants: vec![Variant { tier: HostTier::LightMin, cpu_demand: 1.0, mem_demand: 1.0, behavior: "identity".into() }],
            listener: false,
            initial_host: "h0".into(),
        };
        k.apply(C::Add { descriptor: d, host: "h0".into() }, Origin::Deploy);
    }
    for i in 1..comps {
        k.apply(
            C::Connect {
                connector: format!("k{i}").into(),
                source: PortRef::new(format!("c{}", i - 1).as_str(), "out"),
                sinks: vec![PortRef::new(format!("c{i}").as_str(), "in")],
                policy: FlowPolicy::default(),
            },
            Origin::Deploy,
        );
    }
    k.flush_trace();
    k
}

pub fn reference_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference")
}

pub fn reference() -> (AppDescriptor, NetDescriptor, ScenarioScript) {
    let d = reference_dir();
    (
        scenario::load(&d.join("app.json")).expect("app"),
        scenario::load(&d.join("net.json")).expect("net"),
        scenario::load(&d.join("scenario.json")).expect("scenario"),
    )
}
