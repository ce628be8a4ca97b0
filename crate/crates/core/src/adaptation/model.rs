//! The reflexive architecture model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::connector::{Endpoint, FlowPolicy};
use crate::container::{Lifecycle, Variant};
use crate::ids::{ComponentId, ConnectorId, HostId};
use crate::kernel::HostTier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComponent {
    pub host: HostId,
    pub tier: HostTier,
    pub lifecycle: Lifecycle,
    pub variants: Vec<Variant>,
}

impl ModelComponent {
    /// (cpu, mem) demand of the active variant.
    pub fn demand(&self) -> (f64, f64) {
        self.variants.iter().find(|v| v.tier == self.tier).map_or((0.0, 0.0), |v| (v.cpu_demand, v.mem_demand))
    }

    /// Most capable variant a host of `tier` can run.
    pub fn variant_for(&self, tier: HostTier) -> Option<&Variant> {
        self.variants.iter().filter(|v| v.tier <= tier).max_by_key(|v| v.tier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConnector {
    pub source: Endpoint,
    /// Sorted by port.
    pub sinks: Vec<Endpoint>,
    pub policy: FlowPolicy,
    /// Endpoint hosts plus every host on the current routes.
    pub hosts: BTreeSet<HostId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArchitectureModel {
    pub components: BTreeMap<ComponentId, ModelComponent>,
    pub connectors: BTreeMap<ConnectorId, ModelConnector>,
    version: u64,
}

impl ArchitectureModel {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_component(&mut self, id: ComponentId, c: ModelComponent) {
        if self.components.get(&id) != Some(&c) {
            self.components.insert(id, c);
            self.version += 1;
        }
    }

    pub fn remove_component(&mut self, id: &ComponentId) {
        if self.components.remove(id).is_some() {
            self.version += 1;
        }
    }

    pub fn set_connector(&mut self, id: ConnectorId, k: ModelConnector) {
        if self.connectors.get(&id) != Some(&k) {
            self.connectors.insert(id, k);
            self.version += 1;
        }
    }

    pub fn remove_connector(&mut self, id: &ConnectorId) {
        if self.connectors.remove(id).is_some() {
            self.version += 1;
        }
    }

    /// Equal components and connectors, whatever the versions.
    pub fn same_topology(&self, other: &ArchitectureModel) -> bool {
        self.components == other.components && self.connectors == other.connectors
    }

    /// Every connector endpoint names an existing component on the right host.
    pub fn is_consistent(&self) -> bool {
        self.connectors.values().all(|k| {
            std::iter::once(&k.source)
                .chain(&k.sinks)
                .all(|e| self.components.get(&e.port.component).is_some_and(|c| c.host == e.host))
        })
    }

    /// The part of the model a light host knows about: its own components
    /// and the connectors touching them.
    pub fn restricted_to(&self, host: &HostId, local: &BTreeSet<ComponentId>) -> ArchitectureModel {
        let components = self.components.iter().filter(|(id, _)| local.contains(*id)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let connectors = self
            .connectors
            .iter()
            .filter(|(_, k)| &k.source.host == host || k.sinks.iter().any(|s| &s.host == host))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ArchitectureModel { components, connectors, version: self.version }
    }
}
