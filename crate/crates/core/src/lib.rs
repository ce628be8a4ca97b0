//! Context-aware adaptation platform over a simulated heterogeneous network.
//!
//! Applications are graphs of business components hosted in containers and
//! wired by first-class connectors. Each host runs a platform that captures
//! context, offers services to the application, emits events and executes
//! reconfiguration commands; an adaptation manager closes the loop.

pub mod adaptation;
pub mod behavior;
pub mod connector;
pub mod container;
pub mod context;
pub mod ids;
pub mod kernel;
pub mod scenario;
pub mod simnet;
pub mod store;
pub mod trace;

pub use adaptation::{AdaptationManager, AdaptationMode, ArchitectureModel, CycleOutcome, DeploymentPlan, QoSReport};
pub use behavior::BehaviorCatalog;
pub use connector::{ConnectorInstance, FlowPolicy, FlowSample, LossPolicy, PortRef};
pub use container::{ComponentDescriptor, ContainerInstance, Lifecycle, PlatformEvent, Variant};
pub use context::{ContextInformation, ContextNature, ContextObject, ContextValue, ValidityPolicy};
pub use ids::{ComponentId, ConnectorId, HostId, Tick};
pub use kernel::{CommandResult, HostDescriptor, HostTier, Kernel, Origin, PlatformConfig, ReconfigurationCommand};
pub use simnet::{Link, Network, SimEvent, Simulation};
pub use store::{ContextQuery, ContextStore};
