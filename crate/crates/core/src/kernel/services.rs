//! Platform services (application-to-platform calls), the tier matrix and
//! routing with delegation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HostTier, Kernel, KernelError, PlatformConfig};
use crate::adaptation::{ArchitectureModel, QoSReport};
use crate::context::{stamp, ContextInformation, ContextObject, Location};
use crate::ids::HostId;
use crate::store::ContextQuery;
use crate::trace::TraceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Service {
    ContextAccess,
    ContextDistant,
    Persistence,
    Routing,
    QoSMeasure,
    Reflexivity,
}

/// Which services each tier offers.
pub struct ServiceMatrix;

impl ServiceMatrix {
    pub fn services(tier: HostTier) -> &'static [Service] {
        use Service::*;
        match tier {
            HostTier::Full | HostTier::LightStd => {
                &[ContextAccess, ContextDistant, Persistence, Routing, QoSMeasure, Reflexivity]
            }
            HostTier::LightMin => &[ContextAccess, ContextDistant, QoSMeasure, Reflexivity],
        }
    }

    pub fn allows(tier: HostTier, s: Service) -> bool {
        Self::services(tier).contains(&s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceRequest {
    ContextAccess(ContextQuery),
    ContextDistant { host: HostId, query: ContextQuery },
    Persistence(ContextInformation),
    Routing { dst: HostId },
    QoSMeasure,
    Reflexivity,
}

impl ServiceRequest {
    pub fn service(&self) -> Service {
        match self {
            ServiceRequest::ContextAccess(_) => Service::ContextAccess,
            ServiceRequest::ContextDistant { .. } => Service::ContextDistant,
            ServiceRequest::Persistence(_) => Service::Persistence,
            ServiceRequest::Routing { .. } => Service::Routing,
            ServiceRequest::QoSMeasure => Service::QoSMeasure,
            ServiceRequest::Reflexivity => Service::Reflexivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceResponse {
    Context(Vec<ContextObject>),
    Persisted(ContextObject),
    Route(Vec<HostId>),
    QoS(Option<QoSReport>),
    Model(ArchitectureModel),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{service:?} is not offered here; try {delegate_hint:?}")]
    ServiceUnavailable { service: Service, delegate_hint: Option<HostId> },
    #[error("{0} is unreachable")]
    Unreachable(HostId),
    #[error("no route from {src} to {dst}")]
    NoRoute { src: HostId, dst: HostId },
    #[error("host {0} is down")]
    HostDown(HostId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
}

impl Kernel {
    /// The closest up Full host reachable from `h` (fewest hops, then id).
    pub fn nearest_full(&self, h: &HostId) -> Option<HostId> {
        self.net
            .hosts()
            .filter(|d| d.up && d.tier == HostTier::Full && &d.id != h)
            .filter_map(|d| self.net.shortest_path(h, &d.id).map(|p| (p.len(), d.id.clone())))
            .min()
            .map(|(_, id)| id)
    }

    /// Path from `src` to `dst` as answered by `src`'s platform. Light
    /// sensors only know their direct links and ask a Full host otherwise.
    pub fn route(&self, src: &HostId, dst: &HostId) -> Result<Vec<HostId>, ServiceError> {
        let s = self.net.host(src).ok_or_else(|| ServiceError::UnknownHost(src.clone()))?;
        if self.net.host(dst).is_none() {
            return Err(ServiceError::UnknownHost(dst.clone()));
        }
        if !s.up {
            return Err(ServiceError::HostDown(src.clone()));
        }
        if s.tier == HostTier::LightMin {
            if src == dst {
                return Ok(vec![src.clone()]);
            }
            if self.net.neighbors(src).contains(dst) {
                return Ok(vec![src.clone(), dst.clone()]);
            }
            let delegate = self
                .nearest_full(src)
                .ok_or(ServiceError::ServiceUnavailable { service: crate::kernel::Service::Routing, delegate_hint: None })?;
            return self.full_route(&delegate, src, dst);
        }
        self.full_route(src, src, dst)
    }

    /// A Full or LightStd platform's answer, from global topology knowledge.
    fn full_route(&self, _answering: &HostId, src: &HostId, dst: &HostId) -> Result<Vec<HostId>, ServiceError> {
        self.net
            .shortest_path(src, dst)
            .ok_or_else(|| ServiceError::NoRoute { src: src.clone(), dst: dst.clone() })
    }

    pub fn configure(&mut self, host: &HostId, cfg: PlatformConfig) -> Result<(), KernelError> {
        cfg.validate()?;
        let p = self.platforms.get_mut(host).ok_or_else(|| KernelError::UnknownHost(host.clone()))?;
        p.config = cfg;
        Ok(())
    }

    pub fn service_call(&mut self, host: &HostId, req: ServiceRequest) -> Result<ServiceResponse, ServiceError> {
        let d = self.net.host(host).ok_or_else(|| ServiceError::UnknownHost(host.clone()))?;
        if !d.up {
            return Err(ServiceError::HostDown(host.clone()));
        }
        let tier = d.tier;
        let location = d.location;
        let service = req.service();
        if !ServiceMatrix::allows(tier, service) {
            return Err(ServiceError::ServiceUnavailable { service, delegate_hint: self.nearest_full(host) });
        }
        let now = self.now;
        match req {
            ServiceRequest::ContextAccess(q) => Ok(ServiceResponse::Context(self.platforms[host].store.query(&q, now))),
            ServiceRequest::ContextDistant { host: remote, query } => {
                if self.net.host(&remote).is_none() {
                    return Err(ServiceError::UnknownHost(remote));
                }
                if !self.net.is_up(&remote) || self.route(host, &remote).is_err() {
                    return Err(ServiceError::Unreachable(remote));
                }
                let answer = self.platforms[&remote].store.query(&query, now);
                self.trace.push(host, TraceKind::Net, format_args!("op=query to={remote}"));
                self.trace.push(&remote, TraceKind::Net, format_args!("op=answer to={host} n={}", answer.len()));
                Ok(ServiceResponse::Context(answer))
            }
            ServiceRequest::Persistence(info) => {
                let owner = if info.producer.is_empty() { host.to_string() } else { info.producer.clone() };
                let obj = stamp(info, now, Location::at(host.clone(), location.0, location.1), &owner, 1.0)
                    .expect("confidence 1 and non-empty owner");
                let p = self.platforms.get_mut(host).expect("net host has a platform");
                p.store.put(obj.clone());
                p.export.push(format!("tick={now} {obj}"));
                self.trace.push(host, TraceKind::Ctx, &obj);
                Ok(ServiceResponse::Persisted(obj))
            }
            ServiceRequest::Routing { dst } => self.route(host, &dst).map(ServiceResponse::Route),
            ServiceRequest::QoSMeasure => Ok(ServiceResponse::QoS(self.latest_qos.clone())),
            ServiceRequest::Reflexivity => {
                if tier == HostTier::Full {
                    return Ok(ServiceResponse::Model(self.model.clone()));
                }
                let local: BTreeSet<_> = self.platforms[host].containers.keys().cloned().collect();
                Ok(ServiceResponse::Model(self.model.restricted_to(host, &local)))
            }
        }
    }
}
