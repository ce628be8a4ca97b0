//! Context objects: a piece of context information paired with the envelope
//! that says when, where, how reliably and on whose behalf it was produced.
//!
//! Confidence degrades with age following an exponential half-life law,
//! `c(t) = c0 * 2^(-age / half_life)`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{HostId, Tick};

/// Default confidence half-life used when a policy does not set one.
pub const DEFAULT_HALF_LIFE: Tick = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("clock skew: object stamped at tick {timestamp} read at tick {now}")]
    ClockSkew { timestamp: Tick, now: Tick },
}

/// What the context describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContextNature {
    User,
    Hardware,
    Environment,
}

impl ContextNature {
    pub fn code(self) -> char {
        match self {
            ContextNature::User => 'U',
            ContextNature::Hardware => 'H',
            ContextNature::Environment => 'E',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContextValue {
    Number { value: f64, unit: String },
    Text(String),
    Coord { x: f64, y: f64 },
}

impl ContextValue {
    pub fn number(value: f64, unit: impl Into<String>) -> Self {
        ContextValue::Number { value, unit: unit.into() }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            ContextValue::Number { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl fmt::Display for ContextValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextValue::Number { value, unit } => write!(f, "{value:.4}{unit}"),
            ContextValue::Text(t) => {
                let t: String = t.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
                f.write_str(&t)
            }
            ContextValue::Coord { x, y } => write!(f, "{x:.3},{y:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextInformation {
    pub nature: ContextNature,
    pub key: String,
    pub value: ContextValue,
    pub producer: String,
}

impl ContextInformation {
    pub fn new(
        nature: ContextNature,
        key: impl Into<String>,
        value: ContextValue,
        producer: impl Into<String>,
    ) -> Result<Self, ContextError> {
        let key = key.into();
        if key.is_empty() {
            return Err(ContextError::Validation("empty context key".into()));
        }
        Ok(Self { nature, key, value, producer: producer.into() })
    }
}

/// Where a piece of context was produced: always a host, optionally a
/// planar position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub host: HostId,
    pub coords: Option<(f64, f64)>,
}

impl Location {
    pub fn host(host: impl Into<HostId>) -> Self {
        Self { host: host.into(), coords: None }
    }

    pub fn at(host: impl Into<HostId>, x: f64, y: f64) -> Self {
        Self { host: host.into(), coords: Some((x, y)) }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.coords {
            Some((x, y)) => write!(f, "{x:.3},{y:.3}"),
            None => write!(f, "{}", self.host),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationValidity {
    pub timestamp: Tick,
    pub location: Location,
    pub base_confidence: f64,
    pub owner: String,
}

/// An immutable unit of context. Construct with [`stamp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextObject {
    info: ContextInformation,
    validity: InformationValidity,
}

impl ContextObject {
    pub fn info(&self) -> &ContextInformation {
        &self.info
    }

    pub fn validity(&self) -> &InformationValidity {
        &self.validity
    }

    pub fn key(&self) -> &str {
        &self.info.key
    }

    pub fn timestamp(&self) -> Tick {
        self.validity.timestamp
    }
}

impl fmt::Display for ContextObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "key={} nature={} val={} t={} loc={} conf={:.4} own={}",
            self.info.key,
            self.info.nature.code(),
            self.info.value,
            self.validity.timestamp,
            self.validity.location,
            self.validity.base_confidence,
            self.validity.owner,
        )
    }
}

/// Spatial filter of a [`ValidityPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpatialScope {
    /// Euclidean disc; objects without coordinates are outside it.
    Radius { center: (f64, f64), radius: f64 },
    Hosts(BTreeSet<HostId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityPolicy {
    /// `None` is unbounded.
    pub max_age: Option<Tick>,
    pub min_confidence: f64,
    pub spatial_scope: Option<SpatialScope>,
    pub owner_filter: Option<BTreeSet<String>>,
    pub half_life: Tick,
}

impl Default for ValidityPolicy {
    fn default() -> Self {
        Self::pass_all()
    }
}

impl ValidityPolicy {
    pub fn pass_all() -> Self {
        Self {
            max_age: None,
            min_confidence: 0.0,
            spatial_scope: None,
            owner_filter: None,
            half_life: DEFAULT_HALF_LIFE,
        }
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        if self.half_life == 0 {
            return Err(ContextError::Validation("half_life must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ContextError::Validation(format!(
                "min_confidence {} outside [0,1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

/// Date a piece of context information at production time.
pub fn stamp(
    info: ContextInformation,
    now: Tick,
    location: Location,
    owner: impl Into<String>,
    base_confidence: f64,
) -> Result<ContextObject, ContextError> {
    if !(0.0..=1.0).contains(&base_confidence) {
        return Err(ContextError::Validation(format!(
            "confidence {base_confidence} outside [0,1]"
        )));
    }
    let owner = owner.into();
    if owner.is_empty() {
        return Err(ContextError::Validation("empty owner".into()));
    }
    if info.key.is_empty() {
        return Err(ContextError::Validation("empty context key".into()));
    }
    Ok(ContextObject {
        info,
        validity: InformationValidity { timestamp: now, location, base_confidence, owner },
    })
}

/// Ticks elapsed since the object was stamped.
pub fn freshness(obj: &ContextObject, now: Tick) -> Result<Tick, ContextError> {
    let ts = obj.validity.timestamp;
    now.checked_sub(ts).ok_or(ContextError::ClockSkew { timestamp: ts, now })
}

pub fn effective_confidence(obj: &ContextObject, now: Tick, half_life: Tick) -> Result<f64, ContextError> {
    if half_life == 0 {
        return Err(ContextError::Validation("half_life must be > 0".into()));
    }
    let age = freshness(obj, now)?;
    let base = obj.validity.base_confidence;
    if age == 0 {
        return Ok(base);
    }
    Ok(base * (-(age as f64) / half_life as f64).exp2())
}

pub fn is_valid(obj: &ContextObject, now: Tick, policy: &ValidityPolicy) -> bool {
    let Ok(age) = freshness(obj, now) else {
        return false;
    };
    age_ok(age, policy) && confidence_ok(obj, now, policy) && location_ok(obj, policy) && owner_ok(obj, policy)
}

fn age_ok(age: Tick, policy: &ValidityPolicy) -> bool {
    policy.max_age.is_none_or(|max| age <= max)
}

fn confidence_ok(obj: &ContextObject, now: Tick, policy: &ValidityPolicy) -> bool {
    if policy.min_confidence <= 0.0 {
        return true;
    }
    effective_confidence(obj, now, policy.half_life).is_ok_and(|c| c >= policy.min_confidence)
}

fn location_ok(obj: &ContextObject, policy: &ValidityPolicy) -> bool {
    let loc = &obj.validity.location;
    match &policy.spatial_scope {
        None => true,
        Some(SpatialScope::Hosts(hosts)) => hosts.contains(&loc.host),
        Some(SpatialScope::Radius { center, radius }) => match loc.coords {
            Some((x, y)) => (x - center.0).hypot(y - center.1) <= *radius,
            None => false,
        },
    }
}

fn owner_ok(obj: &ContextObject, policy: &ValidityPolicy) -> bool {
    policy.owner_filter.as_ref().is_none_or(|owners| owners.contains(&obj.validity.owner))
}
