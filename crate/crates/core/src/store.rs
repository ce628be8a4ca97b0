//! Per-host context storage with bounded history, filtered retrieval and
//! displacement prediction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::context::{is_valid, ContextNature, ContextObject, ValidityPolicy, DEFAULT_HALF_LIFE};
use crate::ids::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub per_key_capacity: NonZeroUsize,
    pub default_half_life: Tick,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { per_key_capacity: NonZeroUsize::new(64).unwrap(), default_half_life: DEFAULT_HALF_LIFE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KeyPattern {
    Any,
    Exact(String),
    Prefix(String),
}

impl KeyPattern {
    pub fn matches(&self, key: &str) -> bool {
        match self {
            KeyPattern::Any => true,
            KeyPattern::Exact(k) => k == key,
            KeyPattern::Prefix(p) => key.starts_with(p.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextQuery {
    pub natures: Option<BTreeSet<ContextNature>>,
    pub key: KeyPattern,
    pub validity: ValidityPolicy,
    pub limit: Option<NonZeroUsize>,
}

impl ContextQuery {
    pub fn all() -> Self {
        Self { natures: None, key: KeyPattern::Any, validity: ValidityPolicy::pass_all(), limit: None }
    }

    pub fn key(key: impl Into<String>) -> Self {
        Self { key: KeyPattern::Exact(key.into()), ..Self::all() }
    }

    pub fn prefix(prefix: impl Into<String>) -> Self {
        Self { key: KeyPattern::Prefix(prefix.into()), ..Self::all() }
    }

    pub fn with_limit(mut self, n: usize) -> Self {
        self.limit = NonZeroUsize::new(n);
        self
    }

    pub fn with_policy(mut self, policy: ValidityPolicy) -> Self {
        self.validity = policy;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextStore {
    config: StoreConfig,
    histories: BTreeMap<String, VecDeque<ContextObject>>,
}

impl ContextStore {
    pub fn new(config: StoreConfig) -> Self {
        Self { config, histories: BTreeMap::new() }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn put(&mut self, obj: ContextObject) {
        let cap = self.config.per_key_capacity.get();
        let history = self.histories.entry(obj.key().to_owned()).or_default();
        history.push_back(obj);
        while history.len() > cap {
            history.pop_front();
        }
    }

    pub fn history(&self, key: &str) -> impl Iterator<Item = &ContextObject> {
        self.histories.get(key).into_iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.histories.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.values().all(VecDeque::is_empty)
    }

    /// Every stored object, grouped by key in key order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &ContextObject> {
        self.histories.values().flatten()
    }

    /// Matching objects, newest first. Equal timestamps are ordered by
    /// producer, then key, then most recently inserted.
    pub fn query(&self, q: &ContextQuery, now: Tick) -> Vec<ContextObject> {
        let mut hits: Vec<(usize, &ContextObject)> = self
            .histories
            .iter()
            .filter(|(key, _)| q.key.matches(key))
            .flat_map(|(_, h)| h.iter())
            .enumerate()
            .filter(|(_, o)| q.natures.as_ref().is_none_or(|n| n.contains(&o.info().nature)))
            .filter(|(_, o)| is_valid(o, now, &q.validity))
            .collect();
        hits.sort_by(|(ia, a), (ib, b)| {
            b.timestamp()
                .cmp(&a.timestamp())
                .then_with(|| a.info().producer.cmp(&b.info().producer))
                .then_with(|| a.key().cmp(b.key()))
                .then_with(|| ib.cmp(ia))
        });
        let limit = q.limit.map_or(usize::MAX, NonZeroUsize::get);
        hits.into_iter().take(limit).map(|(_, o)| o.clone()).collect()
    }

    pub fn latest(&self, key: &str) -> Option<&ContextObject> {
        // Same order as `query`: newest, then smallest producer, then last inserted.
        let h = self.histories.get(key)?;
        h.iter().rev().min_by(|a, b| b.timestamp().cmp(&a.timestamp()).then_with(|| a.info().producer.cmp(&b.info().producer)))
    }

    /// Linear extrapolation of an entity's position from its two most recent
    /// geometric fixes. The entity is matched on the producer of the objects;
    /// symbolic (host-only) locations are ignored.
    pub fn predict_location(&self, entity: &str, t_future: Tick) -> Option<(f64, f64)> {
        let mut fixes: Vec<(Tick, (f64, f64))> = self
            .iter()
            .filter(|o| o.info().producer == entity)
            .filter_map(|o| o.validity().location.coords.map(|c| (o.timestamp(), c)))
            .collect();
        // stable: among equal timestamps the last inserted stays last
        fixes.sort_by_key(|(t, _)| *t);
        let &(t1, p1) = fixes.last()?;
        let Some(&(t0, p0)) = fixes.iter().rev().find(|(t, _)| *t < t1) else {
            return Some(p1);
        };
        let dt = (t1 - t0) as f64;
        let ahead = t_future as f64 - t1 as f64;
        let vx = (p1.0 - p0.0) / dt;
        let vy = (p1.1 - p0.1) / dt;
        Some((p1.0 + vx * ahead, p1.1 + vy * ahead))
    }
}
