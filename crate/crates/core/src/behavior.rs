//! Business behaviors and the catalog that names them.
//!
//! Descriptors reference behaviors by name, optionally with one parameter
//! after a colon (`sink:4`, `source:1000`). Standard entries:
//!
//! | name | inputs | effect |
//! |------|--------|--------|
//! | `source[:limit]` | none | emits 1, 2, 3, ... on every out port |
//! | `sink[:period]` | any | consumes one sample per port every `period` ticks |
//! | `identity` | first | forwards the first available input |
//! | `counter` | any | counts samples, emits the running count |
//! | `aggregator` | any | emits the sum of numeric inputs |
//! | `adaptive` | first | forwards like `identity`; on a QoS alert asks for its lightest variant |
//! | `recorder` | any | persists every input through the platform |
//! | `crash:n` | first | forwards like `identity`, fails on its n-th invocation |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::connector::FlowSample;
use crate::container::{EventKind, PlatformEvent, Variant};
use crate::context::{ContextInformation, ContextNature, ContextValue};
use crate::ids::{ComponentId, Tick};
use crate::kernel::{HostTier, ReconfigurationCommand, ReplaceTarget};

/// Something a running component asks of its platform.
#[derive(Debug, Clone, PartialEq)]
pub enum AppAction {
    Reconfigure(ReconfigurationCommand),
    Persist(ContextInformation),
}

pub struct StepContext<'a> {
    pub now: Tick,
    pub component: &'a ComponentId,
    pub tier: HostTier,
    pub variants: &'a [Variant],
    pub out_ports: &'a [String],
    /// At most one sample per input port.
    pub inputs: BTreeMap<String, FlowSample>,
    /// Pending platform events, highest priority first.
    pub events: Vec<PlatformEvent>,
    pub state: &'a mut Value,
    pub(crate) outputs: Vec<(String, Value)>,
    pub(crate) actions: Vec<AppAction>,
}

impl StepContext<'_> {
    pub fn emit(&mut self, port: &str, value: Value) {
        self.outputs.push((port.to_owned(), value));
    }

    pub fn emit_all(&mut self, value: Value) {
        for p in self.out_ports {
            self.outputs.push((p.clone(), value.clone()));
        }
    }

    pub fn request(&mut self, action: AppAction) {
        self.actions.push(action);
    }

    pub fn first_input(&self) -> Option<&FlowSample> {
        self.inputs.values().next()
    }
}

pub trait Behavior: Send + Sync {
    /// Whether the component fires at `now`. A component that is not ready
    /// consumes nothing.
    fn ready(&self, _now: Tick) -> bool {
        true
    }

    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown behavior `{0}`")]
    Unknown(String),
    #[error("bad parameter for behavior `{name}`: {reason}")]
    BadParam { name: String, reason: String },
}

type Factory = Arc<dyn Fn(Option<&str>) -> Result<Box<dyn Behavior>, String> + Send + Sync>;

#[derive(Clone)]
pub struct BehaviorCatalog {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for BehaviorCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for BehaviorCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl BehaviorCatalog {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn standard() -> Self {
        let mut c = Self::empty();
        c.register("source", |p| Ok(Box::new(Source { limit: parse_param(p)? })));
        c.register("sink", |p| Ok(Box::new(Sink { period: parse_param(p)?.unwrap_or(1).max(1) })));
        c.register("identity", |_| Ok(Box::new(Identity)));
        c.register("counter", |_| Ok(Box::new(Counter)));
        c.register("aggregator", |_| Ok(Box::new(Aggregator)));
        c.register("adaptive", |_| Ok(Box::new(Adaptive)));
        c.register("recorder", |_| Ok(Box::new(Recorder)));
        c.register("crash", |p| {
            let at = parse_param(p)?.ok_or("crash needs an invocation count")?;
            Ok(Box::new(Crash { at }))
        });
        c
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(Option<&str>) -> Result<Box<dyn Behavior>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Arc::new(factory));
    }

    pub fn resolve(&self, spec: &str) -> Result<Box<dyn Behavior>, CatalogError> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (spec, None),
        };
        let factory = self.factories.get(name).ok_or_else(|| CatalogError::Unknown(spec.to_owned()))?;
        factory(param).map_err(|reason| CatalogError::BadParam { name: name.to_owned(), reason })
    }
}

fn parse_param(p: Option<&str>) -> Result<Option<u64>, String> {
    p.map(|s| s.parse::<u64>().map_err(|e| format!("`{s}`: {e}"))).transpose()
}

fn count(state: &Value) -> u64 {
    state.get("count").and_then(Value::as_u64).unwrap_or(0)
}

struct Source {
    limit: Option<u64>,
}

impl Behavior for Source {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let n = count(ctx.state);
        if self.limit.is_some_and(|l| n >= l) {
            return Ok(());
        }
        *ctx.state = json!({ "count": n + 1 });
        ctx.emit_all(json!(n + 1));
        Ok(())
    }
}

struct Sink {
    period: u64,
}

impl Behavior for Sink {
    fn ready(&self, now: Tick) -> bool {
        now.is_multiple_of(self.period)
    }

    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if ctx.inputs.is_empty() {
            return Ok(());
        }
        let n = count(ctx.state) + ctx.inputs.len() as u64;
        let last = ctx.inputs.values().last().map(|s| s.payload.clone()).unwrap_or(Value::Null);
        *ctx.state = json!({ "count": n, "last": last });
        Ok(())
    }
}

struct Identity;

impl Behavior for Identity {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if let Some(s) = ctx.first_input() {
            let v = s.payload.clone();
            ctx.emit_all(v);
        }
        Ok(())
    }
}

struct Counter;

impl Behavior for Counter {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if ctx.inputs.is_empty() {
            return Ok(());
        }
        let n = ctx.state.as_u64().unwrap_or(0) + ctx.inputs.len() as u64;
        *ctx.state = json!(n);
        ctx.emit_all(json!(n));
        Ok(())
    }
}

struct Aggregator;

impl Behavior for Aggregator {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if ctx.inputs.is_empty() {
            return Ok(());
        }
        let sum: f64 = ctx.inputs.values().filter_map(|s| s.payload.as_f64()).sum();
        ctx.emit_all(json!(sum));
        Ok(())
    }
}

/// Listener that reacts to QoS alerts by asking for its lightest variant.
struct Adaptive;

impl Behavior for Adaptive {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let alerted = ctx.events.iter().any(|e| e.kind == EventKind::QoSAlert);
        if alerted {
            let lightest = ctx.variants.iter().map(|v| v.tier).min();
            if let Some(tier) = lightest.filter(|t| *t < ctx.tier) {
                ctx.request(AppAction::Reconfigure(ReconfigurationCommand::ReplaceBusiness {
                    component: ctx.component.clone(),
                    target: ReplaceTarget::Variant(tier),
                }));
            }
        }
        if let Some(s) = ctx.first_input() {
            let v = s.payload.clone();
            ctx.emit_all(v);
        }
        Ok(())
    }
}

struct Recorder;

impl Behavior for Recorder {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let key = format!("record.{}", ctx.component);
        let records: Vec<_> = ctx
            .inputs
            .values()
            .map(|s| {
                let value = match s.payload.as_f64() {
                    Some(v) => ContextValue::number(v, ""),
                    None => ContextValue::Text(s.payload.to_string()),
                };
                ContextInformation::new(ContextNature::Hardware, key.clone(), value, ctx.component.as_str())
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for r in records {
            ctx.request(AppAction::Persist(r));
        }
        Ok(())
    }
}

struct Crash {
    at: u64,
}

impl Behavior for Crash {
    fn step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let n = count(ctx.state) + 1;
        *ctx.state = json!({ "count": n });
        if n == self.at {
            return Err(format!("crashed on invocation {n}"));
        }
        if let Some(s) = ctx.first_input() {
            let v = s.payload.clone();
            ctx.emit_all(v);
        }
        Ok(())
    }
}
