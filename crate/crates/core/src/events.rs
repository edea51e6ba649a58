//! Per-run JSONL event stream.
//!
//! Every LLM call, step, reservation attempt, verdict and plan revision lands
//! here. The log is the source of truth for cost reconciliation: summing the
//! billable token deltas and the granted reservations reproduces the online
//! cost exactly.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{unified_cost, CostBreakdown, CostError, PricingTable, TokenUsage};
use crate::ledger::{BudgetSnapshot, UsageCounter};

pub const EVENT_SCHEMA_VERSION: u32 = 1;

/// Timestamps for events. Logical clocks keep mock runs byte-identical.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Logical,
    Wall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Step { step: String, digest: String, chars: usize },
    LlmCall { purpose: String, temperature: f64, billable: bool },
    Reservation { granted: bool, tool: String, units: u64, ledger_seq: u64, error: Option<String> },
    Dispatch { tool: String, units: u64, failed: u64 },
    Verdict { raw: String, decision: String, degraded: bool, parsed: serde_json::Value },
    PlanRevision { revision: u64, plan: serde_json::Value, repaired: Vec<String>, diagnostics: Vec<String> },
    Compaction { reason: String, before_chars: usize, after_chars: usize },
    Aggregation { method: String, inputs: Vec<String>, output: String },
    AttemptEnd { status: String, answer: Option<String>, tools_dispatched: u64 },
    Note { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    pub run_id: String,
    pub seq: u64,
    pub ts: u64,
    pub attempt: u32,
    pub iteration: u32,
    #[serde(flatten)]
    pub kind: EventKind,
    pub usage: TokenUsage,
    pub ledger: Option<BudgetSnapshot>,
}

pub fn digest(payload: &str) -> String {
    let mut h = Sha256::new();
    h.update(payload.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Shared in-memory event sink.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    events: Arc<Mutex<Vec<Event>>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, e: Event) {
        self.events.lock().push(e);
    }

    pub fn extend(&self, events: impl IntoIterator<Item = Event>) {
        self.events.lock().extend(events);
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_run(&self, run_prefix: &str) -> Vec<Event> {
        self.events.lock().iter().filter(|e| e.run_id.starts_with(run_prefix)).cloned().collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.events.lock().iter() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Event>, serde_json::Error> {
    r.lines()
        .map_while(Result::ok)
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(&l))
        .collect()
}

/// Emits events for one run id with its own sequence counter and clock.
#[derive(Debug)]
pub struct Emitter {
    log: EventLog,
    run_id: String,
    clock: ClockMode,
    seq: AtomicU64,
}

impl Emitter {
    pub fn new(log: EventLog, run_id: impl Into<String>, clock: ClockMode) -> Self {
        Emitter { log, run_id: run_id.into(), clock, seq: AtomicU64::new(0) }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn child(&self, suffix: &str) -> Emitter {
        Emitter::new(self.log.clone(), format!("{}/{}", self.run_id, suffix), self.clock)
    }

    pub fn emit(
        &self,
        attempt: u32,
        iteration: u32,
        kind: EventKind,
        usage: TokenUsage,
        ledger: Option<BudgetSnapshot>,
    ) {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        let ts = match self.clock {
            ClockMode::Logical => seq,
            ClockMode::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        self.log.push(Event {
            schema_version: EVENT_SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            seq,
            ts,
            attempt,
            iteration,
            kind,
            usage,
            ledger,
        });
    }

    pub fn elapsed_ms(&self, started: std::time::Instant) -> u64 {
        match self.clock {
            ClockMode::Logical => self.seq.load(Ordering::SeqCst),
            ClockMode::Wall => started.elapsed().as_millis() as u64,
        }
    }
}

/// Billable token usage and granted tool units recorded in `events`.
pub fn replay_usage(events: &[Event]) -> (TokenUsage, UsageCounter) {
    let mut tokens = TokenUsage::default();
    let mut tools = UsageCounter::default();
    for e in events {
        match &e.kind {
            EventKind::LlmCall { billable: true, .. } => tokens += e.usage,
            EventKind::Reservation { granted: true, tool, units, .. } => tools.add(tool, *units),
            _ => {}
        }
    }
    (tokens, tools)
}

/// Recomputes the unified cost from an event stream.
pub fn reconcile(events: &[Event], pricing: &PricingTable) -> Result<CostBreakdown, CostError> {
    let (tokens, mut tools) = replay_usage(events);
    for name in pricing.tool_prices.keys() {
        tools.used.entry(name.clone()).or_insert(0);
    }
    unified_cost(&tokens, &tools, pricing)
}
