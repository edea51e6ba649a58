//! Per-question tool budgets.
//!
//! A [`Ledger`] owns the immutable [`BudgetVector`] for one question and the
//! realized usage counters. Reservation is an atomic check-then-increment:
//! a call that would push any counter past its limit is refused in full and
//! leaves the counters untouched. Granted units are never refunded, so a
//! dispatched call counts even when the provider fails afterwards.
//!
//! ```text
//!   reserve(search, 3) ──► [ used + 3 <= limit ? ] ──yes──► used += 3, Reservation{seq}
//!                                   │
//!                                   └──no──► BudgetExhausted | BatchExceedsRemaining
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

pub const SEARCH: &str = "search";
pub const BROWSE: &str = "browse";

/// One budgeted tool: its identifier, the display name used in the budget
/// block, what a unit means, and its per-call price.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub display_name: String,
    pub unit_description: String,
    pub price_per_call: Money,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolSetError {
    #[error("duplicate tool name {0:?}")]
    Duplicate(String),
    #[error("tool {0:?} has a negative price")]
    NegativePrice(String),
}

/// Ordered registry of tools. Order drives rendering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSet {
    tools: Vec<ToolSpec>,
}

impl ToolSet {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, ToolSetError> {
        for (i, t) in tools.iter().enumerate() {
            if tools[..i].iter().any(|o| o.name == t.name) {
                return Err(ToolSetError::Duplicate(t.name.clone()));
            }
            if t.price_per_call.is_negative() {
                return Err(ToolSetError::NegativePrice(t.name.clone()));
            }
        }
        Ok(ToolSet { tools })
    }

    /// The search/browse pair at $0.001 per call.
    pub fn search_agent() -> Self {
        let price = Money::from_major_decimal("0.001").expect("literal");
        ToolSet::new(vec![
            ToolSpec {
                name: SEARCH.into(),
                display_name: "Query".into(),
                unit_description: "one query string".into(),
                price_per_call: price,
            },
            ToolSpec {
                name: BROWSE.into(),
                display_name: "URL".into(),
                unit_description: "one URL".into(),
                price_per_call: price,
            },
        ])
        .expect("static tool set")
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }
}

/// Per-tool limits `b_i`. Fixed for the lifetime of a question run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetVector {
    pub limits: BTreeMap<String, u64>,
}

impl BudgetVector {
    pub fn new<I, S>(limits: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        BudgetVector { limits: limits.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn search_browse(search: u64, browse: u64) -> Self {
        Self::new([(SEARCH, search), (BROWSE, browse)])
    }

    pub fn limit(&self, tool: &str) -> Option<u64> {
        self.limits.get(tool).copied()
    }

    /// Scalar label for a budget sweep: the largest per-tool limit.
    pub fn level(&self) -> u64 {
        self.limits.values().copied().max().unwrap_or(0)
    }
}

/// Realized per-tool counts `c_i`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounter {
    pub used: BTreeMap<String, u64>,
}

impl UsageCounter {
    pub fn get(&self, tool: &str) -> u64 {
        self.used.get(tool).copied().unwrap_or(0)
    }

    pub fn add(&mut self, tool: &str, n: u64) {
        *self.used.entry(tool.to_string()).or_insert(0) += n;
    }

    pub fn total(&self) -> u64 {
        self.used.values().sum()
    }

    pub fn merged(&self, other: &UsageCounter) -> UsageCounter {
        let mut out = self.clone();
        for (k, v) in &other.used {
            out.add(k, *v);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    High,
    Medium,
    Low,
    Critical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::High => "HIGH",
            Regime::Medium => "MEDIUM",
            Regime::Low => "LOW",
            Regime::Critical => "CRITICAL",
        })
    }
}

/// Lower-closed tiers on remaining/limit: [0.7, 1] HIGH, [0.3, 0.7) MEDIUM,
/// [0.1, 0.3) LOW, [0, 0.1) CRITICAL. Integer arithmetic, no float edges.
pub fn classify_regime(remaining: u64, limit: u64) -> Regime {
    debug_assert!(limit >= 1 && remaining <= limit);
    let r = remaining as u128 * 100;
    let l = limit as u128;
    if r >= 70 * l {
        Regime::High
    } else if r >= 30 * l {
        Regime::Medium
    } else if r >= 10 * l {
        Regime::Low
    } else {
        Regime::Critical
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolBudget {
    pub tool: String,
    pub display_name: String,
    pub limit: u64,
    pub used: u64,
    pub remaining: u64,
    pub regime: Regime,
}

/// Point-in-time view of a ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSnapshot {
    pub tools: Vec<ToolBudget>,
}

impl BudgetSnapshot {
    pub fn get(&self, tool: &str) -> Option<&ToolBudget> {
        self.tools.iter().find(|t| t.tool == tool)
    }

    pub fn any_exhausted(&self) -> bool {
        self.tools.iter().any(|t| t.remaining == 0)
    }

    pub fn all_exhausted(&self) -> bool {
        self.tools.iter().all(|t| t.remaining == 0)
    }

    pub fn total_remaining(&self) -> u64 {
        self.tools.iter().map(|t| t.remaining).sum()
    }

    pub fn usage(&self) -> UsageCounter {
        UsageCounter { used: self.tools.iter().map(|t| (t.tool.clone(), t.used)).collect() }
    }
}

pub const BUDGET_BLOCK_CLOSING_SENTENCE: &str = "Make the best use of the available resources.";

/// Renders the tracker block injected after every tool response.
pub fn render_budget_block(snapshot: &BudgetSnapshot) -> String {
    let mut out = String::from("<budget>\n");
    for t in &snapshot.tools {
        out.push_str(&format!(
            "{name} Budget Used: {used}, {name} Budget Remaining: {remaining}\n",
            name = t.display_name,
            used = t.used,
            remaining = t.remaining
        ));
    }
    out.push_str(BUDGET_BLOCK_CLOSING_SENTENCE);
    out.push_str("\n</budget>");
    out
}

/// Granted reservation. `seq` orders every reservation attempt on a ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub tool: String,
    pub units: u64,
    pub seq: u64,
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerError {
    #[error("tool {tool:?} is not registered")]
    UnknownTool { tool: String, seq: u64 },
    #[error("reservation of zero units for {tool:?}")]
    ZeroUnits { tool: String, seq: u64 },
    #[error("{tool} budget exhausted")]
    BudgetExhausted { tool: String, seq: u64 },
    #[error("{tool}: requested {requested} units but only {remaining} remain")]
    BatchExceedsRemaining { tool: String, requested: u64, remaining: u64, seq: u64 },
}

impl LedgerError {
    pub fn seq(&self) -> u64 {
        match self {
            LedgerError::UnknownTool { seq, .. }
            | LedgerError::ZeroUnits { seq, .. }
            | LedgerError::BudgetExhausted { seq, .. }
            | LedgerError::BatchExceedsRemaining { seq, .. } => *seq,
        }
    }
}

#[derive(Debug)]
struct LedgerState {
    used: BTreeMap<String, u64>,
    next_seq: u64,
}

/// Shared per-question budget ledger.
#[derive(Debug)]
pub struct Ledger {
    tools: ToolSet,
    limits: BudgetVector,
    state: Mutex<LedgerState>,
}

pub type SharedLedger = Arc<Ledger>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerConfigError {
    #[error("budget names unregistered tool {0:?}")]
    UnregisteredTool(String),
    #[error("registered tool {0:?} has no budget")]
    MissingLimit(String),
}

impl Ledger {
    pub fn new(tools: ToolSet, limits: BudgetVector) -> Result<Self, LedgerConfigError> {
        for name in limits.limits.keys() {
            if tools.get(name).is_none() {
                return Err(LedgerConfigError::UnregisteredTool(name.clone()));
            }
        }
        for name in tools.names() {
            if limits.limit(name).is_none() {
                return Err(LedgerConfigError::MissingLimit(name.to_string()));
            }
        }
        let used = tools.names().map(|n| (n.to_string(), 0)).collect();
        Ok(Ledger { tools, limits, state: Mutex::new(LedgerState { used, next_seq: 0 }) })
    }

    pub fn shared(tools: ToolSet, limits: BudgetVector) -> Result<SharedLedger, LedgerConfigError> {
        Self::new(tools, limits).map(Arc::new)
    }

    pub fn tools(&self) -> &ToolSet {
        &self.tools
    }

    pub fn limits(&self) -> &BudgetVector {
        &self.limits
    }

    /// Atomically reserves `units` of `tool`, all or nothing.
    pub fn reserve(&self, tool: &str, units: u64) -> Result<Reservation, LedgerError> {
        let mut st = self.state.lock();
        let seq = st.next_seq;
        st.next_seq += 1;
        let Some(limit) = self.limits.limit(tool) else {
            return Err(LedgerError::UnknownTool { tool: tool.to_string(), seq });
        };
        if units == 0 {
            return Err(LedgerError::ZeroUnits { tool: tool.to_string(), seq });
        }
        let used = st.used.get(tool).copied().unwrap_or(0);
        let remaining = limit - used;
        if remaining == 0 {
            return Err(LedgerError::BudgetExhausted { tool: tool.to_string(), seq });
        }
        if units > remaining {
            return Err(LedgerError::BatchExceedsRemaining {
                tool: tool.to_string(),
                requested: units,
                remaining,
                seq,
            });
        }
        st.used.insert(tool.to_string(), used + units);
        Ok(Reservation { tool: tool.to_string(), units, seq })
    }

    pub fn remaining(&self, tool: &str) -> Option<u64> {
        let st = self.state.lock();
        self.limits.limit(tool).map(|l| l - st.used.get(tool).copied().unwrap_or(0))
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        let st = self.state.lock();
        let tools = self
            .tools
            .iter()
            .map(|spec| {
                let limit = self.limits.limit(&spec.name).unwrap_or(0);
                let used = st.used.get(&spec.name).copied().unwrap_or(0);
                let remaining = limit - used;
                ToolBudget {
                    tool: spec.name.clone(),
                    display_name: spec.display_name.clone(),
                    limit,
                    used,
                    remaining,
                    regime: if limit == 0 { Regime::Critical } else { classify_regime(remaining, limit) },
                }
            })
            .collect();
        BudgetSnapshot { tools }
    }

    pub fn usage(&self) -> UsageCounter {
        let st = self.state.lock();
        UsageCounter { used: st.used.clone() }
    }

    pub fn any_exhausted(&self) -> bool {
        self.snapshot().any_exhausted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn ledger(search: u64, browse: u64) -> Ledger {
        Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(search, browse)).unwrap()
    }

    fn fill(l: &Ledger, tool: &str, n: u64) {
        if n > 0 {
            l.reserve(tool, n).unwrap();
        }
    }

    #[test]
    fn boundary_fill_succeeds() {
        let l = ledger(10, 10);
        fill(&l, SEARCH, 9);
        assert!(l.reserve(SEARCH, 1).is_ok());
        assert_eq!(l.usage().get(SEARCH), 10);
    }

    #[test]
    fn exhausted_is_refused() {
        let l = ledger(10, 10);
        fill(&l, SEARCH, 10);
        assert!(matches!(l.reserve(SEARCH, 1), Err(LedgerError::BudgetExhausted { .. })));
    }

    #[test]
    fn oversized_batch_leaves_usage_untouched() {
        let l = ledger(10, 10);
        fill(&l, SEARCH, 8);
        match l.reserve(SEARCH, 5) {
            Err(LedgerError::BatchExceedsRemaining { requested: 5, remaining: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(l.usage().get(SEARCH), 8);
    }

    #[test]
    fn unknown_tool_and_zero_units_rejected() {
        let l = ledger(1, 1);
        assert!(matches!(l.reserve("calc", 1), Err(LedgerError::UnknownTool { .. })));
        assert!(matches!(l.reserve(SEARCH, 0), Err(LedgerError::ZeroUnits { .. })));
    }

    #[test]
    fn sequence_numbers_cover_denials() {
        let l = ledger(1, 1);
        assert_eq!(l.reserve(SEARCH, 1).unwrap().seq, 0);
        assert_eq!(l.reserve(SEARCH, 1).unwrap_err().seq(), 1);
        assert_eq!(l.reserve(BROWSE, 1).unwrap().seq, 2);
    }

    #[test]
    fn config_must_cover_registered_tools() {
        let err = Ledger::new(ToolSet::search_agent(), BudgetVector::new([(SEARCH, 3)])).unwrap_err();
        assert_eq!(err, LedgerConfigError::MissingLimit(BROWSE.into()));
        let err = Ledger::new(
            ToolSet::search_agent(),
            BudgetVector::new([(SEARCH, 3), (BROWSE, 3), ("calc", 1)]),
        )
        .unwrap_err();
        assert_eq!(err, LedgerConfigError::UnregisteredTool("calc".into()));
    }

    #[test]
    fn duplicate_tool_names_rejected() {
        let mut tools: Vec<ToolSpec> = ToolSet::search_agent().iter().cloned().collect();
        tools.push(tools[0].clone());
        assert!(matches!(ToolSet::new(tools), Err(ToolSetError::Duplicate(_))));
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(70, 100), Regime::High);
        assert_eq!(classify_regime(10, 100), Regime::Low);
        assert_eq!(classify_regime(0, 100), Regime::Critical);
        for limit in 1..200 {
            assert_eq!(classify_regime(limit, limit), Regime::High);
            assert_eq!(classify_regime(0, limit), Regime::Critical);
        }
    }

    #[test]
    fn snapshot_examples() {
        let l = ledger(10, 10);
        let s = l.snapshot();
        assert!(s.tools.iter().all(|t| t.used == 0 && t.remaining == t.limit));
        fill(&l, SEARCH, 3);
        let s = l.snapshot();
        let t = s.get(SEARCH).unwrap();
        assert_eq!((t.used, t.remaining), (3, 7));
    }

    #[test]
    fn budget_block_format() {
        let l = ledger(10, 10);
        fill(&l, SEARCH, 2);
        let block = render_budget_block(&l.snapshot());
        assert_eq!(
            block,
            "<budget>\n\
             Query Budget Used: 2, Query Budget Remaining: 8\n\
             URL Budget Used: 0, URL Budget Remaining: 10\n\
             Make the best use of the available resources.\n\
             </budget>"
        );
        let fresh = render_budget_block(&ledger(100, 100).snapshot());
        assert!(fresh.contains("Query Budget Used: 0, Query Budget Remaining: 100"));
        let done = ledger(2, 3);
        fill(&done, SEARCH, 2);
        fill(&done, BROWSE, 3);
        let block = render_budget_block(&done.snapshot());
        assert_eq!(block.matches("Remaining: 0").count(), 2);
    }

    /// Every interleaving of two single-unit reservations on the last unit:
    /// run both orders sequentially, then race real threads many times.
    #[test]
    fn last_unit_goes_to_exactly_one_contender() {
        for order in [[0usize, 1], [1, 0]] {
            let l = ledger(10, 10);
            fill(&l, SEARCH, 9);
            let results: Vec<bool> = order.iter().map(|_| l.reserve(SEARCH, 1).is_ok()).collect();
            assert_eq!(results.iter().filter(|ok| **ok).count(), 1);
            assert_eq!(l.snapshot().get(SEARCH).unwrap().used, 10);
        }
        for _ in 0..200 {
            let l = Arc::new(ledger(10, 10));
            fill(&l, SEARCH, 9);
            let handles: Vec<_> = (0..2)
                .map(|_| {
                    let l = Arc::clone(&l);
                    thread::spawn(move || l.reserve(SEARCH, 1).is_ok())
                })
                .collect();
            let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
            assert_eq!(wins, 1);
            assert_eq!(l.snapshot().get(SEARCH).unwrap().used, 10);
        }
    }

    #[test]
    fn concurrent_stress_linearizes() {
        let l = Arc::new(ledger(500, 300));
        let granted: Vec<Vec<Reservation>> = (0..8)
            .map(|w| {
                let l = Arc::clone(&l);
                thread::spawn(move || {
                    let mut mine = Vec::new();
                    for i in 0..200u64 {
                        let tool = if (i + w) % 3 == 0 { BROWSE } else { SEARCH };
                        let n = 1 + (i * 7 + w) % 5;
                        let before = l.snapshot();
                        for t in &before.tools {
                            assert!(t.used <= t.limit);
                            assert_eq!(t.used + t.remaining, t.limit);
                        }
                        if let Ok(r) = l.reserve(tool, n) {
                            mine.push(r);
                        }
                    }
                    mine
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect();
        let usage = l.usage();
        for tool in [SEARCH, BROWSE] {
            let sum: u64 = granted.iter().flatten().filter(|r| r.tool == tool).map(|r| r.units).sum();
            assert_eq!(sum, usage.get(tool));
            assert!(usage.get(tool) <= l.limits().limit(tool).unwrap());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn regime_is_step_function(limit in 1u64..10_000, rem_frac in 0.0f64..=1.0) {
                let remaining = ((limit as f64) * rem_frac).floor() as u64;
                let f = remaining as f64 / limit as f64;
                let expect = if remaining * 100 >= 70 * limit { Regime::High }
                    else if remaining * 100 >= 30 * limit { Regime::Medium }
                    else if remaining * 100 >= 10 * limit { Regime::Low }
                    else { Regime::Critical };
                prop_assert_eq!(classify_regime(remaining, limit), expect);
                if f >= 0.7 + 1e-9 { prop_assert_eq!(expect, Regime::High); }
                if f < 0.1 - 1e-9 { prop_assert_eq!(expect, Regime::Critical); }
            }

            #[test]
            fn failed_reserve_never_changes_usage(
                limit in 1u64..50,
                ops in proptest::collection::vec((0u8..2, 1u64..8), 1..60),
            ) {
                let l = ledger(limit, limit);
                let mut granted = UsageCounter::default();
                for (t, n) in ops {
                    let tool = if t == 0 { SEARCH } else { BROWSE };
                    let before = l.usage();
                    match l.reserve(tool, n) {
                        Ok(r) => granted.add(&r.tool, r.units),
                        Err(_) => prop_assert_eq!(l.usage(), before),
                    }
                    for tb in l.snapshot().tools {
                        prop_assert!(tb.used <= tb.limit);
                    }
                }
                prop_assert_eq!(granted.get(SEARCH), l.usage().get(SEARCH));
                prop_assert_eq!(granted.get(BROWSE), l.usage().get(BROWSE));
            }
        }
    }
}
