//! Budget-aware planning: constraint decomposition and the checklist plan.
//!
//! The plan lives in the model's text. The runtime keeps a parsed mirror,
//! enforces append-only history on it by re-inserting anything a revision
//! dropped, and reports resource-log discrepancies without touching the
//! model's text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::TokenUsage;
use crate::ledger::{UsageCounter, BROWSE, SEARCH};
use crate::providers::{CallPurpose, ChatRequest, LlmProvider, ProviderError, Turn};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub exploration: Vec<String>,
    pub verification: Vec<String>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.exploration.is_empty() && self.verification.is_empty()
    }

    /// Text block seeded into the agent's first turn.
    pub fn render(&self) -> String {
        let list = |v: &[String]| v.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n");
        format!(
            "Constraint analysis:\nExploration:\n{}\nVerification:\n{}",
            list(&self.exploration),
            list(&self.verification)
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no plan found")]
    NoPlanFound,
    #[error("no exploration/verification sections in reply")]
    ConstraintParse,
}

pub const DECOMPOSE_SYSTEM: &str = "You analyze information-seeking questions before any search happens.

Questions contain two types of constraints: exploration and verification.
* Exploration: Broad, core requirements (e.g., birthday, profession). Use these for initial searches to surface candidates.
* Verification: Narrow, specific details. Apply these only after you have candidates, to confirm or filter them.
Start with exploration queries, then use verification to validate the results.

List every clue in the question under exactly one heading, one clue per line:
Exploration:
- <clue>
Verification:
- <clue>";

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses `Exploration:` / `Verification:` bullet sections. A clue listed
/// under both headings stays in exploration only.
pub fn parse_constraints(reply: &str) -> Result<ConstraintSet, PlanError> {
    #[derive(PartialEq)]
    enum Sec {
        None,
        Exp,
        Ver,
    }
    let mut sec = Sec::None;
    let mut seen_header = false;
    let mut exp: Vec<String> = Vec::new();
    let mut ver: Vec<String> = Vec::new();
    for line in reply.lines() {
        let t = line.trim().trim_start_matches('#').trim().trim_matches('*').trim();
        let lower = t.to_lowercase();
        if lower.starts_with("exploration") && lower.ends_with(':') {
            sec = Sec::Exp;
            seen_header = true;
            continue;
        }
        if lower.starts_with("verification") && lower.ends_with(':') {
            sec = Sec::Ver;
            seen_header = true;
            continue;
        }
        let item = t.trim_start_matches(['-', '*', '•']).trim();
        let item = item.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start_matches(['.', ')']).trim();
        if item.is_empty() {
            continue;
        }
        match sec {
            Sec::Exp => exp.push(item.to_string()),
            Sec::Ver => ver.push(item.to_string()),
            Sec::None => {}
        }
    }
    if !seen_header {
        return Err(PlanError::ConstraintParse);
    }
    let mut seen = BTreeSet::new();
    exp.retain(|c| seen.insert(norm(c)));
    ver.retain(|c| seen.insert(norm(c)));
    Ok(ConstraintSet { exploration: exp, verification: ver })
}

/// Asks the model for a constraint decomposition, retrying a bad reply once.
/// Falls back to an empty set so the run proceeds without one.
pub fn decompose_constraints(
    question: &str,
    llm: &dyn LlmProvider,
    temperature: f64,
    seed: Option<u64>,
) -> Result<(ConstraintSet, Vec<TokenUsage>), ProviderError> {
    let mut usages = Vec::new();
    let mut turns = vec![Turn::user(format!("Question: {question}"))];
    for attempt in 0..2 {
        let mut req = ChatRequest::new(CallPurpose::Decompose, DECOMPOSE_SYSTEM, turns.clone(), temperature);
        req.seed = seed;
        let resp = llm.chat(&req)?;
        usages.push(resp.usage);
        match parse_constraints(&resp.text) {
            Ok(c) => return Ok((c, usages)),
            Err(_) if attempt == 0 => {
                turns.push(Turn::assistant(resp.text));
                turns.push(Turn::user(
                    "Reply again using exactly the two headings `Exploration:` and `Verification:` with one clue per line.",
                ));
            }
            Err(_) => {}
        }
    }
    log::warn!("constraint decomposition unparseable twice; continuing without it");
    Ok((ConstraintSet::default(), usages))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Done,
    Failed,
    Partial,
}

impl StepStatus {
    pub fn marker(&self) -> &'static str {
        match self {
            StepStatus::Pending => "[ ]",
            StepStatus::Done => "[x]",
            StepStatus::Failed => "[!]",
            StepStatus::Partial => "[~]",
        }
    }

    fn from_mark(c: &str) -> Option<Self> {
        match c {
            " " => Some(StepStatus::Pending),
            "x" | "X" => Some(StepStatus::Done),
            "!" => Some(StepStatus::Failed),
            "~" => Some(StepStatus::Partial),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLog {
    pub query_count: u64,
    pub url_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub description: String,
    pub status: StepStatus,
    pub resources: Option<ResourceLog>,
    pub children: Vec<PlanNode>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub roots: Vec<PlanNode>,
    pub revision: u64,
}

/// A node without its children, in preorder.
#[derive(Clone, Debug, PartialEq, Eq)]
struct FlatNode {
    id: String,
    description: String,
    status: StepStatus,
    resources: Option<ResourceLog>,
}

fn parent_id(id: &str) -> Option<&str> {
    if id.starts_with('~') {
        return None;
    }
    id.rfind('.').map(|i| &id[..i])
}

impl Plan {
    fn flatten(&self) -> Vec<FlatNode> {
        fn walk(n: &PlanNode, out: &mut Vec<FlatNode>) {
            out.push(FlatNode {
                id: n.id.clone(),
                description: n.description.clone(),
                status: n.status,
                resources: n.resources,
            });
            for c in &n.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        for r in &self.roots {
            walk(r, &mut out);
        }
        out
    }

    /// Rebuilds a tree from preorder nodes; a missing parent becomes a
    /// pending placeholder so every path stays a valid tree.
    fn from_flat(nodes: Vec<FlatNode>, revision: u64) -> Plan {
        let mut order: Vec<String> = Vec::new();
        let mut data: BTreeMap<String, FlatNode> = BTreeMap::new();
        fn ensure(id: &str, order: &mut Vec<String>, data: &mut BTreeMap<String, FlatNode>) {
            if data.contains_key(id) {
                return;
            }
            if let Some(p) = parent_id(id) {
                ensure(p, order, data);
            }
            order.push(id.to_string());
            data.insert(
                id.to_string(),
                FlatNode { id: id.to_string(), description: String::new(), status: StepStatus::Pending, resources: None },
            );
        }
        for n in nodes {
            if let Some(p) = parent_id(&n.id) {
                ensure(p, &mut order, &mut data);
            }
            if !data.contains_key(&n.id) {
                order.push(n.id.clone());
            }
            data.insert(n.id.clone(), n);
        }
        let mut children: BTreeMap<Option<String>, Vec<String>> = BTreeMap::new();
        for id in &order {
            children.entry(parent_id(id).map(str::to_string)).or_default().push(id.clone());
        }
        fn build(id: &str, data: &BTreeMap<String, FlatNode>, children: &BTreeMap<Option<String>, Vec<String>>) -> PlanNode {
            let f = &data[id];
            PlanNode {
                id: f.id.clone(),
                description: f.description.clone(),
                status: f.status,
                resources: f.resources,
                children: children
                    .get(&Some(id.to_string()))
                    .map(|cs| cs.iter().map(|c| build(c, data, children)).collect())
                    .unwrap_or_default(),
            }
        }
        let roots = children
            .get(&None)
            .map(|rs| rs.iter().map(|r| build(r, &data, &children)).collect())
            .unwrap_or_default();
        Plan { roots, revision }
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.flatten().into_iter().map(|n| n.id).collect()
    }

    pub fn node(&self, id: &str) -> Option<PlanNode> {
        fn find(ns: &[PlanNode], id: &str) -> Option<PlanNode> {
            for n in ns {
                if n.id == id {
                    return Some(n.clone());
                }
                if let Some(f) = find(&n.children, id) {
                    return Some(f);
                }
            }
            None
        }
        find(&self.roots, id)
    }

    pub fn len(&self) -> usize {
        self.flatten().len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn resource_totals(&self) -> ResourceLog {
        self.flatten().iter().filter_map(|n| n.resources).fold(
            ResourceLog { query_count: 0, url_count: 0 },
            |a, r| ResourceLog { query_count: a.query_count + r.query_count, url_count: a.url_count + r.url_count },
        )
    }

    /// Self-reported resource totals that exceed what the ledger recorded.
    pub fn resource_diagnostics(&self, used: &UsageCounter) -> Vec<String> {
        let t = self.resource_totals();
        let mut out = Vec::new();
        if t.query_count > used.get(SEARCH) {
            out.push(format!("plan logs Query={} but ledger shows {}", t.query_count, used.get(SEARCH)));
        }
        if t.url_count > used.get(BROWSE) {
            out.push(format!("plan logs URL={} but ledger shows {}", t.url_count, used.get(BROWSE)));
        }
        out
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(n: &PlanNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let indent = "  ".repeat(depth);
            let id = if n.id.starts_with('~') { String::new() } else { format!("{} ", n.id) };
            write!(f, "{indent}- {} {id}{}", n.status.marker(), n.description)?;
            if let Some(r) = n.resources {
                write!(f, " (Query={}, URL={})", r.query_count, r.url_count)?;
            }
            writeln!(f)?;
            for c in &n.children {
                walk(c, depth + 1, f)?;
            }
            Ok(())
        }
        for r in &self.roots {
            walk(r, 0, f)?;
        }
        Ok(())
    }
}

fn plan_line_re() -> Regex {
    Regex::new(
        r"^\s*(?:[-*+]\s*)?\[([ xX!~])\]\s*(?:(\d+(?:\.\d+)*)\.?(?:\s+|$))?(.*?)\s*(?:\(\s*Query\s*=\s*(\d+)\s*,\s*URL\s*=\s*(\d+)\s*\))?\s*$",
    )
    .expect("plan regex")
}

/// Parses checklist lines. Lines that do not parse are kept as pending
/// opaque steps keyed by a digest of their text.
pub fn parse_plan_block(text: &str) -> Result<Plan, PlanError> {
    let re = plan_line_re();
    let mut nodes = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match re.captures(line) {
            Some(c) if c.get(2).is_some() => {
                let resources = match (c.get(4), c.get(5)) {
                    (Some(q), Some(u)) => Some(ResourceLog {
                        query_count: q.as_str().parse().unwrap_or(0),
                        url_count: u.as_str().parse().unwrap_or(0),
                    }),
                    _ => None,
                };
                nodes.push(FlatNode {
                    id: c[2].to_string(),
                    description: c[3].trim().to_string(),
                    status: StepStatus::from_mark(&c[1]).unwrap_or(StepStatus::Pending),
                    resources,
                });
            }
            _ => {
                let t = line.trim().to_string();
                nodes.push(FlatNode {
                    id: format!("~{}", crate::events::digest(&t)),
                    description: t,
                    status: StepStatus::Pending,
                    resources: None,
                });
            }
        }
    }
    if nodes.is_empty() {
        return Err(PlanError::NoPlanFound);
    }
    Ok(Plan::from_flat(nodes, 0))
}

/// Merges a revision into the mirror. Returns the ids the revision dropped,
/// which were restored from `old`.
pub fn merge_plan_update(old: &Plan, new: &Plan) -> (Plan, Vec<String>) {
    let new_flat = new.flatten();
    let new_by_id: BTreeMap<&str, &FlatNode> = new_flat.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut repaired = Vec::new();
    let mut merged: Vec<FlatNode> = Vec::new();
    for o in old.flatten() {
        match new_by_id.get(o.id.as_str()) {
            Some(n) => merged.push((*n).clone()),
            None => {
                repaired.push(o.id.clone());
                merged.push(o);
            }
        }
    }
    let old_ids = old.ids();
    merged.extend(new_flat.iter().filter(|n| !old_ids.contains(&n.id)).cloned());
    if !repaired.is_empty() {
        log::info!("plan revision dropped {:?}; restored", repaired);
    }
    (Plan::from_flat(merged, old.revision + 1), repaired)
}
