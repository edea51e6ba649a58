//! Synthetic search world.
//!
//! A world is a chain of `depth` records. The question names the first
//! record's key; each chain record's card names its successor's key (plus
//! `branching - 1` dead-end decoys), and only the last record carries the
//! gold codeword. Keys are random tokens and are the only indexed terms, so
//! a policy can only reach record `i` after observing key `i`, and the gold
//! answer needs exactly `depth` tool calls.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    BrowseProvider, CallPurpose, ChatRequest, PageContent, ProviderError, Role, SearchProvider, SearchResult,
    BROWSE_CHAR_CAP, SEARCH_TOP_K,
};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "ven", "tor", "sa", "el", "dun", "ri", "qua", "bel", "zo", "ny", "fa", "gor", "the", "pi",
    "wen", "ast", "ul",
];

const FILLER: &str = "The archive entry lists provenance notes, cataloguing remarks and cross references \
that do not change the facts stated above. ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Chain { level: u32 },
    Decoy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: u32,
    pub key: String,
    pub kind: RecordKind,
    pub url: String,
    pub snippet: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldTarget {
    pub question: String,
    pub gold: String,
    pub depth: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub branching: u32,
    pub records: Vec<Record>,
    pub target: WorldTarget,
    pub start_key: String,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn fresh_key(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    loop {
        let mut k = String::from("r");
        for _ in 0..7 {
            k.push(ALNUM[rng.gen_range(0..ALNUM.len())] as char);
        }
        if taken.insert(k.clone()) {
            return k;
        }
    }
}

fn codeword(rng: &mut ChaCha8Rng) -> String {
    let mut word = |n: usize| {
        let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        w[..1].make_ascii_uppercase();
        w
    };
    let a = word(2);
    let b = word(3);
    format!("{a} {b}")
}

fn url_for(seed: u64, key: &str) -> String {
    format!("https://synthetic.world/{seed}/record/{key}")
}

impl SyntheticWorld {
    /// Deterministic in `(seed, depth, branching)`.
    pub fn build(seed: u64, depth: u32, branching: u32) -> SyntheticWorld {
        assert!(depth >= 1, "depth must be at least 1");
        assert!(branching >= 2, "branching must be at least 2");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taken = HashSet::new();
        let chain_keys: Vec<String> = (0..depth).map(|_| fresh_key(&mut rng, &mut taken)).collect();
        let gold = codeword(&mut rng);
        let mut records = Vec::new();
        let push = |records: &mut Vec<Record>, key: String, kind: RecordKind, snippet: String, paras: usize| {
            let url = url_for(seed, &key);
            let detail = format!("Record {key}\n\n{snippet}\n\n{}", FILLER.repeat(paras));
            records.push(Record { id: records.len() as u32, key, kind, url, snippet, detail });
        };
        for (level, key) in chain_keys.iter().enumerate() {
            let paras = rng.gen_range(3..12);
            if level + 1 == depth as usize {
                let snippet = format!("Record {key}. Final record in chain. Codeword: {gold}.");
                push(&mut records, key.clone(), RecordKind::Chain { level: level as u32 }, snippet, paras);
                continue;
            }
            let decoys: Vec<String> = (1..branching).map(|_| fresh_key(&mut rng, &mut taken)).collect();
            let snippet = format!(
                "Record {key}. Successor: {next}. Related: {related}.",
                next = chain_keys[level + 1],
                related = decoys.join(", ")
            );
            push(&mut records, key.clone(), RecordKind::Chain { level: level as u32 }, snippet, paras);
            for d in decoys {
                let fake = codeword(&mut rng);
                let snippet = format!("Record {d}. Dead end. Codeword: {fake}.");
                push(&mut records, d, RecordKind::Decoy, snippet, 2);
            }
        }
        let start_key = chain_keys[0].clone();
        let question = format!(
            "Begin at record {start_key} and follow its successor links until you reach the final record in \
             the chain. What is the codeword of that final record?"
        );
        SyntheticWorld {
            seed,
            branching,
            records,
            target: WorldTarget { question, gold, depth },
            start_key,
        }
    }

    pub fn depth(&self) -> u32 {
        self.target.depth
    }

    pub fn record_by_key(&self, key: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.key == key)
    }

    pub fn record_by_url(&self, url: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.url == url)
    }

    /// Token-overlap ranking over record keys, ties by record id.
    pub fn search_one(&self, query: &str) -> Vec<SearchResult> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scored: Vec<(usize, u32, &Record)> = self
            .records
            .iter()
            .map(|r| (terms.contains(&r.key) as usize, r.id, r))
            .filter(|(s, _, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(SEARCH_TOP_K)
            .map(|(_, _, r)| SearchResult { title: format!("Record {}", r.key), snippet: r.snippet.clone(), url: r.url.clone() })
            .collect()
    }

    /// Shortest number of tool calls after which a knowledge-respecting
    /// policy can have observed the gold answer, searching exhaustively up to
    /// `max_calls`. Knowledge is the set of record keys and URLs observed;
    /// actions are a search for any single known key, one search over all
    /// known keys, and a browse of any known URL.
    pub fn shortest_solution(&self, max_calls: u32) -> Option<u32> {
        let index: HashSet<&str> = self.records.iter().map(|r| r.key.as_str()).collect();
        let gold = self.target.gold.as_str();
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        struct Know {
            keys: BTreeSet<String>,
            urls: BTreeSet<String>,
        }
        let absorb = |k: &mut Know, text: &str| -> bool {
            for t in tokenize(text) {
                if index.contains(t.as_str()) {
                    k.keys.insert(t);
                }
            }
            for w in text.split_whitespace() {
                if w.starts_with("https://") {
                    k.urls.insert(w.trim_end_matches(['.', ',']).to_string());
                }
            }
            text.contains(gold)
        };
        let mut start = Know { keys: BTreeSet::new(), urls: BTreeSet::new() };
        if absorb(&mut start, &self.target.question) {
            return Some(0);
        }
        let mut frontier: HashSet<Know> = HashSet::from([start]);
        let mut seen: HashSet<Know> = frontier.clone();
        for calls in 1..=max_calls {
            let mut next = HashSet::new();
            for k in &frontier {
                let mut observations: Vec<String> = Vec::new();
                for key in &k.keys {
                    observations.push(render_results(&self.search_one(key)));
                }
                if k.keys.len() > 1 {
                    let all: Vec<&str> = k.keys.iter().map(String::as_str).collect();
                    observations.push(render_results(&self.search_one(&all.join(" "))));
                }
                for url in &k.urls {
                    let page = self.record_by_url(url).map(|r| r.detail.clone()).unwrap_or_default();
                    observations.push(page);
                }
                for obs in observations {
                    let mut k2 = k.clone();
                    if absorb(&mut k2, &obs) {
                        return Some(calls);
                    }
                    if seen.insert(k2.clone()) {
                        next.insert(k2);
                    }
                }
            }
            if next.is_empty() {
                return None;
            }
            frontier = next;
        }
        None
    }
}

fn render_results(results: &[SearchResult]) -> String {
    results
        .iter()
        .map(|r| format!("{} {} {}", r.title, r.snippet, r.url))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Search and browse over one or more synthetic worlds.
#[derive(Debug, Clone)]
pub struct WorldProvider {
    worlds: Vec<Arc<SyntheticWorld>>,
    by_url: HashMap<String, (usize, usize)>,
    cap: usize,
}

impl WorldProvider {
    pub fn new(worlds: Vec<Arc<SyntheticWorld>>) -> Self {
        let mut by_url = HashMap::new();
        for (wi, w) in worlds.iter().enumerate() {
            for (ri, r) in w.records.iter().enumerate() {
                by_url.insert(r.url.clone(), (wi, ri));
            }
        }
        WorldProvider { worlds, by_url, cap: BROWSE_CHAR_CAP }
    }

    pub fn single(world: SyntheticWorld) -> Self {
        Self::new(vec![Arc::new(world)])
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn worlds(&self) -> &[Arc<SyntheticWorld>] {
        &self.worlds
    }
}

impl SearchProvider for WorldProvider {
    fn search(&self, queries: &[String]) -> Result<Vec<Vec<SearchResult>>, ProviderError> {
        if queries.iter().any(|q| q.trim().is_empty()) {
            return Err(ProviderError::EmptyQuery);
        }
        Ok(queries
            .iter()
            .map(|q| {
                let mut all: Vec<SearchResult> = self.worlds.iter().flat_map(|w| w.search_one(q)).collect();
                all.truncate(SEARCH_TOP_K);
                all
            })
            .collect())
    }
}

impl BrowseProvider for WorldProvider {
    fn browse(&self, urls: &[String], _goal: &str) -> Result<Vec<PageContent>, ProviderError> {
        Ok(urls
            .iter()
            .map(|u| match self.by_url.get(u) {
                Some(&(wi, ri)) => PageContent::capped(u.clone(), &self.worlds[wi].records[ri].detail, self.cap),
                None => PageContent::error(u.clone(), "unknown URL"),
            })
            .collect())
    }
}

/// How a [`WorldPolicy`] decides when to stop following the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStyle {
    /// Follows successors until the codeword appears or budget runs out.
    BudgetAware,
    /// Concludes after `max_searches` searches with its best guess.
    BudgetBlind { max_searches: u32 },
    /// Budget-aware when the context carries a budget block, otherwise blind.
    Adaptive { blind_max_searches: u32 },
}

/// A deterministic mock model that solves synthetic-world questions, and
/// answers the verifier, planner and judge prompts well enough to drive the
/// whole runtime offline.
#[derive(Clone, Debug)]
pub struct WorldPolicy {
    pub style: PolicyStyle,
}

struct ChainView {
    successor: Option<String>,
    codeword: Option<String>,
    start: Option<String>,
}

fn chain_view(text: &str) -> ChainView {
    let succ = Regex::new(r"Successor: (r[a-z0-9]{7})").expect("regex");
    let fin = Regex::new(r"Final record in chain\. Codeword: ([A-Za-z]+ [A-Za-z]+)\.").expect("regex");
    let start = Regex::new(r"Begin at record (r[a-z0-9]{7})").expect("regex");
    ChainView {
        successor: succ.captures_iter(text).last().map(|c| c[1].to_string()),
        codeword: fin.captures_iter(text).last().map(|c| c[1].to_string()),
        start: start.captures(text).map(|c| c[1].to_string()),
    }
}

fn search_call(key: &str) -> String {
    format!(
        "<think>\nFollow the chain to record {key}.\n</think>\n<tool_code>\n{{\"name\": \"search\", \"arguments\": {{\"query\": [\"{key}\"]}}}}\n</tool_code>"
    )
}

fn answer(text: &str) -> String {
    format!("<think>\nI have what I need.\n</think>\n<answer>{text}</answer>")
}

impl WorldPolicy {
    pub fn aware() -> Self {
        WorldPolicy { style: PolicyStyle::BudgetAware }
    }

    pub fn blind(max_searches: u32) -> Self {
        WorldPolicy { style: PolicyStyle::BudgetBlind { max_searches } }
    }

    pub fn adaptive(blind_max_searches: u32) -> Self {
        WorldPolicy { style: PolicyStyle::Adaptive { blind_max_searches } }
    }

    fn agent_reply(&self, req: &ChatRequest) -> String {
        let text = req.rendered();
        let view = chain_view(&text);
        if let Some(code) = view.codeword {
            return answer(&code);
        }
        if req.purpose == CallPurpose::FinalAnswer {
            return answer("None");
        }
        let search_re = Regex::new(r#""name"\s*:\s*"search""#).expect("regex");
        let searches = req
            .turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .map(|t| search_re.find_iter(&t.content).count())
            .sum::<usize>() as u32;
        let aware = match self.style {
            PolicyStyle::BudgetAware => true,
            PolicyStyle::BudgetBlind { .. } => false,
            PolicyStyle::Adaptive { .. } => text.contains("<budget>"),
        };
        let limit = match self.style {
            PolicyStyle::BudgetBlind { max_searches } => max_searches,
            PolicyStyle::Adaptive { blind_max_searches } => blind_max_searches,
            PolicyStyle::BudgetAware => u32::MAX,
        };
        let next = view.successor.or(view.start);
        match next {
            Some(key) if aware || searches < limit => search_call(&key),
            Some(key) => answer(&key),
            None => answer("None"),
        }
    }

    fn verify_reply(&self, req: &ChatRequest) -> String {
        let text = req.rendered();
        let current = Regex::new(r"(?m)^Current Answer:\s*(.*)$")
            .expect("regex")
            .captures(&text)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();
        let view = chain_view(&text);
        let ok = view.codeword.as_deref() == Some(current.as_str());
        let lead = view.successor.clone().unwrap_or_else(|| "none".into());
        let v = if ok {
            serde_json::json!({
                "verification": "constraint: final record codeword - satisfied",
                "decision": "SUCCESS",
                "justification": "The answer is the codeword of the final record.",
                "trajectory_summary": "Followed the successor chain to the final record.",
                "details": {}
            })
        } else {
            serde_json::json!({
                "verification": "constraint: final record codeword - unverifiable",
                "decision": "PIVOT",
                "justification": "The final record was not reached.",
                "trajectory_summary": format!("Followed successor links. Last known Successor: {lead}."),
                "details": {
                    "failure_analysis": "stopped before the final record",
                    "useful_information": format!("Successor: {lead}"),
                    "strategic_recommendations": "resume from the last known successor"
                }
            })
        };
        v.to_string()
    }
}

impl super::LlmProvider for WorldPolicy {
    fn chat(&self, req: &ChatRequest) -> Result<super::ChatResponse, ProviderError> {
        let text = match req.purpose {
            CallPurpose::Agent | CallPurpose::FinalAnswer => self.agent_reply(req),
            CallPurpose::Verify => self.verify_reply(req),
            CallPurpose::Decompose => "Exploration:\n- the starting record named in the question\n\
                                       Verification:\n- the record is the final one in the chain\n"
                .to_string(),
            CallPurpose::Select | CallPurpose::MajorityVote => "Justification: first option.\nAnswer: \\boxed{A}".into(),
            CallPurpose::Grade => "correct: no".into(),
        };
        Ok(super::ChatResponse { usage: super::synthesize_usage(req, &text), text })
    }
}

/// Serializes worlds one per line.
pub fn worlds_to_jsonl(worlds: &[SyntheticWorld]) -> String {
    worlds.iter().map(|w| serde_json::to_string(w).expect("world serializes") + "\n").collect()
}

pub fn worlds_from_jsonl(text: &str) -> Result<Vec<SyntheticWorld>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Per-record key → chain level, for tests that inspect worlds.
pub fn chain_levels(world: &SyntheticWorld) -> BTreeMap<u32, &Record> {
    world
        .records
        .iter()
        .filter_map(|r| match r.kind {
            RecordKind::Chain { level } => Some((level, r)),
            RecordKind::Decoy => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{LlmProvider, Turn};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(SyntheticWorld::build(7, 4, 3), SyntheticWorld::build(7, 4, 3));
        assert_ne!(SyntheticWorld::build(7, 4, 3), SyntheticWorld::build(8, 4, 3));
    }

    #[test]
    fn depth_one_answer_in_first_snippet() {
        let w = SyntheticWorld::build(1, 1, 2);
        let top = &w.search_one(&w.start_key)[0];
        assert!(top.snippet.contains(&w.target.gold));
        assert_eq!(w.shortest_solution(3), Some(1));
    }

    #[test]
    fn named_entity_ranked_first() {
        let w = SyntheticWorld::build(1, 5, 3);
        for r in &w.records {
            let hits = w.search_one(&format!("what about {} please", r.key));
            assert_eq!(hits[0].url, r.url);
        }
        assert!(w.search_one("nothing matches this").is_empty());
    }

    #[test]
    fn gold_only_on_final_record() {
        let w = SyntheticWorld::build(3, 6, 3);
        let holders: Vec<_> = w.records.iter().filter(|r| r.snippet.contains(&w.target.gold)).collect();
        assert_eq!(holders.len(), 1);
        assert_eq!(holders[0].kind, RecordKind::Chain { level: 5 });
        assert!(!w.target.question.contains(&w.target.gold));
    }

    #[test]
    fn depth_eight_needs_eight_calls() {
        let w = SyntheticWorld::build(11, 8, 3);
        assert_eq!(w.shortest_solution(7), None);
        assert_eq!(w.shortest_solution(8), Some(8));
    }

    #[test]
    fn batch_search_is_order_aligned() {
        let w = SyntheticWorld::build(2, 3, 2);
        let p = WorldProvider::single(w.clone());
        let qs = vec![w.records[0].key.clone(), "zzz".into(), w.records[1].key.clone()];
        let res = p.search(&qs).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[0][0].url, w.records[0].url);
        assert!(res[1].is_empty());
        assert_eq!(res[2][0].url, w.records[1].url);
        assert_eq!(p.search(&["  ".into()]).unwrap_err(), ProviderError::EmptyQuery);
    }

    #[test]
    fn browse_resolves_own_urls() {
        let w = SyntheticWorld::build(2, 3, 2);
        let p = WorldProvider::single(w.clone());
        let pages = p.browse(&[w.records[0].url.clone(), "https://elsewhere/x".into()], "g").unwrap();
        assert_eq!(pages[0].text, w.records[0].detail);
        assert!(!pages[0].truncated);
        assert!(pages[1].is_error());
        let tiny = WorldProvider::single(w.clone()).with_cap(10);
        let pages = tiny.browse(&[w.records[0].url.clone()], "g").unwrap();
        assert_eq!(pages[0].text.chars().count(), 10);
        assert!(pages[0].truncated);
    }

    #[test]
    fn worlds_round_trip_jsonl() {
        let ws = vec![SyntheticWorld::build(1, 2, 2), SyntheticWorld::build(2, 3, 3)];
        assert_eq!(worlds_from_jsonl(&worlds_to_jsonl(&ws)).unwrap(), ws);
    }

    #[test]
    fn policy_follows_chain() {
        let w = SyntheticWorld::build(5, 3, 2);
        let p = WorldPolicy::aware();
        let req = ChatRequest::new(CallPurpose::Agent, "sys", vec![Turn::user(w.target.question.clone())], 0.7);
        let reply = p.chat(&req).unwrap().text;
        assert!(reply.contains(&w.start_key));
        let card = &w.search_one(&w.start_key)[0];
        let req = ChatRequest::new(
            CallPurpose::Agent,
            "sys",
            vec![Turn::user(w.target.question.clone()), Turn::assistant(reply), Turn::user(card.snippet.clone())],
            0.7,
        );
        let levels = chain_levels(&w);
        assert!(p.chat(&req).unwrap().text.contains(&levels[&1].key));
    }

    #[test]
    fn blind_policy_stops_early() {
        let w = SyntheticWorld::build(5, 8, 2);
        let p = WorldPolicy::blind(0);
        let req = ChatRequest::new(CallPurpose::Agent, "sys", vec![Turn::user(w.target.question.clone())], 0.7);
        assert!(p.chat(&req).unwrap().text.contains("<answer>"));
        // compact and spaced JSON both count
        let turns = vec![
            Turn::user(w.target.question.clone()),
            Turn::assistant("<tool_code>\n{\"name\":\"search\",\"arguments\":{\"query\":[\"a\"]}}\n</tool_code>"),
            Turn::user("<tool_response>\nnothing\n</tool_response>"),
            Turn::assistant("<tool_code>{\"name\": \"search\", \"arguments\": {\"query\": [\"b\"]}}</tool_code>"),
        ];
        let req = ChatRequest::new(CallPurpose::Agent, "sys", turns, 0.7);
        assert!(WorldPolicy::blind(2).chat(&req).unwrap().text.contains("<answer>"));
        assert!(WorldPolicy::blind(3).chat(&req).unwrap().text.contains("<tool_code>"));
    }
}
