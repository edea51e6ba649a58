//! Uniform interfaces for the LLM, search and browse tools.
//!
//! Live HTTP clients and deterministic mocks sit behind the same traits, so
//! the agent loop only ever sees content.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::TokenUsage;

pub mod live;
pub mod scripted;
pub mod world;

pub use scripted::{FnLlm, ScriptBook, ScriptedLlm, ScriptedTurn};
pub use world::{SyntheticWorld, WorldPolicy, WorldProvider};

/// Hard cap on page text handed to the model.
pub const BROWSE_CHAR_CAP: usize = 150_000;
/// Results returned per query.
pub const SEARCH_TOP_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Turn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Turn { role: Role::Assistant, content: content.into() }
    }
}

/// Why the runtime is calling the model. Carried for logging and so mock
/// models can answer role-specific prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Agent,
    FinalAnswer,
    Decompose,
    Verify,
    Select,
    MajorityVote,
    Grade,
}

impl CallPurpose {
    pub fn as_str(&self) -> &'static str {
        match self {
            CallPurpose::Agent => "agent",
            CallPurpose::FinalAnswer => "final_answer",
            CallPurpose::Decompose => "decompose",
            CallPurpose::Verify => "verify",
            CallPurpose::Select => "select",
            CallPurpose::MajorityVote => "majority_vote",
            CallPurpose::Grade => "grade",
        }
    }

    /// Calls inside the agent policy are billed to the run; aggregation and
    /// grading calls are evaluation overhead.
    pub fn billable(&self) -> bool {
        !matches!(self, CallPurpose::Select | CallPurpose::MajorityVote | CallPurpose::Grade)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
    pub purpose: CallPurpose,
}

impl ChatRequest {
    pub fn new(purpose: CallPurpose, system: impl Into<String>, turns: Vec<Turn>, temperature: f64) -> Self {
        ChatRequest { system: system.into(), turns, temperature, max_new_tokens: 65_536, seed: None, purpose }
    }

    /// System prompt and turns joined, for substring checks and size.
    pub fn rendered(&self) -> String {
        let mut s = self.system.clone();
        for t in &self.turns {
            s.push('\n');
            s.push_str(&t.content);
        }
        s
    }

    pub fn last_user(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageContent {
    pub url: String,
    pub text: String,
    pub truncated: bool,
}

impl PageContent {
    /// Builds a page, cutting `text` to at most `cap` characters.
    pub fn capped(url: impl Into<String>, text: &str, cap: usize) -> Self {
        match text.char_indices().nth(cap) {
            Some((byte_idx, _)) => PageContent { url: url.into(), text: text[..byte_idx].to_string(), truncated: true },
            None => PageContent { url: url.into(), text: text.to_string(), truncated: false },
        }
    }

    pub fn error(url: impl Into<String>, message: &str) -> Self {
        let url = url.into();
        PageContent { text: format!("[browse error] {url}: {message}"), url, truncated: false }
    }

    pub fn is_error(&self) -> bool {
        self.text.starts_with("[browse error]")
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("scripted transcript exhausted after {0} turns")]
    TranscriptExhausted(usize),
    #[error("scripted turn {turn} expected prompt to contain {expected:?}")]
    ProtocolMismatch { turn: usize, expected: String },
    #[error("empty query")]
    EmptyQuery,
    #[error("fetch failed for {url}: {reason}")]
    FetchFailed { url: String, reason: String },
}

pub trait LlmProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait SearchProvider: Send + Sync {
    /// One result list (at most ten entries) per query, aligned with input.
    fn search(&self, queries: &[String]) -> Result<Vec<Vec<SearchResult>>, ProviderError>;
}

pub trait BrowseProvider: Send + Sync {
    /// One page per URL. Per-URL failures come back as error pages.
    fn browse(&self, urls: &[String], goal: &str) -> Result<Vec<PageContent>, ProviderError>;
}

/// Deterministic token counts for mock models: ~4 characters per token,
/// and the system prompt counts as cached once the conversation has history.
pub fn synthesize_usage(req: &ChatRequest, reply: &str) -> TokenUsage {
    let toks = |n: usize| n.div_ceil(4) as u64;
    let input = toks(req.rendered().chars().count());
    let cache_hit = if req.turns.len() > 1 { toks(req.system.chars().count()).min(input) } else { 0 };
    TokenUsage::new(input, toks(reply.chars().count()), cache_hit)
}

/// The provider bundle handed to the runtime. Role-specific models fall
/// back to the main one.
#[derive(Clone)]
pub struct Providers {
    pub llm: Arc<dyn LlmProvider>,
    pub search: Arc<dyn SearchProvider>,
    pub browse: Arc<dyn BrowseProvider>,
    pub verifier: Option<Arc<dyn LlmProvider>>,
    pub planner: Option<Arc<dyn LlmProvider>>,
    pub judge: Option<Arc<dyn LlmProvider>>,
}

impl Providers {
    pub fn new(
        llm: Arc<dyn LlmProvider>,
        search: Arc<dyn SearchProvider>,
        browse: Arc<dyn BrowseProvider>,
    ) -> Self {
        Providers { llm, search, browse, verifier: None, planner: None, judge: None }
    }

    pub fn with_verifier(mut self, v: Arc<dyn LlmProvider>) -> Self {
        self.verifier = Some(v);
        self
    }

    pub fn with_planner(mut self, p: Arc<dyn LlmProvider>) -> Self {
        self.planner = Some(p);
        self
    }

    pub fn with_judge(mut self, j: Arc<dyn LlmProvider>) -> Self {
        self.judge = Some(j);
        self
    }

    pub fn with_llm(mut self, llm: Arc<dyn LlmProvider>) -> Self {
        self.llm = llm;
        self
    }

    pub fn verifier(&self) -> &Arc<dyn LlmProvider> {
        self.verifier.as_ref().unwrap_or(&self.llm)
    }

    pub fn planner(&self) -> &Arc<dyn LlmProvider> {
        self.planner.as_ref().unwrap_or(&self.llm)
    }

    pub fn judge(&self) -> &Arc<dyn LlmProvider> {
        self.judge.as_ref().unwrap_or(&self.llm)
    }
}

/// Search/browse stubs that serve nothing. Useful for LLM-only tests.
#[derive(Debug, Default)]
pub struct EmptyWeb;

impl SearchProvider for EmptyWeb {
    fn search(&self, queries: &[String]) -> Result<Vec<Vec<SearchResult>>, ProviderError> {
        if queries.iter().any(|q| q.trim().is_empty()) {
            return Err(ProviderError::EmptyQuery);
        }
        Ok(queries.iter().map(|_| Vec::new()).collect())
    }
}

impl BrowseProvider for EmptyWeb {
    fn browse(&self, urls: &[String], _goal: &str) -> Result<Vec<PageContent>, ProviderError> {
        Ok(urls.iter().map(|u| PageContent::error(u.clone(), "not found")).collect())
    }
}

/// Fixed pages keyed by URL, capped on the way out.
#[derive(Debug, Default)]
pub struct FixturePages {
    pages: std::collections::BTreeMap<String, String>,
    cap: usize,
}

impl FixturePages {
    pub fn new(cap: usize) -> Self {
        FixturePages { pages: Default::default(), cap }
    }

    pub fn with_page(mut self, url: &str, text: impl Into<String>) -> Self {
        self.pages.insert(url.to_string(), text.into());
        self
    }
}

impl BrowseProvider for FixturePages {
    fn browse(&self, urls: &[String], _goal: &str) -> Result<Vec<PageContent>, ProviderError> {
        Ok(urls
            .iter()
            .map(|u| match self.pages.get(u) {
                Some(t) => PageContent::capped(u.clone(), t, self.cap),
                None => PageContent::error(u.clone(), "404 not found"),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_cap_is_exact() {
        let big = "x".repeat(200_000);
        let p = PageContent::capped("u", &big, BROWSE_CHAR_CAP);
        assert_eq!(p.text.chars().count(), 150_000);
        assert!(p.truncated);
        let small = PageContent::capped("u", "hello", BROWSE_CHAR_CAP);
        assert!(!small.truncated);
        assert_eq!(small.text, "hello");
        let exact = PageContent::capped("u", &"y".repeat(150_000), BROWSE_CHAR_CAP);
        assert!(!exact.truncated);
    }

    #[test]
    fn cap_counts_characters_not_bytes() {
        let text = "é".repeat(10);
        let p = PageContent::capped("u", &text, 4);
        assert_eq!(p.text, "éééé");
        assert!(p.truncated);
    }

    #[test]
    fn fixture_unknown_url_is_error_page() {
        let web = FixturePages::new(BROWSE_CHAR_CAP).with_page("a", "alpha");
        let pages = web.browse(&["a".into(), "b".into()], "goal").unwrap();
        assert_eq!(pages[0].text, "alpha");
        assert!(pages[1].is_error());
    }

    #[test]
    fn billable_purposes() {
        assert!(CallPurpose::Verify.billable());
        assert!(CallPurpose::Decompose.billable());
        assert!(!CallPurpose::Grade.billable());
        assert!(!CallPurpose::Select.billable());
    }

    #[test]
    fn synthesized_usage_is_deterministic() {
        let req = ChatRequest::new(CallPurpose::Agent, "sys!", vec![Turn::user("q"), Turn::assistant("a")], 0.7);
        let a = synthesize_usage(&req, "reply");
        assert_eq!(a, synthesize_usage(&req, "reply"));
        assert_eq!(a.cache_hit, 1);
        assert!(a.cache_hit <= a.input);
    }
}
