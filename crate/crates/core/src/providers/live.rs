//! HTTP clients for live providers.
//!
//! - chat: OpenAI-compatible `/chat/completions`
//! - search: Google Custom Search JSON API or a Serper-style POST endpoint
//! - browse: a reader/scrape service that returns page text for `GET {base}{url}`
//!
//! Credentials come from environment variables whose names are configured,
//! never from config values.

use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BrowseProvider, ChatRequest, ChatResponse, LlmProvider, PageContent, ProviderError, Role, SearchProvider,
    SearchResult, BROWSE_CHAR_CAP, SEARCH_TOP_K,
};
use crate::cost::TokenUsage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: None,
            api_key_env: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::Unavailable(format!("environment variable {var} is not set"))),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { slots: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut s = self.slots.lock();
            while *s == 0 {
                self.freed.wait(&mut s);
            }
            *s -= 1;
        }
        let out = f();
        *self.slots.lock() += 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug)]
enum Attempt<T> {
    Done(T),
    Transient(String),
    Fatal(String),
}

fn with_retries<T>(retries: u32, mut f: impl FnMut() -> Attempt<T>) -> Result<T, ProviderError> {
    let mut last = String::new();
    for attempt in 0..=retries {
        match f() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(ProviderError::Unavailable(e)),
            Attempt::Transient(e) => {
                log::warn!("transient provider failure (attempt {}): {e}", attempt + 1);
                last = e;
                if attempt < retries {
                    std::thread::sleep(Duration::from_millis(250 * 2u64.pow(attempt.min(5))));
                }
            }
        }
    }
    Err(ProviderError::Unavailable(last))
}

fn classify(resp: reqwest::Result<reqwest::blocking::Response>) -> Attempt<reqwest::blocking::Response> {
    match resp {
        Err(e) => Attempt::Transient(e.to_string()),
        Ok(r) if r.status().is_success() => Attempt::Done(r),
        Ok(r) if r.status().as_u16() == 429 || r.status().is_server_error() => {
            Attempt::Transient(format!("HTTP {}", r.status()))
        }
        Ok(r) => Attempt::Fatal(format!("HTTP {}", r.status())),
    }
}

fn client(cfg: &EndpointConfig) -> Result<Client, ProviderError> {
    Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| ProviderError::Unavailable(e.to_string()))
}

/// OpenAI-compatible chat completion client.
#[derive(Debug)]
pub struct HttpChat {
    cfg: EndpointConfig,
    http: Client,
    gate: Gate,
}

impl HttpChat {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ProviderError> {
        Ok(HttpChat { http: client(&cfg)?, gate: Gate::new(cfg.max_in_flight), cfg })
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": req.system})];
        for t in &req.turns {
            let role = match t.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": t.content}));
        }
        let mut body = json!({
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
        });
        if let Some(m) = &self.cfg.model {
            body["model"] = json!(m);
        }
        body
    }
}

pub(crate) fn parse_chat_completion(v: &Value) -> Option<ChatResponse> {
    let text = v["choices"][0]["message"]["content"].as_str()?.to_string();
    let u = &v["usage"];
    let input = u["prompt_tokens"].as_u64().unwrap_or(0);
    let output = u["completion_tokens"].as_u64().unwrap_or(0);
    let cache = u["prompt_tokens_details"]["cached_tokens"].as_u64().unwrap_or(0).min(input);
    Some(ChatResponse { text, usage: TokenUsage::new(input, output, cache) })
}

impl LlmProvider for HttpChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let key = self.cfg.api_key()?;
        let body = self.body(req);
        self.gate.run(|| {
            with_retries(self.cfg.max_retries, || {
                let mut rb = self.http.post(format!("{}/chat/completions", self.cfg.url.trim_end_matches('/')));
                if let Some(k) = &key {
                    rb = rb.bearer_auth(k);
                }
                match classify(rb.json(&body).send()) {
                    Attempt::Done(r) => match r.json::<Value>() {
                        Ok(v) => match parse_chat_completion(&v) {
                            Some(resp) => Attempt::Done(resp),
                            None => Attempt::Fatal(format!("unexpected completion shape: {v}")),
                        },
                        Err(e) => Attempt::Transient(e.to_string()),
                    },
                    Attempt::Transient(e) => Attempt::Transient(e),
                    Attempt::Fatal(e) => Attempt::Fatal(e),
                }
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchBackend {
    /// `GET {url}?key=..&cx=..&q=..`; `cx` taken from the env var named in `model`.
    GoogleCse,
    /// `POST {url}` with `{"q": ...}` and `X-API-KEY`.
    Serper,
}

#[derive(Debug)]
pub struct HttpSearch {
    cfg: EndpointConfig,
    backend: SearchBackend,
    http: Client,
    gate: Gate,
}

impl HttpSearch {
    pub fn new(cfg: EndpointConfig, backend: SearchBackend) -> Result<Self, ProviderError> {
        Ok(HttpSearch { http: client(&cfg)?, gate: Gate::new(cfg.max_in_flight), cfg, backend })
    }

    fn one(&self, query: &str, key: Option<&str>) -> Result<Vec<SearchResult>, ProviderError> {
        let v: Value = self.gate.run(|| {
            with_retries(self.cfg.max_retries, || {
                let rb = match self.backend {
                    SearchBackend::GoogleCse => {
                        let cx = self
                            .cfg
                            .model
                            .as_deref()
                            .and_then(|var| std::env::var(var).ok())
                            .unwrap_or_default();
                        self.http.get(&self.cfg.url).query(&[
                            ("key", key.unwrap_or("")),
                            ("cx", cx.as_str()),
                            ("q", query),
                            ("num", "10"),
                        ])
                    }
                    SearchBackend::Serper => self
                        .http
                        .post(&self.cfg.url)
                        .header("X-API-KEY", key.unwrap_or(""))
                        .json(&json!({"q": query, "num": SEARCH_TOP_K})),
                };
                match classify(rb.send()) {
                    Attempt::Done(r) => match r.json::<Value>() {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Transient(e.to_string()),
                    },
                    Attempt::Transient(e) => Attempt::Transient(e),
                    Attempt::Fatal(e) => Attempt::Fatal(e),
                }
            })
        })?;
        Ok(parse_search_results(self.backend, &v))
    }
}

pub(crate) fn parse_search_results(backend: SearchBackend, v: &Value) -> Vec<SearchResult> {
    let (list, link) = match backend {
        SearchBackend::GoogleCse => (&v["items"], "link"),
        SearchBackend::Serper => (&v["organic"], "link"),
    };
    let mut out: Vec<SearchResult> = Vec::new();
    for item in list.as_array().into_iter().flatten() {
        let url = item[link].as_str().unwrap_or_default().to_string();
        if url.is_empty() || out.iter().any(|r| r.url == url) {
            continue;
        }
        out.push(SearchResult {
            title: item["title"].as_str().unwrap_or_default().to_string(),
            snippet: item["snippet"].as_str().unwrap_or_default().to_string(),
            url,
        });
        if out.len() == SEARCH_TOP_K {
            break;
        }
    }
    out
}

impl SearchProvider for HttpSearch {
    fn search(&self, queries: &[String]) -> Result<Vec<Vec<SearchResult>>, ProviderError> {
        if queries.iter().any(|q| q.trim().is_empty()) {
            return Err(ProviderError::EmptyQuery);
        }
        let key = self.cfg.api_key()?;
        queries.iter().map(|q| self.one(q, key.as_deref())).collect()
    }
}

/// Reader-style scraper: `GET {url}{target}` returns page text.
#[derive(Debug)]
pub struct HttpBrowse {
    cfg: EndpointConfig,
    http: Client,
    gate: Gate,
    cap: usize,
}

impl HttpBrowse {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ProviderError> {
        Ok(HttpBrowse { http: client(&cfg)?, gate: Gate::new(cfg.max_in_flight), cfg, cap: BROWSE_CHAR_CAP })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }
}

impl BrowseProvider for HttpBrowse {
    fn browse(&self, urls: &[String], _goal: &str) -> Result<Vec<PageContent>, ProviderError> {
        let key = self.cfg.api_key()?;
        Ok(urls
            .iter()
            .map(|u| {
                let fetched = self.gate.run(|| {
                    with_retries(self.cfg.max_retries, || {
                        let mut rb = self.http.get(format!("{}{}", self.cfg.url, u));
                        if let Some(k) = &key {
                            rb = rb.bearer_auth(k);
                        }
                        match classify(rb.send()) {
                            Attempt::Done(r) => match r.text() {
                                Ok(t) => Attempt::Done(t),
                                Err(e) => Attempt::Transient(e.to_string()),
                            },
                            Attempt::Transient(e) => Attempt::Transient(e),
                            Attempt::Fatal(e) => Attempt::Fatal(e),
                        }
                    })
                });
                match fetched {
                    Ok(text) => PageContent::capped(u.clone(), &text, self.cap),
                    Err(e) => PageContent::error(u.clone(), &e.to_string()),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn completion_parsing_reads_cached_tokens() {
        let v = json!({
            "choices": [{"message": {"content": "hi"}}],
            "usage": {"prompt_tokens": 100, "completion_tokens": 7, "prompt_tokens_details": {"cached_tokens": 40}}
        });
        let r = parse_chat_completion(&v).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage, TokenUsage::new(100, 7, 40));
        assert!(parse_chat_completion(&json!({"choices": []})).is_none());
    }

    #[test]
    fn search_parsing_dedups_and_caps() {
        let items: Vec<Value> = (0..15)
            .map(|i| json!({"title": format!("t{i}"), "snippet": "s", "link": format!("https://e/{}", i % 12)}))
            .collect();
        let r = parse_search_results(SearchBackend::GoogleCse, &json!({ "items": items }));
        assert_eq!(r.len(), 10);
        let urls: std::collections::HashSet<_> = r.iter().map(|x| &x.url).collect();
        assert_eq!(urls.len(), 10);
        assert!(parse_search_results(SearchBackend::Serper, &json!({})).is_empty());
    }

    #[test]
    fn retries_only_transient_failures() {
        let calls = AtomicU32::new(0);
        let out = with_retries(2, || {
            if calls.fetch_add(1, Ordering::SeqCst) < 1 {
                Attempt::Transient("boom".into())
            } else {
                Attempt::Done(5)
            }
        });
        assert_eq!(out.unwrap(), 5);
        let calls = AtomicU32::new(0);
        let out: Result<(), _> = with_retries(3, || {
            calls.fetch_add(1, Ordering::SeqCst);
            Attempt::Fatal("401".into())
        });
        assert!(out.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_credential_is_unavailable() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9");
        cfg.api_key_env = Some("BATS_TEST_SURELY_UNSET_VAR".into());
        let chat = HttpChat::new(cfg).unwrap();
        let req = ChatRequest::new(super::super::CallPurpose::Agent, "s", vec![], 0.0);
        assert!(matches!(chat.chat(&req), Err(ProviderError::Unavailable(_))));
    }

    /// Flagged live smoke: set BATS_LIVE_CHAT_URL (and optionally
    /// BATS_LIVE_CHAT_MODEL / BATS_LIVE_CHAT_KEY_ENV) to run.
    #[test]
    #[ignore]
    fn live_chat_smoke() {
        let Ok(url) = std::env::var("BATS_LIVE_CHAT_URL") else { return };
        let mut cfg = EndpointConfig::new(url);
        cfg.model = std::env::var("BATS_LIVE_CHAT_MODEL").ok();
        cfg.api_key_env = std::env::var("BATS_LIVE_CHAT_KEY_ENV").ok();
        let chat = HttpChat::new(cfg).unwrap();
        let req = ChatRequest::new(
            super::super::CallPurpose::Agent,
            "Reply with one word.",
            vec![super::super::Turn::user("Say hello.")],
            0.0,
        );
        let r = chat.chat(&req).unwrap();
        assert!(!r.text.is_empty());
        assert!(r.usage.input > 0);
    }
}
