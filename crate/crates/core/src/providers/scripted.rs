//! Scripted language models for offline tests.
//!
//! A [`ScriptedLlm`] replays replies by turn index. In strict mode each turn
//! may pin substrings that must appear in the prompt, which is how tests lock
//! protocol-critical text (budget block, forcing message) without tying them
//! to the full template.

use std::collections::BTreeMap;
use std::io::BufRead;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{synthesize_usage, ChatRequest, ChatResponse, LlmProvider, ProviderError};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    pub reply: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<String>,
}

impl ScriptedTurn {
    pub fn reply(text: impl Into<String>) -> Self {
        ScriptedTurn { reply: text.into(), expect: Vec::new() }
    }

    pub fn expecting(mut self, substring: impl Into<String>) -> Self {
        self.expect.push(substring.into());
        self
    }
}

#[derive(Debug)]
pub struct ScriptedLlm {
    turns: Vec<ScriptedTurn>,
    cursor: Mutex<usize>,
    strict: bool,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedLlm {
    pub fn new(turns: Vec<ScriptedTurn>) -> Self {
        ScriptedLlm { turns, cursor: Mutex::new(0), strict: false, requests: Mutex::new(Vec::new()) }
    }

    pub fn replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(ScriptedTurn::reply).collect())
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    /// Loads `{"reply": ..., "expect": [...]}` lines.
    pub fn from_jsonl<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let turns = r
            .lines()
            .map_while(Result::ok)
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(&l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(turns))
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock()
    }

    pub fn remaining(&self) -> usize {
        self.turns.len() - self.consumed()
    }

    /// Every request seen so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }
}

impl LlmProvider for ScriptedLlm {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut cursor = self.cursor.lock();
        let idx = *cursor;
        let Some(turn) = self.turns.get(idx) else {
            return Err(ProviderError::TranscriptExhausted(self.turns.len()));
        };
        if self.strict {
            let rendered = req.rendered();
            if let Some(missing) = turn.expect.iter().find(|s| !rendered.contains(s.as_str())) {
                return Err(ProviderError::ProtocolMismatch { turn: idx, expected: missing.clone() });
            }
        }
        *cursor += 1;
        self.requests.lock().push(req.clone());
        Ok(ChatResponse { usage: synthesize_usage(req, &turn.reply), text: turn.reply.clone() })
    }
}

/// One transcript per sampling seed, for parallel runs.
#[derive(Debug, Default)]
pub struct ScriptBook {
    by_seed: BTreeMap<u64, ScriptedLlm>,
}

impl ScriptBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, seed: u64, llm: ScriptedLlm) -> Self {
        self.by_seed.insert(seed, llm);
        self
    }

    pub fn get(&self, seed: u64) -> Option<&ScriptedLlm> {
        self.by_seed.get(&seed)
    }
}

impl LlmProvider for ScriptBook {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        match self.by_seed.get(&req.seed.unwrap_or(0)) {
            Some(llm) => llm.chat(req),
            None => Err(ProviderError::TranscriptExhausted(0)),
        }
    }
}

/// A model whose reply is a pure function of the request.
pub struct FnLlm<F>(pub F);

impl<F> LlmProvider for FnLlm<F>
where
    F: Fn(&ChatRequest) -> String + Send + Sync,
{
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = (self.0)(req);
        Ok(ChatResponse { usage: synthesize_usage(req, &text), text })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{CallPurpose, Turn};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(CallPurpose::Agent, "system", vec![Turn::user(text)], 0.7)
    }

    #[test]
    fn replays_in_order_then_exhausts() {
        let llm = ScriptedLlm::replies(["one", "two", "three"]);
        let got: Vec<String> = (0..3).map(|_| llm.chat(&req("q")).unwrap().text).collect();
        assert_eq!(got, ["one", "two", "three"]);
        assert_eq!(llm.chat(&req("q")).unwrap_err(), ProviderError::TranscriptExhausted(3));
    }

    #[test]
    fn strict_mode_checks_prompt() {
        let llm = ScriptedLlm::new(vec![ScriptedTurn::reply("ok").expecting("<budget>")]).strict();
        assert!(matches!(llm.chat(&req("no block")), Err(ProviderError::ProtocolMismatch { turn: 0, .. })));
        assert_eq!(llm.chat(&req("<budget>\n...")).unwrap().text, "ok");
    }

    #[test]
    fn loads_jsonl_transcript() {
        let src = "{\"reply\":\"a\"}\n\n{\"reply\":\"b\",\"expect\":[\"x\"]}\n";
        let llm = ScriptedLlm::from_jsonl(src.as_bytes()).unwrap();
        assert_eq!(llm.remaining(), 2);
    }

    #[test]
    fn script_book_routes_by_seed() {
        let book = ScriptBook::new().with(1, ScriptedLlm::replies(["s1"])).with(2, ScriptedLlm::replies(["s2"]));
        let mut r = req("q");
        r.seed = Some(2);
        assert_eq!(book.chat(&r).unwrap().text, "s2");
        r.seed = Some(9);
        assert!(book.chat(&r).is_err());
    }

    #[test]
    fn usage_always_present() {
        let llm = FnLlm(|_: &ChatRequest| "<answer>x</answer>".to_string());
        let r = llm.chat(&req("question")).unwrap();
        assert!(r.usage.input > 0 && r.usage.output > 0);
    }
}
