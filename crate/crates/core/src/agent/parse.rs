//! Splits a model reply into tagged steps.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Step, StepKind};
use crate::ledger::{BROWSE, SEARCH};

/// A parsed `<tool_code>` body, arguments normalized to the tool schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
}

impl ToolCall {
    pub fn search<S: Into<String>>(queries: impl IntoIterator<Item = S>) -> Self {
        let q: Vec<String> = queries.into_iter().map(Into::into).collect();
        ToolCall { name: SEARCH.into(), arguments: serde_json::json!({ "query": q }) }
    }

    pub fn browse<S: Into<String>>(urls: impl IntoIterator<Item = S>, goal: &str) -> Self {
        let u: Vec<String> = urls.into_iter().map(Into::into).collect();
        ToolCall { name: BROWSE.into(), arguments: serde_json::json!({ "url": u, "goal": goal }) }
    }

    fn unit_key(&self) -> Option<&'static str> {
        match self.name.as_str() {
            SEARCH => Some("query"),
            BROWSE => Some("url"),
            _ => None,
        }
    }

    /// The per-unit items: one query string or one URL each.
    pub fn items(&self) -> Vec<String> {
        match self.unit_key() {
            Some(k) => self.arguments[k]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                .unwrap_or_default(),
            None => Vec::new(),
        }
    }

    /// Budget units this call consumes.
    pub fn units(&self) -> u64 {
        match self.unit_key() {
            Some(_) => self.items().len() as u64,
            None => 1,
        }
    }

    pub fn goal(&self) -> &str {
        self.arguments["goal"].as_str().unwrap_or("")
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "name": self.name, "arguments": self.arguments }).to_string()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("malformed tool_code: {reason}")]
pub struct ToolCodeParseError {
    pub raw: String,
    pub reason: String,
}

/// One parsed unit of a reply; bad tool code is kept in place so the loop
/// can answer it in-band.
#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    Step(Step),
    BadToolCode(ToolCodeParseError),
}

const TAGS: [(&str, StepKind); 4] = [
    ("think", StepKind::Think),
    ("tool_code", StepKind::ToolCode),
    ("answer", StepKind::Answer),
    ("plan", StepKind::PlanBlock),
];

fn strip_fence(s: &str) -> &str {
    let t = s.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn string_array(v: &Value) -> Option<Vec<Value>> {
    match v {
        Value::String(s) => Some(vec![Value::String(s.clone())]),
        Value::Array(a) if a.iter().all(Value::is_string) => Some(a.clone()),
        _ => None,
    }
}

pub fn parse_tool_call(raw: &str) -> Result<ToolCall, ToolCodeParseError> {
    let fail = |reason: String| ToolCodeParseError { raw: raw.to_string(), reason };
    let v: Value = serde_json::from_str(strip_fence(raw)).map_err(|e| fail(e.to_string()))?;
    let name = v["name"].as_str().ok_or_else(|| fail("missing \"name\"".into()))?.to_string();
    let args = v.get("arguments").cloned().unwrap_or(Value::Null);
    if !args.is_object() {
        return Err(fail("\"arguments\" must be an object".into()));
    }
    let arguments = match name.as_str() {
        SEARCH => {
            let q = string_array(&args["query"]).ok_or_else(|| fail("search needs an array \"query\"".into()))?;
            if q.is_empty() {
                return Err(fail("empty \"query\" array".into()));
            }
            serde_json::json!({ "query": q })
        }
        BROWSE => {
            let u = string_array(&args["url"]).ok_or_else(|| fail("browse needs \"url\"".into()))?;
            if u.is_empty() {
                return Err(fail("empty \"url\" array".into()));
            }
            let goal = args["goal"].as_str().ok_or_else(|| fail("browse needs a text \"goal\"".into()))?;
            serde_json::json!({ "url": u, "goal": goal })
        }
        _ => args,
    };
    Ok(ToolCall { name, arguments })
}

/// Lenient scan. Text outside tags is attached to the nearest think step.
pub fn parse_segments(text: &str) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut loose: Vec<(usize, String)> = Vec::new();
    let mut rest = text;
    loop {
        let next = TAGS
            .iter()
            .filter_map(|(tag, kind)| rest.find(&format!("<{tag}>")).map(|i| (i, *tag, *kind)))
            .min_by_key(|(i, _, _)| *i);
        let Some((start, tag, kind)) = next else {
            if !rest.trim().is_empty() {
                loose.push((out.len(), rest.trim().to_string()));
            }
            break;
        };
        let before = rest[..start].trim();
        if !before.is_empty() {
            loose.push((out.len(), before.to_string()));
        }
        let body_start = start + tag.len() + 2;
        let close = format!("</{tag}>");
        let (body, after) = match rest[body_start..].find(&close) {
            Some(j) => (&rest[body_start..body_start + j], &rest[body_start + j + close.len()..]),
            None => (&rest[body_start..], ""),
        };
        let seg = match kind {
            StepKind::ToolCode => match parse_tool_call(body) {
                Ok(call) => Segment::Step(Step::tool_code(call)),
                Err(e) => Segment::BadToolCode(e),
            },
            _ => Segment::Step(Step::text(kind, body.trim())),
        };
        out.push(seg);
        rest = after;
    }
    attach_loose(out, loose)
}

fn attach_loose(mut out: Vec<Segment>, loose: Vec<(usize, String)>) -> Vec<Segment> {
    let is_think = |s: &Segment| matches!(s, Segment::Step(st) if st.kind == StepKind::Think);
    let mut inserted = 0usize;
    for (pos, text) in loose {
        let pos = pos + inserted;
        // nearest think: the one just before, else the one just after
        let target = (0..pos).rev().find(|&i| is_think(&out[i])).or_else(|| (pos..out.len()).find(|&i| is_think(&out[i])));
        match target {
            Some(i) => {
                if let Segment::Step(st) = &mut out[i] {
                    if st.content.is_empty() {
                        st.content = text;
                    } else if i < pos {
                        st.content = format!("{}\n{}", st.content, text);
                    } else {
                        st.content = format!("{}\n{}", text, st.content);
                    }
                }
            }
            None => {
                out.insert(pos, Segment::Step(Step::text(StepKind::Think, &text)));
                inserted += 1;
            }
        }
    }
    out
}

/// Strict form: the first malformed tool code is an error.
pub fn parse_model_output(text: &str) -> Result<Vec<Step>, ToolCodeParseError> {
    parse_segments(text)
        .into_iter()
        .map(|s| match s {
            Segment::Step(st) => Ok(st),
            Segment::BadToolCode(e) => Err(e),
        })
        .collect()
}
