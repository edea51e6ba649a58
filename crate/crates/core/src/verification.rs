//! Self-verification verdicts, the decision machine, and answer selection.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::agent::{AgentRun, StepKind, Trajectory};
use crate::cost::TokenUsage;
use crate::events::{Emitter, EventKind};
use crate::ledger::{render_budget_block, BudgetSnapshot, UsageCounter};
use crate::providers::{CallPurpose, ChatRequest, LlmProvider, ProviderError, Turn};

pub const VERIFIER_SYSTEM: &str = r#"You are an AI Strategic Verifier. Your primary goal is to evaluate a proposed answer, assess the viability of the current problem-solving plan, and decide the best course of action: declare success, continue with the current plan, or pivot to a new one.

### Given Inputs

* Question: The original user question. An answer is believed to exist.
* Trajectory: The sequence of reasoning steps and tool calls taken so far in the current attempt.
* Current Answer: The final answer produced by the current attempt.
* Budget Status: Information on current tool call budget utilization and remaining budget, including search queries and browsing urls.

### Your Task: A 3-Step Process

You must proceed in the following order:

#### Step 1: Conduct Verification Analysis

First, perform a strict verification of the `Current Answer`.
* Go through each constraint from the original Question one by one.
* For each constraint, compare it against the `Current Answer` and the `Trajectory`.
* State your finding for each constraint: satisfied, contradicted, or unverifiable.

#### Step 2: Make a Strategic Decision

Based on your verification and the budget, make one of three decisions.

1. SUCCESS: If the verification in Step 1 passed (all constraints are satisfied). The task is complete.
2. CONTINUE: If the verification failed because few constraints are unverifiable, but the overall plan is still sound and salvageable. This is the choice if **both** of these conditions are true:
    * Promising Path: The `Trajectory` is generally sound, and the failure was due to a correctable error.
    * Sufficient Budget: There is enough `Remaining Budget` to attempt a correction on this path.
3. PIVOT: If the verification failed, signal to abandon the current plan and switch to another one. You should pivot if any of these conditions are true:
    * Dead End: The `Trajectory` reveals a fundamental flaw in the current plan's logic that cannot be easily fixed.
    * Failed Tool Calls: The Trajectory shows repeated, unsuccessful attempts to find certain info.
    * Insufficient Budget: The `Remaining Budget` is too low to make another meaningful attempt or correction within the *current* plan.

#### Step 3: Summarize for the Next Step

This is the most critical step for guiding future actions.
You need to first provide a **trajectory summary**: Summarize the agent's reasoning trajectory into a concise narrative. Explain its initial goal, the logical steps taken, key findings and the final conclusion, emphasizing how key findings or contradictions caused the agent to change its strategy.

Then, provide additional details tailored to your decision in Step 2.

* If the decision is SUCCESS:
    * No further detail needed.

* If the decision is CONTINUE / PIVOT:
    * Failure Analysis: Diagnose the root cause of the failure. Identify the critical flaw (e.g., poor query design, flawed logic, misinterpreted evidence) and name the general failure pattern to prevent its recurrence.
    * Useful information: Any useful intermediate findings or results from the current `Trajectory` that could be valuable inputs for the next attempt. This prevents redundant work.
    * Strategic Recommendations: Provide actionable advice for the agent's next attempt. Suggest strategic pivots, new angles of investigation, or different ways to combine the problem's constraints. Explicitly state if it should backtrack to and resume from a specific step in the previous plan to avoid re-doing work.

### **Output Requirement**

Your final output must be a single JSON object with the following structure. Do not add any text before or after this JSON block.

```json
{
  "verification": "Verification analysis",
  "decision": "SUCCESS | CONTINUE | PIVOT",
  "justification": "A concise explanation for your strategic decision. Why is it a success, a dead end, or a correctable error?",
  "trajectory_summary": "The informative trajectory summary.",
  "details": "A JSON object containing the additional details required by Step 3. For a SUCCESS decision, this can be an empty object {}."
}
```"#;

pub const BEST_OF_N_SYSTEM: &str = r#"You are an expert evaluator. Your task is to select the most accurate and specific answer to an information-seeking question. The question has a deterministic answer. You'll be provided with several answers and their corresponding trajectories/verifications.

**Instructions:**
1.  **Identify the Core Question:** Determine the exact piece of information the question is asking for (e.g., a person, a location, a date).
2.  **Evaluate Candidates:** For each candidate phrase, assess its factual accuracy.
3.  **Compare and Select:** Choose the answer that is more likely to be correct. You should never choose "None" as the answer.

**Output Format:**
First, provide a brief justification explaining why the chosen answer is the most accurate and specific choice. Then, on a new line, output the letter of the best option inside a box.

**Example:**
Justification: Answer B is the most specific correct location...
Answer: \boxed{B}"#;

pub const MAJORITY_VOTE_SYSTEM: &str = r#"You are an expert evaluator. Your task is to select the answer that best represents the **majority vote** among the provided candidates. The question has a deterministic answer, and the goal is to identify which option most responses converge on. You'll be provided with several answers and their corresponding trajectories/verifications.

**Instructions:**
1. **Identify the Core Question:** Determine the exact piece of information the question is asking for (e.g., a person, a location, a date).
2. **Tally the Votes:** Review all candidate answers and count how many times each distinct answer (or near-equivalent variant) appears. Treat semantically equivalent responses as votes for the same candidate.
3. **Select the Majority:** Choose the answer that has the highest number of votes. If there is a tie, pick the option that is the most specific and consistent with the question. Never choose "None" or refuse to make a choice.

**Output Format:**
First, provide a brief justification explaining why the chosen answer was selected (e.g., "Answer C has the majority of votes across candidates"). Then, on a new line, output the letter of the best option inside a box.

**Example:**
Justification: Answer B received the majority of votes and aligns most consistently with the question.
Answer: \boxed{B}"#;

/// Tool responses longer than this are clipped in the verifier's copy of
/// the trajectory.
pub const VERIFIER_RESPONSE_CLIP: usize = 4_000;

const DEGRADED_TAIL: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Success,
    Continue,
    Pivot,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Success => "SUCCESS",
            Decision::Continue => "CONTINUE",
            Decision::Pivot => "PIVOT",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "SUCCESS" => Some(Decision::Success),
            "CONTINUE" => Some(Decision::Continue),
            "PIVOT" => Some(Decision::Pivot),
            _ => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub verification: String,
    pub decision: Decision,
    pub justification: String,
    pub trajectory_summary: String,
    pub details: Map<String, Value>,
}

impl VerifierVerdict {
    fn detail(&self, keys: &[&str]) -> Option<String> {
        keys.iter().find_map(|k| match self.details.get(*k) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(v @ (Value::Array(_) | Value::Object(_))) => Some(v.to_string()),
            _ => None,
        })
    }

    pub fn useful_information(&self) -> Option<String> {
        self.detail(&["useful_information", "Useful information", "useful information"])
    }

    pub fn recommendations(&self) -> Option<String> {
        self.detail(&["strategic_recommendations", "Strategic Recommendations", "recommendations"])
    }

    pub fn failure_analysis(&self) -> Option<String> {
        self.detail(&["failure_analysis", "Failure Analysis"])
    }

    /// Summary plus the carried-forward details, as seeded into context.
    pub fn carry_text(&self) -> String {
        let mut s = self.trajectory_summary.trim().to_string();
        if let Some(u) = self.useful_information() {
            s.push_str(&format!("\nUseful information: {u}"));
        }
        if let Some(r) = self.recommendations() {
            s.push_str(&format!("\nRecommendations: {r}"));
        }
        s
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unreadable verdict: {0}")]
pub struct VerdictParseError(pub String);

fn json_object_slice(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

/// Strict five-field parse. Surrounding prose and code fences are tolerated.
pub fn parse_verdict(raw: &str) -> Result<VerifierVerdict, VerdictParseError> {
    let body = json_object_slice(raw).ok_or_else(|| VerdictParseError("no JSON object".into()))?;
    let v: Value = serde_json::from_str(body).map_err(|e| VerdictParseError(e.to_string()))?;
    let text = |k: &str| -> Result<String, VerdictParseError> {
        match &v[k] {
            Value::String(s) => Ok(s.clone()),
            Value::Null => Err(VerdictParseError(format!("missing {k:?}"))),
            other => Ok(other.to_string()),
        }
    };
    let decision_raw = text("decision")?;
    let decision = Decision::parse(&decision_raw)
        .ok_or_else(|| VerdictParseError(format!("decision {decision_raw:?} is not SUCCESS, CONTINUE or PIVOT")))?;
    let details = match &v["details"] {
        Value::Object(m) => m.clone(),
        Value::String(s) if !s.trim().is_empty() => {
            let mut m = Map::new();
            m.insert("text".into(), Value::String(s.clone()));
            m
        }
        _ => Map::new(),
    };
    let verdict = VerifierVerdict {
        verification: text("verification")?,
        decision,
        justification: text("justification")?,
        trajectory_summary: text("trajectory_summary")?,
        details,
    };
    if verdict.decision != Decision::Success && verdict.trajectory_summary.trim().is_empty() {
        return Err(VerdictParseError("empty trajectory_summary".into()));
    }
    Ok(verdict)
}

fn degraded_verdict(raw: &str) -> VerifierVerdict {
    let chars: Vec<char> = raw.trim().chars().collect();
    let tail: String = chars[chars.len().saturating_sub(DEGRADED_TAIL)..].iter().collect();
    VerifierVerdict {
        verification: String::new(),
        decision: Decision::Continue,
        justification: "verdict unreadable; continuing".into(),
        trajectory_summary: if tail.is_empty() { "(no readable verdict)".into() } else { tail },
        details: Map::new(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub verdict: VerifierVerdict,
    pub raw: String,
    pub degraded: bool,
    pub usages: Vec<TokenUsage>,
}

/// The verifier's view of an attempt, with long tool output clipped.
pub fn verifier_trajectory(traj: &Trajectory) -> String {
    let mut parts = Vec::new();
    for s in &traj.steps {
        if s.kind == StepKind::ToolResponse && s.content.chars().count() > VERIFIER_RESPONSE_CLIP {
            let clipped: String = s.content.chars().take(VERIFIER_RESPONSE_CLIP).collect();
            parts.push(format!("<tool_response>\n{clipped}\n[clipped]\n</tool_response>"));
        } else {
            parts.push(s.render());
        }
    }
    parts.join("\n")
}

pub fn verify_request(
    question: &str,
    trajectory: &str,
    answer: &str,
    snapshot: &BudgetSnapshot,
    temperature: f64,
) -> ChatRequest {
    let user = format!(
        "Question: {question}\n\nTrajectory:\n{trajectory}\n\nCurrent Answer: {answer}\n\nBudget Status:\n{}",
        render_budget_block(snapshot)
    );
    ChatRequest::new(CallPurpose::Verify, VERIFIER_SYSTEM, vec![Turn::user(user)], temperature)
}

/// Asks for a verdict, re-asking once on an unreadable reply, then falls
/// back to a degraded CONTINUE.
pub fn verify(
    question: &str,
    trajectory: &str,
    answer: &str,
    snapshot: &BudgetSnapshot,
    llm: &dyn LlmProvider,
    temperature: f64,
    seed: Option<u64>,
) -> Result<VerifyOutcome, ProviderError> {
    let mut req = verify_request(question, trajectory, answer, snapshot, temperature);
    req.seed = seed;
    let mut usages = Vec::new();
    let mut raw = String::new();
    for attempt in 0..2 {
        let resp = llm.chat(&req)?;
        usages.push(resp.usage);
        raw = resp.text;
        match parse_verdict(&raw) {
            Ok(verdict) => return Ok(VerifyOutcome { verdict, raw, degraded: false, usages }),
            Err(e) if attempt == 0 => {
                req.turns.push(Turn::assistant(raw.clone()));
                req.turns.push(Turn::user(format!(
                    "Your reply could not be read ({}). Output only the single JSON object with the five required fields.",
                    e.0
                )));
            }
            Err(_) => {}
        }
    }
    log::warn!("verifier reply unreadable twice; degraded CONTINUE");
    Ok(VerifyOutcome { verdict: degraded_verdict(&raw), raw, degraded: true, usages })
}

/// Verifies the run's current answer, billing the calls into the attempt.
pub fn verify_run(run: &mut AgentRun<'_>, answer: &str) -> Result<VerifyOutcome, ProviderError> {
    let snapshot = run.ledger.snapshot();
    let temp = run.config.temperature_select;
    let out = verify(
        &run.question,
        &verifier_trajectory(&run.traj),
        answer,
        &snapshot,
        run.providers.verifier().as_ref(),
        temp,
        run.seed,
    )?;
    for u in &out.usages {
        run.record_usage(CallPurpose::Verify, temp, *u);
    }
    run.emitter.emit(
        run.traj.attempt,
        run.traj.iterations,
        EventKind::Verdict {
            raw: out.raw.clone(),
            decision: out.verdict.decision.as_str().into(),
            degraded: out.degraded,
            parsed: serde_json::to_value(&out.verdict).unwrap_or_default(),
        },
        TokenUsage::default(),
        Some(snapshot),
    );
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextAction {
    FinishAttempt,
    ResumeSame,
    NewAttempt,
}

/// SUCCESS ends the question in early-stop mode; otherwise a new attempt
/// follows when budget remains.
pub fn apply_verdict(decision: Decision, early_stop: bool, budget_left: bool) -> NextAction {
    match decision {
        Decision::Success if early_stop || !budget_left => NextAction::FinishAttempt,
        Decision::Success => NextAction::NewAttempt,
        Decision::Continue => NextAction::ResumeSame,
        Decision::Pivot => NextAction::NewAttempt,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub answer: Option<String>,
    pub verdict: Option<VerifierVerdict>,
    pub snapshot: BudgetSnapshot,
    pub usage: TokenUsage,
    pub status: String,
    pub tools_dispatched: UsageCounter,
}

impl AttemptRecord {
    pub fn succeeded(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.decision == Decision::Success)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no boxed option letter in reply")]
pub struct BoxParseError;

/// The last `\boxed{X}` letter in a reply.
pub fn parse_boxed_letter(reply: &str) -> Result<char, BoxParseError> {
    let re = Regex::new(r"\\boxed\{\s*([A-Za-z])\s*\}").expect("boxed regex");
    re.captures_iter(reply)
        .last()
        .and_then(|c| c[1].chars().next())
        .map(|c| c.to_ascii_uppercase())
        .ok_or(BoxParseError)
}

pub fn option_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

pub fn is_none_answer(a: &str) -> bool {
    let t = a.trim();
    t.is_empty() || t.eq_ignore_ascii_case("none")
}

/// One lettered option shown to a judge.
#[derive(Clone, Debug, PartialEq)]
pub struct JudgeOption {
    pub answer: String,
    pub context: String,
}

/// Asks a judge to pick a lettered option. Out-of-range letters, missing
/// boxes and picks of a "None" option get one re-ask. Returns `None` if
/// both replies are unusable.
#[allow(clippy::too_many_arguments)]
pub fn judge_pick(
    system: &str,
    purpose: CallPurpose,
    question: &str,
    options: &[JudgeOption],
    judge: &dyn LlmProvider,
    temperature: f64,
    emitter: Option<&Emitter>,
) -> Result<Option<usize>, ProviderError> {
    let mut user = format!("Question: {question}\n");
    for (i, o) in options.iter().enumerate() {
        user.push_str(&format!("\nOption {}:\nAnswer: {}\n", option_letter(i), o.answer));
        if !o.context.is_empty() {
            user.push_str(&format!("Trajectory/verification:\n{}\n", o.context));
        }
    }
    let mut req = ChatRequest::new(purpose, system, vec![Turn::user(user)], temperature);
    for round in 0..2 {
        let resp = judge.chat(&req)?;
        if let Some(em) = emitter {
            em.emit(
                0,
                0,
                EventKind::LlmCall { purpose: purpose.as_str().into(), temperature, billable: purpose.billable() },
                resp.usage,
                None,
            );
        }
        let problem = match parse_boxed_letter(&resp.text) {
            Ok(c) => {
                let idx = (c as u8 - b'A') as usize;
                match options.get(idx) {
                    Some(o) if is_none_answer(&o.answer) => format!("Option {c} is \"None\", which must never be chosen."),
                    Some(_) => return Ok(Some(idx)),
                    None => format!("Option {c} does not exist."),
                }
            }
            Err(_) => "No boxed letter was found.".to_string(),
        };
        if round == 0 {
            req.turns.push(Turn::assistant(resp.text));
            req.turns.push(Turn::user(format!("{problem} Answer again, ending with the chosen letter inside \\boxed{{}}.")));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub answer: String,
    pub index: usize,
    pub judged: bool,
}

/// Best-of-N selection over attempt records.
pub fn select_final(
    question: &str,
    candidates: &[AttemptRecord],
    judge: &dyn LlmProvider,
    temperature: f64,
    emitter: Option<&Emitter>,
) -> Result<Selection, ProviderError> {
    assert!(!candidates.is_empty(), "select_final needs candidates");
    let answer_of = |c: &AttemptRecord| c.answer.clone().unwrap_or_else(|| "None".into());
    if candidates.len() == 1 {
        return Ok(Selection { answer: answer_of(&candidates[0]), index: 0, judged: false });
    }
    let options: Vec<JudgeOption> = candidates
        .iter()
        .map(|c| JudgeOption {
            answer: answer_of(c),
            context: c
                .verdict
                .as_ref()
                .map(|v| format!("{}\nVerification: {} ({})", v.trajectory_summary, v.verification, v.decision))
                .unwrap_or_default(),
        })
        .collect();
    let picked = judge_pick(BEST_OF_N_SYSTEM, CallPurpose::Select, question, &options, judge, temperature, emitter)?;
    if let Some(i) = picked {
        return Ok(Selection { answer: options[i].answer.clone(), index: i, judged: true });
    }
    // most-informed fallback: latest SUCCESS, else latest non-None, else last
    let i = (0..candidates.len())
        .rev()
        .find(|&i| candidates[i].succeeded())
        .or_else(|| (0..candidates.len()).rev().find(|&i| !is_none_answer(&options[i].answer)))
        .unwrap_or(candidates.len() - 1);
    Ok(Selection { answer: options[i].answer.clone(), index: i, judged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{BudgetVector, Ledger, ToolSet};
    use crate::providers::ScriptedLlm;

    fn verdict_json(decision: &str, summary: &str) -> String {
        serde_json::json!({
            "verification": "c1: satisfied",
            "decision": decision,
            "justification": "j",
            "trajectory_summary": summary,
            "details": {}
        })
        .to_string()
    }

    fn snap() -> BudgetSnapshot {
        Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(40, 9)).unwrap().snapshot()
    }

    #[test]
    fn success_parses_with_empty_details() {
        let v = parse_verdict(&verdict_json("SUCCESS", "")).unwrap();
        assert_eq!(v.decision, Decision::Success);
        assert!(v.details.is_empty());
    }

    #[test]
    fn fenced_pivot_parses() {
        let raw = format!("```json\n{}\n```", verdict_json("PIVOT", "dead end"));
        let v = parse_verdict(&raw).unwrap();
        assert_eq!(v.decision, Decision::Pivot);
        assert_eq!(v.trajectory_summary, "dead end");
    }

    #[test]
    fn decision_must_be_one_token() {
        assert!(parse_verdict(&verdict_json("SUCCESS | PIVOT", "s")).is_err());
        assert!(parse_verdict(&verdict_json("maybe", "s")).is_err());
        assert!(parse_verdict(&verdict_json("PIVOT", " ")).is_err());
    }

    #[test]
    fn string_details_kept() {
        let raw = r#"{"verification":"v","decision":"CONTINUE","justification":"j","trajectory_summary":"s","details":"look again"}"#;
        let v = parse_verdict(raw).unwrap();
        assert_eq!(v.details["text"], "look again");
    }

    #[test]
    fn retry_then_degraded() {
        let llm = ScriptedLlm::replies(["not json", "still not json at all"]);
        let out = verify("q", "t", "a", &snap(), &llm, 0.0, None).unwrap();
        assert!(out.degraded);
        assert_eq!(out.verdict.decision, Decision::Continue);
        assert_eq!(out.verdict.trajectory_summary, "still not json at all");
        assert_eq!(out.usages.len(), 2);
        let llm = ScriptedLlm::replies(["oops".to_string(), verdict_json("SUCCESS", "")]);
        let out = verify("q", "t", "a", &snap(), &llm, 0.0, None).unwrap();
        assert!(!out.degraded);
    }

    #[test]
    fn request_carries_given_inputs() {
        let req = verify_request("Who?", "<think>x</think>", "Bob", &snap(), 0.0);
        let u = &req.turns[0].content;
        assert!(u.contains("Question: Who?"));
        assert!(u.contains("Current Answer: Bob"));
        assert!(u.contains("Query Budget Remaining: 40"));
        assert!(u.contains("URL Budget Remaining: 9"));
    }

    #[test]
    fn decision_table() {
        assert_eq!(apply_verdict(Decision::Success, true, true), NextAction::FinishAttempt);
        assert_eq!(apply_verdict(Decision::Success, false, true), NextAction::NewAttempt);
        assert_eq!(apply_verdict(Decision::Success, false, false), NextAction::FinishAttempt);
        assert_eq!(apply_verdict(Decision::Continue, true, true), NextAction::ResumeSame);
        assert_eq!(apply_verdict(Decision::Pivot, true, true), NextAction::NewAttempt);
    }

    fn record(i: u32, answer: &str, decision: Decision) -> AttemptRecord {
        AttemptRecord {
            attempt: i,
            answer: Some(answer.into()),
            verdict: Some(VerifierVerdict {
                verification: String::new(),
                decision,
                justification: String::new(),
                trajectory_summary: "s".into(),
                details: Map::new(),
            }),
            snapshot: snap(),
            usage: TokenUsage::default(),
            status: "answered".into(),
            tools_dispatched: UsageCounter::default(),
        }
    }

    #[test]
    fn single_candidate_needs_no_judge() {
        let judge = ScriptedLlm::replies(Vec::<String>::new());
        let s = select_final("q", &[record(1, "x", Decision::Success)], &judge, 0.0, None).unwrap();
        assert_eq!(s.answer, "x");
        assert_eq!(judge.consumed(), 0);
    }

    #[test]
    fn boxed_letter_selects() {
        let judge = ScriptedLlm::replies(["Justification: best.\nAnswer: \\boxed{B}"]);
        let c = [record(1, "a", Decision::Success), record(2, "b", Decision::Success), record(3, "c", Decision::Success)];
        let s = select_final("q", &c, &judge, 0.0, None).unwrap();
        assert_eq!(s.answer, "b");
        assert_eq!(judge.requests()[0].temperature, 0.0);
    }

    #[test]
    fn none_pick_reasked_then_fallback() {
        let judge = ScriptedLlm::replies(["\\boxed{A}", "\\boxed{A}"]);
        let c = [record(1, "None", Decision::Pivot), record(2, "b", Decision::Success), record(3, "c", Decision::Pivot)];
        let s = select_final("q", &c, &judge, 0.0, None).unwrap();
        assert_eq!(judge.consumed(), 2);
        assert_eq!(s.answer, "b");
        assert!(!s.judged);
    }

    #[test]
    fn unparseable_box_retried_once() {
        let judge = ScriptedLlm::replies(["no box", "\\boxed{c}"]);
        let c = [record(1, "a", Decision::Success), record(2, "b", Decision::Success), record(3, "c", Decision::Success)];
        let s = select_final("q", &c, &judge, 0.0, None).unwrap();
        assert_eq!(s.answer, "c");
    }
}
