//! The ReAct-style iterate loop.
//!
//! One [`AgentRun`] owns a [`Trajectory`] and drives it one chat call at a
//! time. Every tool unit goes through the ledger before dispatch. The full
//! step log is kept; only the renderable context is compacted.

pub mod parse;
pub mod prompts;

use serde::{Deserialize, Serialize};

use crate::cost::TokenUsage;
use crate::events::{digest, Emitter, EventKind};
use crate::ledger::{render_budget_block, Ledger, LedgerError, UsageCounter};
use crate::planning::{merge_plan_update, parse_plan_block, Plan};
use crate::providers::{
    CallPurpose, ChatRequest, PageContent, ProviderError, Providers, Role, Turn, BROWSE_CHAR_CAP,
};

pub use parse::{parse_model_output, parse_segments, parse_tool_call, Segment, ToolCall, ToolCodeParseError};
pub use prompts::{system_prompt, FINAL_ANSWER_PROMPT, FINAL_ANSWER_REPROMPT, FORCING_MESSAGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    React,
    ReactTracker,
    Bats,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "react" => Ok(Mode::React),
            "react_tracker" | "tracker" => Ok(Mode::ReactTracker),
            "bats" => Ok(Mode::Bats),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::React => "react",
            Mode::ReactTracker => "react_tracker",
            Mode::Bats => "bats",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Think,
    ToolCode,
    ToolResponse,
    BudgetBlock,
    Answer,
    ForcingMessage,
    PlanBlock,
    Summary,
}

impl StepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Think => "think",
            StepKind::ToolCode => "tool_code",
            StepKind::ToolResponse => "tool_response",
            StepKind::BudgetBlock => "budget_block",
            StepKind::Answer => "answer",
            StepKind::ForcingMessage => "forcing_message",
            StepKind::PlanBlock => "plan_block",
            StepKind::Summary => "summary",
        }
    }

    /// Model-authored steps render on the assistant side.
    pub fn role(&self) -> Role {
        match self {
            StepKind::Think | StepKind::ToolCode | StepKind::Answer | StepKind::PlanBlock => Role::Assistant,
            _ => Role::User,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<ToolCall>,
    #[serde(default)]
    pub iteration: u32,
}

impl Step {
    pub fn text(kind: StepKind, content: &str) -> Self {
        Step { kind, content: content.to_string(), call: None, iteration: 0 }
    }

    pub fn tool_code(call: ToolCall) -> Self {
        Step { kind: StepKind::ToolCode, content: call.to_json(), call: Some(call), iteration: 0 }
    }

    pub fn render(&self) -> String {
        match self.kind {
            StepKind::Think => format!("<think>\n{}\n</think>", self.content),
            StepKind::ToolCode => format!("<tool_code>\n{}\n</tool_code>", self.content),
            StepKind::ToolResponse => format!("<tool_response>\n{}\n</tool_response>", self.content),
            StepKind::Answer => format!("<answer>{}</answer>", self.content),
            StepKind::PlanBlock => format!("<plan>\n{}\n</plan>", self.content),
            StepKind::Summary => format!("<summary>\n{}\n</summary>", self.content),
            StepKind::BudgetBlock | StepKind::ForcingMessage => self.content.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Running,
    Answered,
    BudgetExhausted,
    MaxIterations,
    /// The main model could not be reached.
    Failed(String),
}

impl TrajectoryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryStatus::Running => "running",
            TrajectoryStatus::Answered => "answered",
            TrajectoryStatus::BudgetExhausted => "budget_exhausted",
            TrajectoryStatus::MaxIterations => "max_iterations",
            TrajectoryStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub attempt: u32,
    /// First user turn: the question plus any seeded material.
    pub seed: String,
    pub steps: Vec<Step>,
    /// Steps before this index are outside the renderable context.
    pub context_start: usize,
    pub usage: TokenUsage,
    pub iterations: u32,
    pub last_summary_iteration: u32,
    pub status: TrajectoryStatus,
    pub answer: Option<String>,
    pub tools_dispatched: UsageCounter,
    pub plan: Option<Plan>,
}

impl Trajectory {
    pub fn new(question_id: &str, attempt: u32, seed: String) -> Self {
        Trajectory {
            question_id: question_id.to_string(),
            attempt,
            seed,
            steps: Vec::new(),
            context_start: 0,
            usage: TokenUsage::default(),
            iterations: 0,
            last_summary_iteration: 0,
            status: TrajectoryStatus::Running,
            answer: None,
            tools_dispatched: UsageCounter::default(),
            plan: None,
        }
    }

    /// Steps the model sees: everything since the last summary, minus all
    /// but the latest tool response and the latest budget block.
    pub fn renderable_steps(&self) -> Vec<&Step> {
        let window = &self.steps[self.context_start.min(self.steps.len())..];
        let last_of = |k: StepKind| window.iter().rposition(|s| s.kind == k);
        let last_resp = last_of(StepKind::ToolResponse);
        let last_budget = last_of(StepKind::BudgetBlock);
        window
            .iter()
            .enumerate()
            .filter(|(i, s)| match s.kind {
                StepKind::ToolResponse => Some(*i) == last_resp,
                StepKind::BudgetBlock => Some(*i) == last_budget,
                _ => true,
            })
            .map(|(_, s)| s)
            .collect()
    }

    /// Conversation turns, consecutive same-role steps merged.
    pub fn render_turns(&self) -> Vec<Turn> {
        let mut turns = vec![Turn::user(self.seed.clone())];
        for s in self.renderable_steps() {
            let role = s.kind.role();
            let text = s.render();
            match turns.last_mut() {
                Some(t) if t.role == role => {
                    t.content.push('\n');
                    t.content.push_str(&text);
                }
                _ => turns.push(Turn { role, content: text }),
            }
        }
        turns
    }

    pub fn context_chars(&self, system: &str) -> usize {
        system.chars().count() + self.render_turns().iter().map(|t| t.content.chars().count()).sum::<usize>()
    }

    pub fn count(&self, kind: StepKind) -> usize {
        self.steps.iter().filter(|s| s.kind == kind).count()
    }

    /// Model-visible text of the whole log, for verifier prompts.
    pub fn transcript(&self) -> String {
        self.steps.iter().map(Step::render).collect::<Vec<_>>().join("\n")
    }

    pub fn tool_units(&self) -> u64 {
        self.tools_dispatched.total()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub temperature_execute: f64,
    pub temperature_select: f64,
    pub max_new_tokens: u32,
    pub summarize_interval: u32,
    pub browse_char_cap: usize,
    pub max_iterations: u32,
    pub tracker_enabled: bool,
    pub mode: Mode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig::for_mode(Mode::React)
    }
}

impl AgentConfig {
    pub fn for_mode(mode: Mode) -> Self {
        AgentConfig {
            temperature_execute: 0.7,
            temperature_select: 0.0,
            max_new_tokens: 65_536,
            summarize_interval: 10,
            browse_char_cap: BROWSE_CHAR_CAP,
            max_iterations: 100,
            tracker_enabled: mode != Mode::React,
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.summarize_interval < 1 {
            return Err("summarize_interval must be at least 1".into());
        }
        if self.browse_char_cap == 0 || self.max_iterations == 0 || self.max_new_tokens == 0 {
            return Err("caps must be positive".into());
        }
        Ok(())
    }
}

/// What one chat round produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationOutcome {
    pub tool_codes: u32,
    pub answer: Option<String>,
}

/// Decision returned by a [`LoopHook`] after each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HookAction {
    /// Stop on answer, keep going otherwise.
    Default,
    /// Keep iterating even though an answer appeared.
    Continue,
    /// Ask for the final answer now and stop.
    RequestFinal,
}

pub trait LoopHook {
    fn after_iteration(&mut self, run: &mut AgentRun<'_>, outcome: &IterationOutcome) -> HookAction;
}

pub struct NoHook;

impl LoopHook for NoHook {
    fn after_iteration(&mut self, _run: &mut AgentRun<'_>, _outcome: &IterationOutcome) -> HookAction {
        HookAction::Default
    }
}

pub struct AgentRun<'a> {
    pub question: String,
    pub config: &'a AgentConfig,
    pub providers: &'a Providers,
    pub ledger: &'a Ledger,
    pub emitter: &'a Emitter,
    pub system: String,
    pub seed: Option<u64>,
    pub traj: Trajectory,
}

impl<'a> AgentRun<'a> {
    pub fn new(
        question_id: &str,
        question: &str,
        config: &'a AgentConfig,
        providers: &'a Providers,
        ledger: &'a Ledger,
        emitter: &'a Emitter,
    ) -> Self {
        AgentRun {
            question: question.to_string(),
            config,
            providers,
            ledger,
            emitter,
            system: system_prompt(config.mode, ledger.tools()),
            seed: None,
            traj: Trajectory::new(question_id, 1, format!("Question: {question}")),
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_attempt(mut self, attempt: u32, seed_text: String) -> Self {
        self.traj.attempt = attempt;
        self.traj.seed = seed_text;
        self
    }

    pub fn context_chars(&self) -> usize {
        self.traj.context_chars(&self.system)
    }

    pub fn note(&self, message: impl Into<String>) {
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::Note { message: message.into() },
            TokenUsage::default(),
            None,
        );
    }

    pub fn push_step(&mut self, mut step: Step) {
        step.iteration = self.traj.iterations;
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::Step {
                step: step.kind.as_str().into(),
                digest: digest(&step.content),
                chars: step.content.chars().count(),
            },
            TokenUsage::default(),
            Some(self.ledger.snapshot()),
        );
        if step.kind == StepKind::PlanBlock {
            self.mirror_plan(&step.content);
        }
        self.traj.steps.push(step);
    }

    fn mirror_plan(&mut self, text: &str) {
        let Ok(new) = parse_plan_block(text) else {
            self.note("plan block without checklist lines");
            return;
        };
        let (plan, repaired) = match &self.traj.plan {
            Some(old) => merge_plan_update(old, &new),
            None => (new, Vec::new()),
        };
        let diagnostics = plan.resource_diagnostics(&self.ledger.usage());
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::PlanRevision {
                revision: plan.revision,
                plan: serde_json::to_value(&plan).unwrap_or_default(),
                repaired,
                diagnostics,
            },
            TokenUsage::default(),
            None,
        );
        self.traj.plan = Some(plan);
    }

    /// One chat call with the current context plus `extra` user turns.
    pub fn chat(&mut self, purpose: CallPurpose, extra: Option<&str>) -> Result<String, ProviderError> {
        let mut turns = self.traj.render_turns();
        if let Some(e) = extra {
            match turns.last_mut() {
                Some(t) if t.role == Role::User => {
                    t.content.push('\n');
                    t.content.push_str(e);
                }
                _ => turns.push(Turn::user(e)),
            }
        }
        let mut req = ChatRequest::new(purpose, self.system.clone(), turns, self.config.temperature_execute);
        req.max_new_tokens = self.config.max_new_tokens;
        req.seed = self.seed;
        let resp = self.providers.llm.chat(&req)?;
        self.record_usage(purpose, self.config.temperature_execute, resp.usage);
        Ok(resp.text)
    }

    /// Bills a call into the trajectory and logs it.
    pub fn record_usage(&mut self, purpose: CallPurpose, temperature: f64, usage: TokenUsage) {
        if purpose.billable() {
            self.traj.usage += usage;
        }
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::LlmCall { purpose: purpose.as_str().into(), temperature, billable: purpose.billable() },
            usage,
            None,
        );
    }

    /// One chat call and the processing of its reply.
    pub fn iterate(&mut self) -> Result<IterationOutcome, ProviderError> {
        self.traj.iterations += 1;
        let raw = self.chat(CallPurpose::Agent, None)?;
        // anything the model wrote in place of a tool response is discarded
        let text = match raw.find("<tool_response>") {
            Some(i) => &raw[..i],
            None => &raw[..],
        };
        let mut out = IterationOutcome::default();
        for seg in parse_segments(text) {
            match seg {
                Segment::BadToolCode(e) => {
                    out.tool_codes += 1;
                    self.push_step(Step::text(StepKind::ToolCode, &e.raw));
                    self.push_step(Step::text(
                        StepKind::ToolResponse,
                        &format!("Invalid tool_code ({}). No budget was used. Emit a single JSON object with \"name\" and \"arguments\" following the tool schema.", e.reason),
                    ));
                }
                Segment::Step(step) if step.kind == StepKind::ToolCode => {
                    out.tool_codes += 1;
                    let call = step.call.clone().expect("tool_code step carries a call");
                    self.push_step(step);
                    let response = self.dispatch(&call);
                    self.push_step(Step::text(StepKind::ToolResponse, &response));
                    if self.config.tracker_enabled {
                        let block = render_budget_block(&self.ledger.snapshot());
                        self.push_step(Step::text(StepKind::BudgetBlock, &block));
                    }
                }
                Segment::Step(step) if step.kind == StepKind::Answer => {
                    let a = step.content.trim().to_string();
                    self.push_step(step);
                    out.answer = Some(if a.is_empty() { "None".into() } else { a });
                    break;
                }
                Segment::Step(step) => self.push_step(step),
            }
        }
        Ok(out)
    }

    fn emit_reservation(&self, granted: bool, tool: &str, units: u64, seq: u64, error: Option<String>) {
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::Reservation { granted, tool: tool.into(), units, ledger_seq: seq, error },
            TokenUsage::default(),
            Some(self.ledger.snapshot()),
        );
    }

    /// Reserves and dispatches one tool call; returns the tool_response text.
    fn dispatch(&mut self, call: &ToolCall) -> String {
        let units = call.units();
        let display = self.ledger.tools().get(&call.name).map(|t| t.display_name.clone()).unwrap_or_default();
        let reservation = match self.ledger.reserve(&call.name, units) {
            Ok(r) => r,
            Err(e) => {
                self.emit_reservation(false, &call.name, units, e.seq(), Some(e.to_string()));
                return match e {
                    LedgerError::UnknownTool { .. } => {
                        let names: Vec<&str> = self.ledger.tools().names().collect();
                        format!("Unknown tool {:?}. Available tools: {}.", call.name, names.join(", "))
                    }
                    LedgerError::ZeroUnits { .. } => "Tool call refused: it names no items.".into(),
                    LedgerError::BudgetExhausted { .. } => {
                        format!("Tool call refused: the {display} budget is exhausted (0 units remain).")
                    }
                    LedgerError::BatchExceedsRemaining { requested, remaining, .. } => format!(
                        "Tool call refused: it needs {requested} {display} units but only {remaining} remain. Issue a smaller batch."
                    ),
                };
            }
        };
        self.emit_reservation(true, &call.name, units, reservation.seq, None);
        self.traj.tools_dispatched.add(&call.name, units);
        let items = call.items();
        let (text, failed) = match call.name.as_str() {
            crate::ledger::SEARCH => match self.providers.search.search(&items) {
                Ok(lists) => (format_search(&items, &lists), 0),
                Err(e) => (format!("[search error] {e}"), units),
            },
            crate::ledger::BROWSE => match self.providers.browse.browse(&items, call.goal()) {
                Ok(pages) => {
                    let failed = pages.iter().filter(|p| p.is_error()).count() as u64;
                    (format_pages(&pages, self.config.browse_char_cap), failed)
                }
                Err(e) => (format!("[browse error] {e}"), units),
            },
            other => (format!("Tool {other:?} has no backend."), units),
        };
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::Dispatch { tool: call.name.clone(), units, failed },
            TokenUsage::default(),
            None,
        );
        text
    }

    /// Asks for an answer with tools disabled. Skipped when an answer is
    /// already on record.
    pub fn forced_final_answer(&mut self) -> Result<String, ProviderError> {
        if let Some(a) = &self.traj.answer {
            return Ok(a.clone());
        }
        let mut prompt = FINAL_ANSWER_PROMPT;
        let mut answer = None;
        for round in 0..2 {
            self.push_step(Step::text(StepKind::ForcingMessage, prompt));
            let raw = self.chat(CallPurpose::FinalAnswer, None)?;
            let mut saw_tool = false;
            for seg in parse_segments(&raw) {
                match seg {
                    Segment::Step(s) if s.kind == StepKind::Answer => {
                        let a = s.content.trim().to_string();
                        self.push_step(s);
                        answer = Some(if a.is_empty() { "None".into() } else { a });
                        break;
                    }
                    Segment::Step(s) if s.kind == StepKind::ToolCode => {
                        saw_tool = true;
                        self.note(format!("ignored tool_code after tools were closed: {}", s.content));
                    }
                    Segment::BadToolCode(_) => saw_tool = true,
                    Segment::Step(s) => self.push_step(s),
                }
            }
            if answer.is_some() || !saw_tool || round == 1 {
                break;
            }
            prompt = FINAL_ANSWER_REPROMPT;
        }
        let a = answer.unwrap_or_else(|| "None".into());
        self.traj.answer = Some(a.clone());
        Ok(a)
    }

    /// Replaces everything before this point with a summary step, if that
    /// strictly shrinks the context. Returns (before, after) character counts.
    pub fn substitute_summary(&mut self, summary: &str, reason: &str) -> Option<(usize, usize)> {
        let before = self.context_chars();
        let saved_start = self.traj.context_start;
        self.traj.steps.push(Step {
            kind: StepKind::Summary,
            content: summary.to_string(),
            call: None,
            iteration: self.traj.iterations,
        });
        self.traj.context_start = self.traj.steps.len() - 1;
        let after = self.context_chars();
        if after >= before {
            self.traj.steps.pop();
            self.traj.context_start = saved_start;
            return None;
        }
        // log the step now that it is kept
        let step = self.traj.steps.pop().expect("summary step");
        self.push_step(step);
        self.traj.last_summary_iteration = self.traj.iterations;
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::Compaction { reason: reason.into(), before_chars: before, after_chars: after },
            TokenUsage::default(),
            None,
        );
        Some((before, after))
    }

    pub fn finish(&mut self, status: TrajectoryStatus) {
        self.traj.status = status;
        self.emitter.emit(
            self.traj.attempt,
            self.traj.iterations,
            EventKind::AttemptEnd {
                status: self.traj.status.as_str().into(),
                answer: self.traj.answer.clone(),
                tools_dispatched: self.traj.tool_units(),
            },
            TokenUsage::default(),
            Some(self.ledger.snapshot()),
        );
    }

    /// Runs until an answer, exhaustion, the iteration cap or a hook stop.
    pub fn drive(&mut self, hook: &mut dyn LoopHook) {
        loop {
            if self.ledger.any_exhausted() {
                let status = match self.forced_final_answer() {
                    Ok(_) => TrajectoryStatus::BudgetExhausted,
                    Err(e) => TrajectoryStatus::Failed(e.to_string()),
                };
                return self.finish(status);
            }
            if self.traj.iterations >= self.config.max_iterations {
                return self.finish(TrajectoryStatus::MaxIterations);
            }
            let out = match self.iterate() {
                Ok(o) => o,
                Err(e) => return self.finish(TrajectoryStatus::Failed(e.to_string())),
            };
            if let Some(a) = &out.answer {
                self.traj.answer = Some(a.clone());
            }
            match hook.after_iteration(self, &out) {
                HookAction::Continue => self.traj.answer = None,
                HookAction::RequestFinal => {
                    let keep = self.traj.answer.take();
                    let status = match self.forced_final_answer() {
                        Ok(a) if a == "None" && keep.is_some() => {
                            self.traj.answer = keep;
                            TrajectoryStatus::Answered
                        }
                        Ok(_) => TrajectoryStatus::Answered,
                        Err(e) => TrajectoryStatus::Failed(e.to_string()),
                    };
                    return self.finish(status);
                }
                HookAction::Default => {
                    if out.answer.is_some() {
                        return self.finish(TrajectoryStatus::Answered);
                    }
                }
            }
        }
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }
}

fn format_search(queries: &[String], lists: &[Vec<crate::providers::SearchResult>]) -> String {
    let mut out = Vec::new();
    for (q, results) in queries.iter().zip(lists) {
        if results.is_empty() {
            out.push(format!("No results for \"{q}\"."));
            continue;
        }
        let mut block = format!("Search results for \"{q}\":");
        for (i, r) in results.iter().enumerate() {
            block.push_str(&format!("\n{}. {}\nURL: {}\n{}", i + 1, r.title, r.url, r.snippet));
        }
        out.push(block);
    }
    out.join("\n\n")
}

fn format_pages(pages: &[PageContent], cap: usize) -> String {
    pages
        .iter()
        .map(|p| {
            if p.is_error() {
                return p.text.clone();
            }
            let capped = PageContent::capped(p.url.clone(), &p.text, cap);
            let mut s = format!("Content of {}:\n{}", capped.url, capped.text);
            if capped.truncated || p.truncated {
                s.push_str("\n[content truncated]");
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Plain loop: one trajectory against `ledger`.
pub fn run_react(
    question_id: &str,
    question: &str,
    ledger: &Ledger,
    config: &AgentConfig,
    providers: &Providers,
    emitter: &Emitter,
    seed: Option<u64>,
) -> Trajectory {
    let mut run = AgentRun::new(question_id, question, config, providers, ledger, emitter).with_seed(seed);
    run.drive(&mut NoHook);
    run.into_trajectory()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::events::{ClockMode, EventLog};
    use crate::ledger::{BudgetVector, ToolSet};
    use crate::providers::{EmptyWeb, FixturePages, ScriptedLlm};

    fn search_reply(q: &str) -> String {
        format!("<think>look</think><tool_code>{{\"name\": \"search\", \"arguments\": {{\"query\": [\"{q}\"]}}}}</tool_code>")
    }

    fn setup(llm: ScriptedLlm) -> (Providers, Emitter) {
        let p = Providers::new(Arc::new(llm), Arc::new(EmptyWeb), Arc::new(EmptyWeb));
        (p, Emitter::new(EventLog::new(), "t", ClockMode::Logical))
    }

    #[test]
    fn immediate_answer() {
        let (p, em) = setup(ScriptedLlm::replies(["<think>easy</think><answer>Paris</answer>"]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(5, 5)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::React);
        let t = run_react("q", "capital?", &ledger, &cfg, &p, &em, None);
        assert_eq!(t.status, TrajectoryStatus::Answered);
        assert_eq!(t.answer.as_deref(), Some("Paris"));
        assert_eq!(t.tool_units(), 0);
        assert_eq!(t.count(StepKind::Answer), 1);
    }

    #[test]
    fn eleven_searches_under_ten() {
        let reply: String = (0..11).map(|i| search_reply(&format!("q{i}"))).collect();
        let (p, em) = setup(ScriptedLlm::replies([reply, "<answer>x</answer>".into()]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(10, 5)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::React);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        assert_eq!(t.tools_dispatched.get("search"), 10);
        assert_eq!(t.status, TrajectoryStatus::BudgetExhausted);
        assert_eq!(t.answer.as_deref(), Some("x"));
        let denied = em
            .log()
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Reservation { granted: false, .. }))
            .count();
        assert_eq!(denied, 1);
    }

    #[test]
    fn bad_tool_code_costs_nothing() {
        let (p, em) = setup(ScriptedLlm::replies(["<tool_code>{broken</tool_code>", "<answer>a</answer>"]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(1, 1)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::ReactTracker);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        assert_eq!(ledger.usage().total(), 0);
        assert!(t.steps.iter().any(|s| s.kind == StepKind::ToolResponse && s.content.contains("Invalid tool_code")));
        assert_eq!(t.status, TrajectoryStatus::Answered);
    }

    #[test]
    fn batch_refusal_names_remaining() {
        let (p, em) = setup(ScriptedLlm::replies([
            "<tool_code>{\"name\": \"search\", \"arguments\": {\"query\": [\"a\", \"b\", \"c\"]}}</tool_code>",
            "<answer>a</answer>",
        ]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(2, 1)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::React);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        let resp = t.steps.iter().find(|s| s.kind == StepKind::ToolResponse).unwrap();
        assert!(resp.content.contains("only 2 remain"), "{}", resp.content);
        assert_eq!(ledger.usage().total(), 0);
    }

    #[test]
    fn tracker_blocks_follow_each_response() {
        let (p, em) = setup(ScriptedLlm::replies([search_reply("a"), search_reply("b"), "<answer>z</answer>".into()]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(5, 5)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::ReactTracker);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        assert_eq!(t.count(StepKind::BudgetBlock), t.count(StepKind::ToolResponse));
        let last = t.steps.iter().rev().find(|s| s.kind == StepKind::BudgetBlock).unwrap();
        assert!(last.content.contains("Query Budget Used: 2, Query Budget Remaining: 3"), "{}", last.content);
    }

    #[test]
    fn context_keeps_latest_tool_response() {
        let (p, em) = setup(ScriptedLlm::replies([search_reply("a"), search_reply("b"), search_reply("c"), "<answer>z</answer>".into()]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(9, 5)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::React);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        let ctx: Vec<_> = t.renderable_steps().into_iter().filter(|s| s.kind == StepKind::ToolResponse).collect();
        assert_eq!(ctx.len(), 1);
        assert!(ctx[0].content.contains("\"c\""));
        assert_eq!(t.count(StepKind::ToolResponse), 3);
    }

    #[test]
    fn one_iteration_context_unchanged() {
        let mut t = Trajectory::new("q", 1, "Question: x".into());
        t.steps.push(Step::text(StepKind::Think, "hmm"));
        assert_eq!(t.renderable_steps().len(), 1);
    }

    #[test]
    fn forced_answer_variants() {
        let cases: [(&[&str], &str, usize); 3] = [
            (&["<answer>Rome</answer>"], "Rome", 1),
            (&[&search_reply("x"), &search_reply("y")], "None", 2),
            (&[""], "None", 1),
        ];
        for (replies, want, calls) in cases {
            let llm = Arc::new(ScriptedLlm::replies(replies.iter().map(|s| s.to_string())));
            let p = Providers::new(llm.clone(), Arc::new(EmptyWeb), Arc::new(EmptyWeb));
            let em = Emitter::new(EventLog::new(), "t", ClockMode::Logical);
            let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(0, 0)).unwrap();
            let cfg = AgentConfig::for_mode(Mode::React);
            let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
            assert_eq!(t.answer.as_deref(), Some(want));
            assert_eq!(llm.consumed(), calls);
            assert_eq!(t.status, TrajectoryStatus::BudgetExhausted);
            assert_eq!(ledger.usage().total(), 0);
        }
    }

    #[test]
    fn browse_pages_capped() {
        let llm = ScriptedLlm::replies([
            "<tool_code>{\"name\": \"browse\", \"arguments\": {\"url\": [\"u\"], \"goal\": \"g\"}}</tool_code>",
            "<answer>a</answer>",
        ]);
        let pages = FixturePages::new(usize::MAX).with_page("u", "y".repeat(300));
        let p = Providers::new(Arc::new(llm), Arc::new(EmptyWeb), Arc::new(pages));
        let em = Emitter::new(EventLog::new(), "t", ClockMode::Logical);
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(1, 1)).unwrap();
        let mut cfg = AgentConfig::for_mode(Mode::React);
        cfg.browse_char_cap = 100;
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        let resp = t.steps.iter().find(|s| s.kind == StepKind::ToolResponse).unwrap();
        assert_eq!(resp.content.matches('y').count(), 100);
        assert!(resp.content.ends_with("[content truncated]"));
    }

    #[test]
    fn provider_failure_sets_failed() {
        let (p, em) = setup(ScriptedLlm::replies(Vec::<String>::new()));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(1, 1)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::React);
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        assert!(matches!(t.status, TrajectoryStatus::Failed(_)));
    }

    #[test]
    fn max_iterations_guard() {
        let (p, em) = setup(ScriptedLlm::replies(vec!["<think>still thinking</think>".to_string(); 5]));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(1, 1)).unwrap();
        let mut cfg = AgentConfig::for_mode(Mode::React);
        cfg.max_iterations = 3;
        let t = run_react("q", "?", &ledger, &cfg, &p, &em, None);
        assert_eq!(t.status, TrajectoryStatus::MaxIterations);
        assert_eq!(t.iterations, 3);
    }

    #[test]
    fn summary_only_kept_when_shorter() {
        let (p, em) = setup(ScriptedLlm::replies(Vec::<String>::new()));
        let ledger = Ledger::new(ToolSet::search_agent(), BudgetVector::search_browse(1, 1)).unwrap();
        let cfg = AgentConfig::for_mode(Mode::Bats);
        let mut run = AgentRun::new("q", "?", &cfg, &p, &ledger, &em);
        assert!(run.substitute_summary("a long summary that exceeds nothing", "test").is_none());
        for _ in 0..5 {
            run.push_step(Step::text(StepKind::Think, &"reasoning ".repeat(20)));
        }
        let (b, a) = run.substitute_summary("short", "test").unwrap();
        assert!(a < b);
        assert_eq!(run.traj.renderable_steps().len(), 1);
    }
}
