//! Test-time scaling: sequential forcing, parallel runs with aggregation,
//! and multi-attempt BATS runs over a shared ledger.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentConfig, AgentRun, HookAction, IterationOutcome, LoopHook, Mode, NoHook, Step, StepKind, Trajectory,
    TrajectoryStatus, FORCING_MESSAGE,
};
use crate::cost::{unified_cost, CostBreakdown, CostError, CurveSample, PricingTable, TokenUsage};
use crate::events::{ClockMode, Emitter, EventKind, EventLog};
use crate::ledger::{render_budget_block, BudgetVector, Ledger, LedgerConfigError, UsageCounter};
use crate::planning::{decompose_constraints, ConstraintSet};
use crate::providers::{CallPurpose, LlmProvider, ProviderError, Providers};
use crate::verification::{
    apply_verdict, judge_pick, select_final, verify_run, AttemptRecord, Decision, JudgeOption, NextAction,
    Selection, MAJORITY_VOTE_SYSTEM,
};

pub const RUN_RECORD_SCHEMA_VERSION: u32 = 1;

/// Consecutive tool-free iterations after forcing before the loop gives up.
pub const FORCING_PATIENCE: u32 = 5;

/// How much of a trajectory's tail a best-of-N judge sees per option.
const JUDGE_CONTEXT_CHARS: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    Sequential,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Normalized string counting.
    MajorityExact,
    /// Judge model with the majority-vote prompt.
    MajorityJudge,
    BestOfN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPolicy {
    pub mode: Mode,
    pub scaling: Scaling,
    pub budgets: BudgetVector,
    #[serde(default = "one")]
    pub parallel_n: usize,
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    /// Concurrent parallel runs per question.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

fn default_aggregation() -> Aggregation {
    Aggregation::MajorityExact
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("parallel_n must be at least 1")]
    ZeroParallel,
    #[error("workers must be at least 1")]
    ZeroWorkers,
    #[error("sequential forcing applies to react and react_tracker only")]
    SequentialBats,
    #[error("bats runs its attempts sequentially; parallel scaling is not supported with it")]
    ParallelBats,
    #[error("early_stop applies to bats only")]
    EarlyStopOutsideBats,
}

impl RunPolicy {
    pub fn new(mode: Mode, budgets: BudgetVector) -> Self {
        RunPolicy {
            mode,
            scaling: Scaling::None,
            budgets,
            parallel_n: 1,
            early_stop: false,
            seeds: Vec::new(),
            aggregation: Aggregation::MajorityExact,
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.parallel_n == 0 {
            return Err(PolicyError::ZeroParallel);
        }
        if self.workers == 0 {
            return Err(PolicyError::ZeroWorkers);
        }
        match (self.mode, self.scaling) {
            (Mode::Bats, Scaling::Sequential) => return Err(PolicyError::SequentialBats),
            (Mode::Bats, Scaling::Parallel) => return Err(PolicyError::ParallelBats),
            _ => {}
        }
        if self.early_stop && self.mode != Mode::Bats {
            return Err(PolicyError::EarlyStopOutsideBats);
        }
        Ok(())
    }

    /// Seed of the i-th run.
    pub fn seed(&self, i: usize) -> u64 {
        self.seeds.get(i).copied().unwrap_or(i as u64)
    }

    /// Short label used to group report rows.
    pub fn label(&self) -> String {
        let mut s = self.mode.to_string();
        match self.scaling {
            Scaling::None => {}
            Scaling::Sequential => s.push_str("+sequential"),
            Scaling::Parallel => {
                let agg = match self.aggregation {
                    Aggregation::MajorityExact | Aggregation::MajorityJudge => "majority",
                    Aggregation::BestOfN => "best_of",
                };
                s.push_str(&format!("+{agg}{}", self.parallel_n));
            }
        }
        if self.mode == Mode::Bats {
            s.push_str(if self.early_stop { "+early_stop" } else { "+exhaust" });
        }
        s
    }
}

/// Appends the forcing message whenever the agent answers with budget left,
/// and gives up after [`FORCING_PATIENCE`] tool-free iterations.
#[derive(Debug, Default)]
pub struct SequentialForcing {
    pub forced: u32,
    pub idle: u32,
    active: bool,
}

impl LoopHook for SequentialForcing {
    fn after_iteration(&mut self, run: &mut AgentRun<'_>, out: &IterationOutcome) -> HookAction {
        if self.active {
            self.idle = if out.tool_codes == 0 { self.idle + 1 } else { 0 };
            if self.idle >= FORCING_PATIENCE {
                run.note(format!("forcing stopped after {} tool-free iterations", self.idle));
                return HookAction::RequestFinal;
            }
        }
        if out.answer.is_some() && !run.ledger.any_exhausted() {
            run.push_step(Step::text(StepKind::ForcingMessage, FORCING_MESSAGE));
            self.active = true;
            self.forced += 1;
            return HookAction::Continue;
        }
        HookAction::Default
    }
}

/// Exact-mode normalization: trimmed and case-folded.
pub fn normalize_answer(a: &str) -> String {
    a.trim().to_lowercase()
}

/// Most frequent normalized answer; ties go to the earliest first
/// occurrence. Returns the trimmed first occurrence.
pub fn majority_exact(answers: &[String]) -> Option<String> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        let e = counts.entry(normalize_answer(a)).or_insert((0, i));
        e.0 += 1;
    }
    counts
        .values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|&(_, first)| answers[first].trim().to_string())
}

pub enum VoteMode<'a> {
    Exact,
    Judge { llm: &'a dyn LlmProvider, question: &'a str, temperature: f64 },
}

/// Majority vote. A judge reply without a usable boxed letter falls back
/// to exact counting.
pub fn majority_vote(answers: &[String], mode: VoteMode<'_>, emitter: Option<&Emitter>) -> Result<String, ProviderError> {
    assert!(!answers.is_empty(), "majority_vote needs answers");
    if let VoteMode::Judge { llm, question, temperature } = mode {
        let options: Vec<JudgeOption> =
            answers.iter().map(|a| JudgeOption { answer: a.clone(), context: String::new() }).collect();
        if let Some(i) = judge_pick(MAJORITY_VOTE_SYSTEM, CallPurpose::MajorityVote, question, &options, llm, temperature, emitter)? {
            return Ok(answers[i].trim().to_string());
        }
        log::warn!("majority judge gave no usable letter; counting exactly");
    }
    Ok(majority_exact(answers).expect("non-empty"))
}

/// 1 if any answer is graded correct.
pub fn pass_at_n(answers: &[String], gold: &str, grader: impl Fn(&str, &str) -> bool) -> u8 {
    u8::from(answers.iter().any(|a| grader(a, gold)))
}

/// One finished run, as persisted in records files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub question_id: String,
    #[serde(default)]
    pub question: String,
    pub policy: String,
    pub mode: Mode,
    pub budget: u64,
    pub budgets: BudgetVector,
    pub answer: String,
    #[serde(default)]
    pub gold: String,
    /// `None` until graded.
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_n: Option<bool>,
    pub cost: CostBreakdown,
    pub tool_counts: UsageCounter,
    pub usage: TokenUsage,
    /// Some tool hit its limit during the run.
    pub exhausted: bool,
    pub status: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub attempts: Vec<AttemptRecord>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CurveSample for RunRecord {
    fn budget_level(&self) -> u64 {
        self.budget
    }
    fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
    fn cost(&self) -> &CostBreakdown {
        &self.cost
    }
    fn tool_counts(&self) -> &UsageCounter {
        &self.tool_counts
    }
}

/// Runs `parallel_n` independent trajectories, each with its own ledger
/// and event log; logs are appended to `emitter`'s log in seed order.
pub fn parallel_runs(
    question_id: &str,
    question: &str,
    policy: &RunPolicy,
    config: &AgentConfig,
    providers: &Providers,
    emitter: &Emitter,
    clock: ClockMode,
) -> Result<Vec<(Trajectory, UsageCounter)>, LedgerConfigError> {
    let tools = providers_tools();
    let ledgers: Vec<Ledger> = (0..policy.parallel_n)
        .map(|_| Ledger::new(tools.clone(), policy.budgets.clone()))
        .collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(policy.workers).build().expect("thread pool");
    let results: Vec<(Trajectory, UsageCounter, EventLog)> = pool.install(|| {
        ledgers
            .par_iter()
            .enumerate()
            .map(|(i, ledger)| {
                let log = EventLog::new();
                let em = Emitter::new(log.clone(), format!("{}/run{i}", emitter.run_id()), clock);
                let mut run = AgentRun::new(question_id, question, config, providers, ledger, &em)
                    .with_seed(Some(policy.seed(i)));
                run.drive(&mut NoHook);
                (run.into_trajectory(), ledger.usage(), log)
            })
            .collect()
    });
    Ok(results
        .into_iter()
        .map(|(t, u, log)| {
            emitter.log().extend(log.events());
            (t, u)
        })
        .collect())
}

fn providers_tools() -> crate::ledger::ToolSet {
    crate::ledger::ToolSet::search_agent()
}

/// Everything a BATS run produced.
#[derive(Clone, Debug)]
pub struct BatsOutcome {
    pub attempts: Vec<AttemptRecord>,
    pub trajectories: Vec<Trajectory>,
    pub answer: String,
    pub selection: Option<Selection>,
    pub constraints: ConstraintSet,
    pub failure: Option<String>,
}

fn seed_text(question: &str, constraints: &ConstraintSet, carry: Option<&str>, block: Option<&str>) -> String {
    let mut s = format!("Question: {question}");
    if !constraints.is_empty() {
        s.push_str("\n\n");
        s.push_str(&constraints.render());
    }
    if let Some(c) = carry {
        s.push_str("\n\nSummary of the previous attempt:\n");
        s.push_str(c);
    }
    if let Some(b) = block {
        s.push_str("\n\n");
        s.push_str(b);
    }
    s
}

enum AttemptEnd {
    Next,
    Stop,
}

/// One attempt under the verification decision machine.
fn run_attempt(run: &mut AgentRun<'_>, early_stop: bool) -> (Option<crate::verification::VerifierVerdict>, AttemptEnd) {
    let k = run.config.summarize_interval;
    loop {
        let exhausted = run.ledger.any_exhausted();
        if exhausted || run.traj.iterations >= run.config.max_iterations {
            let answer = match run.forced_final_answer() {
                Ok(a) => a,
                Err(e) => {
                    run.finish(TrajectoryStatus::Failed(e.to_string()));
                    return (None, AttemptEnd::Stop);
                }
            };
            let verdict = match verify_run(run, &answer) {
                Ok(v) => v.verdict,
                Err(e) => {
                    run.finish(TrajectoryStatus::Failed(e.to_string()));
                    return (None, AttemptEnd::Stop);
                }
            };
            if exhausted {
                run.finish(TrajectoryStatus::BudgetExhausted);
                return (Some(verdict), AttemptEnd::Stop);
            }
            run.finish(TrajectoryStatus::MaxIterations);
            let end = match apply_verdict(verdict.decision, early_stop, true) {
                NextAction::FinishAttempt => AttemptEnd::Stop,
                _ => AttemptEnd::Next,
            };
            return (Some(verdict), end);
        }
        let out = match run.iterate() {
            Ok(o) => o,
            Err(e) => {
                run.finish(TrajectoryStatus::Failed(e.to_string()));
                return (None, AttemptEnd::Stop);
            }
        };
        let Some(answer) = out.answer else { continue };
        run.traj.answer = Some(answer.clone());
        let verdict = match verify_run(run, &answer) {
            Ok(v) => v.verdict,
            Err(e) => {
                run.finish(TrajectoryStatus::Failed(e.to_string()));
                return (None, AttemptEnd::Stop);
            }
        };
        match apply_verdict(verdict.decision, early_stop, !run.ledger.any_exhausted()) {
            NextAction::FinishAttempt => {
                run.finish(TrajectoryStatus::Answered);
                return (Some(verdict), AttemptEnd::Stop);
            }
            NextAction::NewAttempt => {
                run.finish(TrajectoryStatus::Answered);
                return (Some(verdict), AttemptEnd::Next);
            }
            NextAction::ResumeSame => {
                run.traj.answer = None;
                let due = run.traj.iterations - run.traj.last_summary_iteration >= k;
                let substituted = due && run.substitute_summary(&verdict.carry_text(), "continue").is_some();
                if !substituted {
                    let mut feedback = format!("Verifier feedback (CONTINUE): {}", verdict.justification.trim());
                    if let Some(r) = verdict.recommendations() {
                        feedback.push_str(&format!("\nRecommendations: {r}"));
                    }
                    run.push_step(Step::text(StepKind::ForcingMessage, &feedback));
                }
            }
        }
    }
}

/// Attempts against one shared ledger until early-stop SUCCESS, budget
/// exhaustion, or an attempt that dispatched no tools.
#[allow(clippy::too_many_arguments)]
pub fn bats_run(
    question_id: &str,
    question: &str,
    ledger: &Ledger,
    config: &AgentConfig,
    providers: &Providers,
    emitter: &Emitter,
    early_stop: bool,
    seed: Option<u64>,
) -> BatsOutcome {
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut trajectories = Vec::new();
    let mut constraints = ConstraintSet::default();
    let mut carry: Option<String> = None;
    let mut prev_chars = usize::MAX;
    let mut failure = None;
    let mut n = 1u32;
    loop {
        if n > 1 && ledger.any_exhausted() {
            break;
        }
        let mut run = AgentRun::new(question_id, question, config, providers, ledger, emitter).with_seed(seed);
        if n == 1 {
            match decompose_constraints(question, providers.planner().as_ref(), config.temperature_execute, seed) {
                Ok((c, usages)) => {
                    for u in usages {
                        run.record_usage(CallPurpose::Decompose, config.temperature_execute, u);
                    }
                    constraints = c;
                }
                Err(e) => run.note(format!("constraint decomposition failed: {e}")),
            }
            run = run.with_attempt(1, seed_text(question, &constraints, None, None));
        } else {
            let block = render_budget_block(&ledger.snapshot());
            let mut c = carry.clone().unwrap_or_default();
            let mut text = seed_text(question, &constraints, Some(&c), Some(&block));
            run = run.with_attempt(n, text.clone());
            // the fresh context must be strictly smaller than the one it replaces
            while run.context_chars() >= prev_chars && !c.is_empty() {
                let excess = run.context_chars() + 1 - prev_chars;
                let keep = c.chars().count().saturating_sub(excess.max(1));
                c = c.chars().take(keep).collect();
                text = seed_text(question, &constraints, Some(&c), Some(&block));
                run.traj.seed = text.clone();
            }
            if run.context_chars() >= prev_chars {
                run.traj.seed = seed_text(question, &constraints, None, None);
                run.note("pivot seed could not be made smaller than the previous context");
            }
            emitter.emit(
                n,
                0,
                EventKind::Compaction { reason: "new_attempt".into(), before_chars: prev_chars, after_chars: run.context_chars() },
                TokenUsage::default(),
                None,
            );
        }
        let (verdict, end) = run_attempt(&mut run, early_stop);
        prev_chars = run.context_chars();
        if let TrajectoryStatus::Failed(e) = &run.traj.status {
            failure = Some(e.clone());
        }
        let traj = run.into_trajectory();
        let zero_tools = traj.tool_units() == 0;
        if let Some(v) = &verdict {
            if v.decision != Decision::Success {
                carry = Some(v.carry_text());
            }
        }
        attempts.push(AttemptRecord {
            attempt: n,
            answer: traj.answer.clone(),
            verdict,
            snapshot: ledger.snapshot(),
            usage: traj.usage,
            status: traj.status.as_str().into(),
            tools_dispatched: traj.tools_dispatched.clone(),
        });
        trajectories.push(traj);
        if matches!(end, AttemptEnd::Stop) {
            break;
        }
        if zero_tools {
            emitter.emit(n, 0, EventKind::Note { message: "attempt dispatched no tools; stopping".into() }, TokenUsage::default(), None);
            break;
        }
        n += 1;
    }
    let successes: Vec<AttemptRecord> = attempts.iter().filter(|a| a.succeeded()).cloned().collect();
    let pool: Vec<AttemptRecord> = if successes.is_empty() {
        attempts.iter().filter(|a| a.answer.is_some()).cloned().collect()
    } else {
        successes
    };
    let (answer, selection) = if pool.is_empty() {
        ("None".to_string(), None)
    } else {
        match select_final(question, &pool, providers.judge().as_ref(), config.temperature_select, Some(emitter)) {
            Ok(s) => (s.answer.clone(), Some(s)),
            Err(e) => {
                let last = pool.last().and_then(|a| a.answer.clone()).unwrap_or_else(|| "None".into());
                emitter.emit(0, 0, EventKind::Note { message: format!("selection failed: {e}") }, TokenUsage::default(), None);
                (last, None)
            }
        }
    };
    emitter.emit(
        0,
        0,
        EventKind::Aggregation {
            method: "best_of_verified".into(),
            inputs: pool.iter().map(|a| a.answer.clone().unwrap_or_default()).collect(),
            output: answer.clone(),
        },
        TokenUsage::default(),
        None,
    );
    BatsOutcome { attempts, trajectories, answer, selection, constraints, failure }
}

fn tail(s: &str, n: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    chars[chars.len().saturating_sub(n)..].iter().collect()
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ledger(#[from] LedgerConfigError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Runs one question under `policy` and returns its ungraded record.
#[allow(clippy::too_many_arguments)]
pub fn run_question(
    question_id: &str,
    question: &str,
    gold: &str,
    policy: &RunPolicy,
    config: &AgentConfig,
    providers: &Providers,
    pricing: &PricingTable,
    log: &EventLog,
    clock: ClockMode,
) -> Result<RunRecord, RunError> {
    policy.validate()?;
    let started = Instant::now();
    let emitter = Emitter::new(log.clone(), question_id, clock);
    let tools = providers_tools();
    let mut usage = TokenUsage::default();
    let mut tool_counts = UsageCounter::default();
    let mut exhausted = false;
    let mut answers = Vec::new();
    let mut attempts = Vec::new();
    let mut error = None;
    let (answer, status) = match (policy.mode, policy.scaling) {
        (Mode::Bats, _) => {
            let ledger = Ledger::new(tools, policy.budgets.clone())?;
            let out = bats_run(question_id, question, &ledger, config, providers, &emitter, policy.early_stop, Some(policy.seed(0)));
            for t in &out.trajectories {
                usage += t.usage;
            }
            tool_counts = ledger.usage();
            exhausted = ledger.any_exhausted();
            answers = out.attempts.iter().filter_map(|a| a.answer.clone()).collect();
            error = out.failure.clone();
            let status = out.attempts.last().map(|a| a.status.clone()).unwrap_or_else(|| "failed".into());
            attempts = out.attempts;
            (out.answer, status)
        }
        (_, Scaling::Parallel) => {
            let runs = parallel_runs(question_id, question, policy, config, providers, &emitter, clock)?;
            for (t, u) in &runs {
                usage += t.usage;
                tool_counts = tool_counts.merged(u);
                exhausted |= t.status == TrajectoryStatus::BudgetExhausted;
                if let TrajectoryStatus::Failed(e) = &t.status {
                    error = Some(e.clone());
                }
            }
            answers = runs.iter().map(|(t, _)| t.answer.clone().unwrap_or_else(|| "None".into())).collect();
            let answer = aggregate(question, &runs, &answers, policy.aggregation, config, providers, &emitter)
                .unwrap_or_else(|e| {
                    error = Some(e.to_string());
                    majority_exact(&answers).unwrap_or_else(|| "None".into())
                });
            let status = if error.is_some() && runs.iter().all(|(t, _)| matches!(t.status, TrajectoryStatus::Failed(_))) {
                "failed".to_string()
            } else {
                "aggregated".to_string()
            };
            (answer, status)
        }
        (_, scaling) => {
            let ledger = Ledger::new(tools, policy.budgets.clone())?;
            let mut run = AgentRun::new(question_id, question, config, providers, &ledger, &emitter)
                .with_seed(Some(policy.seed(0)));
            if scaling == Scaling::Sequential {
                run.drive(&mut SequentialForcing::default());
            } else {
                run.drive(&mut NoHook);
            }
            let t = run.into_trajectory();
            usage = t.usage;
            tool_counts = ledger.usage();
            exhausted = ledger.any_exhausted();
            if let TrajectoryStatus::Failed(e) = &t.status {
                error = Some(e.clone());
            }
            let answer = t.answer.clone().unwrap_or_else(|| "None".into());
            answers.push(answer.clone());
            (answer, t.status.as_str().to_string())
        }
    };
    for name in pricing.tool_prices.keys() {
        tool_counts.used.entry(name.clone()).or_insert(0);
    }
    let cost = unified_cost(&usage, &tool_counts, pricing)?;
    Ok(RunRecord {
        schema_version: RUN_RECORD_SCHEMA_VERSION,
        question_id: question_id.to_string(),
        question: question.to_string(),
        policy: policy.label(),
        mode: policy.mode,
        budget: policy.budgets.level(),
        budgets: policy.budgets.clone(),
        answer,
        gold: gold.to_string(),
        correct: None,
        pass_at_n: None,
        cost,
        tool_counts,
        usage,
        exhausted,
        status,
        answers,
        attempts,
        wall_ms: match clock {
            ClockMode::Logical => 0,
            ClockMode::Wall => emitter.elapsed_ms(started),
        },
        error,
    })
}

fn aggregate(
    question: &str,
    runs: &[(Trajectory, UsageCounter)],
    answers: &[String],
    how: Aggregation,
    config: &AgentConfig,
    providers: &Providers,
    emitter: &Emitter,
) -> Result<String, ProviderError> {
    let judge = providers.judge().as_ref();
    let temperature = config.temperature_select;
    let (method, out) = match how {
        Aggregation::MajorityExact => ("majority_exact", majority_vote(answers, VoteMode::Exact, Some(emitter))?),
        Aggregation::MajorityJudge => (
            "majority_judge",
            majority_vote(answers, VoteMode::Judge { llm: judge, question, temperature }, Some(emitter))?,
        ),
        Aggregation::BestOfN => {
            let options: Vec<JudgeOption> = runs
                .iter()
                .zip(answers)
                .map(|((t, _), a)| JudgeOption { answer: a.clone(), context: tail(&t.transcript(), JUDGE_CONTEXT_CHARS) })
                .collect();
            let picked = if options.len() == 1 {
                Some(0)
            } else {
                judge_pick(
                    crate::verification::BEST_OF_N_SYSTEM,
                    CallPurpose::Select,
                    question,
                    &options,
                    judge,
                    temperature,
                    Some(emitter),
                )?
            };
            let i = picked
                .or_else(|| answers.iter().rposition(|a| !crate::verification::is_none_answer(a)))
                .unwrap_or(answers.len() - 1);
            ("best_of_n", answers[i].clone())
        }
    };
    emitter.emit(
        0,
        0,
        EventKind::Aggregation { method: method.into(), inputs: answers.to_vec(), output: out.clone() },
        TokenUsage::default(),
        None,
    );
    Ok(out)
}
