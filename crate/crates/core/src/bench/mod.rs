//! Benchmark harness: datasets, grading, resumable runs and reports.

pub mod manifest;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cost::{CostBreakdown, TokenUsage};
use crate::events::EventLog;
use crate::ledger::UsageCounter;
use crate::providers::world::SyntheticWorld;
use crate::providers::{CallPurpose, ChatRequest, LlmProvider, Turn};
use crate::scaling::{normalize_answer, pass_at_n, run_question, RunRecord, RUN_RECORD_SCHEMA_VERSION};
use crate::verification::is_none_answer;

pub use manifest::{ManifestError, RunManifest};
pub use report::{emit_report, pareto_marks, ReportError, ReportRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { id: String, line: usize },
}

pub fn parse_dataset<R: BufRead>(r: R) -> Result<Vec<QAItem>, DatasetError> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Format { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Format { line: line_no, message: e.to_string() })?;
        if item.id.trim().is_empty() || item.question.trim().is_empty() || item.gold.trim().is_empty() {
            return Err(DatasetError::Format { line: line_no, message: "id, question and gold must be non-empty".into() });
        }
        if !seen.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId { id: item.id, line: line_no });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>, DatasetError> {
    let f = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(BufReader::new(f))
}

pub fn write_dataset(path: &Path, items: &[QAItem]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// One item per synthetic world, world seeds `seed..seed+count`.
pub fn mock_dataset(seed: u64, depth: u32, count: usize, branching: u32) -> (Vec<QAItem>, Vec<SyntheticWorld>) {
    let worlds: Vec<SyntheticWorld> =
        (0..count as u64).map(|i| SyntheticWorld::build(seed + i, depth, branching)).collect();
    let items = worlds
        .iter()
        .map(|w| QAItem {
            id: format!("world-{}", w.seed),
            question: w.target.question.clone(),
            gold: w.target.gold.clone(),
            metadata: BTreeMap::from([
                ("world_seed".to_string(), Value::from(w.seed)),
                ("depth".to_string(), Value::from(w.target.depth)),
            ]),
        })
        .collect();
    (items, worlds)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GradeError {
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

pub enum GradeMode<'a> {
    Exact,
    Judge { llm: &'a dyn LlmProvider, temperature: f64 },
}

pub const JUDGE_PROMPT: &str = "Judge whether the following [response] to [question] is correct based on the precise and unambiguous [correct_answer].

[question]: {question}

[response]: {response}

[correct_answer]: {correct_answer}

Reply in this format:
extracted_final_answer: the final exact answer extracted from the [response], or 'None' if there is none.
reasoning: explain why the extracted answer is or is not equivalent to [correct_answer], focusing only on meaningful differences. Small formatting differences and numerical values within a small margin are acceptable.
correct: answer 'yes' if extracted_final_answer matches [correct_answer], otherwise 'no'.";

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    !is_none_answer(prediction) && normalize_answer(prediction) == normalize_answer(gold)
}

/// Reads `correct: yes|no`, or a bare `correct` / `incorrect` token.
pub fn parse_judge_reply(reply: &str) -> Option<bool> {
    let labelled = Regex::new(r"(?im)^\s*\**correct\**\s*:\s*\**\s*(yes|no)\b").expect("judge regex");
    if let Some(c) = labelled.captures_iter(reply).last() {
        return Some(c[1].eq_ignore_ascii_case("yes"));
    }
    let word = Regex::new(r"(?i)\b(incorrect|correct)\b").expect("judge regex");
    word.captures_iter(reply).last().map(|c| c[1].eq_ignore_ascii_case("correct"))
}

pub fn grade(question: &str, prediction: &str, gold: &str, mode: &GradeMode<'_>) -> Result<bool, GradeError> {
    match mode {
        GradeMode::Exact => Ok(exact_match(prediction, gold)),
        GradeMode::Judge { llm, temperature } => {
            let prompt = JUDGE_PROMPT
                .replace("{question}", question)
                .replace("{response}", prediction)
                .replace("{correct_answer}", gold);
            let req = ChatRequest::new(CallPurpose::Grade, "", vec![Turn::user(prompt)], *temperature);
            let resp = llm.chat(&req).map_err(|e| GradeError::JudgeUnavailable(e.to_string()))?;
            parse_judge_reply(&resp.text)
                .ok_or_else(|| GradeError::JudgeUnavailable(format!("unreadable judge reply: {}", resp.text.trim())))
        }
    }
}

/// Grades a record in place. Judge failures leave it ungraded.
pub fn grade_record(rec: &mut RunRecord, mode: &GradeMode<'_>) {
    match grade(&rec.question, &rec.answer, &rec.gold, mode) {
        Ok(c) => rec.correct = Some(c),
        Err(e) => {
            log::warn!("{}: {e}; left ungraded", rec.question_id);
            rec.correct = None;
        }
    }
    if rec.answers.len() > 1 {
        let hit = pass_at_n(&rec.answers, &rec.gold, |a, g| grade(&rec.question, a, g, mode).unwrap_or(false));
        rec.pass_at_n = Some(hit == 1);
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, DatasetError> {
    let f = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Format { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Format { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BenchSummary {
    pub records_path: PathBuf,
    pub events_path: PathBuf,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub correct: usize,
    pub ungraded: usize,
}

impl std::fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "executed {} skipped {} failed {} correct {} ungraded {} -> {}",
            self.executed,
            self.skipped,
            self.failed,
            self.correct,
            self.ungraded,
            self.records_path.display()
        )
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn failed_record(item: &QAItem, manifest: &RunManifest, err: String) -> RunRecord {
    let mut counts = UsageCounter::default();
    for t in manifest.pricing.tool_prices.keys() {
        counts.add(t, 0);
    }
    let mut cost = CostBreakdown::default();
    for t in manifest.pricing.tool_prices.keys() {
        cost.tool_cost.insert(t.clone(), crate::money::Money::zero());
    }
    RunRecord {
        schema_version: RUN_RECORD_SCHEMA_VERSION,
        question_id: item.id.clone(),
        question: item.question.clone(),
        policy: manifest.policy.label(),
        mode: manifest.policy.mode,
        budget: manifest.policy.budgets.level(),
        budgets: manifest.policy.budgets.clone(),
        answer: "None".into(),
        gold: item.gold.clone(),
        correct: None,
        pass_at_n: None,
        cost,
        tool_counts: counts,
        usage: TokenUsage::default(),
        exhausted: false,
        status: "failed".into(),
        answers: Vec::new(),
        attempts: Vec::new(),
        wall_ms: 0,
        error: Some(err),
    }
}

/// Runs every pending item, appending records and events as each batch of
/// `workers` items completes (in dataset order).
pub fn run_benchmark(manifest: &RunManifest) -> Result<BenchSummary, BenchError> {
    let built = manifest.build()?;
    fs::create_dir_all(&manifest.output_dir)?;
    let records_path = manifest.output_dir.join("records.jsonl");
    let events_path = manifest.output_dir.join("events.jsonl");
    let mut done = BTreeSet::new();
    if manifest.resume && records_path.exists() {
        for r in read_records(&records_path)? {
            done.insert(r.question_id);
        }
    } else {
        File::create(&records_path)?;
        File::create(&events_path)?;
    }
    let pending: Vec<&QAItem> = built.items.iter().filter(|it| !done.contains(&it.id)).collect();
    let mut summary = BenchSummary {
        records_path: records_path.clone(),
        events_path: events_path.clone(),
        executed: 0,
        skipped: built.items.len() - pending.len(),
        failed: 0,
        correct: 0,
        ungraded: 0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(manifest.workers.max(1)).build().expect("thread pool");
    let grade_mode = built.grade_mode();
    for chunk in pending.chunks(manifest.workers.max(1)) {
        let results: Vec<(RunRecord, EventLog)> = pool.install(|| {
            chunk
                .par_iter()
                .map(|item| {
                    let log = EventLog::new();
                    let rec = run_question(
                        &item.id,
                        &item.question,
                        &item.gold,
                        &manifest.policy,
                        &manifest.agent,
                        &built.providers,
                        &manifest.pricing,
                        &log,
                        manifest.clock,
                    )
                    .unwrap_or_else(|e| failed_record(item, manifest, e.to_string()));
                    (rec, log)
                })
                .collect()
        });
        let mut rw = OpenOptions::new().append(true).create(true).open(&records_path)?;
        let mut ew = BufWriter::new(OpenOptions::new().append(true).create(true).open(&events_path)?);
        for (mut rec, log) in results {
            if rec.error.is_none() || rec.status != "failed" {
                grade_record(&mut rec, &grade_mode);
            }
            summary.executed += 1;
            summary.failed += usize::from(rec.status == "failed");
            summary.correct += usize::from(rec.correct == Some(true));
            summary.ungraded += usize::from(rec.correct.is_none());
            log.write_jsonl(&mut ew)?;
            let mut line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
            line.push('\n');
            rw.write_all(line.as_bytes())?;
        }
        ew.flush()?;
    }
    log::info!("{summary}");
    Ok(summary)
}

/// Re-grades records in place; returns (graded, ungraded).
pub fn regrade_file(path: &Path, mode: &GradeMode<'_>) -> Result<(usize, usize), DatasetError> {
    let mut records = read_records(path)?;
    for r in &mut records {
        grade_record(r, mode);
    }
    write_records(path, &records).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let ungraded = records.iter().filter(|r| r.correct.is_none()).count();
    Ok((records.len() - ungraded, ungraded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ScriptedLlm;

    #[test]
    fn dataset_parsing() {
        let ok = "{\"id\":\"a\",\"question\":\"q\",\"gold\":\"g\"}\n{\"id\":\"b\",\"question\":\"q\",\"gold\":\"g\"}\n{\"id\":\"c\",\"question\":\"q\",\"gold\":\"g\",\"metadata\":{\"k\":1}}\n";
        assert_eq!(parse_dataset(ok.as_bytes()).unwrap().len(), 3);
        let dup = "{\"id\":\"a\",\"question\":\"q\",\"gold\":\"g\"}\n{\"id\":\"a\",\"question\":\"q\",\"gold\":\"g\"}\n";
        assert!(matches!(parse_dataset(dup.as_bytes()), Err(DatasetError::DuplicateId { line: 2, .. })));
        let bad = "{\"id\":\"a\",\"question\":\"q\",\"gold\":\"g\"}\n{oops\n";
        assert!(matches!(parse_dataset(bad.as_bytes()), Err(DatasetError::Format { line: 2, .. })));
    }

    #[test]
    fn exact_grading() {
        assert!(grade("q", " Paris ", "paris", &GradeMode::Exact).unwrap());
        assert!(!grade("q", "None", "Paris", &GradeMode::Exact).unwrap());
    }

    #[test]
    fn judge_grading() {
        let llm = ScriptedLlm::replies(["correct"]);
        assert!(grade("q", "x", "y", &GradeMode::Judge { llm: &llm, temperature: 0.0 }).unwrap());
        let llm = ScriptedLlm::replies(["reasoning: differs\ncorrect: no"]);
        assert!(!grade("q", "x", "y", &GradeMode::Judge { llm: &llm, temperature: 0.0 }).unwrap());
        let llm = ScriptedLlm::replies(Vec::<String>::new());
        assert!(matches!(
            grade("q", "x", "y", &GradeMode::Judge { llm: &llm, temperature: 0.0 }),
            Err(GradeError::JudgeUnavailable(_))
        ));
    }

    #[test]
    fn judge_reply_forms() {
        assert_eq!(parse_judge_reply("incorrect"), Some(false));
        assert_eq!(parse_judge_reply("**correct:** yes"), Some(true));
        assert_eq!(parse_judge_reply("hmm"), None);
    }

    #[test]
    fn mock_dataset_matches_worlds() {
        let (items, worlds) = mock_dataset(7, 3, 2, 2);
        assert_eq!(items.len(), 2);
        assert_eq!(items[1].gold, worlds[1].target.gold);
        assert_eq!(items[0].id, "world-7");
    }
}
