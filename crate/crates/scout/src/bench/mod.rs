//! Benchmark harness: loads a task corpus, runs every task through the
//! episode loop, grades the answers, and reduces the results into an
//! accuracy and cost report.
//!
//! The attempt-limit curve comes from one full run rather than one run per
//! limit. Each episode records a checkpoint after every attempt; truncating
//! an episode at attempt budget `k` means reading the checkpoint that would
//! have been its last: the accepted one when acceptance happened within `k`
//! attempts, otherwise the `k`-th. One 10-attempt run therefore prices every
//! smaller budget consistently.

pub mod dates;
pub mod judge;

pub use dates::shift_dates;
pub use judge::{majority, Judge, JudgeConfig, JudgeDecision, JUDGE_SAMPLES, JUDGE_SCHEMA_ID};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, Task, SCREENSHOT_WINDOW};
use crate::env::{EnvError, Environment};
use crate::gateway::{Gateway, ImagePayload, LedgerReport, UsageLedger, UsageRecord};
use crate::orchestrator::{
    run_episode, AttemptCheckpoint, EpisodeResult, ModuleSet, RunConfig, StopReason,
};
use crate::util::parallel_map;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate task id {id:?} in corpus")]
    DuplicateId { id: String },
    #[error("corpus is empty, nothing to run")]
    EmptyCorpus,
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One corpus entry: the task itself plus benchmark bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    #[serde(flatten)]
    pub task: Task,
    /// Which website family the task belongs to; per-group accuracy is
    /// reported along this label.
    pub group: String,
    /// A known-good answer, passed to the judge as a hint when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer_hint: Option<String>,
}

impl BenchmarkTask {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.task.validate()?;
        if self.group.trim().is_empty() {
            return Err(DomainError::Invalid {
                what: "benchmark task",
                why: format!("task {:?} has an empty group label", self.task.id),
            });
        }
        Ok(())
    }
}

/// Rejects duplicate ids and structurally invalid tasks.
pub fn validate_corpus(corpus: &[BenchmarkTask]) -> Result<(), BenchError> {
    let mut seen = BTreeSet::new();
    for entry in corpus {
        entry.validate()?;
        if !seen.insert(entry.task.id.as_str()) {
            return Err(BenchError::DuplicateId { id: entry.task.id.clone() });
        }
    }
    Ok(())
}

/// Parses a corpus from JSONL text: one task per line, blank lines ignored.
/// A malformed or invalid line fails with its 1-based line number; a
/// duplicate id fails naming the id. Empty text parses to an empty corpus,
/// which loads fine but refuses to run.
pub fn parse_corpus(text: &str) -> Result<Vec<BenchmarkTask>, BenchError> {
    let mut corpus = Vec::new();
    let mut seen = BTreeSet::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: BenchmarkTask = serde_json::from_str(line).map_err(|e| {
            BenchError::Malformed { line: number + 1, message: e.to_string() }
        })?;
        entry.validate().map_err(|e| BenchError::Malformed {
            line: number + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.task.id.clone()) {
            return Err(BenchError::DuplicateId { id: entry.task.id });
        }
        corpus.push(entry);
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Vec<BenchmarkTask>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub run: RunConfig,
    /// Worker pool width for task-level parallelism; 1 runs sequentially.
    pub parallel: usize,
    /// Attempt budgets the curve is evaluated at; strictly increasing.
    pub truncation_limits: Vec<u32>,
    /// Majority-vote grading of validated answers. `None` trusts the
    /// validator's acceptance as-is.
    pub judge: Option<JudgeConfig>,
    /// Reference date for shifting instructions of date-sensitive tasks.
    pub today: NaiveDate,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            parallel: 1,
            truncation_limits: vec![1, 2, 5, 10],
            judge: Some(JudgeConfig::default()),
            today: crate::util::today_utc(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.run.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if self.parallel == 0 {
            return Err(BenchError::Config("parallel must be at least 1".into()));
        }
        if self.truncation_limits.is_empty() {
            return Err(BenchError::Config("truncation_limits must not be empty".into()));
        }
        if self.truncation_limits[0] == 0 {
            return Err(BenchError::Config("truncation limits start at 1".into()));
        }
        if !self.truncation_limits.windows(2).all(|w| w[0] < w[1]) {
            return Err(BenchError::Config(
                "truncation_limits must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// One task's outcome in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub group: String,
    /// Validator acceptance, further gated by the judge when one is
    /// configured.
    pub success: bool,
    pub attempts_used: u32,
    pub steps_total: u32,
    /// Agent spend for the episode in dollars; judge spend is excluded.
    pub cost_usd: f64,
    /// `None` when the episode crashed before it could finish.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeDecision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub tasks: u32,
    pub successes: u32,
    pub accuracy: f64,
}

/// Accuracy and average cost the run would have had under a smaller attempt
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub max_attempts: u32,
    pub accuracy: f64,
    pub average_cost_usd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Per-task outcomes, sorted by task id.
    pub tasks: Vec<TaskResult>,
    pub groups: BTreeMap<String, GroupStats>,
    pub total_tasks: u32,
    pub successes: u32,
    /// successes / total_tasks.
    pub accuracy: f64,
    /// Mean agent spend per task in dollars.
    pub average_cost_usd: f64,
    /// Accuracy against cost at each attempt budget, ascending.
    pub curve: Vec<CurvePoint>,
    /// Spend for the whole run, judge included, split by module.
    pub usage: LedgerReport,
}

impl BenchmarkReport {
    /// Plain-text tables for terminal output.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "tasks {}   successes {}   accuracy {:.1}%   average cost ${:.6}/task\n",
            self.total_tasks,
            self.successes,
            self.accuracy * 100.0,
            self.average_cost_usd
        ));
        out.push('\n');
        out.push_str(&format!("{:<20} {:>6} {:>10} {:>9}\n", "group", "tasks", "successes", "accuracy"));
        for (group, stats) in &self.groups {
            out.push_str(&format!(
                "{:<20} {:>6} {:>10} {:>8.1}%\n",
                group,
                stats.tasks,
                stats.successes,
                stats.accuracy * 100.0
            ));
        }
        out.push('\n');
        out.push_str(&format!("{:>12} {:>9} {:>14}\n", "max attempts", "accuracy", "cost ($/task)"));
        for point in &self.curve {
            out.push_str(&format!(
                "{:>12} {:>8.1}% {:>14.6}\n",
                point.max_attempts,
                point.accuracy * 100.0,
                point.average_cost_usd
            ));
        }
        out
    }
}

struct EpisodeOutcome {
    row: TaskResult,
    checkpoints: Vec<AttemptCheckpoint>,
    records: Vec<UsageRecord>,
}

/// The screenshots the answering step could see: the last window of the last
/// attempt that took any steps.
fn final_window(result: &EpisodeResult) -> Vec<ImagePayload> {
    let Some(attempt) = result.trace.attempts.iter().rev().find(|a| !a.steps.is_empty()) else {
        return Vec::new();
    };
    let keep = attempt.steps.len().saturating_sub(SCREENSHOT_WINDOW);
    attempt.steps[keep..]
        .iter()
        .filter_map(|step| {
            result
                .images
                .get(&step.screenshot_ref)
                .map(|data| ImagePayload::new(step.screenshot_ref.clone(), data))
        })
        .collect()
}

/// What the episode would have cost under an attempt budget of `k`: the
/// spend recorded at the checkpoint that budget would have stopped at. An
/// episode with no checkpoints (or a budget beyond what actually ran) costs
/// its full spend.
fn cost_at_limit(k: u32, checkpoints: &[AttemptCheckpoint], total_cost: f64) -> f64 {
    let k = k as usize;
    if let Some(accepted) = checkpoints.iter().position(|c| c.accepted) {
        if accepted < k {
            return checkpoints[accepted].cost_after_usd;
        }
    }
    if checkpoints.is_empty() {
        return total_cost;
    }
    if k <= checkpoints.len() {
        checkpoints[k - 1].cost_after_usd
    } else {
        total_cost
    }
}

/// Whether the episode would still count as a success under an attempt
/// budget of `k`: its answer must have been accepted within `k` attempts,
/// and the full-run grade must hold (the accepted answer is the same one).
fn success_at_limit(k: u32, checkpoints: &[AttemptCheckpoint], final_success: bool) -> bool {
    final_success
        && checkpoints
            .iter()
            .position(|c| c.accepted)
            .is_some_and(|accepted| accepted < k as usize)
}

/// Runs every corpus task through the episode loop and reduces the outcomes
/// into a report.
///
/// Each task gets a fresh environment from `make_env` and a forked gateway
/// whose usage is folded back in corpus order, so parallel runs price
/// identically to sequential ones. Date-sensitive instructions are shifted
/// relative to `config.today` before the episode starts. A crashed episode
/// is recorded as a failure with an error note and the run continues.
pub fn run_benchmark<F>(
    corpus: &[BenchmarkTask],
    gateway: &Gateway,
    modules: &ModuleSet,
    make_env: F,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport, BenchError>
where
    F: Fn(&BenchmarkTask) -> Result<Box<dyn Environment>, EnvError> + Sync,
{
    if corpus.is_empty() {
        return Err(BenchError::EmptyCorpus);
    }
    validate_corpus(corpus)?;
    config.validate()?;

    let worker = |_index: usize, entry: &BenchmarkTask| -> EpisodeOutcome {
        let fork = gateway.fork();
        let mut task = entry.task.clone();
        if task.date_sensitive {
            task.instruction = shift_dates(&task.instruction, config.today);
        }
        let mut row = TaskResult {
            task_id: entry.task.id.clone(),
            group: entry.group.clone(),
            success: false,
            attempts_used: 0,
            steps_total: 0,
            cost_usd: 0.0,
            stop: None,
            answer: None,
            judge: None,
            error: None,
        };
        let mut checkpoints = Vec::new();
        match make_env(entry) {
            Err(e) => row.error = Some(format!("environment setup failed: {e}")),
            Ok(mut env) => {
                match run_episode(env.as_mut(), &fork, modules, task.clone(), &config.run) {
                    Err(e) => {
                        row.error = Some(format!("episode crashed: {e}"));
                        row.cost_usd = fork.agent_cost_usd();
                    }
                    Ok(result) => {
                        row.attempts_used = result.attempts_used;
                        row.steps_total = result.steps_total;
                        row.answer = result.answer.clone();
                        row.stop = Some(result.stop);
                        row.error = result.error.clone();
                        row.cost_usd = result.cost_usd;
                        let mut success = result.validated;
                        if success {
                            if let Some(judge_config) = &config.judge {
                                let judge = Judge::new(judge_config.clone());
                                let evidence = final_window(&result);
                                let decision = judge.grade(
                                    &fork,
                                    &task,
                                    result.answer.as_deref().unwrap_or(""),
                                    entry.reference_answer_hint.as_deref(),
                                    &evidence,
                                );
                                success = decision.success;
                                row.judge = Some(decision);
                            }
                        }
                        row.success = success;
                        checkpoints = result.checkpoints;
                    }
                }
            }
        }
        EpisodeOutcome { row, checkpoints, records: fork.take_records() }
    };

    let entries: Vec<&BenchmarkTask> = corpus.iter().collect();
    let mut outcomes = parallel_map(entries, config.parallel, worker);

    let mut run_ledger = UsageLedger::new();
    for outcome in &mut outcomes {
        let records = std::mem::take(&mut outcome.records);
        run_ledger.absorb(records.clone());
        gateway.absorb(records);
    }

    outcomes.sort_by(|a, b| a.row.task_id.cmp(&b.row.task_id));
    Ok(reduce(outcomes, &config.truncation_limits, run_ledger.report()))
}

fn reduce(
    outcomes: Vec<EpisodeOutcome>,
    limits: &[u32],
    usage: LedgerReport,
) -> BenchmarkReport {
    let total = outcomes.len() as u32;
    let mut groups: BTreeMap<String, GroupStats> = BTreeMap::new();
    let mut successes = 0u32;
    let mut total_cost = 0.0f64;
    for outcome in &outcomes {
        let stats = groups.entry(outcome.row.group.clone()).or_insert(GroupStats {
            tasks: 0,
            successes: 0,
            accuracy: 0.0,
        });
        stats.tasks += 1;
        if outcome.row.success {
            stats.successes += 1;
            successes += 1;
        }
        total_cost += outcome.row.cost_usd;
    }
    for stats in groups.values_mut() {
        stats.accuracy = f64::from(stats.successes) / f64::from(stats.tasks);
    }

    let curve = limits
        .iter()
        .map(|&k| {
            let mut hits = 0u32;
            let mut cost = 0.0f64;
            for outcome in &outcomes {
                if success_at_limit(k, &outcome.checkpoints, outcome.row.success) {
                    hits += 1;
                }
                cost += cost_at_limit(k, &outcome.checkpoints, outcome.row.cost_usd);
            }
            CurvePoint {
                max_attempts: k,
                accuracy: f64::from(hits) / f64::from(total),
                average_cost_usd: cost / f64::from(total),
            }
        })
        .collect();

    BenchmarkReport {
        tasks: outcomes.into_iter().map(|o| o.row).collect(),
        groups,
        total_tasks: total,
        successes,
        accuracy: f64::from(successes) / f64::from(total),
        average_cost_usd: total_cost / f64::from(total),
        curve,
        usage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, SimEnv};
    use crate::gateway::{MockBackend, MockRule, ModuleTag, PricingTable};
    use std::sync::Arc;

    fn world_json(page_text: &str) -> String {
        serde_json::json!({
            "start": "home",
            "pages": [
                {
                    "id": "home",
                    "background": "home",
                    "elements": [],
                    "text": [{"bbox": [50, 50, 600, 120], "content": page_text}]
                }
            ]
        })
        .to_string()
    }

    fn make_sim_env(entry: &BenchmarkTask) -> Result<Box<dyn Environment>, EnvError> {
        let config = EnvConfig { viewport_width: 640, viewport_height: 480, ..Default::default() };
        let env = SimEnv::from_json(&world_json(&format!("page for {}", entry.task.id)), config)?;
        Ok(Box::new(env))
    }

    fn policy_json(action: serde_json::Value) -> String {
        serde_json::json!({"thought": "working on it", "notes": null, "action": action}).to_string()
    }

    fn answer_rule(when: &str, text: &str) -> MockRule {
        MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": text})))
            .for_module(ModuleTag::Policy)
            .when_contains(when)
            .usage(500, 40)
    }

    fn accept_rule(when: &str) -> MockRule {
        MockRule::reply(r#"{"success": true, "explanation": "answer matches the page"}"#)
            .for_module(ModuleTag::Validator)
            .when_contains(when)
            .usage(300, 20)
    }

    fn reject_rule() -> MockRule {
        MockRule::reply(r#"{"success": false, "explanation": "wrong answer"}"#)
            .for_module(ModuleTag::Validator)
            .usage(300, 20)
    }

    fn judge_true_rule() -> MockRule {
        MockRule::reply(r#"{"success": true, "explanation": "task complete"}"#)
            .for_module(ModuleTag::Judge)
            .usage(400, 25)
    }

    fn gateway_with(backend: MockBackend) -> (Gateway, Arc<MockBackend>) {
        let backend = Arc::new(backend);
        let mut gateway = Gateway::new(PricingTable::default());
        gateway.bind(ModuleTag::Policy, "gpt-4o", backend.clone());
        gateway.bind(ModuleTag::Localizer, "holo1-3b", backend.clone());
        gateway.bind(ModuleTag::Validator, "gpt-4o", backend.clone());
        gateway.bind(ModuleTag::Judge, "gpt-4o", backend.clone());
        (gateway, backend)
    }

    fn bench_task(id: &str, group: &str, instruction: &str) -> BenchmarkTask {
        BenchmarkTask {
            task: Task::new(id, "sim://home", instruction).unwrap(),
            group: group.into(),
            reference_answer_hint: None,
        }
    }

    fn config() -> BenchmarkConfig {
        BenchmarkConfig {
            today: NaiveDate::from_ymd_opt(2025, 6, 10).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn corpus_parses_flattened_task_records() {
        let text = concat!(
            r#"{"id": "t1", "website": "sim://home", "instruction": "find the mug", "group": "shopping"}"#,
            "\n",
            "\n",
            r#"{"id": "t2", "website": "sim://home", "instruction": "find the hat", "group": "shopping", "reference_answer_hint": "$5", "date_sensitive": true}"#,
            "\n",
        );
        let corpus = parse_corpus(text).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].task.id, "t1");
        assert!(!corpus[0].task.date_sensitive);
        assert_eq!(corpus[1].reference_answer_hint.as_deref(), Some("$5"));
        assert!(corpus[1].task.date_sensitive);

        let round_trip = serde_json::to_string(&corpus[1]).unwrap();
        let back: BenchmarkTask = serde_json::from_str(&round_trip).unwrap();
        assert_eq!(back, corpus[1]);
    }

    #[test]
    fn duplicate_ids_are_rejected_by_name() {
        let text = concat!(
            r#"{"id": "t1", "website": "sim://home", "instruction": "a", "group": "g"}"#,
            "\n",
            r#"{"id": "t1", "website": "sim://home", "instruction": "b", "group": "g"}"#,
        );
        let err = parse_corpus(text).unwrap_err();
        assert!(matches!(&err, BenchError::DuplicateId { id } if id == "t1"), "{err}");
        assert!(err.to_string().contains("t1"));
    }

    #[test]
    fn malformed_lines_report_their_line_number() {
        let text = concat!(
            r#"{"id": "t1", "website": "sim://home", "instruction": "a", "group": "g"}"#,
            "\n",
            "{not json}",
        );
        let err = parse_corpus(text).unwrap_err();
        assert!(matches!(err, BenchError::Malformed { line: 2, .. }), "{err}");

        let empty_group = concat!(
            r#"{"id": "t1", "website": "sim://home", "instruction": "a", "group": "  "}"#,
        );
        let err = parse_corpus(empty_group).unwrap_err();
        assert!(matches!(err, BenchError::Malformed { line: 1, .. }), "{err}");
    }

    #[test]
    fn empty_corpus_loads_but_refuses_to_run() {
        let corpus = parse_corpus("\n\n").unwrap();
        assert!(corpus.is_empty());

        let (gateway, _) = gateway_with(MockBackend::new(vec![]));
        let err = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &config(),
        )
        .unwrap_err();
        assert!(matches!(err, BenchError::EmptyCorpus));
    }

    #[test]
    fn corpus_files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        std::fs::write(
            &path,
            r#"{"id": "t1", "website": "sim://home", "instruction": "find it", "group": "g"}"#,
        )
        .unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 1);

        let err = load_corpus(&dir.path().join("missing.jsonl")).unwrap_err();
        assert!(matches!(err, BenchError::Io { .. }));
    }

    #[test]
    fn single_task_run_produces_a_full_report() {
        let backend = MockBackend::new(vec![
            answer_rule("find the mug", "$12"),
            accept_rule("$12"),
            judge_true_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let corpus = vec![bench_task("t1", "shopping", "find the mug")];
        let report = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &config(),
        )
        .unwrap();

        assert_eq!(report.total_tasks, 1);
        assert_eq!(report.successes, 1);
        assert_eq!(report.accuracy, 1.0);
        assert!(report.average_cost_usd > 0.0);
        assert_eq!(report.tasks[0].task_id, "t1");
        assert_eq!(report.tasks[0].stop, Some(StopReason::Validated));
        assert_eq!(report.tasks[0].judge.as_ref().unwrap().votes, vec![true, true, true]);
        assert_eq!(report.groups["shopping"].successes, 1);
        assert!(report.usage.judge_cost_usd > 0.0);
        assert!(report.usage.agent_cost_usd > 0.0);
        assert!((report.tasks[0].cost_usd - report.usage.agent_cost_usd).abs() < 1e-12);

        let text = report.render_text();
        assert!(text.contains("accuracy 100.0%"));
        assert!(text.contains("shopping"));
        assert!(text.contains("max attempts"));
    }

    #[test]
    fn acceptance_on_the_third_attempt_shapes_the_curve() {
        let backend = MockBackend::new(vec![
            answer_rule("find the mug", "$12"),
            reject_rule().times(2),
            accept_rule("$12"),
        ]);
        let (gateway, _) = gateway_with(backend);
        let corpus = vec![bench_task("t1", "shopping", "find the mug")];
        let mut cfg = config();
        cfg.judge = None;
        cfg.truncation_limits = vec![1, 2, 5, 10];
        let report = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &cfg,
        )
        .unwrap();

        assert_eq!(report.tasks[0].attempts_used, 3);
        let accuracies: Vec<f64> = report.curve.iter().map(|p| p.accuracy).collect();
        assert_eq!(accuracies, vec![0.0, 0.0, 1.0, 1.0]);
        let costs: Vec<f64> = report.curve.iter().map(|p| p.average_cost_usd).collect();
        assert!(costs[0] > 0.0);
        assert!(costs.windows(2).all(|w| w[0] <= w[1]), "{costs:?}");
        assert!(costs[0] < costs[2], "three attempts must out-cost one");
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let rules = || {
            vec![
                answer_rule("task alpha", "alpha done"),
                answer_rule("task beta", "beta done"),
                answer_rule("task gamma", "gamma done"),
                answer_rule("task delta", "delta done"),
                accept_rule("done"),
                judge_true_rule(),
            ]
        };
        let corpus = vec![
            bench_task("a", "g1", "task alpha"),
            bench_task("b", "g1", "task beta"),
            bench_task("c", "g2", "task gamma"),
            bench_task("d", "g2", "task delta"),
        ];

        let run = |parallel: usize| {
            let (gateway, _) = gateway_with(MockBackend::new(rules()));
            let cfg = BenchmarkConfig { parallel, ..config() };
            let report = run_benchmark(
                &corpus,
                &gateway,
                &ModuleSet::with_defaults(),
                make_sim_env,
                &cfg,
            )
            .unwrap();
            assert!((gateway.report().total_cost_usd - report.usage.total_cost_usd).abs() < 1e-12);
            serde_json::to_value(&report).unwrap()
        };

        assert_eq!(run(1), run(4));
    }

    #[test]
    fn a_crashed_task_is_a_failure_and_the_run_continues() {
        let backend = MockBackend::new(vec![
            answer_rule("find the mug", "$12"),
            accept_rule("$12"),
            judge_true_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let corpus = vec![
            bench_task("bad", "shopping", "explode"),
            bench_task("good", "shopping", "find the mug"),
        ];
        let make_env = |entry: &BenchmarkTask| -> Result<Box<dyn Environment>, EnvError> {
            if entry.task.id == "bad" {
                return Err(EnvError::Fatal("no such world".into()));
            }
            make_sim_env(entry)
        };
        let report = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_env,
            &config(),
        )
        .unwrap();

        assert_eq!(report.total_tasks, 2);
        assert_eq!(report.successes, 1);
        assert_eq!(report.accuracy, 0.5);
        let bad = &report.tasks[0];
        assert_eq!(bad.task_id, "bad");
        assert!(!bad.success);
        assert!(bad.stop.is_none());
        assert!(bad.error.as_deref().unwrap().contains("environment setup failed"));
        for point in &report.curve {
            assert_eq!(point.accuracy, 0.5);
        }
    }

    #[test]
    fn judge_majority_overrules_the_validator() {
        let backend = MockBackend::new(vec![
            answer_rule("find the mug", "$12"),
            accept_rule("$12"),
            MockRule::reply(r#"{"success": false, "explanation": "page shows $13"}"#)
                .for_module(ModuleTag::Judge)
                .times(2)
                .usage(400, 25),
            judge_true_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let corpus = vec![bench_task("t1", "shopping", "find the mug")];
        let report = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &config(),
        )
        .unwrap();

        let row = &report.tasks[0];
        assert_eq!(row.stop, Some(StopReason::Validated));
        assert!(!row.success, "two false votes out of three must fail the task");
        assert_eq!(row.judge.as_ref().unwrap().votes, vec![false, false, true]);
        assert_eq!(report.accuracy, 0.0);
        for point in &report.curve {
            assert_eq!(point.accuracy, 0.0, "a judged-false answer fails at every budget");
        }
    }

    #[test]
    fn date_sensitive_instructions_are_shifted_before_the_run() {
        let backend = MockBackend::new(vec![
            answer_rule("March 15, 2026", "booked"),
            accept_rule("booked"),
        ]);
        let (gateway, backend) = gateway_with(backend);
        let mut entry = bench_task("t1", "travel", "book for March 15, 2024");
        entry.task.date_sensitive = true;
        let mut cfg = config();
        cfg.judge = None;
        let report = run_benchmark(
            &[entry],
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &cfg,
        )
        .unwrap();

        assert_eq!(report.successes, 1, "the policy rule only matches the shifted date");
        let policy_calls = backend.calls_for(ModuleTag::Policy);
        assert!(policy_calls.iter().all(|c| c.text.contains("March 15, 2026")));
        assert!(policy_calls.iter().all(|c| !c.text.contains("2024")));
    }

    #[test]
    fn group_successes_add_up_to_the_overall_count() {
        let backend = MockBackend::new(vec![
            answer_rule("task alpha", "alpha done"),
            answer_rule("task beta", "beta done"),
            answer_rule("task gamma", "wrong"),
            accept_rule("done"),
            reject_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let corpus = vec![
            bench_task("a", "g1", "task alpha"),
            bench_task("b", "g2", "task beta"),
            bench_task("c", "g2", "task gamma"),
        ];
        let mut cfg = config();
        cfg.judge = None;
        cfg.run.max_attempts = 2;
        let report = run_benchmark(
            &corpus,
            &gateway,
            &ModuleSet::with_defaults(),
            make_sim_env,
            &cfg,
        )
        .unwrap();

        let group_total: u32 = report.groups.values().map(|g| g.successes).sum();
        assert_eq!(group_total, report.successes);
        assert_eq!(report.successes, 2);
        assert_eq!(report.groups["g1"].accuracy, 1.0);
        assert_eq!(report.groups["g2"].accuracy, 0.5);
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (gateway, _) = gateway_with(MockBackend::new(vec![]));
        let corpus = vec![bench_task("t1", "g", "task")];
        let run_with = |cfg: BenchmarkConfig| {
            run_benchmark(&corpus, &gateway, &ModuleSet::with_defaults(), make_sim_env, &cfg)
        };

        let err = run_with(BenchmarkConfig { parallel: 0, ..config() }).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
        let err =
            run_with(BenchmarkConfig { truncation_limits: vec![], ..config() }).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
        let err =
            run_with(BenchmarkConfig { truncation_limits: vec![2, 2], ..config() }).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
        let err =
            run_with(BenchmarkConfig { truncation_limits: vec![0, 1], ..config() }).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
    }

    #[test]
    fn truncation_cost_never_exceeds_the_full_run() {
        let checkpoints = vec![
            AttemptCheckpoint { answer: Some("a".into()), accepted: false, cost_after_usd: 0.01 },
            AttemptCheckpoint { answer: Some("b".into()), accepted: false, cost_after_usd: 0.02 },
            AttemptCheckpoint { answer: Some("c".into()), accepted: true, cost_after_usd: 0.03 },
        ];
        assert_eq!(cost_at_limit(1, &checkpoints, 0.03), 0.01);
        assert_eq!(cost_at_limit(2, &checkpoints, 0.03), 0.02);
        assert_eq!(cost_at_limit(3, &checkpoints, 0.03), 0.03);
        assert_eq!(cost_at_limit(10, &checkpoints, 0.03), 0.03);
        assert!(!success_at_limit(2, &checkpoints, true));
        assert!(success_at_limit(3, &checkpoints, true));
        assert!(!success_at_limit(3, &checkpoints, false));

        assert_eq!(cost_at_limit(4, &[], 0.05), 0.05);
        assert!(!success_at_limit(4, &[], true));
    }
}
