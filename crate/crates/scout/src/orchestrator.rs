//! The control loop tying policy, localizer, validator, and environment
//! together. An episode is a sequence of attempts; each attempt is a sequence
//! of steps capped by a step budget with the final slot reserved for a forced
//! answer; every answer must pass the validator or its rejection is fed back
//! into the notepad for the next attempt.


use crate::domain::{
    Action, AgentMemory, AttemptRecord, DomainError, EpisodeTrace, Point, Step, Task,
    VerdictRecord,
};
use crate::env::{EnvError, Environment};
use crate::gateway::{Gateway, GatewayError, UsageRecord};
use crate::localizer::{LocalizeError, Localizer};
use crate::policy::{Policy, PolicyError, PolicyOutput};
use crate::validator::{feedback_note, Validator};

/// Budgets for one episode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Steps allowed per attempt. The last step is always a forced answer.
    pub max_steps: u32,
    /// Attempts allowed per episode.
    pub max_attempts: u32,
    /// Stop the episode once its model spend reaches this many dollars.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_budget_usd: Option<f64>,
    /// Reset the browser to the start page after a rejected attempt.
    pub reset_between_attempts: bool,
    /// Stop the episode once it has run this long.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_limit_ms: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps: 30,
            max_attempts: 10,
            cost_budget_usd: None,
            reset_between_attempts: false,
            wall_clock_limit_ms: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_steps == 0 || self.max_attempts == 0 {
            return Err(OrchestratorError::Config(
                "max_steps and max_attempts must be at least 1".into(),
            ));
        }
        if let Some(budget) = self.cost_budget_usd {
            if !budget.is_finite() || budget < 0.0 {
                return Err(OrchestratorError::Config(format!(
                    "cost budget must be a finite non-negative dollar amount, got {budget}"
                )));
            }
        }
        Ok(())
    }
}

/// The three model-backed modules an episode needs.
pub struct ModuleSet {
    pub policy: Policy,
    pub localizer: Localizer,
    pub validator: Validator,
}

impl ModuleSet {
    pub fn with_defaults() -> Self {
        Self {
            policy: Policy::new(Default::default()),
            localizer: Localizer::new(Default::default()),
            validator: Validator::new(Default::default()),
        }
    }
}

/// Why the episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// An answer passed the validator.
    Validated,
    /// Every attempt's answer was rejected.
    AttemptsExhausted,
    /// Model spend reached the configured budget.
    BudgetExceeded,
    /// The wall clock limit elapsed.
    WallClockExceeded,
    /// The environment died and could not be reset.
    EnvironmentFailed,
}

/// Snapshot taken after each attempt, used to compute what the episode would
/// have returned under a smaller attempt budget.
#[derive(Debug, Clone)]
pub struct AttemptCheckpoint {
    pub answer: Option<String>,
    pub accepted: bool,
    /// Episode model spend in dollars once this attempt (and its validation)
    /// finished.
    pub cost_after_usd: f64,
}

/// Everything an episode produced.
#[derive(Debug)]
pub struct EpisodeResult {
    /// The last answer given, whether or not it was accepted.
    pub answer: Option<String>,
    /// True when the answer passed the validator.
    pub validated: bool,
    pub stop: StopReason,
    pub attempts_used: u32,
    pub steps_total: u32,
    pub trace: EpisodeTrace,
    /// Model spend attributable to this episode in dollars.
    pub cost_usd: f64,
    pub usage: Vec<UsageRecord>,
    pub checkpoints: Vec<AttemptCheckpoint>,
    /// Every screenshot the episode captured, keyed by content hash; the
    /// trace's steps reference into this store.
    pub images: crate::domain::ImageStore,
    /// Set when the episode ended abnormally.
    pub error: Option<String>,
}

impl EpisodeResult {
    pub fn budget_exceeded(&self) -> bool {
        self.stop == StopReason::BudgetExceeded
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    /// Contract or spec violations from the environment. Timeouts and dead
    /// browsers are handled inside the loop and never surface here.
    #[error("environment failure: {0}")]
    Env(EnvError),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error("run configuration invalid: {0}")]
    Config(String),
}

enum AttemptEnd {
    Answer(String),
    Fatal(String),
    Stopped(StopReason),
}

struct EpisodeState<'a> {
    env: &'a mut dyn Environment,
    gateway: &'a Gateway,
    modules: &'a ModuleSet,
    config: &'a RunConfig,
    /// Gateway agent spend when the episode started; episode cost is measured
    /// against this floor. Requires the gateway not be shared with concurrent
    /// episodes.
    cost_floor: f64,
    started_ms: u64,
}

impl EpisodeState<'_> {
    fn episode_cost(&self) -> f64 {
        self.gateway.agent_cost_usd() - self.cost_floor
    }

    fn stop_check(&self) -> Option<StopReason> {
        if let Some(budget) = self.config.cost_budget_usd {
            if self.episode_cost() >= budget {
                return Some(StopReason::BudgetExceeded);
            }
        }
        if let Some(limit) = self.config.wall_clock_limit_ms {
            if crate::util::now_millis().saturating_sub(self.started_ms) >= limit {
                return Some(StopReason::WallClockExceeded);
            }
        }
        None
    }
}

fn cap(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        text.to_string()
    } else {
        text.chars().take(limit).collect()
    }
}

/// What to do when the policy cannot produce usable output: answer with its
/// raw text at the forced step (something beats nothing once the step budget
/// is gone), otherwise wait and let the next step retry.
fn policy_fallback(error: &PolicyError, forced: bool) -> PolicyOutput {
    let thought = cap(&format!("policy output unavailable: {error}"), 600);
    let action = if forced {
        let text = match error {
            PolicyError::Unparseable { last_raw, .. } if !last_raw.trim().is_empty() => {
                cap(last_raw.trim(), 1000)
            }
            _ => "no answer".to_string(),
        };
        Action::Answer { text }
    } else {
        Action::Wait
    };
    PolicyOutput { thought, notes: None, action }
}

fn resolve_at(action: Action, point: Point) -> Action {
    match action {
        Action::Click { target } => Action::Click { target: target.resolved_at(point) },
        Action::Type { target, text } => {
            Action::Type { target: target.resolved_at(point), text }
        }
        other => other,
    }
}

/// Runs steps until the attempt produces an answer, the environment dies, or
/// a budget trips. The forced-answer slot guarantees an answer otherwise.
fn run_attempt(
    state: &mut EpisodeState,
    memory: &mut AgentMemory,
) -> Result<AttemptEnd, OrchestratorError> {
    loop {
        if let Some(reason) = state.stop_check() {
            return Ok(AttemptEnd::Stopped(reason));
        }
        let index = memory.next_index();
        if index >= state.config.max_steps {
            return Err(OrchestratorError::Config(format!(
                "attempt reached step {index} without answering; the forced-answer slot should make this impossible"
            )));
        }
        let forced = index == state.config.max_steps - 1;

        let output = match state.modules.policy.propose(state.gateway, memory, forced) {
            Ok(output) => output,
            Err(PolicyError::Domain(e)) => return Err(e.into()),
            Err(
                ref e @ PolicyError::Gateway(
                    GatewayError::NoBinding(_)
                    | GatewayError::UnknownModel(_)
                    | GatewayError::InvalidRequest(_),
                ),
            ) => {
                return Err(OrchestratorError::Config(format!(
                    "policy module is miswired: {e}"
                )))
            }
            Err(e) => {
                log::warn!("substituting for failed policy call: {e}");
                policy_fallback(&e, forced)
            }
        };

        let mut thought = output.thought.clone();
        let action = match &output.action {
            Action::Click { target } | Action::Type { target, .. } => {
                let screenshot = memory.current_screenshot();
                match state.modules.localizer.locate(state.gateway, &screenshot, target) {
                    Ok(located) => resolve_at(output.action.clone(), located.point),
                    Err(LocalizeError::Domain(e)) => return Err(e.into()),
                    Err(e) => {
                        log::warn!("cannot ground {:?}: {e}", target.description);
                        thought = cap(&format!("{thought} [locate failed: {e}]"), 800);
                        Action::Wait
                    }
                }
            }
            other => other.clone(),
        };

        let step = Step::new(
            index,
            thought,
            output.notes.clone(),
            action.clone(),
            memory.current_screenshot_id().clone(),
        )?;
        *memory = memory.append_step(step)?;

        if let Action::Answer { text } = &action {
            return Ok(AttemptEnd::Answer(text.clone()));
        }

        match state.env.execute(&action) {
            Ok(obs) => *memory = memory.with_observation(obs.screenshot),
            Err(EnvError::Timeout(e)) => {
                log::warn!("step {index} timed out, continuing: {e}");
                match state.env.observe() {
                    Ok(obs) => *memory = memory.with_observation(obs.screenshot),
                    Err(err) => return Ok(AttemptEnd::Fatal(err.to_string())),
                }
            }
            Err(EnvError::Fatal(e)) => return Ok(AttemptEnd::Fatal(e)),
            Err(e) => return Err(OrchestratorError::Env(e)),
        }
    }
}

/// Runs a full episode: attempts with validator-gated answers, feedback on
/// rejection, and early stops for budgets or a dead environment.
pub fn run_episode(
    env: &mut dyn Environment,
    gateway: &Gateway,
    modules: &ModuleSet,
    task: Task,
    config: &RunConfig,
) -> Result<EpisodeResult, OrchestratorError> {
    config.validate()?;
    let records_floor = gateway.records().len();
    let cost_floor = gateway.agent_cost_usd();
    let mut state = EpisodeState {
        env,
        gateway,
        modules,
        config,
        cost_floor,
        started_ms: crate::util::now_millis(),
    };

    let first = state.env.observe().map_err(OrchestratorError::Env)?;
    let mut memory = AgentMemory::new(task, first.screenshot)?;

    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut checkpoints: Vec<AttemptCheckpoint> = Vec::new();
    let mut final_answer: Option<String> = None;
    let mut validated = false;
    let mut stop = StopReason::AttemptsExhausted;
    let mut error: Option<String> = None;

    'attempts: for attempt_index in 0..config.max_attempts {
        if attempt_index > 0 {
            memory = memory.begin_attempt();
            if config.reset_between_attempts {
                match state.env.reset() {
                    Ok(obs) => memory = memory.with_observation(obs.screenshot),
                    Err(e) => {
                        error = Some(format!("environment reset failed: {e}"));
                        stop = StopReason::EnvironmentFailed;
                        break 'attempts;
                    }
                }
            }
        }

        let end = run_attempt(&mut state, &mut memory)?;
        let attempt_steps = memory.attempt_steps().to_vec();
        match end {
            AttemptEnd::Answer(answer) => {
                final_answer = Some(answer.clone());
                let window = memory.window_at_latest()?;
                let verdict = state.modules.validator.validate(
                    state.gateway,
                    memory.task(),
                    &answer,
                    &window,
                    &memory,
                )?;
                let accepted = verdict.success;
                attempts.push(AttemptRecord {
                    steps: attempt_steps,
                    answer: Some(answer.clone()),
                    verdict: Some(verdict.to_record()),
                });
                checkpoints.push(AttemptCheckpoint {
                    answer: Some(answer),
                    accepted,
                    cost_after_usd: state.episode_cost(),
                });
                if accepted {
                    validated = true;
                    stop = StopReason::Validated;
                    break 'attempts;
                }
                if attempt_index + 1 < config.max_attempts {
                    let note = feedback_note(&verdict, attempt_index + 1)?;
                    memory = memory.with_feedback(note);
                }
            }
            AttemptEnd::Fatal(message) => {
                log::error!("attempt {} aborted: {message}", attempt_index + 1);
                attempts.push(AttemptRecord {
                    steps: attempt_steps,
                    answer: None,
                    verdict: Some(VerdictRecord {
                        success: false,
                        explanation: format!("environment failed: {message}"),
                    }),
                });
                checkpoints.push(AttemptCheckpoint {
                    answer: None,
                    accepted: false,
                    cost_after_usd: state.episode_cost(),
                });
                match state.env.reset() {
                    Ok(obs) => memory = memory.with_observation(obs.screenshot),
                    Err(reset_error) => {
                        error = Some(format!(
                            "environment failed ({message}) and could not be reset: {reset_error}"
                        ));
                        stop = StopReason::EnvironmentFailed;
                        break 'attempts;
                    }
                }
            }
            AttemptEnd::Stopped(reason) => {
                if !attempt_steps.is_empty() {
                    attempts.push(AttemptRecord {
                        steps: attempt_steps,
                        answer: None,
                        verdict: None,
                    });
                }
                stop = reason;
                break 'attempts;
            }
        }
    }

    let cost_usd = state.episode_cost();
    let trace = EpisodeTrace {
        task: memory.task().clone(),
        attempts,
        final_answer: final_answer.clone(),
        success: Some(validated),
        cost_usd,
    };
    trace.validate()?;

    Ok(EpisodeResult {
        answer: final_answer,
        validated,
        stop,
        attempts_used: trace.attempts.len() as u32,
        steps_total: memory.steps().len() as u32,
        trace,
        cost_usd,
        usage: gateway.records()[records_floor..].to_vec(),
        checkpoints,
        images: memory.images().clone(),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Observation, SimEnv};
    use crate::gateway::{MockBackend, MockRule, ModuleTag, PricingTable};
    use std::sync::Arc;

    const WORLD: &str = r#"{
        "start": "home",
        "pages": [
            {
                "id": "home",
                "background": "home",
                "elements": [
                    {"bbox": [100, 100, 300, 160], "label": "Products", "effect": {"kind": "navigate", "to": "products"}}
                ]
            },
            {
                "id": "products",
                "background": "products",
                "elements": [],
                "text": [{"bbox": [50, 50, 600, 120], "content": "Red mug $12"}]
            }
        ]
    }"#;

    fn small_env() -> SimEnv {
        let config = EnvConfig { viewport_width: 640, viewport_height: 480, ..Default::default() };
        SimEnv::from_json(WORLD, config).unwrap()
    }

    fn task() -> Task {
        Task::new("t1", "sim://home", "find the mug price").unwrap()
    }

    fn policy_json(action: serde_json::Value) -> String {
        serde_json::json!({"thought": "working on it", "notes": null, "action": action}).to_string()
    }

    fn gateway_with(backend: MockBackend) -> (Gateway, Arc<MockBackend>) {
        let backend = Arc::new(backend);
        let mut gateway = Gateway::new(PricingTable::default());
        gateway.bind(ModuleTag::Policy, "gpt-4o", backend.clone());
        gateway.bind(ModuleTag::Localizer, "holo1-3b", backend.clone());
        gateway.bind(ModuleTag::Validator, "gpt-4o", backend.clone());
        (gateway, backend)
    }

    fn accept_rule() -> MockRule {
        MockRule::reply(r#"{"success": true, "explanation": "the price is visible"}"#)
            .for_module(ModuleTag::Validator)
    }

    fn reject_rule() -> MockRule {
        MockRule::reply(r#"{"success": false, "explanation": "wrong page"}"#)
            .for_module(ModuleTag::Validator)
    }

    #[test]
    fn validated_answer_ends_the_episode() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(
                serde_json::json!({"kind": "click", "target": "Products link"}),
            ))
            .for_module(ModuleTag::Policy)
            .times(1),
            MockRule::reply("(200, 130)").for_module(ModuleTag::Localizer),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "$12"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        assert!(result.validated);
        assert_eq!(result.stop, StopReason::Validated);
        assert_eq!(result.answer.as_deref(), Some("$12"));
        assert_eq!(result.attempts_used, 1);
        assert_eq!(result.steps_total, 2);
        assert_eq!(env.current_url(), "sim://products");
        assert_eq!(result.trace.attempts[0].steps[0].index, 0);
        assert_eq!(result.trace.attempts[0].steps[1].index, 1);
        assert!(result.cost_usd > 0.0);
        assert!(!result.usage.is_empty());
    }

    #[test]
    fn rejection_feeds_back_and_restarts_indices() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "guess"})))
                .for_module(ModuleTag::Policy),
            reject_rule().times(1),
            accept_rule(),
        ]);
        let (gateway, backend) = gateway_with(backend);
        let mut env = small_env();
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        assert!(result.validated);
        assert_eq!(result.attempts_used, 2);
        assert!(!result.trace.attempts[0].verdict.as_ref().unwrap().success);
        assert_eq!(result.trace.attempts[0].steps[0].index, 0);
        assert_eq!(result.trace.attempts[1].steps[0].index, 0);

        let policy_calls = backend.calls_for(ModuleTag::Policy);
        assert_eq!(policy_calls.len(), 2);
        assert!(
            policy_calls[1].text.contains("validator rejected attempt 1: wrong page"),
            "feedback must be visible to the next attempt"
        );
        assert!(
            !policy_calls[0].text.contains("validator rejected"),
            "no feedback before any rejection"
        );
        assert_eq!(policy_calls[1].image_count(), 1, "new attempt starts with a size-1 window");
    }

    #[test]
    fn forced_answer_fires_on_the_last_step() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "wait"})))
                .for_module(ModuleTag::Policy)
                .for_schema(crate::policy::POLICY_SCHEMA_ID),
            MockRule::reply(policy_json(
                serde_json::json!({"kind": "answer", "text": "forced result"}),
            ))
            .for_module(ModuleTag::Policy)
            .for_schema(crate::policy::POLICY_FORCED_SCHEMA_ID),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let config = RunConfig { max_steps: 4, ..Default::default() };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &config,
        )
        .unwrap();

        assert_eq!(result.answer.as_deref(), Some("forced result"));
        let steps = &result.trace.attempts[0].steps;
        assert_eq!(steps.len(), 4);
        assert!(steps[3].action.is_answer());
        assert!(steps[..3].iter().all(|s| !s.action.is_answer()));
    }

    #[test]
    fn unparseable_policy_waits_then_answers_raw_when_forced() {
        let backend = MockBackend::new(vec![
            MockRule::reply("I think we should click around")
                .for_module(ModuleTag::Policy)
                .for_schema(crate::policy::POLICY_SCHEMA_ID),
            MockRule::reply("the price is $12, probably")
                .for_module(ModuleTag::Policy)
                .for_schema(crate::policy::POLICY_FORCED_SCHEMA_ID),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let config = RunConfig { max_steps: 2, max_attempts: 1, ..Default::default() };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &config,
        )
        .unwrap();

        let steps = &result.trace.attempts[0].steps;
        assert_eq!(steps[0].action, Action::Wait);
        assert!(steps[0].thought.contains("policy output unavailable"));
        assert_eq!(result.answer.as_deref(), Some("the price is $12, probably"));
    }

    #[test]
    fn attempts_exhausted_leaves_the_last_answer_unvalidated() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "nope"})))
                .for_module(ModuleTag::Policy),
            reject_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let config = RunConfig { max_attempts: 3, ..Default::default() };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &config,
        )
        .unwrap();

        assert!(!result.validated);
        assert_eq!(result.stop, StopReason::AttemptsExhausted);
        assert_eq!(result.answer.as_deref(), Some("nope"));
        assert_eq!(result.attempts_used, 3);
        assert_eq!(result.trace.success, Some(false));
        assert_eq!(result.checkpoints.len(), 3);
        assert!(result.checkpoints.iter().all(|c| !c.accepted));
        let costs: Vec<f64> = result.checkpoints.iter().map(|c| c.cost_after_usd).collect();
        assert!(costs.windows(2).all(|w| w[0] <= w[1]), "cost never decreases across attempts");
    }

    #[test]
    fn zero_budget_stops_before_any_model_call() {
        let backend = MockBackend::new(vec![]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let config = RunConfig { cost_budget_usd: Some(0.0), ..Default::default() };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &config,
        )
        .unwrap();

        assert!(result.budget_exceeded());
        assert_eq!(result.stop, StopReason::BudgetExceeded);
        assert!(result.usage.is_empty());
        assert_eq!(result.cost_usd, 0.0);
        assert_eq!(result.answer, None);
    }

    #[test]
    fn tiny_budget_stops_after_the_tripping_call() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "wait"})))
                .for_module(ModuleTag::Policy)
                .usage(1000, 50),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let config = RunConfig { cost_budget_usd: Some(0.0005), ..Default::default() };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &config,
        )
        .unwrap();

        assert!(result.budget_exceeded());
        assert!(result.cost_usd >= 0.0005, "stopped only once spend reached the budget");
        assert_eq!(result.usage.len(), 1, "no calls after the budget tripped");
    }

    /// An environment that fails fatally on the nth execute, then recovers
    /// after a reset.
    struct FlakyEnv {
        inner: SimEnv,
        fail_on_call: u32,
        calls: u32,
    }

    impl Environment for FlakyEnv {
        fn execute(&mut self, action: &Action) -> Result<Observation, EnvError> {
            self.calls += 1;
            if self.calls == self.fail_on_call {
                return Err(EnvError::Fatal("browser process exited".into()));
            }
            self.inner.execute(action)
        }
        fn observe(&mut self) -> Result<Observation, EnvError> {
            self.inner.observe()
        }
        fn current_url(&self) -> String {
            self.inner.current_url()
        }
        fn reset(&mut self) -> Result<Observation, EnvError> {
            self.inner.reset()
        }
    }

    #[test]
    fn fatal_environment_aborts_the_attempt_but_not_the_episode() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "refresh"})))
                .for_module(ModuleTag::Policy)
                .times(1),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "ok"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = FlakyEnv { inner: small_env(), fail_on_call: 1, calls: 0 };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        assert!(result.validated, "episode recovered after the reset");
        assert_eq!(result.attempts_used, 2);
        let aborted = result.trace.attempts[0].verdict.as_ref().unwrap();
        assert!(!aborted.success);
        assert!(aborted.explanation.contains("environment failed"));
        assert_eq!(result.trace.attempts[0].answer, None);
    }

    /// An environment whose first execute times out; the episode must keep
    /// going with a fresh observation.
    struct SlowEnv {
        inner: SimEnv,
        timed_out: bool,
    }

    impl Environment for SlowEnv {
        fn execute(&mut self, action: &Action) -> Result<Observation, EnvError> {
            if !self.timed_out {
                self.timed_out = true;
                return Err(EnvError::Timeout("navigation exceeded 15000ms".into()));
            }
            self.inner.execute(action)
        }
        fn observe(&mut self) -> Result<Observation, EnvError> {
            self.inner.observe()
        }
        fn current_url(&self) -> String {
            self.inner.current_url()
        }
        fn reset(&mut self) -> Result<Observation, EnvError> {
            self.inner.reset()
        }
    }

    #[test]
    fn timeouts_do_not_end_the_attempt() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "refresh"})))
                .for_module(ModuleTag::Policy)
                .times(1),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "done"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = SlowEnv { inner: small_env(), timed_out: false };
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        assert!(result.validated);
        assert_eq!(result.attempts_used, 1);
        assert_eq!(result.trace.attempts[0].steps.len(), 2);
    }

    #[test]
    fn only_click_and_type_steps_carry_coordinates() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "scroll", "direction": "down"})))
                .for_module(ModuleTag::Policy)
                .times(1),
            MockRule::reply(policy_json(
                serde_json::json!({"kind": "click", "target": "Products link"}),
            ))
            .for_module(ModuleTag::Policy)
            .times(1),
            MockRule::reply("(200, 130)").for_module(ModuleTag::Localizer),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "x"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        for step in result.trace.attempts.iter().flat_map(|a| &a.steps) {
            let has_point = step.action.target().and_then(|t| t.resolved).is_some();
            let needs_point = matches!(step.action, Action::Click { .. } | Action::Type { .. });
            assert_eq!(has_point, needs_point, "step {} action {:?}", step.index, step.action);
        }
    }

    #[test]
    fn localizer_failure_degrades_to_wait() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(
                serde_json::json!({"kind": "click", "target": "ghost button"}),
            ))
            .for_module(ModuleTag::Policy)
            .times(1),
            MockRule::reply("no idea where that is").for_module(ModuleTag::Localizer),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "x"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let mut env = small_env();
        let result = run_episode(
            &mut env,
            &gateway,
            &ModuleSet::with_defaults(),
            task(),
            &RunConfig::default(),
        )
        .unwrap();

        let first = &result.trace.attempts[0].steps[0];
        assert_eq!(first.action, Action::Wait);
        assert!(first.thought.contains("locate failed"));
    }

    #[test]
    fn scroll_moves_the_sim_viewport_between_steps() {
        let backend = MockBackend::new(vec![
            MockRule::reply(policy_json(serde_json::json!({"kind": "scroll", "direction": "down"})))
                .for_module(ModuleTag::Policy)
                .times(1),
            MockRule::reply(policy_json(serde_json::json!({"kind": "answer", "text": "x"})))
                .for_module(ModuleTag::Policy),
            accept_rule(),
        ]);
        let (gateway, _) = gateway_with(backend);
        let world = r#"{
            "start": "long",
            "pages": [{"id": "long", "background": "tall", "height": 2000, "elements": []}]
        }"#;
        let config = EnvConfig { viewport_width: 400, viewport_height: 400, ..Default::default() };
        let mut env = SimEnv::from_json(world, config).unwrap();
        run_episode(&mut env, &gateway, &ModuleSet::with_defaults(), task(), &RunConfig::default())
            .unwrap();
        assert_eq!(env.scroll_offset(), 300);
    }
}
