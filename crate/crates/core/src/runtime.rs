//! The ReAct-style episode loop with per-step demonstration selection.

use serde::{Deserialize, Serialize};

use crate::backends::{CallTelemetry, Embedder, GenRequest, Metered, TelemetrySnapshot, TextGenerator};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::model::{render_steps, Action, DemoPool, Step, Trajectory};
use crate::retriever::{KnowledgeRetriever, TkTemplates};
use crate::selector::{select, select_random, RawTaskIndex, SelectionResult, SelectorConfig, Strategy};

pub const DEFAULT_MAX_STEPS: usize = 8;
pub const STOP_SEQUENCE: &str = "Observation:";
/// Consecutive unparseable completions that end an episode.
pub const MAX_PARSE_FAILURES: usize = 3;
const INVALID_ACTION_NAME: &str = "Invalid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptLayout {
    pub header: String,
    pub demo_separator: String,
    /// Printed once before the first demonstration.
    pub example_prefix: String,
    pub max_prompt_chars: usize,
}

impl Default for PromptLayout {
    fn default() -> Self {
        PromptLayout::with_help("Valid actions are Search[entity], Lookup[string], Finish[answer].")
    }
}

impl PromptLayout {
    /// Default layout whose header lists the given action grammar.
    pub fn with_help(action_help: &str) -> Self {
        PromptLayout {
            header: format!(
                "Solve the task with interleaving Thought, Action, Observation steps. Thought can reason about \
                 the current situation. {action_help}\n"
            ),
            demo_separator: "\n".into(),
            example_prefix: "Here are some examples.\n".into(),
            max_prompt_chars: 24_000,
        }
    }

    fn render(&self, demos: &[&Trajectory], live: &str) -> String {
        let mut out = self.header.clone();
        if !demos.is_empty() {
            out.push_str(&self.example_prefix);
            for demo in demos {
                out.push_str(&demo.render());
                out.push_str(&self.demo_separator);
            }
        }
        out.push_str(live);
        out
    }
}

/// Renders header, demos (in the given order), the task and the history.
/// When the result exceeds `max_prompt_chars`, trailing (lowest-ranked)
/// demos are dropped; the task and history are never cut.
pub fn assemble_prompt(layout: &PromptLayout, demos: &[&Trajectory], task: &str, history: &[Step]) -> String {
    let live = format!("Question: {task}\n{}", render_steps(history));
    let mut keep = demos.len();
    loop {
        let prompt = layout.render(&demos[..keep], &live);
        if prompt.chars().count() <= layout.max_prompt_chars || keep == 0 {
            return prompt;
        }
        keep -= 1;
    }
}

/// Finds the first `Action: NAME[ARG]` line and the `Thought:` line
/// preceding it, if any.
pub fn parse_action(completion: &str) -> Result<(Option<String>, Action)> {
    let mut thought = None;
    for line in completion.lines() {
        let line = line.trim();
        if let Some(t) = line.strip_prefix("Thought:") {
            thought = Some(t.trim().to_string());
        } else if let Some(a) = line.strip_prefix("Action:") {
            if let Ok(action) = a.trim().parse::<Action>() {
                return Ok((thought, action));
            }
        }
    }
    Err(Error::MalformedAction(completion.trim().chars().take(200).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub max_steps: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub layout: PromptLayout,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            max_steps: DEFAULT_MAX_STEPS,
            max_tokens: 256,
            temperature: 0.0,
            layout: PromptLayout::default(),
        }
    }
}

/// What the loop needs to pick demonstrations.
#[derive(Clone, Copy)]
pub struct SelectorBundle<'a> {
    pub pool: &'a DemoPool,
    pub retriever: &'a dyn TextGenerator,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a TkTemplates,
    /// Pre-built index for `knn_raw`; built on demand when absent.
    pub raw_index: Option<&'a RawTaskIndex>,
    pub config: &'a SelectorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finished,
    StepLimit,
    ParseFailures,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub answer: Option<String>,
    pub success: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Selection that produced the demo block for this step.
    pub selection: SelectionResult,
    /// Whether the selection was made at this step.
    pub fresh: bool,
    pub step: Step,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTelemetry {
    pub agent: TelemetrySnapshot,
    pub retriever: TelemetrySnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub strategy: Strategy,
    pub outcome: Outcome,
    pub trace: Vec<TraceEntry>,
    pub telemetry: EpisodeTelemetry,
    pub termination: Termination,
}

impl EpisodeResult {
    pub fn selection_events(&self) -> usize {
        self.trace.iter().filter(|e| e.fresh).count()
    }

    /// Mean relevance of the active demo block, weighted by step. `None`
    /// when no step had scored demonstrations.
    pub fn mean_relevance(&self) -> Option<f64> {
        let per_step: Vec<f64> = self
            .trace
            .iter()
            .filter(|e| !e.selection.relevance.is_empty())
            .map(|e| e.selection.relevance.iter().sum::<f64>() / e.selection.relevance.len() as f64)
            .collect();
        (!per_step.is_empty()).then(|| per_step.iter().sum::<f64>() / per_step.len() as f64)
    }

    /// JSON lines: one record per step, then a footer.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.trace.iter().enumerate() {
            let rec = TraceRecord::Step {
                task_id: &self.task_id,
                step: i,
                selection: SelectionSummary {
                    indices: &e.selection.indices,
                    relevance: &e.selection.relevance,
                    fresh: e.fresh,
                },
                thought: e.step.thought.as_deref(),
                action: e.step.action.render(),
                observation: &e.step.observation,
            };
            out.push_str(&serde_json::to_string(&rec).expect("trace record serializes"));
            out.push('\n');
        }
        let footer = TraceRecord::Footer {
            task_id: &self.task_id,
            strategy: self.strategy,
            outcome: &self.outcome,
            termination: self.termination,
            telemetry: &self.telemetry,
        };
        out.push_str(&serde_json::to_string(&footer).expect("trace record serializes"));
        out.push('\n');
        out
    }
}

#[derive(Serialize)]
struct SelectionSummary<'a> {
    indices: &'a [usize],
    relevance: &'a [f64],
    fresh: bool,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceRecord<'a> {
    Step {
        task_id: &'a str,
        step: usize,
        selection: SelectionSummary<'a>,
        thought: Option<&'a str>,
        action: String,
        observation: &'a str,
    },
    Footer {
        task_id: &'a str,
        strategy: Strategy,
        outcome: &'a Outcome,
        termination: Termination,
        telemetry: &'a EpisodeTelemetry,
    },
}

struct Selector<'a, 'b> {
    bundle: SelectorBundle<'a>,
    retriever: KnowledgeRetriever<Metered<'b, dyn TextGenerator + 'a>, Metered<'b, dyn Embedder + 'a>>,
    built_index: Option<RawTaskIndex>,
}

impl Selector<'_, '_> {
    fn needed(&self, t: usize) -> bool {
        match self.bundle.config.strategy {
            Strategy::DiceStepwise => true,
            Strategy::DiceTaskwise | Strategy::Random | Strategy::KnnRaw => t == 0,
        }
    }

    fn select(&mut self, task: &str, history: &[Step], t: usize) -> Result<SelectionResult> {
        let cfg = self.bundle.config;
        let pool = self.bundle.pool;
        if pool.is_empty() || cfg.m == 0 {
            return Ok(SelectionResult::empty(t));
        }
        match cfg.strategy {
            Strategy::Random => Ok(select_random(pool.len(), cfg.m, cfg.seed, t)),
            Strategy::KnnRaw => {
                let embedder = self.retriever.embedder();
                if self.bundle.raw_index.is_none() && self.built_index.is_none() {
                    self.built_index = Some(RawTaskIndex::build(pool, embedder)?);
                }
                let index = self.bundle.raw_index.or(self.built_index.as_ref()).expect("index present");
                let query = embedder
                    .embed(&[task])?
                    .pop()
                    .ok_or_else(|| Error::InvalidInput("embedder returned no vector".into()))?;
                index.select(&query, cfg.m, cfg.tau, t)
            }
            Strategy::DiceTaskwise | Strategy::DiceStepwise => {
                if pool.cached_records().is_none() {
                    return Err(Error::ColdCache("cold cache; run build-pool".into()));
                }
                let tk = self.retriever.extract_tk_task(task, history)?;
                select(pool, &tk, cfg, t)
            }
        }
    }
}

/// Runs one episode of `task_id`.
///
/// Backend unreachability ends the episode with [`Termination::BackendError`];
/// unparseable agent output and refused generations become corrective
/// observations. Missing tasks and cold caches are returned as errors.
pub fn run_episode<W: Environment>(
    task_id: &str,
    env: &W,
    agent: &dyn TextGenerator,
    bundle: SelectorBundle<'_>,
    cfg: &RuntimeConfig,
) -> Result<EpisodeResult> {
    let task = env.task(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
    bundle.config.validate()?;
    if bundle.config.strategy.needs_tk_cache() && !bundle.pool.is_empty() && bundle.pool.cached_records().is_none() {
        return Err(Error::ColdCache("cold cache; run build-pool".into()));
    }
    let mut state = env.reset(task_id)?;

    let agent_tel = CallTelemetry::default();
    let retr_tel = CallTelemetry::default();
    let agent = Metered::new(agent, &agent_tel);
    let mut selector = Selector {
        bundle,
        retriever: KnowledgeRetriever::with_templates(
            Metered::new(bundle.retriever, &retr_tel),
            Metered::new(bundle.embedder, &retr_tel),
            bundle.templates.clone(),
        ),
        built_index: None,
    };

    let mut history: Vec<Step> = Vec::new();
    let mut trace = Vec::new();
    let mut active = SelectionResult::empty(0);
    let mut failures = 0;
    let mut outcome = Outcome { answer: None, success: false, score: 0.0 };
    let mut termination = Termination::StepLimit;

    for t in 0..cfg.max_steps {
        let mut fresh = false;
        if selector.needed(t) {
            match selector.select(&task.question, &history, t) {
                Ok(sel) => {
                    active = sel;
                    fresh = true;
                }
                Err(e) if e.is_unreachable() => {
                    log::warn!("{task_id}: retriever unreachable at step {t}: {e}");
                    termination = Termination::BackendError;
                    break;
                }
                Err(e @ (Error::ColdCache(_) | Error::Config(_))) => return Err(e),
                Err(e) => log::warn!("{task_id}: selection failed at step {t}, keeping previous demos: {e}"),
            }
        }

        let demos: Vec<&Trajectory> = active.indices.iter().map(|&i| &bundle.pool.entries()[i]).collect();
        let prompt = assemble_prompt(&cfg.layout, &demos, &task.question, &history);
        let req = GenRequest::new(prompt, cfg.max_tokens).with_stop([STOP_SEQUENCE]).with_temperature(cfg.temperature);
        let parsed = match agent.generate(&req) {
            Ok(completion) => parse_action(&completion).map_err(|_| completion),
            Err(e) if e.is_unreachable() => {
                log::warn!("{task_id}: agent unreachable at step {t}: {e}");
                termination = Termination::BackendError;
                break;
            }
            Err(e) => Err(e.to_string()),
        };

        let step = match parsed {
            Ok((thought, action)) => {
                failures = 0;
                let obs = env.step(&mut state, &action);
                let finished = obs.done;
                if finished {
                    outcome = Outcome {
                        answer: action.is_finish().then(|| action.arg().to_string()),
                        success: obs.reward >= 1.0,
                        score: obs.reward,
                    };
                    termination = if action.is_finish() { Termination::Finished } else { Termination::StepLimit };
                }
                let step = Step::new(thought, action, obs.text);
                if finished {
                    trace.push(TraceEntry { selection: active.clone(), fresh, step });
                    break;
                }
                step
            }
            Err(raw) => {
                failures += 1;
                let thought = raw.split_whitespace().collect::<Vec<_>>().join(" ");
                let action = Action::new(INVALID_ACTION_NAME, "").expect("valid action name");
                let step = Step::new(Some(thought), action, format!("Invalid action. {}", env.action_help()));
                if failures >= MAX_PARSE_FAILURES {
                    trace.push(TraceEntry { selection: active.clone(), fresh, step });
                    termination = Termination::ParseFailures;
                    break;
                }
                step
            }
        };
        history.push(step.clone());
        trace.push(TraceEntry { selection: active.clone(), fresh, step });
    }

    Ok(EpisodeResult {
        task_id: task_id.to_string(),
        strategy: bundle.config.strategy,
        outcome,
        trace,
        telemetry: EpisodeTelemetry { agent: agent_tel.snapshot(), retriever: retr_tel.snapshot() },
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{HashingEmbedder, ScriptRule, ScriptedGenerator};
    use crate::env::ScriptedEnv;
    use crate::model::FINISH;

    fn demo(task: &str, answer: &str) -> Trajectory {
        Trajectory::binary(
            task,
            vec![Step::new(None, Action::finish(answer).unwrap(), "Episode finished, reward = 1")],
            true,
        )
        .unwrap()
    }

    fn env() -> ScriptedEnv {
        ScriptedEnv::new()
            .with_task("t1", "Who wrote Dune?", "Frank Herbert")
            .with_response("Search[Dune]", "Dune is a novel by Frank Herbert.")
    }

    struct Fixture {
        pool: DemoPool,
        retriever: ScriptedGenerator,
        embedder: HashingEmbedder,
        templates: TkTemplates,
        cfg: SelectorConfig,
    }

    impl Fixture {
        fn new(strategy: Strategy) -> Fixture {
            let embedder = HashingEmbedder::default();
            let retriever = ScriptedGenerator::new(vec![ScriptRule::substring("", "Search then answer.")]).unwrap();
            let templates = TkTemplates::default();
            let mut pool = DemoPool::new(vec![demo("A?", "a"), demo("B?", "b"), demo("C?", "c")]).unwrap();
            KnowledgeRetriever::with_templates(&retriever, &embedder, templates.clone())
                .build_pool_cache(&mut pool)
                .unwrap();
            Fixture {
                pool,
                retriever,
                embedder,
                templates,
                cfg: SelectorConfig { strategy, ..SelectorConfig::default() },
            }
        }

        fn bundle(&self) -> SelectorBundle<'_> {
            SelectorBundle {
                pool: &self.pool,
                retriever: &self.retriever,
                embedder: &self.embedder,
                templates: &self.templates,
                raw_index: None,
                config: &self.cfg,
            }
        }
    }

    const AFTER_FIRST_STEP: &str = r"(?s)Question: Who wrote Dune\?\n.*Observation: ";

    fn agent(rules: &[(&str, &str)]) -> ScriptedGenerator {
        ScriptedGenerator::new(rules.iter().map(|(m, c)| ScriptRule::regex(*m, *c)).collect()).unwrap()
    }

    #[test]
    fn prompt_without_demos() {
        let layout = PromptLayout::default();
        assert_eq!(assemble_prompt(&layout, &[], "Q", &[]), format!("{}Question: Q\n", layout.header));
    }

    #[test]
    fn prompt_orders_demos_then_task_then_history() {
        let layout = PromptLayout::default();
        let (d1, d2) = (demo("first demo?", "x"), demo("second demo?", "y"));
        let hist = vec![
            Step::new(Some("t1".into()), Action::search("A").unwrap(), "o1"),
            Step::new(None, Action::lookup("k").unwrap(), "o2"),
        ];
        let p = assemble_prompt(&layout, &[&d1, &d2], "Q", &hist);
        let pos = |s: &str| p.find(s).unwrap();
        assert!(pos("first demo?") < pos("second demo?"));
        assert!(pos("second demo?") < pos("Question: Q\n"));
        assert!(p.ends_with(
            "Question: Q\nThought: t1\nAction: Search[A]\nObservation: o1\nAction: Lookup[k]\nObservation: o2\n"
        ));
    }

    #[test]
    fn overflow_drops_lowest_ranked_demos() {
        let d1 = demo("kept?", "x");
        let d2 = demo(&"long ".repeat(100), "y");
        let base = PromptLayout::default();
        let full = assemble_prompt(&base, &[&d1, &d2], "Q", &[]);
        let layout = PromptLayout { max_prompt_chars: full.len() - 1, ..base.clone() };
        let p = assemble_prompt(&layout, &[&d1, &d2], "Q", &[]);
        assert!(p.contains("kept?") && !p.contains("long"));
        let tiny = PromptLayout { max_prompt_chars: 5, ..base };
        let p = assemble_prompt(&tiny, &[&d1, &d2], "Q", &[]);
        assert!(p.ends_with("Question: Q\n") && !p.contains("kept?"));
    }

    #[test]
    fn parses_actions() {
        let (t, a) = parse_action("Thought: need the film.\nAction: Search[Inception]").unwrap();
        assert_eq!(t.as_deref(), Some("need the film."));
        assert_eq!((a.name(), a.arg()), ("Search", "Inception"));
        let (t, a) = parse_action("Action: Finish[Richard Nixon]").unwrap();
        assert_eq!(t, None);
        assert_eq!((a.name(), a.arg()), (FINISH, "Richard Nixon"));
        assert!(matches!(parse_action("let me think about it"), Err(Error::MalformedAction(_))));
        let (_, a) = parse_action("Action: junk\nAction: Lookup[year]").unwrap();
        assert_eq!(a.arg(), "year");
    }

    #[test]
    fn immediate_finish() {
        let f = Fixture::new(Strategy::DiceStepwise);
        let a = agent(&[("", "Thought: I know it.\nAction: Finish[Frank Herbert]\n")]);
        let r = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
        assert!(r.outcome.success);
        assert_eq!(r.outcome.answer.as_deref(), Some("Frank Herbert"));
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.termination, Termination::Finished);
    }

    #[test]
    fn step_limit_and_call_budget() {
        let f = Fixture::new(Strategy::DiceStepwise);
        let a = agent(&[("", "Action: Search[Dune]")]);
        let cfg = RuntimeConfig { max_steps: 5, ..RuntimeConfig::default() };
        let r = run_episode("t1", &env(), &a, f.bundle(), &cfg).unwrap();
        assert_eq!(r.termination, Termination::StepLimit);
        assert_eq!(r.trace.len(), 5);
        assert_eq!(r.selection_events(), 5);
        assert_eq!(r.telemetry.agent.gen_calls, 5);
        assert_eq!(r.telemetry.retriever.gen_calls, 5);
        assert_eq!(r.telemetry.retriever.embed_calls, 5);
        assert!(r.trace.iter().all(|e| e.step.observation == "Dune is a novel by Frank Herbert."));
    }

    #[test]
    fn taskwise_selects_once() {
        for strategy in [Strategy::DiceTaskwise, Strategy::Random, Strategy::KnnRaw] {
            let f = Fixture::new(strategy);
            let a = agent(&[(AFTER_FIRST_STEP, "Action: Finish[x]"), ("", "Action: Search[Dune]")]);
            let r = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
            assert_eq!(r.trace.len(), 2);
            assert_eq!(r.selection_events(), 1, "{strategy}");
            assert_eq!(r.trace[0].selection, r.trace[1].selection);
            assert!(!r.outcome.success);
        }
    }

    #[test]
    fn parse_failures_terminate() {
        let f = Fixture::new(Strategy::DiceStepwise);
        let a = agent(&[("", "I am not sure.")]);
        let r = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::ParseFailures);
        assert_eq!(r.trace.len(), 3);
        assert_eq!(
            r.trace[0].step.observation,
            "Invalid action. Valid actions are Search[entity], Lookup[string], Finish[answer]."
        );
    }

    #[test]
    fn empty_pool_and_zero_m_make_no_retriever_calls() {
        let mut f = Fixture::new(Strategy::DiceStepwise);
        f.cfg.m = 0;
        let a = agent(&[("", "Action: Finish[Frank Herbert]")]);
        let r = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
        assert_eq!(r.telemetry.retriever, TelemetrySnapshot::default());
        assert!(r.trace[0].selection.indices.is_empty());
        assert_eq!(r.mean_relevance(), None);
    }

    #[test]
    fn cold_cache_and_unknown_task() {
        let mut f = Fixture::new(Strategy::DiceStepwise);
        let a = agent(&[("", "Action: Finish[x]")]);
        assert!(matches!(
            run_episode("nope", &env(), &a, f.bundle(), &RuntimeConfig::default()),
            Err(Error::UnknownTask(_))
        ));
        f.pool.clear_tk_cache();
        assert!(matches!(
            run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()),
            Err(Error::ColdCache(_))
        ));
    }

    #[test]
    fn repeated_runs_serialize_identically() {
        let f = Fixture::new(Strategy::DiceStepwise);
        let a =
            agent(&[(AFTER_FIRST_STEP, "Thought: done\nAction: Finish[Frank Herbert]"), ("", "Action: Search[Dune]")]);
        let r1 = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
        let r2 = run_episode("t1", &env(), &a, f.bundle(), &RuntimeConfig::default()).unwrap();
        assert_eq!(r1.trace_jsonl(), r2.trace_jsonl());
        assert!(r1.outcome.success);
        let lines: Vec<serde_json::Value> =
            r1.trace_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["action"], "Search[Dune]");
        assert_eq!(lines[2]["kind"], "footer");
    }
}
