//! Subcommand implementations. Each one computes all results before
//! writing, so a failed run leaves no partial output behind.

use std::fs;
use std::path::{Path, PathBuf};

use dice_core::backends::CallTelemetry;
use dice_core::env::synthetic::{make_synthetic_suite, PatternMix};
use dice_core::env::Environment;
use dice_core::eval::{
    bucket_by_relevance, buckets_csv, low_quality_csv, suite_csv, sweep_csv, task_seed, write_output, BucketRow,
    Harness, LowQualityRun, StrategyRun, SuiteReport, SweepRow, TaskResult,
};
use dice_core::model::{load_runs, save_runs, write_atomic, AdmissionStats, DemoPool, Step};
use dice_core::runtime::{run_episode, EpisodeResult, PromptLayout, RuntimeConfig, SelectorBundle};
use dice_core::selector::{select, SelectionResult, SelectorConfig, Strategy};
use dice_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::setup::{read_pool, warm_pool, write_pool, Backends, Workspace};

fn runtime_config(cfg: &RunConfig, env: &impl Environment) -> RuntimeConfig {
    RuntimeConfig {
        max_steps: cfg.runtime.max_steps,
        max_tokens: cfg.runtime.max_tokens,
        temperature: cfg.runtime.temperature,
        layout: PromptLayout::with_help(env.action_help()),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

/// Writes the resolved config and its fingerprint into `dir`.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_output(dir, "config.resolved.toml", cfg.to_toml().as_bytes())?;
    write_output(dir, "config.fingerprint", format!("{}\n", cfg.fingerprint()).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildPoolReport {
    pub admission: AdmissionStats,
    pub extracted: usize,
    pub reused: usize,
    pub extraction_calls: u64,
    pub pool_path: PathBuf,
}

/// Filters `runs` to successful, unique trajectories, warms their TK cache
/// (reusing cached records from an earlier build) and writes both files.
pub fn build_pool(cfg: &RunConfig, runs: &Path) -> Result<BuildPoolReport> {
    let pool_path =
        cfg.paths.pool.clone().ok_or_else(|| Error::Config("paths.pool is required for build-pool".into()))?;
    let (mut pool, admission) = DemoPool::from_runs(load_runs(runs)?);
    let (mut extracted, mut reused, mut calls) = (0, 0, 0);
    if pool.is_empty() {
        log::warn!("no successful trajectories in {}; writing an empty pool", runs.display());
    } else {
        if pool_path.exists() {
            if let Ok(previous) = read_pool(&pool_path, cfg.paths.tk_cache.as_deref()) {
                for record in previous.tk_cache().values() {
                    pool.insert_tk(record.clone());
                }
            }
        }
        let backends = Backends::from_config(cfg)?;
        let (stats, gen_calls) = warm_pool(&mut pool, &backends)?;
        (extracted, reused, calls) = (stats.extracted, stats.reused, gen_calls);
    }
    if let Some(dir) = pool_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_pool(&pool, &pool_path, cfg.paths.tk_cache.as_deref())?;
    Ok(BuildPoolReport { admission, extracted, reused, extraction_calls: calls, pool_path })
}

/// Runs one task and writes its trace to `trace` (default
/// `<out_dir>/traces/<task>.jsonl`).
pub fn run(cfg: &RunConfig, task_id: &str, trace: Option<&Path>) -> Result<(EpisodeResult, PathBuf)> {
    let ws = Workspace::load(cfg)?;
    let index =
        ws.env.tasks().iter().position(|t| t.id == task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
    let backends = Backends::from_config(cfg)?;
    let pool = ws.pool(cfg, &backends)?;
    if cfg.selector.strategy.needs_tk_cache() && !pool.is_empty() && pool.cached_records().is_none() {
        return Err(Error::ColdCache("cold cache; run build-pool".into()));
    }
    let selector = SelectorConfig { seed: task_seed(cfg.episode_seed(), index), ..cfg.selector.clone() };
    let bundle = SelectorBundle {
        pool: &pool,
        retriever: backends.retriever.as_ref(),
        embedder: backends.embedder.as_ref(),
        templates: &backends.templates,
        raw_index: None,
        config: &selector,
    };
    let result = run_episode(task_id, &ws.env, backends.agent.as_ref(), bundle, &runtime_config(cfg, &ws.env))?;
    let path = trace
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.out_dir.join("traces").join(format!("{task_id}.jsonl")));
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_atomic(&path, result.trace_jsonl().as_bytes())?;
    Ok((result, path))
}

struct Loaded {
    ws: Workspace,
    backends: Backends,
    pool: DemoPool,
    runtime: RuntimeConfig,
}

impl Loaded {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let ws = Workspace::load(cfg)?;
        let backends = Backends::from_config(cfg)?;
        let pool = ws.pool(cfg, &backends)?;
        let runtime = runtime_config(cfg, &ws.env);
        Ok(Loaded { ws, backends, pool, runtime })
    }

    fn harness(&self, cfg: &RunConfig) -> Harness<'_, crate::setup::AnyEnv> {
        Harness {
            env: &self.ws.env,
            agent: self.backends.agent.as_ref(),
            retriever: self.backends.retriever.as_ref(),
            embedder: self.backends.embedder.as_ref(),
            templates: &self.backends.templates,
            runtime: &self.runtime,
            workers: cfg.runtime.workers,
            config_fingerprint: cfg.fingerprint(),
        }
    }
}

fn base_selector(cfg: &RunConfig) -> SelectorConfig {
    SelectorConfig { seed: cfg.episode_seed(), ..cfg.selector.clone() }
}

fn write_traces(dir: &Path, prefix: &str, runs: &[&StrategyRun]) -> Result<()> {
    let traces = dir.join("traces");
    create_dir(&traces)?;
    for run in runs {
        write_output(&traces, &format!("{prefix}{}.jsonl", run.report.strategy), run.traces_jsonl().as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub config_fingerprint: String,
    pub metric: String,
    pub reports: Vec<SuiteReport>,
}

/// Evaluates `cfg.eval.strategies` and writes `suite.csv`, `summary.json`
/// and per-strategy traces to `out`.
pub fn eval(cfg: &RunConfig, out: &Path) -> Result<EvalSummary> {
    let loaded = Loaded::new(cfg)?;
    let runs =
        loaded.harness(cfg).evaluate(&loaded.ws.eval_tasks, &loaded.pool, &cfg.eval.strategies, &base_selector(cfg))?;
    let summary = EvalSummary {
        config_fingerprint: cfg.fingerprint(),
        metric: loaded.ws.metric.to_string(),
        reports: runs.iter().map(|r| r.report.clone()).collect(),
    };
    echo_config(cfg, out)?;
    write_output(out, "suite.csv", &suite_csv(&summary.reports.iter().collect::<Vec<_>>(), loaded.ws.metric)?)?;
    write_output(out, "summary.json", &json_bytes(&summary)?)?;
    write_traces(out, "", &runs.iter().collect::<Vec<_>>())?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct LowQualitySummary {
    pub threshold: f64,
    pub n_empty_pool: usize,
    pub mean_pool_size: f64,
    pub report: SuiteReport,
}

impl From<&LowQualityRun> for LowQualitySummary {
    fn from(l: &LowQualityRun) -> Self {
        LowQualitySummary {
            threshold: l.threshold,
            n_empty_pool: l.n_empty_pool,
            mean_pool_size: l.mean_pool_size,
            report: l.run.report.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateSummary {
    pub config_fingerprint: String,
    pub metric: String,
    pub reports: Vec<SuiteReport>,
    pub buckets: Vec<BucketRow>,
    pub sweep: Vec<SweepRow>,
    pub low_quality: Option<LowQualitySummary>,
}

/// The full ablation: every strategy on the suite, relevance buckets, the
/// demo-count sweep and the low-quality pool stress test.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<AblateSummary> {
    let loaded = Loaded::new(cfg)?;
    let h = loaded.harness(cfg);
    let tasks = &loaded.ws.eval_tasks;
    let base = base_selector(cfg);
    let strategies = &cfg.eval.strategies;
    let runs = h.evaluate(tasks, &loaded.pool, strategies, &base)?;

    let warm = !loaded.pool.is_empty() && loaded.pool.cached_records().is_some();
    let low = if warm {
        Some(h.evaluate_low_quality(
            tasks,
            &loaded.pool,
            cfg.eval.low_quality_threshold,
            Strategy::DiceStepwise,
            &base,
        )?)
    } else {
        log::warn!("pool has no TK cache; skipping the low-quality pool run");
        None
    };

    // Buckets group knowledge-scored episodes by the relevance of their demo blocks:
    // the stepwise suite run plus the low-quality stress run.
    let stepwise = runs.iter().find(|r| r.report.strategy == Strategy::DiceStepwise);
    let rows: Vec<&TaskResult> = match stepwise {
        Some(run) => run.report.per_task.iter().chain(low.iter().flat_map(|l| &l.run.report.per_task)).collect(),
        None => runs.iter().flat_map(|r| &r.report.per_task).collect(),
    };
    let buckets = bucket_by_relevance(rows, &cfg.eval.bucket_edges)?;

    let m_values: Vec<usize> = cfg.eval.sweep_m.iter().copied().filter(|&m| m <= loaded.pool.len()).collect();
    let sweep = h.sweep_num_demos(tasks, &loaded.pool, &m_values, strategies, &base)?;

    let summary = AblateSummary {
        config_fingerprint: cfg.fingerprint(),
        metric: loaded.ws.metric.to_string(),
        reports: runs.iter().map(|r| r.report.clone()).collect(),
        buckets,
        sweep,
        low_quality: low.as_ref().map(LowQualitySummary::from),
    };
    echo_config(cfg, out)?;
    write_output(out, "suite.csv", &suite_csv(&summary.reports.iter().collect::<Vec<_>>(), loaded.ws.metric)?)?;
    write_output(out, "buckets.csv", &buckets_csv(&summary.buckets)?)?;
    write_output(out, "sweep.csv", &sweep_csv(&summary.sweep)?)?;
    write_output(out, "low_quality.csv", &low_quality_csv(&low.iter().collect::<Vec<_>>())?)?;
    write_output(out, "summary.json", &json_bytes(&summary)?)?;
    write_traces(out, "", &runs.iter().collect::<Vec<_>>())?;
    if let Some(l) = &low {
        write_traces(out, "low_quality_", &[&l.run])?;
    }
    Ok(summary)
}

/// A context file: the task and the history so far. Agent-context dumps
/// (with demos and counters) are accepted too.
#[derive(Debug, Clone, Deserialize)]
pub struct ContextFile {
    pub task: String,
    #[serde(default)]
    pub history: Vec<Step>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoredDemo {
    pub index: usize,
    pub id: String,
    pub task: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub tk_text: String,
    pub selection: SelectionResult,
    pub selected: Vec<ScoredDemo>,
}

/// Extracts the context's knowledge and selects against the pool.
pub fn score(cfg: &RunConfig, context: &Path) -> Result<ScoreReport> {
    let text = fs::read_to_string(context).map_err(|e| Error::Io { path: context.to_path_buf(), source: e })?;
    let ctx: ContextFile =
        serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })?;
    let loaded = Loaded::new(cfg)?;
    let telemetry = CallTelemetry::default();
    let tk = loaded.backends.knowledge_retriever(&telemetry).extract_tk_task(&ctx.task, &ctx.history)?;
    let selection = select(&loaded.pool, &tk, &cfg.selector, ctx.history.len())?;
    let selected = selection
        .indices
        .iter()
        .zip(&selection.relevance)
        .map(|(&i, &relevance)| {
            let t = &loaded.pool.entries()[i];
            ScoredDemo { index: i, id: t.id.clone(), task: t.task.clone(), relevance }
        })
        .collect();
    Ok(ScoreReport { tk_text: tk.tk_text, selection, selected })
}

/// Writes a synthetic suite to `out`: `world.json`, `raw_runs.jsonl`,
/// `labels.json` and `eval_tasks.json`.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let mix = PatternMix::from_weights(&cfg.env.pattern_mix)?;
    let suite = make_synthetic_suite(cfg.env.n_tasks, cfg.env.n_pool, &mix, cfg.env.seed)?;
    let runs = suite.raw_runs()?;
    create_dir(out)?;
    suite.world.save(&out.join("world.json"))?;
    save_runs(&runs, &out.join("raw_runs.jsonl"))?;
    write_output(out, "labels.json", &json_bytes(&suite.labels)?)?;
    write_output(out, "eval_tasks.json", &json_bytes(&suite.eval_tasks)?)?;
    Ok(runs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env.n_tasks = 8;
        cfg.env.n_pool = 6;
        cfg.paths.out_dir = out.to_path_buf();
        cfg.runtime.workers = 2;
        cfg
    }

    #[test]
    fn synth_then_build_pool_then_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_with(dir.path());
        let n_runs = synth(&cfg, dir.path()).unwrap();
        cfg.paths.pool = Some(dir.path().join("pool.jsonl"));
        let report = build_pool(&cfg, &dir.path().join("raw_runs.jsonl")).unwrap();
        assert_eq!(report.admission.total, n_runs);
        assert_eq!(report.admission.kept, 6);
        assert_eq!(report.extracted, 6);
        let again = build_pool(&cfg, &dir.path().join("raw_runs.jsonl")).unwrap();
        assert_eq!((again.extracted, again.extraction_calls), (0, 0));

        let task = Workspace::load(&cfg).unwrap().eval_tasks[0].clone();
        let (result, path) = run(&cfg, &task, None).unwrap();
        assert!(path.exists());
        assert_eq!(result.task_id, task);
        assert!(matches!(run(&cfg, "missing", None), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn cold_cache_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_with(dir.path());
        synth(&cfg, dir.path()).unwrap();
        cfg.paths.pool = Some(dir.path().join("pool.jsonl"));
        build_pool(&cfg, &dir.path().join("raw_runs.jsonl")).unwrap();
        fs::remove_file(dir.path().join("pool.tk.jsonl")).unwrap();
        let task = Workspace::load(&cfg).unwrap().eval_tasks[0].clone();
        match run(&cfg, &task, None) {
            Err(Error::ColdCache(msg)) => assert_eq!(msg, "cold cache; run build-pool"),
            other => panic!("expected cold cache, got {other:?}"),
        }
    }

    #[test]
    fn eval_writes_one_row_per_strategy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_with(dir.path());
        cfg.eval.strategies = vec![Strategy::DiceStepwise];
        let summary = eval(&cfg, dir.path()).unwrap();
        assert_eq!(summary.reports.len(), 1);
        let csv = fs::read_to_string(dir.path().join("suite.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(dir.path().join("config.fingerprint").exists());
        assert!(dir.path().join("traces/dice_stepwise.jsonl").exists());
    }

    #[test]
    fn score_selects_from_the_pool() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with(dir.path());
        let ctx = dir.path().join("ctx.json");
        fs::write(&ctx, r#"{"task": "What is the motto of Lumo Abbey?", "history": []}"#).unwrap();
        let report = score(&cfg, &ctx).unwrap();
        assert_eq!(report.selected.len(), 2);
        assert!((report.selected[0].relevance - 1.0).abs() < 1e-9);
        assert!(report.selected[1].relevance < 0.5);
    }
}
