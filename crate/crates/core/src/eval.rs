//! Suite evaluation across selection strategies and the analysis tables
//! built on top of it.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, TextGenerator};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::model::{write_atomic, DemoPool};
use crate::retriever::{KnowledgeRetriever, TkRecord, TkTemplates};
use crate::runtime::{run_episode, EpisodeResult, RuntimeConfig, SelectorBundle};
use crate::selector::{RawTaskIndex, SelectorConfig, Strategy};
use crate::similarity::{cosine, relevance};

pub const DEFAULT_BUCKET_EDGES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_LOW_QUALITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub success: bool,
    pub score: f64,
    pub mean_relevance: Option<f64>,
}

impl TaskResult {
    pub fn from_episode(e: &EpisodeResult) -> Self {
        TaskResult {
            task_id: e.task_id.clone(),
            success: e.outcome.success,
            score: e.outcome.score,
            mean_relevance: e.mean_relevance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub strategy: Strategy,
    pub n_tasks: usize,
    /// Mean per-task success (EM on QA worlds, success rate on shop worlds).
    pub em_or_sr: f64,
    pub avg_score: f64,
    pub per_task: Vec<TaskResult>,
    pub config_fingerprint: String,
}

impl SuiteReport {
    pub fn new(strategy: Strategy, per_task: Vec<TaskResult>, config_fingerprint: impl Into<String>) -> Self {
        let n = per_task.len();
        let mean = |f: &dyn Fn(&TaskResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_task.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let em_or_sr = mean(&|t| if t.success { 1.0 } else { 0.0 });
        let avg_score = mean(&|t| t.score);
        SuiteReport {
            strategy,
            n_tasks: n,
            em_or_sr,
            avg_score,
            per_task,
            config_fingerprint: config_fingerprint.into(),
        }
    }
}

/// One strategy's report together with its episodes.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub report: SuiteReport,
    pub episodes: Vec<EpisodeResult>,
}

impl StrategyRun {
    pub fn traces_jsonl(&self) -> String {
        self.episodes.iter().map(EpisodeResult::trace_jsonl).collect()
    }
}

/// Seed for the task at `index`; depends only on the base seed and the
/// index, so every strategy sees the same one.
pub fn task_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Shared backends and settings for evaluation runs.
pub struct Harness<'a, W> {
    pub env: &'a W,
    pub agent: &'a dyn TextGenerator,
    pub retriever: &'a dyn TextGenerator,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a TkTemplates,
    pub runtime: &'a RuntimeConfig,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    pub config_fingerprint: String,
}

impl<W: Environment> Harness<'_, W> {
    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }

    /// Fails with [`Error::Overlap`] when a pool entry's task is one of the
    /// evaluation questions.
    pub fn check_disjoint(&self, tasks: &[String], pool: &DemoPool) -> Result<()> {
        for id in tasks {
            let spec = self.env.task(id).ok_or_else(|| Error::UnknownTask(id.clone()))?;
            if pool.entries().iter().any(|t| t.task == spec.question) {
                return Err(Error::Overlap(id.clone()));
            }
        }
        Ok(())
    }

    fn run_tasks<'p>(
        &self,
        tasks: &[String],
        pool_for: &(dyn Fn(usize) -> Option<&'p DemoPool> + Sync),
        raw_index: Option<&RawTaskIndex>,
        cfg: &SelectorConfig,
    ) -> Result<Vec<Option<EpisodeResult>>> {
        self.in_pool(|| {
            tasks
                .par_iter()
                .enumerate()
                .map(|(k, id)| {
                    let Some(pool) = pool_for(k) else { return Ok(None) };
                    let cfg = SelectorConfig { seed: task_seed(cfg.seed, k), ..cfg.clone() };
                    let bundle = SelectorBundle {
                        pool,
                        retriever: self.retriever,
                        embedder: self.embedder,
                        templates: self.templates,
                        raw_index,
                        config: &cfg,
                    };
                    run_episode(id, self.env, self.agent, bundle, self.runtime).map(Some)
                })
                .collect()
        })?
    }

    /// One report per strategy over `tasks`, in the given order.
    pub fn evaluate(
        &self,
        tasks: &[String],
        pool: &DemoPool,
        strategies: &[Strategy],
        base: &SelectorConfig,
    ) -> Result<Vec<StrategyRun>> {
        self.check_disjoint(tasks, pool)?;
        if strategies.iter().any(|s| s.needs_tk_cache()) && !pool.is_empty() && pool.cached_records().is_none() {
            return Err(Error::ColdCache("cold cache; run build-pool".into()));
        }
        let raw_index = if strategies.contains(&Strategy::KnnRaw) && base.m > 0 {
            Some(RawTaskIndex::build(pool, self.embedder)?)
        } else {
            None
        };
        strategies
            .iter()
            .map(|&strategy| {
                let cfg = SelectorConfig { strategy, ..base.clone() };
                let episodes: Vec<EpisodeResult> =
                    self.run_tasks(tasks, &|_| Some(pool), raw_index.as_ref(), &cfg)?.into_iter().flatten().collect();
                let per_task = episodes.iter().map(TaskResult::from_episode).collect();
                Ok(StrategyRun { report: SuiteReport::new(strategy, per_task, &self.config_fingerprint), episodes })
            })
            .collect()
    }

    pub fn sweep_num_demos(
        &self,
        tasks: &[String],
        pool: &DemoPool,
        m_values: &[usize],
        strategies: &[Strategy],
        base: &SelectorConfig,
    ) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        for &m in m_values {
            if m > pool.len() {
                return Err(Error::Config(format!("sweep m = {m} exceeds pool size {}", pool.len())));
            }
            let cfg = SelectorConfig { m, ..base.clone() };
            for run in self.evaluate(tasks, pool, strategies, &cfg)? {
                rows.push(SweepRow { m, strategy: run.report.strategy, success_rate: run.report.em_or_sr });
            }
        }
        Ok(rows)
    }

    /// Runs `strategy` on each task with the pool restricted to entries
    /// scoring below `threshold` against that task's initial knowledge.
    pub fn evaluate_low_quality(
        &self,
        tasks: &[String],
        pool: &DemoPool,
        threshold: f64,
        strategy: Strategy,
        base: &SelectorConfig,
    ) -> Result<LowQualityRun> {
        self.check_disjoint(tasks, pool)?;
        let retriever = KnowledgeRetriever::with_templates(self.retriever, self.embedder, self.templates.clone());
        let pools: Vec<Option<DemoPool>> = self.in_pool(|| {
            tasks
                .par_iter()
                .map(|id| {
                    let spec = self.env.task(id).ok_or_else(|| Error::UnknownTask(id.clone()))?;
                    let reference = retriever.extract_tk_task(&spec.question, &[])?;
                    match low_quality_filter(pool, threshold, &reference) {
                        Ok(p) => Ok(Some(p)),
                        Err(Error::EmptyPool) => {
                            log::info!("{id}: no pool entry below relevance {threshold}");
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()
        })??;
        let cfg = SelectorConfig { strategy, ..base.clone() };
        let episodes: Vec<EpisodeResult> =
            self.run_tasks(tasks, &|k| pools[k].as_ref(), None, &cfg)?.into_iter().flatten().collect();
        let sizes: Vec<usize> = pools.iter().flatten().map(DemoPool::len).collect();
        let per_task = episodes.iter().map(TaskResult::from_episode).collect();
        Ok(LowQualityRun {
            threshold,
            n_empty_pool: pools.len() - sizes.len(),
            mean_pool_size: if sizes.is_empty() {
                0.0
            } else {
                sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
            },
            run: StrategyRun { report: SuiteReport::new(strategy, per_task, &self.config_fingerprint), episodes },
        })
    }
}

#[derive(Debug, Clone)]
pub struct LowQualityRun {
    pub threshold: f64,
    /// Tasks skipped because no entry scored below the threshold.
    pub n_empty_pool: usize,
    pub mean_pool_size: f64,
    pub run: StrategyRun,
}

/// Entries whose relevance to `reference` is below `threshold`. A
/// threshold of 1 or more keeps everything.
pub fn low_quality_filter(pool: &DemoPool, threshold: f64, reference: &TkRecord) -> Result<DemoPool> {
    if threshold >= 1.0 {
        return Ok(pool.clone());
    }
    let records = pool.cached_records().ok_or_else(|| Error::ColdCache("cold cache; run build-pool".into()))?;
    let mut keep = Vec::with_capacity(records.len());
    for r in records {
        keep.push(relevance(cosine(&reference.embedding, &r.embedding)?) < threshold);
    }
    let filtered = pool.restrict(|i| keep[i]);
    if filtered.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(filtered)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `None` for empty buckets.
    pub success_rate: Option<f64>,
}

/// Groups tasks by mean relevance into `[lo, hi)` buckets, the last one
/// closed. Tasks without a relevance are skipped.
pub fn bucket_by_relevance<'a>(
    rows: impl IntoIterator<Item = &'a TaskResult>,
    edges: &[f64],
) -> Result<Vec<BucketRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) || edges[0] < 0.0 || edges[edges.len() - 1] > 1.0 {
        return Err(Error::Config(format!("bucket edges must increase strictly within [0, 1], got {edges:?}")));
    }
    let n_buckets = edges.len() - 1;
    let mut counts = vec![(0usize, 0usize); n_buckets];
    for row in rows {
        let Some(r) = row.mean_relevance else { continue };
        let b = (0..n_buckets).find(|&b| {
            let last = b == n_buckets - 1;
            r >= edges[b] && (r < edges[b + 1] || (last && r <= edges[b + 1]))
        });
        if let Some(b) = b {
            counts[b].0 += 1;
            counts[b].1 += usize::from(row.success);
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, (n, wins))| BucketRow {
            lo: edges[b],
            hi: edges[b + 1],
            n,
            success_rate: (n > 0).then(|| wins as f64 / n as f64),
        })
        .collect())
}

/// True when success rates never drop across non-empty buckets.
pub fn is_monotone(rows: &[BucketRow]) -> bool {
    let rates: Vec<f64> = rows.iter().filter_map(|r| r.success_rate).collect();
    rates.windows(2).all(|w| w[0] <= w[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub strategy: Strategy,
    pub success_rate: f64,
}

#[derive(Debug, Serialize)]
struct SuiteRow<'a> {
    strategy: Strategy,
    n_tasks: usize,
    metric: &'a str,
    value: f64,
}

#[derive(Debug, Serialize)]
struct LowQualityRow {
    strategy: Strategy,
    threshold: f64,
    n_tasks: usize,
    n_empty_pool: usize,
    mean_pool_size: f64,
    success_rate: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidInput(format!("csv encoding failed: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv encoding failed: {e}")))
}

/// `strategy,n_tasks,metric,value`; `metric` names the success metric.
pub fn suite_csv(reports: &[&SuiteReport], metric: &str) -> Result<Vec<u8>> {
    to_csv(reports.iter().map(|r| SuiteRow { strategy: r.strategy, n_tasks: r.n_tasks, metric, value: r.em_or_sr }))
}

pub fn buckets_csv(rows: &[BucketRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn low_quality_csv(runs: &[&LowQualityRun]) -> Result<Vec<u8>> {
    to_csv(runs.iter().map(|l| LowQualityRow {
        strategy: l.run.report.strategy,
        threshold: l.threshold,
        n_tasks: l.run.report.n_tasks,
        n_empty_pool: l.n_empty_pool,
        mean_pool_size: l.mean_pool_size,
        success_rate: l.run.report.em_or_sr,
    }))
}

/// Writes `bytes` to `dir/name` atomically.
pub fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(name), bytes)
}
