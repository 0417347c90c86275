//! Builds backends, the environment and the demo pool from a [`RunConfig`].

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use dice_core::backends::{
    CallTelemetry, Embedder, HashingEmbedder, HttpEmbedder, HttpGenerator, Metered, RetryPolicy, ScriptedGenerator,
    TextGenerator,
};
use dice_core::env::synthetic::{make_synthetic_suite, retriever_rules, PatternMix, SimulatedAgent, TaskLabel};
use dice_core::env::{EnvObservation, Environment, ShopWorld, TaskSpec, ToyWikiWorld, WikiState};
use dice_core::model::{load_pool, load_tk_cache, save_pool, save_tk_cache, Action, DemoPool};
use dice_core::retriever::{CacheStats, KnowledgeRetriever, TkTemplates};
use dice_core::{Error, Result};

use crate::config::{BackendKind, EmbedKind, EnvKind, RunConfig, ScriptedAgent};

pub struct Backends {
    pub agent: Box<dyn TextGenerator>,
    pub retriever: Box<dyn TextGenerator>,
    pub embedder: Box<dyn Embedder>,
    pub templates: TkTemplates,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let templates = match &cfg.retriever.template_path {
            Some(path) => TkTemplates::from_file(path)?,
            None => TkTemplates::default(),
        };
        let b = &cfg.backend;
        let policy = RetryPolicy {
            attempts: b.max_attempts.max(1),
            timeout: Duration::from_secs(b.timeout_secs),
            ..RetryPolicy::default()
        };
        let api_key = match &b.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        let (agent, retriever): (Box<dyn TextGenerator>, Box<dyn TextGenerator>) = match b.kind {
            BackendKind::Scripted => {
                let agent: Box<dyn TextGenerator> = match b.agent {
                    ScriptedAgent::Simulated => Box::new(SimulatedAgent::new()),
                    ScriptedAgent::Rules => {
                        let path = b.agent_rules.as_deref().expect("validated");
                        Box::new(ScriptedGenerator::from_file(path)?.with_name("scripted-agent"))
                    }
                };
                let retriever = match &b.retriever_rules {
                    Some(path) => ScriptedGenerator::from_file(path)?,
                    None => ScriptedGenerator::new(retriever_rules(&templates))?,
                };
                (agent, Box::new(retriever.with_name("scripted-retriever")))
            }
            BackendKind::Http => {
                let url = b.endpoint_url.clone().expect("validated");
                let model = b.model.clone().expect("validated");
                let retriever_model = b.retriever_model.clone().unwrap_or_else(|| model.clone());
                (
                    Box::new(HttpGenerator::new(url.clone(), model, api_key.clone(), policy)?),
                    Box::new(HttpGenerator::new(url, retriever_model, api_key.clone(), policy)?),
                )
            }
        };
        let e = &cfg.embed;
        let embedder: Box<dyn Embedder> = match e.kind {
            EmbedKind::Hashing => Box::new(HashingEmbedder::new(e.dim, e.seed)),
            EmbedKind::Http => Box::new(HttpEmbedder::new(
                e.endpoint_url.clone().expect("validated"),
                e.model.clone().expect("validated"),
                e.dim,
                api_key,
                policy,
            )?),
        };
        Ok(Backends { agent, retriever, embedder, templates })
    }

    pub fn knowledge_retriever<'a>(
        &'a self,
        telemetry: &'a CallTelemetry,
    ) -> KnowledgeRetriever<Metered<'a, dyn TextGenerator>, Metered<'a, dyn Embedder>> {
        KnowledgeRetriever::with_templates(
            Metered::new(self.retriever.as_ref(), telemetry),
            Metered::new(self.embedder.as_ref(), telemetry),
            self.templates.clone(),
        )
    }
}

/// Any of the environments the CLI can load.
pub enum AnyEnv {
    Wiki(ToyWikiWorld),
    Shop(ShopWorld),
}

pub enum AnyState {
    Wiki(WikiState),
    Shop(<ShopWorld as Environment>::State),
}

impl Environment for AnyEnv {
    type State = AnyState;

    fn tasks(&self) -> Vec<TaskSpec> {
        match self {
            AnyEnv::Wiki(w) => w.tasks(),
            AnyEnv::Shop(w) => w.tasks(),
        }
    }

    fn reset(&self, task_id: &str) -> Result<AnyState> {
        match self {
            AnyEnv::Wiki(w) => w.reset(task_id).map(AnyState::Wiki),
            AnyEnv::Shop(w) => w.reset(task_id).map(AnyState::Shop),
        }
    }

    fn step(&self, state: &mut AnyState, action: &Action) -> EnvObservation {
        match (self, state) {
            (AnyEnv::Wiki(w), AnyState::Wiki(s)) => w.step(s, action),
            (AnyEnv::Shop(w), AnyState::Shop(s)) => w.step(s, action),
            _ => unreachable!("state from a different environment"),
        }
    }

    fn action_help(&self) -> &str {
        match self {
            AnyEnv::Wiki(w) => w.action_help(),
            AnyEnv::Shop(w) => w.action_help(),
        }
    }
}

/// The loaded environment, its evaluation tasks, and the generated pool
/// when the world is synthetic.
pub struct Workspace {
    pub env: AnyEnv,
    pub eval_tasks: Vec<String>,
    pub suite_pool: Option<DemoPool>,
    pub labels: BTreeMap<String, TaskLabel>,
    /// Name of the success metric in reports.
    pub metric: &'static str,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let mut ws = match cfg.env.kind {
            EnvKind::Synthetic => {
                let mix = PatternMix::from_weights(&cfg.env.pattern_mix)?;
                let suite = make_synthetic_suite(cfg.env.n_tasks, cfg.env.n_pool, &mix, cfg.env.seed)?;
                Workspace {
                    eval_tasks: suite.eval_tasks.clone(),
                    suite_pool: Some(suite.pool.clone()),
                    labels: suite.labels.clone(),
                    env: AnyEnv::Wiki(suite.world),
                    metric: "em",
                }
            }
            EnvKind::Toywiki => {
                let world = ToyWikiWorld::load(cfg.env.world_path.as_deref().expect("validated"))?;
                let tasks = world.tasks().into_iter().map(|t| t.id).collect();
                Workspace {
                    env: AnyEnv::Wiki(world),
                    eval_tasks: tasks,
                    suite_pool: None,
                    labels: BTreeMap::new(),
                    metric: "em",
                }
            }
            EnvKind::Shop => {
                let world = ShopWorld::load(cfg.env.world_path.as_deref().expect("validated"))?;
                let tasks = world.tasks().into_iter().map(|t| t.id).collect();
                Workspace {
                    env: AnyEnv::Shop(world),
                    eval_tasks: tasks,
                    suite_pool: None,
                    labels: BTreeMap::new(),
                    metric: "sr",
                }
            }
        };
        if let Some(ids) = &cfg.eval.tasks {
            for id in ids {
                if ws.env.task(id).is_none() {
                    return Err(Error::UnknownTask(id.clone()));
                }
            }
            ws.eval_tasks = ids.clone();
        }
        Ok(ws)
    }

    /// Pool from `paths.pool` when set, otherwise the synthetic suite's pool
    /// with its cache built in memory.
    pub fn pool(&self, cfg: &RunConfig, backends: &Backends) -> Result<DemoPool> {
        if let Some(path) = &cfg.paths.pool {
            return read_pool(path, cfg.paths.tk_cache.as_deref());
        }
        match &self.suite_pool {
            Some(pool) => {
                let mut pool = pool.clone();
                let telemetry = CallTelemetry::default();
                backends.knowledge_retriever(&telemetry).build_pool_cache(&mut pool)?;
                Ok(pool)
            }
            None => Err(Error::Config("paths.pool is required for this env.kind".into())),
        }
    }
}

pub fn read_pool(path: &Path, tk_cache: Option<&Path>) -> Result<DemoPool> {
    let mut pool = load_pool(path)?;
    if let Some(cache) = tk_cache {
        pool.clear_tk_cache();
        if cache.exists() {
            for record in load_tk_cache(cache)? {
                pool.insert_tk(record);
            }
        }
    }
    Ok(pool)
}

pub fn write_pool(pool: &DemoPool, path: &Path, tk_cache: Option<&Path>) -> Result<()> {
    match tk_cache {
        None => save_pool(pool, path),
        Some(cache) => {
            let mut bare = pool.clone();
            bare.clear_tk_cache();
            save_pool(&bare, path)?;
            save_tk_cache(pool, cache)
        }
    }
}

/// Fills the pool's cache, reporting extraction work.
pub fn warm_pool(pool: &mut DemoPool, backends: &Backends) -> Result<(CacheStats, u64)> {
    let telemetry = CallTelemetry::default();
    let stats = backends.knowledge_retriever(&telemetry).build_pool_cache(pool)?;
    Ok((stats, telemetry.snapshot().gen_calls))
}
