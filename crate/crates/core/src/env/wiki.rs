//! A miniature Wikipedia with Search, Lookup and Finish.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{exact_match, EnvObservation, Environment, TaskSpec};
use crate::backends::hashing::tokens;
use crate::error::{Error, Result};
use crate::model::{Action, FINISH, LOOKUP, SEARCH};

pub const PARAGRAPH_SENTENCES: usize = 3;
pub const MAX_SIMILAR: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiTask {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub hops: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    articles: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    tasks: Vec<WikiTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct ToyWikiWorld {
    articles: BTreeMap<String, Vec<String>>,
    aliases: BTreeMap<String, String>,
    tasks: Vec<WikiTask>,
    /// lowercase name or alias -> entity
    index: HashMap<String, String>,
}

impl TryFrom<WorldFile> for ToyWikiWorld {
    type Error = Error;

    fn try_from(f: WorldFile) -> Result<Self> {
        ToyWikiWorld::new(f.articles, f.aliases, f.tasks)
    }
}

impl From<ToyWikiWorld> for WorldFile {
    fn from(w: ToyWikiWorld) -> Self {
        WorldFile { articles: w.articles, aliases: w.aliases, tasks: w.tasks }
    }
}

/// Per-episode state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WikiState {
    task: usize,
    article: Option<String>,
    lookup_keyword: Option<String>,
    lookup_cursor: usize,
    done: bool,
}

impl ToyWikiWorld {
    pub fn new(
        articles: BTreeMap<String, Vec<String>>,
        aliases: BTreeMap<String, String>,
        tasks: Vec<WikiTask>,
    ) -> Result<Self> {
        let mut index = HashMap::new();
        for entity in articles.keys() {
            if entity.trim().is_empty() {
                return Err(Error::InvalidInput("article with an empty title".into()));
            }
            index.insert(entity.to_lowercase(), entity.clone());
        }
        for (alias, target) in &aliases {
            if !articles.contains_key(target) {
                return Err(Error::InvalidInput(format!("alias {alias:?} points at missing article {target:?}")));
            }
            index.entry(alias.to_lowercase()).or_insert_with(|| target.clone());
        }
        let mut ids = HashSet::new();
        for task in &tasks {
            if !ids.insert(task.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate task id {}", task.id)));
            }
            if let Some(missing) = task.hops.iter().find(|h| !articles.contains_key(*h)) {
                return Err(Error::InvalidInput(format!("task {} hop {missing:?} has no article", task.id)));
            }
            if !articles.values().flatten().any(|s| s.contains(&task.gold)) {
                return Err(Error::InvalidInput(format!(
                    "task {} gold {:?} appears in no article",
                    task.id, task.gold
                )));
            }
        }
        Ok(ToyWikiWorld { articles, aliases, tasks, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))?;
        crate::model::write_atomic(path, &bytes)
    }

    pub fn articles(&self) -> &BTreeMap<String, Vec<String>> {
        &self.articles
    }

    pub fn wiki_tasks(&self) -> &[WikiTask] {
        &self.tasks
    }

    pub fn wiki_task(&self, id: &str) -> Option<&WikiTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn resolve(&self, name: &str) -> Option<&str> {
        self.index.get(&name.trim().to_lowercase()).map(String::as_str)
    }

    /// Up to five article titles sharing at least one word with `query`,
    /// by shared-word count, then edit similarity, then title.
    pub fn similar(&self, query: &str) -> Vec<&str> {
        let q_lower = query.trim().to_lowercase();
        let q_tokens: HashSet<String> = tokens(query).collect();
        let mut scored: Vec<(usize, f64, &str)> = self
            .articles
            .keys()
            .filter_map(|name| {
                let overlap = tokens(name).collect::<HashSet<_>>().intersection(&q_tokens).count();
                (overlap > 0)
                    .then(|| (overlap, strsim::normalized_levenshtein(&q_lower, &name.to_lowercase()), name.as_str()))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(b.2)));
        scored.into_iter().take(MAX_SIMILAR).map(|(_, _, n)| n).collect()
    }

    fn search(&self, state: &mut WikiState, query: &str) -> String {
        match self.resolve(query) {
            Some(entity) => {
                let entity = entity.to_string();
                let text =
                    self.articles[&entity].iter().take(PARAGRAPH_SENTENCES).cloned().collect::<Vec<_>>().join(" ");
                state.article = Some(entity);
                state.lookup_keyword = None;
                state.lookup_cursor = 0;
                text
            }
            None => format!("Could not find [{query}]. Similar: [{}].", self.similar(query).join(", ")),
        }
    }

    fn lookup(&self, state: &mut WikiState, keyword: &str) -> String {
        let Some(entity) = &state.article else {
            return "No article has been searched yet. Use Search[entity] first.".into();
        };
        let needle = keyword.trim().to_lowercase();
        let hits: Vec<&String> = self.articles[entity].iter().filter(|s| s.to_lowercase().contains(&needle)).collect();
        if state.lookup_keyword.as_deref() != Some(needle.as_str()) {
            state.lookup_keyword = Some(needle);
            state.lookup_cursor = 0;
        }
        match hits.get(state.lookup_cursor) {
            Some(sentence) => {
                state.lookup_cursor += 1;
                format!("(Result {} / {}) {sentence}", state.lookup_cursor, hits.len())
            }
            None => "No more results.".into(),
        }
    }
}

impl Environment for ToyWikiWorld {
    type State = WikiState;

    fn tasks(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|t| TaskSpec { id: t.id.clone(), question: t.question.clone() }).collect()
    }

    fn reset(&self, task_id: &str) -> Result<WikiState> {
        let task =
            self.tasks.iter().position(|t| t.id == task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        Ok(WikiState { task, ..WikiState::default() })
    }

    fn step(&self, state: &mut WikiState, action: &Action) -> EnvObservation {
        if state.done {
            return EnvObservation::finished("Episode already finished.", 0.0);
        }
        match action.name() {
            SEARCH => EnvObservation::text(self.search(state, action.arg())),
            LOOKUP => EnvObservation::text(self.lookup(state, action.arg())),
            FINISH => {
                state.done = true;
                let reward = exact_match(action.arg(), &self.tasks[state.task].gold);
                EnvObservation::finished(format!("Episode finished, reward = {reward}"), reward)
            }
            _ => EnvObservation::text("Invalid action."),
        }
    }
}
