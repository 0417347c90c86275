use std::collections::HashMap;

use super::{exact_match, EnvObservation, Environment, TaskSpec};
use crate::error::{Error, Result};
use crate::model::Action;

/// Environment answering rendered actions from a fixed table; Finish is
/// scored by exact match against the task's gold answer.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEnv {
    tasks: Vec<(TaskSpec, String)>,
    responses: HashMap<String, String>,
    fallback: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedState {
    task: usize,
    done: bool,
}

impl ScriptedEnv {
    pub fn new() -> Self {
        ScriptedEnv { fallback: "Nothing happens.".into(), ..Default::default() }
    }

    pub fn with_task(mut self, id: &str, question: &str, gold: &str) -> Self {
        self.tasks.push((TaskSpec { id: id.into(), question: question.into() }, gold.into()));
        self
    }

    /// Observation returned for `action` (rendered as `name[arg]`).
    pub fn with_response(mut self, action: &str, observation: &str) -> Self {
        self.responses.insert(action.into(), observation.into());
        self
    }
}

impl Environment for ScriptedEnv {
    type State = ScriptedState;

    fn tasks(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|(t, _)| t.clone()).collect()
    }

    fn reset(&self, task_id: &str) -> Result<ScriptedState> {
        let task =
            self.tasks.iter().position(|(t, _)| t.id == task_id).ok_or_else(|| Error::UnknownTask(task_id.into()))?;
        Ok(ScriptedState { task, done: false })
    }

    fn step(&self, state: &mut ScriptedState, action: &Action) -> EnvObservation {
        if state.done {
            return EnvObservation::finished("Episode already finished.", 0.0);
        }
        if action.is_finish() {
            state.done = true;
            let reward = exact_match(action.arg(), &self.tasks[state.task].1);
            return EnvObservation::finished(format!("Episode finished, reward = {reward}"), reward);
        }
        EnvObservation::text(self.responses.get(&action.render()).cloned().unwrap_or_else(|| self.fallback.clone()))
    }
}
