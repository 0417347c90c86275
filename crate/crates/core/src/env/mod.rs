//! Deterministic environments the agent acts in.

mod em;
mod scripted;
mod shop;
pub mod synthetic;
mod wiki;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Action;

pub use em::{exact_match, normalize_answer};
pub use scripted::ScriptedEnv;
pub use shop::{Product, ShopTask, ShopWorld};
pub use wiki::{ToyWikiWorld, WikiState, WikiTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    pub text: String,
    pub done: bool,
    /// In `[0, 1]`; non-zero only on the terminal step.
    pub reward: f64,
}

impl EnvObservation {
    pub fn text(text: impl Into<String>) -> Self {
        EnvObservation { text: text.into(), done: false, reward: 0.0 }
    }

    pub fn finished(text: impl Into<String>, reward: f64) -> Self {
        EnvObservation { text: text.into(), done: true, reward }
    }
}

/// A task as presented to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub question: String,
}

/// An environment holding a fixed task list. `step` is a pure function of
/// the world, the episode state and the action.
pub trait Environment: Sync {
    type State: Send;

    fn tasks(&self) -> Vec<TaskSpec>;

    fn task(&self, task_id: &str) -> Option<TaskSpec> {
        self.tasks().into_iter().find(|t| t.id == task_id)
    }

    fn reset(&self, task_id: &str) -> Result<Self::State>;

    fn step(&self, state: &mut Self::State, action: &Action) -> EnvObservation;

    /// One-line description of the action grammar, used in corrective
    /// observations after malformed agent output.
    fn action_help(&self) -> &str {
        "Valid actions are Search[entity], Lookup[string], Finish[answer]."
    }
}
