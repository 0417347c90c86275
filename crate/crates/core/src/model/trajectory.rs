use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Action;
use crate::error::{Error, Result};

/// One (thought?, action, observation) turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(default)]
    pub thought: Option<String>,
    pub action: Action,
    pub observation: String,
}

impl Step {
    pub fn new(thought: Option<String>, action: Action, observation: impl Into<String>) -> Self {
        Step { thought, action, observation: observation.into() }
    }

    /// `Thought: ...` (when present), `Action: ...` and `Observation: ...`
    /// lines, each newline-terminated.
    pub fn render_into(&self, out: &mut String) {
        if let Some(thought) = &self.thought {
            let _ = writeln!(out, "Thought: {thought}");
        }
        let _ = writeln!(out, "Action: {}", self.action);
        let _ = writeln!(out, "Observation: {}", self.observation);
    }
}

pub fn render_steps(steps: &[Step]) -> String {
    let mut out = String::new();
    for step in steps {
        step.render_into(&mut out);
    }
    out
}

/// A complete task attempt. Pool entries are successful trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    pub id: String,
    pub task: String,
    pub success: bool,
    pub score: f64,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    id: String,
    task: String,
    success: bool,
    score: f64,
    steps: Vec<Step>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;

    fn try_from(raw: RawTrajectory) -> Result<Self> {
        let t = Trajectory { id: raw.id, task: raw.task, success: raw.success, score: raw.score, steps: raw.steps };
        t.validate()?;
        Ok(t)
    }
}

impl Trajectory {
    /// Builds a trajectory whose id is the content hash of task and steps.
    pub fn new(task: impl Into<String>, steps: Vec<Step>, success: bool, score: f64) -> Result<Self> {
        let task = task.into();
        let id = content_id(&task, &steps);
        let t = Trajectory { id, task, success, score, steps };
        t.validate()?;
        Ok(t)
    }

    /// Binary-outcome trajectory: score is 1.0 on success, 0.0 otherwise.
    pub fn binary(task: impl Into<String>, steps: Vec<Step>, success: bool) -> Result<Self> {
        Trajectory::new(task, steps, success, if success { 1.0 } else { 0.0 })
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidInput("trajectory id is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!("score {} outside [0, 1]", self.score)));
        }
        let last = self.steps.len().saturating_sub(1);
        for (i, step) in self.steps.iter().enumerate() {
            if step.observation.is_empty() && !(i == last && step.action.is_finish()) {
                return Err(Error::InvalidInput(format!(
                    "step {i} has an empty observation but is not a terminal Finish"
                )));
            }
        }
        Ok(())
    }

    pub fn last_action(&self) -> Option<&Action> {
        self.steps.last().map(|s| &s.action)
    }

    /// `Question: <task>` followed by the rendered steps.
    pub fn render(&self) -> String {
        let mut out = format!("Question: {}\n", self.task);
        for step in &self.steps {
            step.render_into(&mut out);
        }
        out
    }
}

pub fn content_id(task: &str, steps: &[Step]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(task.as_bytes());
    hasher.update(b"\n");
    hasher.update(render_steps(steps).as_bytes());
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(action: &str, obs: &str) -> Step {
        Step::new(None, action.parse().unwrap(), obs)
    }

    #[test]
    fn id_is_a_content_hash() {
        let a = Trajectory::binary("Q", vec![step("Finish[x]", "done")], true).unwrap();
        let b = Trajectory::binary("Q", vec![step("Finish[x]", "done")], true).unwrap();
        let c = Trajectory::binary("Q", vec![step("Finish[y]", "done")], true).unwrap();
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
        assert_eq!(a.id.len(), 32);
    }

    #[test]
    fn empty_observation_only_on_terminal_finish() {
        assert!(Trajectory::binary("Q", vec![step("Search[a]", "p"), step("Finish[x]", "")], true).is_ok());
        assert!(Trajectory::binary("Q", vec![step("Search[a]", ""), step("Finish[x]", "ok")], true).is_err());
    }

    #[test]
    fn score_must_be_a_fraction() {
        assert!(Trajectory::new("Q", vec![step("Finish[x]", "ok")], true, 1.5).is_err());
    }

    #[test]
    fn renders_thought_action_observation() {
        let s = Step::new(Some("need the film.".into()), "Search[Inception]".parse().unwrap(), "Inception is a film.");
        let t = Trajectory::binary("Who directed Inception?", vec![s], false).unwrap();
        assert_eq!(
            t.render(),
            "Question: Who directed Inception?\nThought: need the film.\nAction: Search[Inception]\nObservation: Inception is a film.\n"
        );
    }
}
