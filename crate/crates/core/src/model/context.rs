use serde::{Deserialize, Serialize};

use super::{Step, Trajectory};
use crate::error::{Error, Result};

/// The live agent context: selected demonstrations, the task, and the
/// action/observation history so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub demos: Vec<Trajectory>,
    pub task: String,
    pub history: Vec<Step>,
    pub step_index: usize,
    /// Upper bound on `demos.len()`.
    pub max_demos: usize,
}

impl AgentContext {
    pub fn new(task: impl Into<String>, max_demos: usize) -> Self {
        AgentContext { demos: Vec::new(), task: task.into(), history: Vec::new(), step_index: 0, max_demos }
    }

    pub fn with_step(mut self, step: Step) -> Self {
        self.history.push(step);
        self.step_index += 1;
        self
    }

    pub fn with_demos(mut self, demos: Vec<Trajectory>) -> Result<Self> {
        if demos.len() > self.max_demos {
            return Err(Error::TooManyDemos { got: demos.len(), max: self.max_demos });
        }
        self.demos = demos;
        Ok(self)
    }

    /// True when the structural invariants hold (used after deserialization).
    pub fn is_consistent(&self) -> bool {
        self.step_index == self.history.len() && self.demos.len() <= self.max_demos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Action;

    fn step(arg: &str) -> Step {
        Step::new(Some("t".into()), Action::search(arg).unwrap(), format!("obs {arg}"))
    }

    fn demo(task: &str) -> Trajectory {
        Trajectory::binary(task, vec![Step::new(None, Action::finish("a").unwrap(), "done")], true).unwrap()
    }

    #[test]
    fn append_increments_step_index() {
        let ctx = AgentContext::new("Q", 2).with_step(step("a"));
        assert_eq!(ctx.history.len(), 1);
        assert_eq!(ctx.step_index, 1);
        let ctx = ctx.with_step(step("b")).with_step(step("c"));
        assert_eq!(ctx.step_index, 3);
        assert_eq!(ctx.task, "Q");
        assert!(ctx.is_consistent());
    }

    #[test]
    fn append_then_round_trip() {
        let ctx = AgentContext::new("Q", 2).with_demos(vec![demo("D")]).unwrap().with_step(step("a"));
        let json = serde_json::to_string(&ctx).unwrap();
        let back: AgentContext = serde_json::from_str(&json).unwrap();
        assert_eq!(back.demos, ctx.demos);
        assert_eq!(back.task, ctx.task);
        assert_eq!(back.history, ctx.history);
        assert_eq!(back.step_index, ctx.step_index);
        assert_eq!(back, ctx);
    }

    #[test]
    fn replace_demos() {
        let ctx = AgentContext::new("Q", 2).with_step(step("a"));
        let cleared = ctx.clone().with_demos(vec![]).unwrap();
        assert!(cleared.demos.is_empty());
        assert_eq!(cleared.history, ctx.history);

        let ds = vec![demo("D2"), demo("D7")];
        let once = ctx.clone().with_demos(ds.clone()).unwrap();
        let twice = once.clone().with_demos(ds).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.demos[0].task, "D2");

        let err = ctx.with_demos(vec![demo("a"), demo("b"), demo("c")]).unwrap_err();
        assert!(matches!(err, Error::TooManyDemos { got: 3, max: 2 }));
    }
}
