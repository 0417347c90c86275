//! A shopping-style world with partial rewards: Finish[product] scores the
//! fraction of the instruction's required attributes the product has.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvObservation, Environment, TaskSpec};
use crate::backends::hashing::tokens;
use crate::error::{Error, Result};
use crate::model::{Action, FINISH, SEARCH};

const MAX_RESULTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub name: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShopTask {
    pub id: String,
    pub instruction: String,
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShopWorld {
    pub products: Vec<Product>,
    pub tasks: Vec<ShopTask>,
}

impl ShopWorld {
    pub fn new(products: Vec<Product>, tasks: Vec<ShopTask>) -> Result<Self> {
        for t in &tasks {
            if t.required.is_empty() {
                return Err(Error::InvalidInput(format!("shop task {} has no required attributes", t.id)));
            }
        }
        Ok(ShopWorld { products, tasks })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: ShopWorld =
            serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })?;
        ShopWorld::new(raw.products, raw.tasks)
    }

    fn product(&self, name: &str) -> Option<&Product> {
        let name = name.trim().to_lowercase();
        self.products.iter().find(|p| p.name.to_lowercase() == name)
    }

    /// Fraction of `required` attributes carried by the named product.
    pub fn score(&self, task: &ShopTask, product_name: &str) -> f64 {
        let Some(p) = self.product(product_name) else { return 0.0 };
        let have: HashSet<String> = p.attributes.iter().map(|a| a.to_lowercase()).collect();
        let hits = task.required.iter().filter(|r| have.contains(&r.to_lowercase())).count();
        hits as f64 / task.required.len() as f64
    }

    fn search(&self, query: &str) -> String {
        let q: HashSet<String> = tokens(query).collect();
        let mut scored: Vec<(usize, &Product)> = self
            .products
            .iter()
            .map(|p| {
                let words: HashSet<String> =
                    tokens(&p.name).chain(p.attributes.iter().flat_map(|a| tokens(a).collect::<Vec<_>>())).collect();
                (words.intersection(&q).count(), p)
            })
            .filter(|(n, _)| *n > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.name.cmp(&b.1.name)));
        if scored.is_empty() {
            return "No products found.".into();
        }
        let listing: Vec<String> =
            scored.iter().take(MAX_RESULTS).map(|(_, p)| format!("{} ({})", p.name, p.attributes.join(", "))).collect();
        format!("Results: {}.", listing.join("; "))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShopState {
    task: usize,
    done: bool,
}

impl Environment for ShopWorld {
    type State = ShopState;

    fn tasks(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|t| TaskSpec { id: t.id.clone(), question: t.instruction.clone() }).collect()
    }

    fn reset(&self, task_id: &str) -> Result<ShopState> {
        let task =
            self.tasks.iter().position(|t| t.id == task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        Ok(ShopState { task, done: false })
    }

    fn step(&self, state: &mut ShopState, action: &Action) -> EnvObservation {
        if state.done {
            return EnvObservation::finished("Episode already finished.", 0.0);
        }
        match action.name() {
            SEARCH => EnvObservation::text(self.search(action.arg())),
            FINISH => {
                state.done = true;
                let reward = self.score(&self.tasks[state.task], action.arg());
                EnvObservation::finished(format!("Purchased {}, reward = {reward}", action.arg()), reward)
            }
            _ => EnvObservation::text("Invalid action."),
        }
    }

    fn action_help(&self) -> &str {
        "Valid actions are Search[query], Finish[product]."
    }
}
