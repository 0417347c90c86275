use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{GenRequest, TextGenerator};
use crate::error::{Error, Result};

/// One `{"match": ..., "completion": ...}` entry of a rules file. `match` is
/// a plain substring unless `regex` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub completion: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub regex: bool,
}

impl ScriptRule {
    pub fn substring(pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        ScriptRule { pattern: pattern.into(), completion: completion.into(), regex: false }
    }

    pub fn regex(pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        ScriptRule { pattern: pattern.into(), completion: completion.into(), regex: true }
    }
}

enum Matcher {
    Substring(String),
    Regex(Regex),
}

/// Table-driven generator: the first rule matching the prompt wins; no match
/// yields [`Error::EmptyCompletion`].
pub struct ScriptedGenerator {
    rules: Vec<(Matcher, String)>,
    name: String,
}

impl ScriptedGenerator {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let m = if r.regex {
                    Matcher::Regex(
                        Regex::new(&r.pattern)
                            .map_err(|e| Error::Config(format!("bad rule pattern {:?}: {e}", r.pattern)))?,
                    )
                } else {
                    Matcher::Substring(r.pattern)
                };
                Ok((m, r.completion))
            })
            .collect::<Result<_>>()?;
        Ok(ScriptedGenerator { rules, name: "scripted".into() })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules: Vec<ScriptRule> =
            serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })?;
        Ok(ScriptedGenerator::new(rules)?.with_name(format!("scripted:{}", path.display())))
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        req.validate()?;
        self.rules
            .iter()
            .find(|(m, _)| match m {
                Matcher::Substring(s) => req.prompt.contains(s.as_str()),
                Matcher::Regex(r) => r.is_match(&req.prompt),
            })
            .map(|(_, completion)| completion.clone())
            .filter(|c| !c.trim().is_empty())
            .ok_or(Error::EmptyCompletion)
    }

    fn model_name(&self) -> &str {
        &self.name
    }
}
