use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEARCH: &str = "Search";
pub const LOOKUP: &str = "Lookup";
pub const FINISH: &str = "Finish";

/// A tool invocation of the form `name[argument]`.
///
/// The name is restricted to ASCII alphanumerics and `_`; the argument is a
/// single line without `]`. Those two rules are what make
/// `render` and [`Action::from_str`] exact inverses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAction")]
pub struct Action {
    name: String,
    arg: String,
}

#[derive(Deserialize)]
struct RawAction {
    name: String,
    arg: String,
}

impl TryFrom<RawAction> for Action {
    type Error = Error;

    fn try_from(raw: RawAction) -> Result<Self> {
        Action::new(raw.name, raw.arg)
    }
}

impl Action {
    pub fn new(name: impl Into<String>, arg: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let arg = arg.into();
        if name.is_empty() {
            return Err(Error::InvalidAction("empty action name".into()));
        }
        if let Some(c) = name.chars().find(|c| !(c.is_ascii_alphanumeric() || *c == '_')) {
            return Err(Error::InvalidAction(format!("character {c:?} not allowed in action name {name:?}")));
        }
        if arg.contains(']') {
            return Err(Error::InvalidAction(format!("argument {arg:?} contains ']'")));
        }
        if arg.contains(['\n', '\r']) {
            return Err(Error::InvalidAction(format!("argument {arg:?} spans several lines")));
        }
        Ok(Action { name, arg })
    }

    pub fn search(entity: impl Into<String>) -> Result<Self> {
        Action::new(SEARCH, entity)
    }

    pub fn lookup(keyword: impl Into<String>) -> Result<Self> {
        Action::new(LOOKUP, keyword)
    }

    pub fn finish(answer: impl Into<String>) -> Result<Self> {
        Action::new(FINISH, answer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arg(&self) -> &str {
        &self.arg
    }

    pub fn is_finish(&self) -> bool {
        self.name == FINISH
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.arg)
    }
}

impl FromStr for Action {
    type Err = Error;

    /// Parses exactly `name[arg]`, with the argument running to the final `]`.
    fn from_str(s: &str) -> Result<Self> {
        let open = s.find('[').ok_or_else(|| Error::InvalidAction(format!("{s:?} has no '['")))?;
        let body = s[open + 1..]
            .strip_suffix(']')
            .ok_or_else(|| Error::InvalidAction(format!("{s:?} does not end with ']'")))?;
        Action::new(&s[..open], body)
    }
}
