//! A rule-based stand-in for the acting language model on synthetic suites.
//!
//! It can always do a single direct search-and-answer. The recovery,
//! two-hop and lookup moves are only available when a demonstration in the
//! prompt shows them, so its success depends on which demonstrations were
//! selected for the current step.

use regex::Regex;

use crate::backends::{GenRequest, TextGenerator};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Skills {
    recovery: bool,
    two_hop: bool,
    lookup: bool,
}

impl Skills {
    fn from_demos(block: &str) -> Skills {
        let mut skills = Skills::default();
        for demo in block.split("Question: ").skip(1) {
            let mut failed_search = false;
            let mut found = 0;
            let mut last_search = false;
            for line in demo.lines() {
                if let Some(action) = line.strip_prefix("Action: ") {
                    last_search = action.starts_with("Search[");
                    if last_search && failed_search {
                        skills.recovery = true;
                    }
                    if action.starts_with("Lookup[") {
                        skills.lookup = true;
                    }
                } else if let Some(obs) = line.strip_prefix("Observation: ") {
                    if last_search {
                        if obs.starts_with("Could not find") {
                            failed_search = true;
                        } else {
                            found += 1;
                        }
                    }
                }
            }
            if found >= 2 {
                skills.two_hop = true;
            }
        }
        skills
    }
}

enum Question {
    Founded(String),
    BuilderFounded(String),
    Motto(String),
    Other,
}

pub struct SimulatedAgent {
    two_hop: Regex,
    founded: Regex,
    motto_q: Regex,
    founded_in: Regex,
    built_by: Regex,
    motto: Regex,
    year: Regex,
    similar: Regex,
}

impl Default for SimulatedAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl SimulatedAgent {
    pub fn new() -> Self {
        let re = |p: &str| Regex::new(p).expect("static pattern");
        SimulatedAgent {
            two_hop: re(r"^What year was the company that built (.+) founded\?$"),
            founded: re(r"^What year was (.+) founded\?$"),
            motto_q: re(r"^What is the motto of (.+)\?$"),
            founded_in: re(r"was founded in (\d{4})\."),
            built_by: re(r"was built by ([^.]+)\."),
            motto: re(r"The motto of .+? is ([^.]+)\."),
            year: re(r"\b(\d{4})\b"),
            similar: re(r"Similar: \[([^,\]]+)"),
        }
    }

    fn question(&self, q: &str) -> Question {
        if let Some(c) = self.two_hop.captures(q) {
            Question::BuilderFounded(c[1].to_string())
        } else if let Some(c) = self.founded.captures(q) {
            Question::Founded(c[1].to_string())
        } else if let Some(c) = self.motto_q.captures(q) {
            Question::Motto(c[1].to_string())
        } else {
            Question::Other
        }
    }

    fn decide(&self, skills: Skills, question: &str, observations: &[&str]) -> (String, String) {
        let q = self.question(question);
        let give_up = || ("I cannot work out the answer.".to_string(), "Finish[unknown]".to_string());
        let Some(last) = observations.last() else {
            return match q {
                Question::Founded(e) | Question::BuilderFounded(e) | Question::Motto(e) => {
                    (format!("I should search {e}."), format!("Search[{e}]"))
                }
                Question::Other => give_up(),
            };
        };
        if last.starts_with("Could not find") {
            return match self.similar.captures(last) {
                Some(c) if skills.recovery => {
                    let next = c[1].trim();
                    (format!("The search failed. I will try the suggestion {next}."), format!("Search[{next}]"))
                }
                _ => give_up(),
            };
        }
        match q {
            Question::Founded(_) => match self.founded_in.captures(last).or_else(|| self.year.captures(last)) {
                Some(c) => (format!("The year is {}.", &c[1]), format!("Finish[{}]", &c[1])),
                None => give_up(),
            },
            Question::BuilderFounded(_) => {
                if let Some(c) = self.founded_in.captures(last) {
                    return (format!("The company was founded in {}.", &c[1]), format!("Finish[{}]", &c[1]));
                }
                match (skills.two_hop, self.built_by.captures(last), self.year.captures(last)) {
                    (true, Some(c), _) => {
                        let company = c[1].trim();
                        (format!("It was built by {company}. I will search it."), format!("Search[{company}]"))
                    }
                    (_, _, Some(y)) => (format!("The year is {}.", &y[1]), format!("Finish[{}]", &y[1])),
                    _ => give_up(),
                }
            }
            Question::Motto(_) => {
                if let Some(c) = self.motto.captures(last) {
                    let m = c[1].trim();
                    return (format!("The motto is {m}."), format!("Finish[{m}]"));
                }
                if skills.lookup && !last.starts_with("(Result") && !last.starts_with("No more results") {
                    ("The paragraph lacks the motto. I will look it up.".into(), "Lookup[motto]".into())
                } else {
                    give_up()
                }
            }
            Question::Other => give_up(),
        }
    }
}

impl TextGenerator for SimulatedAgent {
    fn generate(&self, request: &GenRequest) -> Result<String> {
        let prompt = request.prompt.as_str();
        let (demos, live) = match prompt.rfind("Question: ") {
            Some(i) => prompt.split_at(i),
            None => ("", prompt),
        };
        let mut lines = live.lines();
        let question = lines.next().unwrap_or_default().trim_start_matches("Question: ").trim();
        let observations: Vec<&str> = lines.filter_map(|l| l.strip_prefix("Observation: ")).collect();
        let (thought, action) = self.decide(Skills::from_demos(demos), question, &observations);
        Ok(format!("Thought: {thought}\nAction: {action}\n"))
    }

    fn model_name(&self) -> &str {
        "simulated"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(agent: &SimulatedAgent, prompt: &str) -> String {
        let out = agent.generate(&GenRequest::new(prompt, 64)).unwrap();
        out.lines().find_map(|l| l.strip_prefix("Action: ")).unwrap().to_string()
    }

    const RECOVERY_DEMO: &str = "Question: What year was Bafo Mill founded?\nAction: Search[Bafo Mill]\nObservation: Could not find [Bafo Mill]. Similar: [Bafa Mill].\nAction: Search[Bafa Mill]\nObservation: Bafa Mill was founded in 1700.\nAction: Finish[1700]\nObservation: Episode finished, reward = 1\n";

    #[test]
    fn recovery_needs_a_demo() {
        let a = SimulatedAgent::new();
        let live = "Question: What year was Korlen Bridge founded?\nAction: Search[Korlen Bridge]\nObservation: Could not find [Korlen Bridge]. Similar: [Korlan Bridge, Velt Bridge].\n";
        assert_eq!(act(&a, live), "Finish[unknown]");
        assert_eq!(act(&a, &format!("{RECOVERY_DEMO}\n{live}")), "Search[Korlan Bridge]");
    }

    #[test]
    fn skills_from_demos() {
        let s = Skills::from_demos(RECOVERY_DEMO);
        assert!(s.recovery && !s.two_hop && !s.lookup);
        let two = "Question: q\nAction: Search[A]\nObservation: A was built by B.\nAction: Search[B]\nObservation: B was founded in 1800.\nAction: Finish[1800]\nObservation: Episode finished, reward = 1\n";
        assert!(Skills::from_demos(two).two_hop);
    }

    #[test]
    fn two_hop_without_skill_answers_the_wrong_year() {
        let a = SimulatedAgent::new();
        let live = "Question: What year was the company that built Rano Tower founded?\nAction: Search[Rano Tower]\nObservation: Rano Tower is a tower in the Kel Valley. Rano Tower was built by Demo Works. Rano Tower was completed in 1901.\n";
        assert_eq!(act(&a, live), "Finish[1901]");
    }
}
