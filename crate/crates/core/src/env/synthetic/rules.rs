//! Scripted retriever behaviour for synthetic suites: each prompt is mapped
//! to a fixed knowledge text naming the strategy it calls for.

use crate::backends::ScriptRule;
use crate::retriever::TkTemplates;

pub const RECOVERY_TK: &str = "After a failed search, pick the closest suggested title instead of giving up. Spelling mistakes appear frequently.";
pub const TWO_HOP_TK: &str = "Relations carry clues. Two hops may be needed. Spot an intermediate entity on page one, then open its page for that final fact.";
pub const LOOKUP_TK: &str =
    "Summaries are brief. If an opening paragraph lacks detail, scan via Lookup on keywords to read deeper passages.";
pub const DIRECT_TK: &str = "Keep it short. Go straight at named entities and reply using opening lines.";

/// Rules for a [`crate::backends::ScriptedGenerator`] acting as the
/// knowledge retriever under `templates`.
pub fn retriever_rules(templates: &TkTemplates) -> Vec<ScriptRule> {
    let ctx = regex::escape(&templates.context);
    let demo = regex::escape(&templates.demo);
    vec![
        ScriptRule::regex(format!(r"(?s)\A{ctx}.*Observation: Could not find[^\n]*\n\z"), RECOVERY_TK),
        ScriptRule::regex(format!(r"(?s)\A{ctx}\n\nQuestion: What year was the company that built "), TWO_HOP_TK),
        ScriptRule::regex(format!(r"(?s)\A{ctx}\n\nQuestion: What is the motto of "), LOOKUP_TK),
        ScriptRule::regex(format!(r"(?s)\A{ctx}"), DIRECT_TK),
        ScriptRule::regex(format!(r"(?s)\A{demo}.*Observation: Could not find"), RECOVERY_TK),
        ScriptRule::regex(format!(r"(?s)\A{demo}.*Action: Lookup\["), LOOKUP_TK),
        ScriptRule::regex(format!(r"(?s)\A{demo}\n\nQuestion: What year was the company that built "), TWO_HOP_TK),
        ScriptRule::regex(format!(r"(?s)\A{demo}"), DIRECT_TK),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{GenRequest, ScriptedGenerator, TextGenerator};
    use crate::model::{Action, Step};

    fn gen() -> (ScriptedGenerator, TkTemplates) {
        let t = TkTemplates::default();
        (ScriptedGenerator::new(retriever_rules(&t)).unwrap(), t)
    }

    fn ask(g: &ScriptedGenerator, prompt: String) -> String {
        g.generate(&GenRequest::new(prompt, 128)).unwrap()
    }

    #[test]
    fn context_prompts_follow_the_last_observation() {
        let (g, t) = gen();
        let q = "What year was Korlen Bridge founded?";
        assert_eq!(ask(&g, t.context_prompt(q, &[])), DIRECT_TK);
        let failed = Step::new(
            None,
            Action::search("Korlen Bridge").unwrap(),
            "Could not find [Korlen Bridge]. Similar: [Korlan Bridge].",
        );
        assert_eq!(ask(&g, t.context_prompt(q, std::slice::from_ref(&failed))), RECOVERY_TK);
        let found = Step::new(None, Action::search("Korlan Bridge").unwrap(), "Korlan Bridge was founded in 1820.");
        assert_eq!(ask(&g, t.context_prompt(q, &[failed, found])), DIRECT_TK);
        assert_eq!(ask(&g, t.context_prompt("What year was the company that built X Mill founded?", &[])), TWO_HOP_TK);
        assert_eq!(ask(&g, t.context_prompt("What is the motto of X Mill?", &[])), LOOKUP_TK);
    }

    #[test]
    fn distinct_patterns_score_below_half_relevance() {
        use crate::backends::HashingEmbedder;
        use crate::similarity::{cosine, relevance};
        let e = HashingEmbedder::default();
        let texts = [RECOVERY_TK, TWO_HOP_TK, LOOKUP_TK, DIRECT_TK];
        for (i, a) in texts.iter().enumerate() {
            for b in &texts[i + 1..] {
                let c: f64 = cosine(&e.embed_one(a), &e.embed_one(b)).unwrap();
                assert!(relevance(c) < 0.5, "{a} / {b}: {c}");
            }
        }
    }
}
