//! Desk-scale task suites built on [`ToyWikiWorld`].
//!
//! Every generated task needs one named strategy pattern, and the pool holds
//! solved demonstrations of each pattern plus single-hop distractors, so the
//! benefit of picking the right demonstration at the right step is
//! measurable without a language model.

mod agent;
mod rules;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, ToyWikiWorld, WikiTask};
use crate::error::{Error, Result};
use crate::model::{Action, DemoPool, Step, Trajectory};

pub use agent::SimulatedAgent;
pub use rules::{retriever_rules, DIRECT_TK, LOOKUP_TK, RECOVERY_TK, TWO_HOP_TK};

/// Step budget every witness fits in.
pub const WITNESS_MAX_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// The question misspells the entity; the agent must search a name from
    /// the "Similar" list after the first search fails.
    SearchFailureRecovery,
    /// The answer sits in a second article reached through a bridge entity.
    TwoHopChaining,
    /// The answer is past the first paragraph and needs a Lookup.
    DetailLookup,
    /// Search the named entity and read the answer off the first paragraph.
    Direct,
}

impl Pattern {
    /// Positional order used by [`PatternMix::from_weights`].
    pub const ORDER: [Pattern; 4] =
        [Pattern::SearchFailureRecovery, Pattern::TwoHopChaining, Pattern::DetailLookup, Pattern::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::SearchFailureRecovery => "search_failure_recovery",
            Pattern::TwoHopChaining => "two_hop_chaining",
            Pattern::DetailLookup => "detail_lookup",
            Pattern::Direct => "direct",
        }
    }
}

/// Weights over patterns; they must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMix(Vec<(Pattern, f64)>);

impl Default for PatternMix {
    fn default() -> Self {
        PatternMix(vec![
            (Pattern::SearchFailureRecovery, 0.4),
            (Pattern::TwoHopChaining, 0.3),
            (Pattern::DetailLookup, 0.3),
        ])
    }
}

impl PatternMix {
    pub fn new(weights: Vec<(Pattern, f64)>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("pattern mix is empty".into()));
        }
        let mut seen = HashSet::new();
        for (p, w) in &weights {
            if !seen.insert(*p) {
                return Err(Error::Config(format!("pattern {} listed twice", p.as_str())));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Config(format!("pattern {} has invalid weight {w}", p.as_str())));
            }
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("pattern mix weights sum to {total}, not 1")));
        }
        Ok(PatternMix(weights.into_iter().filter(|(_, w)| *w > 0.0).collect()))
    }

    /// Weights in [`Pattern::ORDER`] order.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.len() > Pattern::ORDER.len() {
            return Err(Error::Config(format!("at most {} pattern weights", Pattern::ORDER.len())));
        }
        PatternMix::new(Pattern::ORDER.iter().copied().zip(weights.iter().copied()).collect())
    }

    pub fn patterns(&self) -> impl Iterator<Item = Pattern> + '_ {
        self.0.iter().map(|(p, _)| *p)
    }

    fn weights(&self) -> Vec<f64> {
        self.0.iter().map(|(_, w)| *w).collect()
    }
}

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessStep {
    pub thought: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLabel {
    pub pattern: Pattern,
    /// Pool indices demonstrating the pattern the task needs.
    pub oracle_demos: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub world: ToyWikiWorld,
    /// Evaluation task ids, in evaluation order.
    pub eval_tasks: Vec<String>,
    pub pool: DemoPool,
    /// Pattern of each pool entry.
    pub pool_patterns: Vec<Pattern>,
    pub labels: BTreeMap<String, TaskLabel>,
    /// Solving action sequence of every task, pool tasks included.
    pub witnesses: BTreeMap<String, Vec<WitnessStep>>,
}

impl SyntheticSuite {
    pub fn label(&self, task_id: &str) -> Option<&TaskLabel> {
        self.labels.get(task_id)
    }

    /// Run log a baseline agent would have produced on the pool tasks: each
    /// solved trajectory, and for every pattern task an earlier attempt that
    /// gave up after the first step.
    pub fn raw_runs(&self) -> Result<Vec<Trajectory>> {
        let mut runs = Vec::new();
        let pool_tasks: Vec<&WikiTask> = self.world.wiki_tasks().iter().filter(|t| t.id.starts_with("pool-")).collect();
        for task in pool_tasks {
            let witness = &self.witnesses[&task.id];
            if witness.len() > 2 {
                let attempt = vec![
                    witness[0].clone(),
                    WitnessStep { thought: "I cannot find the answer.".into(), action: Action::finish("unknown")? },
                ];
                runs.push(replay(&self.world, task, &attempt)?);
            }
        }
        let mut solved = self.pool.entries().to_vec();
        // interleave: failed attempts first, then solutions, in a stable order
        runs.append(&mut solved);
        Ok(runs)
    }
}

/// Executes `witness` in `world` and records the trajectory.
pub fn replay(world: &ToyWikiWorld, task: &WikiTask, witness: &[WitnessStep]) -> Result<Trajectory> {
    let mut state = world.reset(&task.id)?;
    let mut steps = Vec::with_capacity(witness.len());
    let mut reward = 0.0;
    for w in witness {
        let obs = world.step(&mut state, &w.action);
        steps.push(Step::new(Some(w.thought.clone()), w.action.clone(), obs.text));
        if obs.done {
            reward = obs.reward;
            break;
        }
    }
    Trajectory::new(task.question.clone(), steps, reward >= 1.0, reward)
}

const PLACE_KINDS: [&str; 12] = [
    "Bridge",
    "Abbey",
    "Tower",
    "Library",
    "Museum",
    "Harbor",
    "Academy",
    "Observatory",
    "Theatre",
    "Mill",
    "Lighthouse",
    "Chapel",
];
const COMPANY_KINDS: [&str; 5] = ["Works", "Foundry", "Company", "Guild", "Shipyards"];
const FEATURES: [&str; 8] = [
    "iron arches",
    "stained glass",
    "clock face",
    "granite steps",
    "copper roof",
    "spiral stairs",
    "painted ceilings",
    "rose garden",
];
const MOTTO_HEADS: [&str; 8] = ["Steady", "Ever", "Bright", "Silent", "Faithful", "Bold", "Patient", "Honest"];
const MOTTO_TAILS: [&str; 8] = ["Hands", "Onward", "Lanterns", "Stones", "Waters", "Hearts", "Roads", "Bells"];
const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "th"];

struct Builder {
    rng: ChaCha8Rng,
    tokens: Vec<String>,
    articles: BTreeMap<String, Vec<String>>,
    aliases: BTreeMap<String, String>,
}

impl Builder {
    fn token(&mut self) -> String {
        loop {
            let mut t = String::new();
            t.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
            t.push(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            t.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
            t.push(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            t.push_str(CODAS[self.rng.gen_range(0..CODAS.len())]);
            // keep names pairwise at edit distance >= 2 so a one-letter
            // misspelling has a unique nearest neighbour
            if self.tokens.iter().all(|u| strsim::levenshtein(u, &t) >= 2) {
                self.tokens.push(t.clone());
                return capitalize(&t);
            }
        }
    }

    fn year(&mut self, taken: &[u32]) -> u32 {
        loop {
            let y = self.rng.gen_range(1650..1990);
            if !taken.contains(&y) {
                return y;
            }
        }
    }

    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items[self.rng.gen_range(0..items.len())]
    }

    fn place(&mut self) -> (String, String) {
        let name = format!("{} {}", self.token(), self.pick(&PLACE_KINDS));
        let kind = name.rsplit(' ').next().unwrap().to_lowercase();
        (name, kind)
    }

    /// A one-vowel misspelling of the place's first word that resolves to
    /// nothing and is closer to the original than to any other name.
    fn misspell(&mut self, name: &str) -> String {
        let (first, rest) = name.split_once(' ').unwrap();
        let lower = first.to_lowercase();
        let positions: Vec<usize> = lower.char_indices().filter(|(_, c)| VOWELS.contains(c)).map(|(i, _)| i).collect();
        let mut candidates = Vec::new();
        for &pos in &positions {
            for v in VOWELS {
                let mut chars: Vec<char> = lower.chars().collect();
                if chars[pos] == v {
                    continue;
                }
                chars[pos] = v;
                let cand: String = chars.into_iter().collect();
                let clear = self.tokens.iter().filter(|u| **u != lower).all(|u| strsim::levenshtein(u, &cand) >= 2);
                if clear {
                    candidates.push(cand);
                }
            }
        }
        let pick = candidates[self.rng.gen_range(0..candidates.len())].clone();
        format!("{} {rest}", capitalize(&pick))
    }

    fn task(&mut self, id: String, pattern: Pattern) -> (WikiTask, Vec<WitnessStep>) {
        let (place, kind) = self.place();
        let valley = self.token();
        let feature = self.pick(&FEATURES);
        let motto = format!("{} {}", self.pick(&MOTTO_HEADS), self.pick(&MOTTO_TAILS));
        let founded = self.year(&[]);
        let other = self.year(&[founded]);
        let restored = self.year(&[founded, other]);
        let intro = format!("{place} is a {kind} in the {valley} Valley.");
        let motto_line = format!("The motto of {place} is {motto}.");
        let restored_line = format!("{place} was restored in {restored}.");
        self.aliases.insert(format!("The {place}"), place.clone());

        let act = |t: String, a: Action| WitnessStep { thought: t, action: a };
        match pattern {
            Pattern::TwoHopChaining => {
                let company = format!("{} {}", self.token(), self.pick(&COMPANY_KINDS));
                let ckind = company.rsplit(' ').next().unwrap().to_lowercase();
                let cvalley = self.token();
                let staff = self.rng.gen_range(40..900);
                self.articles.insert(
                    place.clone(),
                    vec![
                        intro,
                        format!("{place} was built by {company}."),
                        format!("{place} was completed in {other}."),
                        format!("It is known for its {feature}."),
                        restored_line,
                        motto_line,
                    ],
                );
                self.articles.insert(
                    company.clone(),
                    vec![
                        format!("{company} is a {ckind} based in the {cvalley} Valley."),
                        format!("{company} was founded in {founded}."),
                        format!("It employs about {staff} people."),
                    ],
                );
                let gold = founded.to_string();
                let task = WikiTask {
                    id,
                    question: format!("What year was the company that built {place} founded?"),
                    gold: gold.clone(),
                    hops: vec![place.clone(), company.clone()],
                };
                let witness = vec![
                    act(format!("I need to find who built {place}."), Action::search(&place).unwrap()),
                    act(
                        format!(
                            "{place} was built by {company}. I need to search {company} to find when it was founded."
                        ),
                        Action::search(&company).unwrap(),
                    ),
                    act(format!("{company} was founded in {gold}."), Action::finish(&gold).unwrap()),
                ];
                (task, witness)
            }
            _ => {
                let remark = format!("Visitors often mention the {}.", self.pick(&FEATURES));
                self.articles.insert(
                    place.clone(),
                    vec![
                        intro,
                        format!("{place} was founded in {founded}."),
                        format!("It is known for its {feature}."),
                        restored_line,
                        remark,
                        motto_line,
                    ],
                );
                let year = founded.to_string();
                match pattern {
                    Pattern::DetailLookup => {
                        let task = WikiTask {
                            id,
                            question: format!("What is the motto of {place}?"),
                            gold: motto.clone(),
                            hops: vec![place.clone()],
                        };
                        let witness = vec![
                            act(
                                format!("I need to search {place} and find its motto."),
                                Action::search(&place).unwrap(),
                            ),
                            act(
                                "The first paragraph does not mention the motto. I will look up the keyword motto."
                                    .into(),
                                Action::lookup("motto").unwrap(),
                            ),
                            act(format!("The motto of {place} is {motto}."), Action::finish(&motto).unwrap()),
                        ];
                        (task, witness)
                    }
                    Pattern::SearchFailureRecovery => {
                        let typo = self.misspell(&place);
                        let task = WikiTask {
                            id,
                            question: format!("What year was {typo} founded?"),
                            gold: year.clone(),
                            hops: vec![place.clone()],
                        };
                        let witness = vec![
                            act(format!("I need to search {typo} and find the year it was founded."), Action::search(&typo).unwrap()),
                            act(
                                format!("The search could not find it. The closest suggestion is {place}, so I will search that instead."),
                                Action::search(&place).unwrap(),
                            ),
                            act(format!("{place} was founded in {year}."), Action::finish(&year).unwrap()),
                        ];
                        (task, witness)
                    }
                    _ => {
                        let task = WikiTask {
                            id,
                            question: format!("What year was {place} founded?"),
                            gold: year.clone(),
                            hops: vec![place.clone()],
                        };
                        let witness = vec![
                            act(
                                format!("I need to search {place} and find the year it was founded."),
                                Action::search(&place).unwrap(),
                            ),
                            act(format!("{place} was founded in {year}."), Action::finish(&year).unwrap()),
                        ];
                        (task, witness)
                    }
                }
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Builds a world, `n_tasks` evaluation tasks and a pool of `n_pool` solved
/// demonstrations. About half the pool demonstrates the mix's patterns (at
/// least one demo each); the rest are direct single-hop distractors.
pub fn make_synthetic_suite(n_tasks: usize, n_pool: usize, mix: &PatternMix, seed: u64) -> Result<SyntheticSuite> {
    let patterns: Vec<Pattern> = mix.patterns().collect();
    if n_pool < patterns.len() {
        return Err(Error::Config(format!("n_pool {n_pool} is below the {} patterns in the mix", patterns.len())));
    }
    let weights = mix.weights();
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        tokens: Vec::new(),
        articles: BTreeMap::new(),
        aliases: BTreeMap::new(),
    };

    let mut eval_patterns: Vec<Pattern> =
        apportion(n_tasks, &weights).into_iter().zip(&patterns).flat_map(|(n, p)| std::iter::repeat_n(*p, n)).collect();
    eval_patterns.shuffle(&mut b.rng);

    let pattern_demos = n_pool.div_ceil(2).max(patterns.len());
    let mut pool_patterns: Vec<Pattern> = apportion(pattern_demos - patterns.len(), &weights)
        .into_iter()
        .zip(&patterns)
        .flat_map(|(n, p)| std::iter::repeat_n(*p, n + 1))
        .chain(std::iter::repeat_n(Pattern::Direct, n_pool - pattern_demos))
        .collect();
    pool_patterns.shuffle(&mut b.rng);

    let mut tasks = Vec::new();
    let mut witnesses = BTreeMap::new();
    let mut eval_tasks = Vec::new();
    for (i, p) in eval_patterns.iter().enumerate() {
        let (task, witness) = b.task(format!("task-{i:03}"), *p);
        eval_tasks.push(task.id.clone());
        witnesses.insert(task.id.clone(), witness);
        tasks.push(task);
    }
    let mut pool_task_ids = Vec::new();
    for (i, p) in pool_patterns.iter().enumerate() {
        let (task, witness) = b.task(format!("pool-{i:03}"), *p);
        pool_task_ids.push(task.id.clone());
        witnesses.insert(task.id.clone(), witness);
        tasks.push(task);
    }

    let world = ToyWikiWorld::new(b.articles, b.aliases, tasks)?;

    let mut entries = Vec::with_capacity(n_pool);
    for id in &pool_task_ids {
        let task = world.wiki_task(id).expect("generated task");
        let t = replay(&world, task, &witnesses[id])?;
        if !t.success {
            return Err(Error::InvalidInput(format!("witness for {id} does not solve it")));
        }
        entries.push(t);
    }
    let pool = DemoPool::new(entries)?;

    let labels = eval_tasks
        .iter()
        .zip(&eval_patterns)
        .map(|(id, p)| {
            let oracle_demos = pool_patterns.iter().enumerate().filter(|(_, q)| *q == p).map(|(i, _)| i).collect();
            (id.clone(), TaskLabel { pattern: *p, oracle_demos })
        })
        .collect();

    Ok(SyntheticSuite { world, eval_tasks, pool, pool_patterns, labels, witnesses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pattern_mix() -> PatternMix {
        PatternMix::from_weights(&[0.5, 0.5]).unwrap()
    }

    #[test]
    fn mix_validation() {
        assert!(matches!(PatternMix::from_weights(&[0.3, 0.3]), Err(Error::Config(_))));
        assert!(PatternMix::from_weights(&[0.5, 0.5]).is_ok());
        assert!(PatternMix::new(vec![(Pattern::Direct, 0.5), (Pattern::Direct, 0.5)]).is_err());
        assert!(PatternMix::from_weights(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(30, &[0.4, 0.3, 0.3]), vec![12, 9, 9]);
        assert_eq!(apportion(7, &[0.4, 0.3, 0.3]), vec![3, 2, 2]);
        assert_eq!(apportion(5, &[0.5, 0.5]), vec![3, 2]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = make_synthetic_suite(30, 20, &two_pattern_mix(), 7).unwrap();
        let b = make_synthetic_suite(30, 20, &two_pattern_mix(), 7).unwrap();
        assert_eq!(a.world, b.world);
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.labels, b.labels);
        let c = make_synthetic_suite(30, 20, &two_pattern_mix(), 8).unwrap();
        assert_ne!(a.world, c.world);
    }

    #[test]
    fn pool_composition() {
        let s = make_synthetic_suite(30, 20, &PatternMix::default(), 7).unwrap();
        assert_eq!(s.pool.len(), 20);
        assert_eq!(s.eval_tasks.len(), 30);
        let count = |p| s.pool_patterns.iter().filter(|q| **q == p).count();
        assert_eq!(count(Pattern::SearchFailureRecovery), 4);
        assert_eq!(count(Pattern::TwoHopChaining), 3);
        assert_eq!(count(Pattern::DetailLookup), 3);
        assert_eq!(count(Pattern::Direct), 10);
        for id in &s.eval_tasks {
            let label = s.label(id).unwrap();
            assert!(!label.oracle_demos.is_empty());
            assert!(label.oracle_demos.iter().all(|i| s.pool_patterns[*i] == label.pattern));
        }
        assert!(matches!(make_synthetic_suite(5, 2, &PatternMix::default(), 1), Err(Error::Config(_))));
    }

    #[test]
    fn witnesses_reach_gold_within_budget() {
        let s = make_synthetic_suite(40, 20, &PatternMix::default(), 11).unwrap();
        for task in s.world.wiki_tasks() {
            let w = &s.witnesses[&task.id];
            assert!(w.len() <= WITNESS_MAX_STEPS);
            let t = replay(&s.world, task, w).unwrap();
            assert!(t.success, "{}", task.id);
        }
    }

    #[test]
    fn misspelled_names_suggest_the_intended_entity() {
        let s = make_synthetic_suite(40, 20, &PatternMix::default(), 3).unwrap();
        for id in &s.eval_tasks {
            if s.label(id).unwrap().pattern != Pattern::SearchFailureRecovery {
                continue;
            }
            let task = s.world.wiki_task(id).unwrap();
            let typo = s.witnesses[id][0].action.arg();
            assert!(s.world.resolve(typo).is_none());
            assert_eq!(s.world.similar(typo).first().copied(), Some(task.hops[0].as_str()));
        }
    }

    #[test]
    fn raw_runs_contain_failures() {
        let s = make_synthetic_suite(10, 8, &PatternMix::default(), 5).unwrap();
        let runs = s.raw_runs().unwrap();
        let (pool, stats) = DemoPool::from_runs(runs.clone());
        assert!(runs.iter().any(|r| !r.success));
        assert_eq!(pool, s.pool);
        assert_eq!(stats.kept, 8);
    }
}
