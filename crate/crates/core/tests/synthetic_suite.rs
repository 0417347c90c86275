use dice_core::backends::{HashingEmbedder, ScriptedGenerator};
use dice_core::env::synthetic::{make_synthetic_suite, retriever_rules, Pattern, PatternMix, SimulatedAgent};
use dice_core::eval::{bucket_by_relevance, is_monotone, Harness, TaskResult, DEFAULT_BUCKET_EDGES};
use dice_core::retriever::{KnowledgeRetriever, TkTemplates};
use dice_core::runtime::RuntimeConfig;
use dice_core::selector::{SelectorConfig, Strategy};

#[test]
fn strategies_rank_as_expected_on_the_default_suite() {
    let suite = make_synthetic_suite(30, 20, &PatternMix::default(), 7).unwrap();
    let templates = TkTemplates::default();
    let retriever = ScriptedGenerator::new(retriever_rules(&templates)).unwrap();
    let embedder = HashingEmbedder::default();
    let agent = SimulatedAgent::new();
    let mut pool = suite.pool.clone();
    KnowledgeRetriever::with_templates(&retriever, &embedder, templates.clone()).build_pool_cache(&mut pool).unwrap();
    let runtime = RuntimeConfig::default();
    let h = Harness {
        env: &suite.world,
        agent: &agent,
        retriever: &retriever,
        embedder: &embedder,
        templates: &templates,
        runtime: &runtime,
        workers: 4,
        config_fingerprint: "test".into(),
    };
    let runs = h.evaluate(&suite.eval_tasks, &pool, &Strategy::ALL, &SelectorConfig::default()).unwrap();
    let rate = |s: Strategy| runs.iter().find(|r| r.report.strategy == s).unwrap().report.em_or_sr;
    let on_pattern = |s: Strategy, p: Pattern| {
        let run = runs.iter().find(|r| r.report.strategy == s).unwrap();
        let rows: Vec<&TaskResult> =
            run.report.per_task.iter().filter(|t| suite.label(&t.task_id).unwrap().pattern == p).collect();
        rows.iter().filter(|t| t.success).count() as f64 / rows.len() as f64
    };
    for s in Strategy::ALL {
        eprintln!("{s}: {:.3}  recovery {:.3}", rate(s), on_pattern(s, Pattern::SearchFailureRecovery));
    }
    assert!(rate(Strategy::DiceStepwise) >= rate(Strategy::Random) + 0.2);
    assert!(
        on_pattern(Strategy::DiceStepwise, Pattern::SearchFailureRecovery)
            > on_pattern(Strategy::DiceTaskwise, Pattern::SearchFailureRecovery)
    );
    assert!(rate(Strategy::DiceTaskwise) > rate(Strategy::Random));

    let low = h
        .evaluate_low_quality(&suite.eval_tasks, &pool, 0.5, Strategy::DiceStepwise, &SelectorConfig::default())
        .unwrap();
    eprintln!("low quality: {:.3} empty {} size {}", low.run.report.em_or_sr, low.n_empty_pool, low.mean_pool_size);
    let stepwise = runs.iter().find(|r| r.report.strategy == Strategy::DiceStepwise).unwrap();
    let rows = stepwise.report.per_task.iter().chain(&low.run.report.per_task);
    let buckets = bucket_by_relevance(rows, &DEFAULT_BUCKET_EDGES).unwrap();
    eprintln!("{buckets:?}");
    assert!(is_monotone(&buckets));
}
