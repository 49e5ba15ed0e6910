use indexmap::IndexMap;
use syntrack::classifier::{classify_map, Classifier, ClassifierConfig, TrackHypothesis};
use syntrack::grammar::{builtin_patterns, pattern_class, Grammar, PatternClass};
use syntrack::simulator::{simulate, ScenarioConfig};
use syntrack::Real;

fn run_with<T: Real>(patterns: &IndexMap<String, Grammar>, grammar: &str, seed: u64, feedback: bool) -> Vec<TrackHypothesis<T>> {
    let all = builtin_patterns();
    let sc = simulate(&all[grammar], &ScenarioConfig::<T> { grammar: grammar.into(), seed, ..Default::default() }).unwrap();
    let cfg = ClassifierConfig::<T> { feedback, ..Default::default() };
    Classifier::new(patterns, cfg).unwrap().run(&sc.detections).unwrap()
}

fn run<T: Real>(grammar: &str, seed: u64, feedback: bool) -> Vec<TrackHypothesis<T>> {
    run_with(&builtin_patterns(), grammar, seed, feedback)
}

fn posterior_of(h: &TrackHypothesis<f64>, pattern: &str) -> Vec<f64> {
    let i = h.trace.patterns.iter().position(|p| p == pattern).unwrap();
    h.trace.rows.iter().map(|r| r.posterior[i]).collect()
}

#[test]
fn straight_line_concentrates_among_lines() {
    let lines: IndexMap<String, Grammar> =
        builtin_patterns().into_iter().filter(|(n, _)| pattern_class(n) == Some(PatternClass::Line)).collect();
    let mut hits = 0;
    for seed in 0..100 {
        let hs = run_with::<f64>(&lines, "L_b", seed, false);
        hits += posterior_of(&hs[0], "L_b").iter().take(20).any(|&p| p > 0.9) as usize;
    }
    assert!(hits >= 90, "{hits} of 100");
}

#[test]
fn arcs_are_read_as_lines_before_the_turn() {
    // the first leg of an arc is a straight line, so early MAPs are lines
    let mut early_line = 0;
    let mut final_arc = 0;
    for seed in 0..100 {
        let hs = run::<f64>("A_ur", seed, true);
        let h = hs.iter().max_by_key(|h| h.detections.len()).unwrap();
        let early = h.trace.rows[3].map_label.as_deref().and_then(pattern_class);
        early_line += (early == Some(PatternClass::Line)) as usize;
        final_arc += (pattern_class(classify_map(&h.trace).name()) == Some(PatternClass::Arc)) as usize;
    }
    assert!(early_line >= 75, "{early_line} of 100");
    assert!(final_arc >= 90, "{final_arc} of 100");
}

#[test]
fn single_precision_pipeline_classifies() {
    let hs = run::<f32>("R_cl", 2, true);
    assert!(!hs.is_empty());
    let label = classify_map(&hs[0].trace);
    assert_eq!(pattern_class(label.name()), Some(PatternClass::MRectangle), "{label:?}");
}

#[test]
fn same_inputs_same_outputs() {
    let a = run::<f64>("R_cc", 9, true);
    let b = run::<f64>("R_cc", 9, true);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.trace, y.trace);
        assert_eq!(x.detections, y.detections);
    }
}
