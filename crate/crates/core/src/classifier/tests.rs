use super::*;
use crate::grammar::{builtin_patterns, inside_oracle};
use crate::kinematics::{observe, Platform};
use nalgebra::Vector4;

fn platform() -> Platform<f64> {
    Platform { x: -2000.0, y: -1000.0, z: 3000.0, vx: 100.0, vy: 0.0 }
}

fn hit(x: &Vector4<f64>, t: usize, p: Platform<f64>) -> Detection<f64> {
    Detection::hit(t, observe(x, &p).unwrap(), p)
}

#[test]
fn hard_arc_string_bypass_matches_oracle() {
    let pats = builtin_patterns();
    let set = PatternSet::<f64>::new(&pats, 0.05).unwrap();
    let s = ["a", "a", "c", "c"];
    let (trace, charts) = classify_modes(&set, &s, ParserConfig::exact()).unwrap();
    assert_eq!(classify_map(&trace), Classification::Pattern("A_ur".into()));
    let i = set.names.iter().position(|n| n == "A_ur").unwrap();
    let aug = augment_nondetection(&pats["A_ur"], ND_SYMBOL, 0.05).unwrap();
    let want = inside_oracle(&aug, &s).unwrap();
    let got = charts[i].log_sentence_probability(s.len()).exp();
    assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    // every other pattern has no parse of this string
    for (j, l) in trace.last().unwrap().log_probs.iter().enumerate() {
        if j != i {
            assert_eq!(*l, f64::NEG_INFINITY, "{}", set.names[j]);
        }
    }
}

#[test]
fn unparseable_string_is_unclassified() {
    let set = PatternSet::<f64>::new(&builtin_patterns(), 0.05).unwrap();
    let (trace, _) = classify_modes(&set, &["a", "e", "a", "e"], ParserConfig::exact()).unwrap();
    assert_eq!(classify_map(&trace), Classification::Unclassified);
    assert!(trace.last().unwrap().posterior.iter().all(|&p| p == 0.0));
}

#[test]
fn posterior_sums_to_one_while_alive() {
    let set = PatternSet::<f64>::new(&builtin_patterns(), 0.05).unwrap();
    let (trace, _) = classify_modes(&set, &["b", "b", "b", "b"], ParserConfig::default()).unwrap();
    for r in &trace.rows {
        assert!((r.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(trace.last().unwrap().map_label.as_deref(), Some("L_b"));
}

#[test]
fn association_at_prediction_and_far_away() {
    let cfg = ClassifierConfig::<f64> { tracker: TrackerConfig { heading_kappa: 0.0, ..Default::default() }, ..Default::default() };
    let mut c = Classifier::new(&builtin_patterns(), cfg).unwrap();
    let x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    c.push(&hit(&x, 0, platform())).unwrap();
    assert_eq!(c.hypotheses.len(), 1);
    // detection exactly where the hypothesis predicts
    let pred = c.hypotheses[0].predicted_position(1, 1.0);
    let p1 = platform().advanced(1.0);
    let at = Vector4::new(pred[0], pred[1], 15.0, 0.0);
    let d = hit(&at, 1, p1);
    let z = convert_measurement(&d, &c.cfg.tracker.noise).unwrap();
    assert!((z.z[0] - pred[0]).abs() < 1e-6 && (z.z[1] - pred[1]).abs() < 1e-6);
    match c.associate(&d).unwrap() {
        Assignment::Existing { id, similarity } => {
            assert_eq!(id, 0);
            assert!((similarity - 1.0).abs() < 1e-9);
        }
        Assignment::Spawn => panic!("should associate"),
    }
    let far = Vector4::new(pred[0] + 10.0 * c.cfg.association.theta1, pred[1], 0.0, 0.0);
    assert_eq!(c.associate(&hit(&far, 1, p1)).unwrap(), Assignment::Spawn);
}

#[test]
fn one_detection_per_hypothesis_per_scan() {
    let mut c = Classifier::new(&builtin_patterns(), ClassifierConfig::<f64>::default()).unwrap();
    let x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    c.push(&hit(&x, 0, platform())).unwrap();
    // a second detection in the same scan at the same place cannot reuse hypothesis 0
    c.push(&hit(&x, 0, platform())).unwrap();
    assert_eq!(c.hypotheses.len(), 2);
}

#[test]
fn miss_scans_nondetection_and_chart_survives() {
    let mut c = Classifier::new(&builtin_patterns(), ClassifierConfig::<f64>::default()).unwrap();
    let (f, _) = transition_matrices(1.0);
    let mut x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    let mut p = platform();
    for t in 0..6 {
        c.push(&hit(&x, t, p)).unwrap();
        x = f * x;
        p = p.advanced(1.0);
    }
    c.push(&Detection::miss(6, p)).unwrap();
    x = f * x;
    p = p.advanced(1.0);
    c.push(&hit(&x, 7, p)).unwrap();
    c.finish().unwrap();
    assert_eq!(c.hypotheses.len(), 1);
    let h = &c.hypotheses[0];
    assert!(h.alive);
    let miss = h.trace.rows.iter().find(|r| r.scan == 6).unwrap();
    assert!(miss.is_miss);
    let lb = set_index(&c, "L_b");
    assert!(miss.log_probs[lb].is_finite());
    assert_eq!(h.trace.rows.len(), 7);
}

fn set_index(c: &Classifier<f64>, name: &str) -> usize {
    c.patterns.names.iter().position(|n| n == name).unwrap()
}

#[test]
fn implicit_miss_when_scan_skipped() {
    let mut c = Classifier::new(&builtin_patterns(), ClassifierConfig::<f64>::default()).unwrap();
    let x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    c.push(&hit(&x, 0, platform())).unwrap();
    c.push(&hit(&x, 1, platform())).unwrap();
    // scan 2 carries only another target far away
    let far = Vector4::new(3000.0, 3000.0, 0.0, 0.0);
    c.push(&hit(&far, 2, platform())).unwrap();
    c.finish().unwrap();
    let rows = &c.hypotheses[0].trace.rows;
    assert_eq!(rows.last().unwrap().scan, 2);
    assert!(rows.last().unwrap().is_miss);
}

#[test]
fn feedback_prior_is_a_distribution() {
    let mut c = Classifier::new(&builtin_patterns(), ClassifierConfig::<f64>::default()).unwrap();
    let (f, _) = transition_matrices(1.0);
    let mut x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    let mut p = platform();
    for t in 0..10 {
        c.push(&hit(&x, t, p)).unwrap();
        x = f * x;
        p = p.advanced(1.0);
    }
    c.finish().unwrap();
    let h = &c.hypotheses[0];
    for src in [FeedbackSource::BestPattern, FeedbackSource::PosteriorMix] {
        let g = h.mode_prior(&c.patterns, src).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(h.trace.rows.iter().skip(1).all(|r| r.mode_prior.is_some()));
}

#[test]
fn pf_tracker_runs() {
    let cfg = ClassifierConfig::<f64> {
        tracker_kind: TrackerKind::Pf { particles: 500, resample_threshold: 0.5 },
        ..Default::default()
    };
    let mut c = Classifier::new(&builtin_patterns(), cfg).unwrap();
    let (f, _) = transition_matrices(1.0);
    let mut x = Vector4::new(0.0, 0.0, 15.0, 0.0);
    let mut p = platform();
    for t in 0..8 {
        c.push(&hit(&x, t, p)).unwrap();
        x = f * x;
        p = p.advanced(1.0);
    }
    c.finish().unwrap();
    assert_eq!(c.hypotheses.len(), 1);
    let last = c.hypotheses[0].trace.last().unwrap();
    assert!(last.n_eff.is_some());
    assert!((last.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
