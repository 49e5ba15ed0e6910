//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! cargo test --release -p syntrack-cli --test acceptance

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use syntrack::classifier::{classify_map, Classifier, ClassifierConfig, TrackHypothesis};
use syntrack::grammar::{
    builtin_patterns, full_grammar, inside_oracle, enumerate_derivations, is_rect_cc_string, is_rect_cl_string,
    is_well_posed, line_grammar, pattern_class, spectral_radius, mean_matrix, Grammar, PatternClass,
};
use syntrack::kinematics::{measurement_jacobian, converted_h, polar_cov, process_cov, transition_matrices, NoiseConfig, Platform};
use syntrack::parser::{Chart, CompiledGrammar, ParserConfig, SoftTerminal};
use syntrack::simulator::{scenario_pincer, simulate, ScenarioConfig, Sampler, PINCER_OFFSET};
use syntrack::tracker::{pf_step_with, ParticleSet};
use syntrack::KinematicState64;

const RUNS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("bb chart under the line grammar", Duration::from_secs(1), bb_line_chart),
        ("Earley = inside oracle = enumeration", Duration::from_secs(120), oracle_equivalence),
        ("subcriticality", Duration::from_secs(30), subcriticality),
        ("language separation", Duration::from_secs(60), language_separation),
        ("measurement Jacobian", Duration::from_secs(5), jacobian),
        ("converted covariance vs Monte Carlo", Duration::from_secs(30), converted_covariance),
        ("particle filter vs Kalman", Duration::from_secs(60), pf_vs_kf),
        ("classification", Duration::from_secs(600), classification),
        ("pincer association", Duration::from_secs(300), pincer),
        ("feedback covariance reduction", Duration::from_secs(600), feedback_covariance),
        ("CLI determinism", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let time_note = if in_time { String::new() } else { format!(" over the {:.0} s limit", limit.as_secs_f64()) };
        println!(
            "criterion {:>2} {}  {name}: {} [{:.2} s{time_note}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_syntrack")
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("syntrack-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().expect("run syntrack");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

// 1

fn bb_line_chart() -> Outcome {
    let dir = scratch_dir("bb");
    let out = dir.join("bb");
    let (code, _) = run_cli(&["classify", "--modes", "bb", "--grammar", "line", "--dump-chart", "--out", out.to_str().unwrap()]);
    if code != 0 {
        return outcome(false, format!("classify exited {code}"));
    }
    let dump = std::fs::read_to_string(out.join("chart_line.jsonl")).expect("chart dump");
    let got: BTreeSet<(u64, String, String)> = dump
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).expect("json line");
            (v["end"].as_u64().unwrap(), v["origin"].as_str().unwrap().to_string(), v["text"].as_str().unwrap().to_string())
        })
        .collect();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/bb_line_chart.txt");
    let golden: BTreeSet<(u64, String, String)> = std::fs::read_to_string(golden_path)
        .expect("golden file")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.splitn(3, ' ');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().to_string(), it.next().unwrap().to_string())
        })
        .collect();
    let missing: Vec<_> = golden.difference(&got).collect();
    let extra: Vec<_> = got.difference(&golden).collect();
    // the accepting dummy completion is left out of the golden list
    let extra_ok = extra.iter().all(|(_, o, t)| o == "complete" && t.ends_with(": _0 -> S ."));
    outcome(
        missing.is_empty() && extra_ok,
        format!("{} golden states, {} missing, {} extra (accept states only: {extra_ok})", golden.len(), missing.len(), extra.len()),
    )
}

// 2

fn all_builtin_grammars() -> Vec<(String, Grammar)> {
    let mut v: Vec<(String, Grammar)> = builtin_patterns().into_iter().collect();
    v.push(("line".into(), line_grammar()));
    v.push(("full".into(), full_grammar()));
    v
}

fn used_terminals(g: &Grammar) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in g.productions() {
        for s in &p.rhs {
            if s.is_terminal() && !out.contains(&s.name().to_string()) {
                out.push(s.name().to_string());
            }
        }
    }
    out.sort();
    out
}

fn strings_over(alphabet: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t = s.clone();
                t.push(a.clone());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn earley_probability(cg: &std::sync::Arc<CompiledGrammar<f64>>, s: &[&str]) -> f64 {
    let anchor = KinematicState64::exact(0.0, 0.0, 0.0, 0.0, 0);
    let inputs: Vec<_> = s.iter().enumerate().map(|(k, t)| SoftTerminal::hard(t, anchor.clone(), k + 1)).collect();
    Chart::parse_all(cg.clone(), anchor, &inputs, ParserConfig::exact()).sentence_probability(s.len())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == 0.0 && b == 0.0 {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn oracle_equivalence() -> Outcome {
    let mut strings = 0usize;
    let mut positive = 0usize;
    let mut bad = Vec::new();
    for (name, g) in all_builtin_grammars() {
        let cg = CompiledGrammar::<f64>::new(&g).unwrap();
        let terms = used_terminals(&g);
        // every 3-terminal restriction of the terminals the grammar uses
        let mut alphabets = Vec::new();
        if terms.len() <= 3 {
            alphabets.push(terms.clone());
        } else {
            for i in 0..terms.len() {
                for j in i + 1..terms.len() {
                    for k in j + 1..terms.len() {
                        alphabets.push(vec![terms[i].clone(), terms[j].clone(), terms[k].clone()]);
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for alpha in &alphabets {
            for s in strings_over(alpha, 6) {
                if !seen.insert(s.clone()) {
                    continue;
                }
                let refs: Vec<&str> = s.iter().map(String::as_str).collect();
                let e = earley_probability(&cg, &refs);
                let o = inside_oracle(&g, &refs).unwrap();
                strings += 1;
                if !rel_close(e, o, 1e-9) {
                    bad.push(format!("{name} {:?}: earley {e} inside {o}", refs));
                    continue;
                }
                if o > 0.0 {
                    positive += 1;
                    let d: f64 = enumerate_derivations(&g, &refs, 25).unwrap().iter().map(|d| d.prob).sum();
                    if !rel_close(e, d, 1e-9) {
                        bad.push(format!("{name} {:?}: earley {e} enumeration {d}", refs));
                    }
                }
            }
        }
    }
    let detail = format!("{strings} strings, {positive} with positive probability, {} mismatches", bad.len());
    if let Some(b) = bad.first() {
        return outcome(false, format!("{detail}; first: {b}"));
    }
    outcome(true, detail)
}

// 3

fn subcriticality() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    for (name, g) in all_builtin_grammars() {
        let wp = is_well_posed(&g).unwrap();
        if !wp.subcritical || wp.radius >= worst.0 {
            worst = (wp.radius, name);
        }
    }
    let builtins_ok = worst.0 < 1.0;
    let geo = Grammar::from_rules("S", &[("S", "a S", 0.5), ("S", "a", 0.5)]);
    let sampler = Sampler::new(&geo, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let total: usize = (0..n).map(|_| sampler.sample(&mut rng).unwrap().terminals.len()).sum();
    let mean = total as f64 / n as f64;
    let mean_ok = (mean - 2.0).abs() <= 0.05 * 2.0;
    let branching = Grammar::from_rules("S", &[("S", "S S", 0.6), ("S", "a", 0.4)]);
    let r = spectral_radius(&mean_matrix(&branching).unwrap()).radius;
    let r_ok = (r - 1.2).abs() <= 1e-9;
    outcome(
        builtins_ok && mean_ok && r_ok,
        format!("largest built-in radius {:.4} ({}); mean length {mean:.4}; branching radius {r:.12}", worst.0, worst.1),
    )
}

// 4

fn language_separation() -> Outcome {
    let pats = builtin_patterns();
    let arc = &pats["A_ur"];
    let mut arc_bad = Vec::new();
    for n in 1..=4 {
        for m in 1..=4 {
            let mut s = vec!["a"; n];
            s.extend(vec!["c"; m]);
            let p = inside_oracle(arc, &s).unwrap();
            if (n == m) != (p > 0.0) {
                arc_bad.push(format!("a^{n} c^{m}: {p}"));
            }
        }
    }
    let alphabet: Vec<String> = ["b", "d", "f", "h"].iter().map(|s| s.to_string()).collect();
    let strings = strings_over(&alphabet, 8);
    let mut rect_bad = Vec::new();
    for (name, member) in [("R_cl", is_rect_cl_string as fn(&[&str]) -> bool), ("R_cc", is_rect_cc_string)] {
        let g = &pats[name];
        for s in &strings {
            let refs: Vec<&str> = s.iter().map(String::as_str).collect();
            let p = inside_oracle(g, &refs).unwrap();
            if (p > 0.0) != member(&refs) {
                rect_bad.push(format!("{name} {}: {p}", refs.join("")));
            }
        }
    }
    let pass = arc_bad.is_empty() && rect_bad.is_empty();
    let mut detail = format!(
        "arc a^n c^m (n, m <= 4): {} violations; m-rectangles over {} strings: {} violations",
        arc_bad.len(),
        strings.len(),
        rect_bad.len()
    );
    if let Some(b) = arc_bad.first().or(rect_bad.first()) {
        detail.push_str(&format!("; first: {b}"));
    }
    outcome(pass, detail)
}

// 5

fn jacobian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let x: Vector4<f64> = Vector4::new(
            rng.random_range(-8000.0..8000.0),
            rng.random_range(-8000.0..8000.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
        );
        let p = Platform {
            x: rng.random_range(-10000.0..-3000.0),
            y: rng.random_range(-10000.0..-3000.0),
            z: rng.random_range(0.0..5000.0),
            vx: rng.random_range(-150.0..150.0),
            vy: rng.random_range(-150.0..150.0),
        };
        let j = measurement_jacobian(&x, &p).unwrap();
        for c in 0..4 {
            let h = 1e-4 * x[c].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let fd = (converted_h(&xp, &p).unwrap() - converted_h(&xm, &p).unwrap()) / (2.0 * h);
            for r in 0..3 {
                let (a, b): (f64, f64) = (j[(r, c)], fd[r]);
                let scale = a.abs().max(b.abs());
                let err = if scale < 1e-12 { (a - b).abs() } else { (a - b).abs() / scale };
                // entries that are zero analytically come out at rounding level
                let ok = err <= 1e-5 || (a - b).abs() <= 1e-10;
                if !ok {
                    failures += 1;
                }
                if scale >= 1e-12 {
                    worst = worst.max(err);
                }
            }
        }
    }
    outcome(failures == 0, format!("1000 states, worst relative error {worst:.2e}, {failures} entries out of tolerance"))
}

// 6

fn converted_covariance() -> Outcome {
    let (r, theta, sr, st) = (1000.0f64, std::f64::consts::FRAC_PI_4, 5.0, 2.5f64.to_radians());
    let model = polar_cov(r, theta, sr, st, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nr = Normal::new(0.0, sr).unwrap();
    let nt = Normal::new(0.0, st).unwrap();
    let n = 1_000_000;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let rr = r + nr.sample(&mut rng);
        let tt = theta + nt.sample(&mut rng);
        let (x, y) = (rr * tt.sin(), rr * tt.cos());
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let nf = n as f64;
    let (mx, my) = (sx / nf, sy / nf);
    let mc = Matrix2::new(sxx / nf - mx * mx, sxy / nf - mx * my, sxy / nf - mx * my, syy / nf - my * my);
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((model[(i, j)] - mc[(i, j)]).abs() / mc[(i, j)].abs());
        }
    }
    outcome(
        worst <= 0.02,
        format!(
            "model [{:.1} {:.1}; {:.1}], Monte Carlo [{:.1} {:.1}; {:.1}], worst relative difference {:.3}%",
            model[(0, 0)],
            model[(0, 1)],
            model[(1, 1)],
            mc[(0, 0)],
            mc[(0, 1)],
            mc[(1, 1)],
            worst * 100.0
        ),
    )
}

// 7

fn pf_vs_kf() -> Outcome {
    let noise = NoiseConfig::<f64>::default();
    let mode = 1; // heading east
    let (f, g) = transition_matrices(1.0);
    let q = process_cov(mode, &noise);
    let qc = syntrack::kinematics::mode_noise_cov(mode, &noise).cholesky().unwrap().l();
    let sigma_z = 20.0;
    let n = 5000;
    let scans = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // truth and measurements
    let mut x = Vector4::new(0.0, 0.0, 10.0, 0.0);
    let mut zs = Vec::new();
    for _ in 0..scans {
        let w = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        x = f * x + g * (qc * w);
        let v: Vector2<f64> = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        zs.push(Vector2::new(x[0], x[1]) + v * sigma_z);
    }
    // exact Kalman filter
    let p0 = Matrix4::from_diagonal(&Vector4::new(100.0, 100.0, 4.0, 4.0));
    let init = KinematicState64::new(Vector4::new(0.0, 0.0, 10.0, 0.0), p0, 0);
    let h = nalgebra::Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let rz = Matrix2::identity() * (sigma_z * sigma_z);
    let mut m = init.mean;
    let mut p = init.cov;
    let mut kf = Vec::new();
    for z in &zs {
        m = f * m;
        p = f * p * f.transpose() + q;
        let s = h * p * h.transpose() + rz;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        m += k * (z - h * m);
        p = (Matrix4::identity() - k * h) * p;
        kf.push((m, p));
    }
    // bootstrap particle filters on the same measurements; the spread of
    // independent replicates gives the Monte Carlo standard error
    const REPLICATES: usize = 30;
    let runs: Vec<Vec<Vector4<f64>>> = (0..REPLICATES)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + r as u64);
            let mut ps = ParticleSet::from_gaussian(&init, n, &mut rng);
            ps.modes.iter_mut().for_each(|m| *m = mode);
            zs.iter()
                .enumerate()
                .map(|(k, z)| {
                    let propagate = |x: &mut Vector4<f64>, _m: &mut usize, rng: &mut ChaCha8Rng| {
                        let w = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
                        *x = f * *x + g * (qc * w);
                    };
                    let loglik = |x: &Vector4<f64>, _m: usize| Some(-0.5 * ((Vector2::new(x[0], x[1]) - z) / sigma_z).norm_squared());
                    pf_step_with(&mut ps, propagate, loglik, 0.5, k + 1, &mut rng).estimate.mean
                })
                .collect()
        })
        .collect();
    let mut worst = 0.0f64;
    let mut worst_bias = 0.0f64;
    for k in 0..scans {
        for i in 0..4 {
            let xs: Vec<f64> = runs.iter().map(|r| r[k][i]).collect();
            let avg = xs.iter().sum::<f64>() / REPLICATES as f64;
            let sd = (xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (REPLICATES - 1) as f64).sqrt();
            worst = worst.max((xs[0] - kf[k].0[i]).abs() / sd);
            worst_bias = worst_bias.max((avg - kf[k].0[i]).abs() / (sd / (REPLICATES as f64).sqrt()));
        }
    }
    outcome(
        worst <= 3.0,
        format!(
            "N = {n}, {scans} scans, worst |PF − KF| = {worst:.2} Monte Carlo standard errors ({REPLICATES} replicates; replicate average within {worst_bias:.2} of its own standard error)"
        ),
    )
}

// 8-10 shared

fn arc_class(name: &str) -> bool {
    pattern_class(name) == Some(PatternClass::Arc)
}

fn rect_class(name: &str) -> bool {
    pattern_class(name) == Some(PatternClass::MRectangle)
}

fn scenario(grammar: &str, seed: u64) -> ScenarioConfig<f64> {
    ScenarioConfig { grammar: grammar.into(), seed, ..Default::default() }
}

fn track(detections: &[syntrack::Detection64], feedback: bool) -> Vec<TrackHypothesis<f64>> {
    let cfg = ClassifierConfig::<f64> { feedback, ..Default::default() };
    Classifier::new(&builtin_patterns(), cfg).unwrap().run(detections).unwrap()
}

/// The hypothesis that absorbed the most detections.
fn main_hypothesis(hs: &[TrackHypothesis<f64>]) -> &TrackHypothesis<f64> {
    hs.iter().max_by_key(|h| (h.detections.len(), std::cmp::Reverse(h.id))).expect("at least one hypothesis")
}

fn rectangle_pattern(seed: u64) -> &'static str {
    if seed % 2 == 0 {
        "R_cl"
    } else {
        "R_cc"
    }
}

// 8

fn classification() -> Outcome {
    let pats = builtin_patterns();
    const BINS: usize = 7;
    let mut arc_ok = 0;
    let mut arc_exact = 0;
    let mut curve = [0.0; BINS];
    for seed in 0..RUNS {
        let sc = simulate(&pats["A_ur"], &scenario("A_ur", seed)).unwrap();
        let hs = track(&sc.detections, true);
        let h = main_hypothesis(&hs);
        let label = classify_map(&h.trace);
        arc_ok += arc_class(label.name()) as usize;
        arc_exact += (label.name() == "A_ur") as usize;
        let idx: Vec<usize> = h.trace.patterns.iter().enumerate().filter(|(_, p)| arc_class(p)).map(|(i, _)| i).collect();
        let post: Vec<f64> = h.trace.rows.iter().map(|r| idx.iter().map(|&i| r.posterior[i]).sum()).collect();
        let n = post.len();
        for (b, c) in curve.iter_mut().enumerate() {
            let pos = 2.0 / 3.0 + b as f64 / (BINS - 1) as f64 / 3.0;
            *c += post[((pos * (n - 1) as f64).round() as usize).min(n - 1)] / RUNS as f64;
        }
    }
    let increasing = curve.windows(2).all(|w| w[1] > w[0]);
    let mut rect_ok = 0;
    let mut rect_exact = 0;
    for seed in 0..RUNS {
        let name = rectangle_pattern(seed);
        let sc = simulate(&pats[name], &scenario(name, seed)).unwrap();
        let hs = track(&sc.detections, true);
        let label = classify_map(&main_hypothesis(&hs).trace);
        rect_ok += rect_class(label.name()) as usize;
        rect_exact += (label.name() == name) as usize;
    }
    let curve_s: Vec<String> = curve.iter().map(|c| format!("{c:.3}")).collect();
    outcome(
        arc_ok >= 90 && increasing && rect_ok >= 85,
        format!(
            "arc MAP {arc_ok}/100 (exact direction {arc_exact}); arc posterior over last third [{}] increasing: {increasing}; m-rectangle MAP {rect_ok}/100 (exact {rect_exact})",
            curve_s.join(" ")
        ),
    )
}

// 9

fn pincer() -> Outcome {
    let pats = builtin_patterns();
    let mut two = 0;
    let mut ok = 0;
    let mut pure = 0;
    for seed in 0..RUNS {
        let p = scenario_pincer(&pats["A_ur"], &scenario("A_ur", seed), PINCER_OFFSET).unwrap();
        let stream: Vec<_> = p.stream.iter().map(|t| t.detection).collect();
        let hs = track(&stream, true);
        if hs.len() != 2 {
            continue;
        }
        two += 1;
        // each hypothesis answers for the target that supplied most of its detections
        let source = |h: &TrackHypothesis<f64>| {
            let from0 = h.detections.iter().filter(|&&i| p.stream[i].source == 0).count();
            if 2 * from0 >= h.detections.len() {
                0
            } else {
                1
            }
        };
        let s: Vec<usize> = hs.iter().map(source).collect();
        let single_source = hs.iter().all(|h| h.detections.iter().all(|&i| p.stream[i].source == p.stream[h.detections[0]].source));
        pure += single_source as usize;
        let want = |s: usize| if s == 0 { "A_ur" } else { "A_dr" };
        if s[0] != s[1] && hs.iter().zip(&s).all(|(h, &src)| classify_map(&h.trace).name() == want(src)) {
            ok += 1;
        }
    }
    outcome(
        ok >= 85,
        format!("{ok}/100 runs with two hypotheses and mirrored arc labels ({two} with exactly two hypotheses, {pure} with no cross-assigned detection)"),
    )
}

// 10

fn feedback_covariance() -> Outcome {
    let pats = builtin_patterns();
    let (mut all, mut change, mut after) = ([0.0f64; 2], [0.0f64; 2], [0.0f64; 2]);
    let (mut n_all, mut n_change, mut n_after) = ([0usize; 2], [0usize; 2], [0usize; 2]);
    for seed in 0..RUNS {
        let name = rectangle_pattern(seed);
        let cfg = scenario(name, seed);
        let sc = simulate(&pats[name], &cfg).unwrap();
        let spm = cfg.scans_per_mode;
        let is_change = |k: usize| k >= spm && k % spm == 0 && sc.modes[k / spm] != sc.modes[k / spm - 1];
        for (i, fb) in [true, false].into_iter().enumerate() {
            for h in track(&sc.detections, fb) {
                for r in &h.trace.rows {
                    all[i] += r.position_cov_trace;
                    n_all[i] += 1;
                    if is_change(r.scan) {
                        change[i] += r.position_cov_trace;
                        n_change[i] += 1;
                    }
                    if (0..3).any(|d| r.scan >= d && is_change(r.scan - d)) {
                        after[i] += r.position_cov_trace;
                        n_after[i] += 1;
                    }
                }
            }
        }
    }
    let mean = |s: [f64; 2], n: [usize; 2]| [s[0] / n[0] as f64, s[1] / n[1] as f64];
    let m = mean(all, n_all);
    let c = mean(change, n_change);
    let w = mean(after, n_after);
    let mean_ok = m[0] <= m[1];
    let change_ok = c[0] < c[1];
    outcome(
        mean_ok && change_ok,
        format!(
            "mean position-covariance trace with feedback {:.1} vs without {:.1} (≤: {mean_ok}); at mode-change scans {:.1} vs {:.1} (reduction: {change_ok}); over the change scan and the two after it {:.1} vs {:.1}",
            m[0], m[1], c[0], c[1], w[0], w[1]
        ),
    )
}

// 11

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(e.path()).unwrap();
            if name == "manifest.json" {
                // the run time is the one field allowed to differ
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                m["elapsed_ms"] = serde_json::Value::Null;
                bytes = serde_json::to_vec(&m).unwrap();
            }
            (name, bytes)
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let dir = scratch_dir("determinism");
    let p = |s: &str| dir.join(s).to_str().unwrap().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--seed".into(), "7".into(), "--grammar".into(), "A_ur".into(), "--out".into(), p("sim")],
        vec!["simulate".into(), "--seed".into(), "3".into(), "--pincer".into(), "--format".into(), "csv".into(), "--out".into(), p("pincer")],
        vec![
            "classify".into(),
            "--detections".into(),
            p("sim/detections.jsonl"),
            "--feedback".into(),
            "both".into(),
            "--dump-chart".into(),
            "--out".into(),
            p("imm"),
        ],
        vec![
            "classify".into(),
            "--detections".into(),
            p("pincer/detections.csv"),
            "--tracker".into(),
            "pf".into(),
            "--set".into(),
            "particles=500".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            p("pf"),
        ],
        vec!["classify".into(), "--modes".into(), "aacc".into(), "--dump-chart".into(), "--out".into(), p("bypass")],
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for args in &runs {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _) = run_cli(&refs);
        let out = PathBuf::from(args.last().unwrap());
        if code != 0 {
            problems.push(format!("{} exited {code}", args[0]));
            continue;
        }
        for rerun in ["replay", "again"] {
            let target = PathBuf::from(format!("{}-{rerun}", out.display()));
            let code = if rerun == "replay" {
                run_cli(&["replay", out.to_str().unwrap(), "--out", target.to_str().unwrap()]).0
            } else {
                let mut a = refs.clone();
                let n = a.len();
                a[n - 1] = target.to_str().unwrap();
                run_cli(&a).0
            };
            if code != 0 {
                problems.push(format!("{rerun} of {} exited {code}", out.display()));
                continue;
            }
            let (x, y) = (files_of(&out), files_of(&target));
            compared += x.len();
            if x != y {
                problems.push(format!("{rerun} of {} differs", out.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    let v1 = run_cli(&["validate", "R_cl"]);
    let v2 = run_cli(&["validate", "R_cl"]);
    if v1 != v2 {
        problems.push("validate output differs".into());
    }
    outcome(
        problems.is_empty(),
        format!("{} commands replayed from manifest and re-run, {compared} files compared; {}", runs.len(), if problems.is_empty() { "all identical".to_string() } else { problems.join("; ") }),
    )
}
