use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use syntrack::classifier::{
    classify_map, classify_modes, Classification, Classifier, ClassifierError, PatternSet, TrackHypothesis, ND_SYMBOL,
};
use syntrack::grammar::{inside_oracle, is_well_posed, mean_matrix, validate as validate_grammar, Grammar, GrammarError};
use syntrack::io::{read_detections_file, track_records, write_detections, write_jsonl, DetectionFormat, IoError, TruthSidecar};
use syntrack::kinematics::KinematicState;
use syntrack::parser::{viterbi_parse, Chart, CompiledGrammar, ParserConfig, SoftTerminal, ViterbiParse};
use syntrack::simulator::{scenario_pincer, simulate as simulate_scenario, SimError};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::settings::{invalid, resolve_grammar, resolve_patterns, Settings, CLASSIFY_KEYS, SCENARIO_KEYS};
use crate::{ClassifyArgs, Common, Feedback, Format, OracleArgs, ReplayArgs, SimulateArgs, Tracker, ValidateArgs};

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_UNCLASSIFIED: u8 = 3;

fn layered(keys: &'static [&'static str], default_grammar: &str, c: &Common) -> Result<Settings> {
    let mut s = Settings::new(keys, default_grammar);
    if let Some(p) = &c.config {
        s.apply_file(p)?;
    }
    s.apply_pairs(&c.set)?;
    s.set_opt("seed", c.seed)?;
    s.set_opt("grammar", c.grammar.as_deref())?;
    Ok(s)
}

/// Collects the files a command writes so the manifest can list them.
struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(contents.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn finish(mut self, mut m: RunManifest, started: Instant) -> Result<()> {
        self.files.sort();
        m.outputs = self.files;
        m.elapsed_ms = started.elapsed().as_millis();
        m.write(&self.dir)
    }
}

fn sim_error(e: SimError) -> anyhow::Error {
    match e {
        SimError::Config { .. } | SimError::Supercritical(_) | SimError::Grammar(_) | SimError::UnknownMode(_) => {
            invalid(e.to_string())
        }
        other => anyhow!(other),
    }
}

fn classifier_error(e: ClassifierError) -> anyhow::Error {
    match e {
        ClassifierError::Grammar(_) | ClassifierError::NoPatterns | ClassifierError::BadTerminals(_) => {
            invalid(e.to_string())
        }
        other => anyhow!(other),
    }
}

pub fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let mut s = layered(SCENARIO_KEYS, "A_ur", &a.common)?;
    s.set_opt("scans_per_mode", a.scans_per_mode)?;
    if a.pincer {
        s.set("scenario", "pincer")?;
    }
    if let Some(f) = a.format {
        s.set("format", if matches!(f, Format::Csv) { "csv" } else { "jsonl" })?;
    }
    run_simulate(&s, &a.out)
}

fn run_simulate(s: &Settings, out: &Path) -> Result<ExitCode> {
    let started = Instant::now();
    let cfg = s.scenario()?;
    cfg.validate().map_err(sim_error)?;
    let (_, g) = resolve_grammar(&cfg.grammar)?;
    let format = match s.str("format") {
        "jsonl" => DetectionFormat::Jsonl,
        "csv" => DetectionFormat::Csv,
        v => return Err(invalid(format!("setting `format`: expected jsonl or csv, got `{v}`"))),
    };
    let (detections, truth) = match s.str("scenario") {
        "single" => {
            let sc = simulate_scenario(&g, &cfg).map_err(sim_error)?;
            let truth = TruthSidecar::from_scenario(&sc, cfg.scans_per_mode);
            (sc.detections, truth)
        }
        "pincer" => {
            let p = scenario_pincer(&g, &cfg, s.get("pincer_offset")?).map_err(sim_error)?;
            let truth = TruthSidecar::from_pincer(&p, cfg.scans_per_mode);
            (p.stream.iter().map(|t| t.detection).collect(), truth)
        }
        v => return Err(invalid(format!("setting `scenario`: expected single or pincer, got `{v}`"))),
    };
    let mut dir = OutDir::new(out)?;
    let name = if format == DetectionFormat::Csv { "detections.csv" } else { "detections.jsonl" };
    let mut w = dir.create(name)?;
    write_detections(&mut w, &detections, format)?;
    w.flush()?;
    let mut truth_json = serde_json::to_string_pretty(&truth)?;
    truth_json.push('\n');
    dir.write("truth.json", &truth_json)?;
    println!("{} detections; labels: {}", detections.len(), truth.labels().join(", "));
    dir.finish(RunManifest::new("simulate", cfg.seed, s.snapshot()), started)?;
    Ok(ExitCode::SUCCESS)
}

pub fn classify(a: ClassifyArgs) -> Result<ExitCode> {
    let mut s = layered(CLASSIFY_KEYS, "builtin", &a.common)?;
    s.set_opt("detections", a.detections.as_ref().map(|p| p.display().to_string()))?;
    s.set_opt("modes", a.modes.as_deref())?;
    s.set_opt(
        "tracker",
        a.tracker.map(|t| match t {
            Tracker::Imm => "imm",
            Tracker::Pf => "pf",
        }),
    )?;
    s.set_opt(
        "feedback",
        a.feedback.map(|f| match f {
            Feedback::On => "on",
            Feedback::Off => "off",
            Feedback::Both => "both",
        }),
    )?;
    s.set_opt("prune", a.prune.as_deref())?;
    s.set_opt("theta1", a.theta1)?;
    s.set_opt("theta2", a.theta2)?;
    if a.dump_chart {
        s.set("dump_chart", "true")?;
    }
    run_classify(&s, &a.out)
}

/// `"b b"` or `"bb"`.
fn tokens(modes: &str) -> Vec<String> {
    if modes.split_whitespace().count() > 1 {
        modes.split_whitespace().map(str::to_string).collect()
    } else {
        modes.trim().chars().map(|c| c.to_string()).collect()
    }
}

#[derive(Serialize)]
struct LabelRecord {
    hypothesis: usize,
    label: String,
    detections: usize,
    first_scan: Option<usize>,
    last_scan: Option<usize>,
}

#[derive(Serialize)]
struct ParseRecord {
    hypothesis: usize,
    pattern: String,
    log_prob: Option<f64>,
    bracketed: Option<String>,
    tree: Option<syntrack::parser::ParseTree>,
}

fn parse_record(hypothesis: usize, pattern: &str, p: Option<&ViterbiParse>) -> ParseRecord {
    ParseRecord {
        hypothesis,
        pattern: pattern.to_string(),
        log_prob: p.map(|p| p.log_prob),
        bracketed: p.map(|p| p.tree.bracketed()),
        tree: p.map(|p| p.tree.clone()),
    }
}

fn write_parses(dir: &mut OutDir, parses: &[ParseRecord]) -> Result<()> {
    let mut txt = String::new();
    for p in parses {
        txt.push_str(&format!("# hypothesis {} pattern {}\n", p.hypothesis, p.pattern));
        match &p.tree {
            Some(t) => {
                txt.push_str(&format!("# log_prob {}\n", p.log_prob.unwrap_or(f64::NEG_INFINITY)));
                txt.push_str(&t.to_indented());
            }
            None => txt.push_str("# no complete parse\n"),
        }
    }
    dir.write("parses.txt", &txt)?;
    let mut json = serde_json::to_string_pretty(parses)?;
    json.push('\n');
    dir.write("parses.json", &json)
}

fn write_json<S: Serialize>(dir: &mut OutDir, name: &str, v: &S) -> Result<()> {
    let mut json = serde_json::to_string_pretty(v)?;
    json.push('\n');
    dir.write(name, &json)
}

fn run_classify(s: &Settings, out: &Path) -> Result<ExitCode> {
    if !s.str("modes").trim().is_empty() {
        return run_bypass(s, out);
    }
    let started = Instant::now();
    let path = s.str("detections");
    if path.is_empty() {
        return Err(invalid("classify needs --detections or --modes"));
    }
    let detections = read_detections_file::<f64>(Path::new(path)).map_err(|e| match e {
        IoError::Io(e) => anyhow!(e).context(format!("reading {path}")),
        other => invalid(format!("{path}: {other}")),
    })?;
    let patterns = resolve_patterns(s.str("grammar"))?;
    let feedback = s.str("feedback");
    let (primary_fb, baseline) = match feedback {
        "on" | "true" => (true, false),
        "off" | "false" => (false, false),
        "both" => (true, true),
        v => return Err(invalid(format!("setting `feedback`: expected on, off or both, got `{v}`"))),
    };
    let run = |fb: bool| -> Result<Vec<TrackHypothesis<f64>>> {
        let c = Classifier::new(&patterns, s.classifier(fb)?).map_err(classifier_error)?;
        c.run(&detections).map_err(classifier_error)
    };
    let hyps = run(primary_fb)?;
    let base = if baseline { Some(run(false)?) } else { None };

    let mut dir = OutDir::new(out)?;
    let mut w = dir.create("trace.csv")?;
    for (i, h) in hyps.iter().enumerate() {
        h.trace.write_csv(&mut w, i == 0)?;
    }
    if hyps.is_empty() {
        writeln!(w, "hypothesis,scan,pattern,log_prob,posterior,map_label,cov_trace")?;
    }
    w.flush()?;

    let mut w = dir.create("tracks.jsonl")?;
    for h in &hyps {
        write_jsonl(&mut w, &track_records(&h.trace))?;
    }
    w.flush()?;

    let mut w = dir.create("covariance.csv")?;
    match &base {
        Some(b) => {
            writeln!(w, "hypothesis,scan,cov_feedback,cov_baseline")?;
            let (mut sf, mut sb, mut n) = (0.0, 0.0, 0usize);
            for h in &hyps {
                let other = b.iter().find(|x| x.id == h.id);
                for r in &h.trace.rows {
                    let m = other.and_then(|o| o.trace.rows.iter().find(|x| x.scan == r.scan));
                    match m {
                        Some(m) => {
                            writeln!(w, "{},{},{},{}", h.id, r.scan, r.position_cov_trace, m.position_cov_trace)?;
                            sf += r.position_cov_trace;
                            sb += m.position_cov_trace;
                            n += 1;
                        }
                        None => writeln!(w, "{},{},{},", h.id, r.scan, r.position_cov_trace)?,
                    }
                }
            }
            if n > 0 {
                println!("mean position covariance trace: feedback {} baseline {}", sf / n as f64, sb / n as f64);
            }
        }
        None => {
            writeln!(w, "hypothesis,scan,cov_trace")?;
            for h in &hyps {
                for r in &h.trace.rows {
                    writeln!(w, "{},{},{}", h.id, r.scan, r.position_cov_trace)?;
                }
            }
        }
    }
    w.flush()?;

    let mut labels = Vec::new();
    let mut parses = Vec::new();
    let mut classified = 0;
    for h in &hyps {
        let c = classify_map(&h.trace);
        if let Classification::Pattern(p) = &c {
            classified += 1;
            let i = h.trace.patterns.iter().position(|x| x == p).expect("label is a pattern");
            let v = h.viterbi(i).ok();
            parses.push(parse_record(h.id, p, v.as_ref()));
            if s.flag("dump_chart")? {
                dir.write(&format!("chart_h{}_{}.jsonl", h.id, p), &h.charts()[i].dump_jsonl())?;
            }
        }
        labels.push(LabelRecord {
            hypothesis: h.id,
            label: c.name().to_string(),
            detections: h.detections.len(),
            first_scan: h.trace.rows.first().map(|r| r.scan),
            last_scan: h.trace.rows.last().map(|r| r.scan),
        });
        println!("hypothesis {}: {} ({} detections)", h.id, c.name(), h.detections.len());
    }
    write_json(&mut dir, "labels.json", &labels)?;
    write_parses(&mut dir, &parses)?;
    let mut m = RunManifest::new("classify", s.get("seed")?, s.snapshot());
    m.inputs.push(path.to_string());
    dir.finish(m, started)?;
    Ok(if classified == 0 { ExitCode::from(EXIT_UNCLASSIFIED) } else { ExitCode::SUCCESS })
}

/// Hard mode string straight into the charts. Grammars are parsed as given;
/// the non-detection variants are added only if the string contains `nd`.
fn run_bypass(s: &Settings, out: &Path) -> Result<ExitCode> {
    let started = Instant::now();
    let toks = tokens(s.str("modes"));
    let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
    let patterns = resolve_patterns(s.str("grammar"))?;
    let nd = if refs.contains(&ND_SYMBOL) { s.get("nd_prob")? } else { 0.0 };
    let set = PatternSet::<f64>::new(&patterns, nd).map_err(classifier_error)?;
    let parser = s.parser()?;
    for t in &refs {
        if *t != ND_SYMBOL && !patterns.values().any(|g| g.has_terminal(t)) {
            return Err(invalid(format!("mode `{t}` is not a terminal of any grammar")));
        }
    }
    let (trace, charts) = classify_modes(&set, &refs, parser).map_err(classifier_error)?;
    let mut dir = OutDir::new(out)?;
    let mut w = dir.create("trace.csv")?;
    trace.write_csv(&mut w, true)?;
    w.flush()?;
    let c = classify_map(&trace);
    let mut parses = Vec::new();
    if let Classification::Pattern(p) = &c {
        let i = set.names.iter().position(|x| x == p).expect("label is a pattern");
        let v = viterbi_parse(&charts[i]).ok();
        parses.push(parse_record(0, p, v.as_ref()));
    }
    if s.flag("dump_chart")? {
        for (name, chart) in set.names.iter().zip(&charts) {
            dir.write(&format!("chart_{name}.jsonl"), &chart.dump_jsonl())?;
        }
    }
    let label = LabelRecord {
        hypothesis: 0,
        label: c.name().to_string(),
        detections: refs.len(),
        first_scan: trace.rows.first().map(|r| r.scan),
        last_scan: trace.rows.last().map(|r| r.scan),
    };
    write_json(&mut dir, "labels.json", &[label])?;
    write_parses(&mut dir, &parses)?;
    println!("{}: {}", toks.join(" "), c.name());
    dir.finish(RunManifest::new("classify", s.get("seed")?, s.snapshot()), started)?;
    Ok(if c == Classification::Unclassified { ExitCode::from(EXIT_UNCLASSIFIED) } else { ExitCode::SUCCESS })
}

#[derive(Serialize)]
struct ValidationReport {
    grammar: String,
    violations: Vec<String>,
    nonterminals: Vec<String>,
    mean_matrix: Vec<Vec<f64>>,
    spectral_radius: Option<f64>,
    subcritical: bool,
}

pub fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let (name, g) = resolve_grammar(&a.grammar)?;
    let violations: Vec<String> = validate_grammar(&g).iter().map(|v| v.to_string()).collect();
    let mut report = ValidationReport {
        grammar: name,
        violations,
        nonterminals: Vec::new(),
        mean_matrix: Vec::new(),
        spectral_radius: None,
        subcritical: false,
    };
    if report.violations.is_empty() {
        let m = mean_matrix(&g).map_err(|e| invalid(e.to_string()))?;
        let wp = is_well_posed(&g).map_err(|e| invalid(e.to_string()))?;
        report.nonterminals = m.labels.clone();
        report.mean_matrix = (0..m.matrix.nrows()).map(|i| m.matrix.row(i).iter().copied().collect()).collect();
        report.spectral_radius = Some(wp.radius);
        report.subcritical = wp.subcritical;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print_report(&report);
    }
    Ok(if report.violations.is_empty() && report.subcritical {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    })
}

fn print_report(r: &ValidationReport) {
    println!("grammar: {}", r.grammar);
    if !r.violations.is_empty() {
        println!("violations:");
        for v in &r.violations {
            println!("  {v}");
        }
        println!("verdict: invalid");
        return;
    }
    println!("violations: none");
    println!("mean matrix (rows produce columns):");
    let w = r.nonterminals.iter().map(String::len).max().unwrap_or(1);
    println!("  {:w$}  {}", "", r.nonterminals.iter().map(|n| format!("{n:>8}")).collect::<Vec<_>>().join(""));
    for (n, row) in r.nonterminals.iter().zip(&r.mean_matrix) {
        println!("  {n:w$}  {}", row.iter().map(|x| format!("{x:>8.4}")).collect::<Vec<_>>().join(""));
    }
    let radius = r.spectral_radius.unwrap_or(f64::NAN);
    println!("spectral radius: {radius}");
    println!("verdict: {}", if r.subcritical { "subcritical" } else { "not subcritical" });
}

pub fn oracle(a: OracleArgs) -> Result<ExitCode> {
    let (_, g) = resolve_grammar(&a.grammar)?;
    let toks = tokens(&a.modes);
    let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
    let want = inside_oracle(&g, &refs).map_err(grammar_invalid)?;
    let got = earley_sentence_probability(&g, &refs)?;
    let rel = if want == 0.0 { got.abs() } else { (got - want).abs() / want };
    println!("earley {got:e}\ninside {want:e}\nrelative difference {rel:e}");
    Ok(if rel <= 1e-9 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUNTIME) })
}

fn grammar_invalid(e: GrammarError) -> anyhow::Error {
    invalid(e.to_string())
}

fn earley_sentence_probability(g: &Grammar, s: &[&str]) -> Result<f64> {
    let cg = CompiledGrammar::<f64>::new(g).map_err(|e| invalid(e.to_string()))?;
    let anchor = KinematicState::exact(0.0, 0.0, 0.0, 0.0, 0);
    for t in s {
        if !g.has_terminal(t) {
            return Ok(0.0);
        }
    }
    let inputs: Vec<_> = s.iter().enumerate().map(|(k, t)| SoftTerminal::hard(t, anchor.clone(), k + 1)).collect();
    let chart = Chart::parse_all(cg, anchor, &inputs, ParserConfig::exact());
    Ok(chart.sentence_probability(s.len()))
}

pub fn replay(a: ReplayArgs) -> Result<ExitCode> {
    let path = if a.manifest.is_dir() { a.manifest.join(MANIFEST_FILE) } else { a.manifest.clone() };
    let m = RunManifest::read(&path)?;
    match m.command.as_str() {
        "simulate" => run_simulate(&Settings::from_snapshot(SCENARIO_KEYS, &m.config)?, &a.out),
        "classify" => run_classify(&Settings::from_snapshot(CLASSIFY_KEYS, &m.config)?, &a.out),
        other => Err(invalid(format!("{}: cannot replay command `{other}`", path.display()))),
    }
}
