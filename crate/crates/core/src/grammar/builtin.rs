//! Built-in trajectory grammars over the eight compass-direction modes.
//!
//! Rule skeletons:
//!
//! ```text
//! S    -> L_a | ... | L_h | A_dr | A_ur | R_cl | R_cc
//! L_u  -> u L_u | u                      (u in a..h)
//! A_ur -> a A_ur c | b A_ur | A_ur b | a c | b
//! A_dr -> c A_dr a | b A_dr | A_dr b | c a | b
//! R_cl -> T_cl L_h        T_cl -> b T_cl f | L_d
//! R_cc -> T_cc L_d        T_cc -> b T_cc f | L_h
//! ```
//!
//! The second arc alternative is often written `b A_ul`; no `A_ul` exists
//! anywhere, so it is read as the recursive `b A_dr`.
//!
//! Default probabilities are uniform per left-hand side. With those values
//! every grammar is already subcritical (lines 0.5, arcs 0.6, turns 0.5), so
//! no recursive rule needed capping.

use std::f64::consts::FRAC_PI_4;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Grammar, GrammarBuilder, GrammarError};

/// Terminals in angle order: `a` is π/4, `h` is 2π.
pub const MODE_TERMINALS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

/// Pattern nonterminals, in the order they appear in traces.
pub const PATTERN_NAMES: [&str; 12] =
    ["L_a", "L_b", "L_c", "L_d", "L_e", "L_f", "L_g", "L_h", "A_ur", "A_dr", "R_cl", "R_cc"];

const LINE_REC: f64 = 0.5;
const ARC_RULE: f64 = 0.2;
const TURN_REC: f64 = 0.5;

/// Heading angle of a mode terminal, `(index + 1) * π/4`.
pub fn mode_angle(t: &str) -> Option<f64> {
    MODE_TERMINALS.iter().position(|&m| m == t).map(|i| (i as f64 + 1.0) * FRAC_PI_4)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternClass {
    Line,
    Arc,
    MRectangle,
}

impl PatternClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::Line => "line",
            PatternClass::Arc => "arc",
            PatternClass::MRectangle => "m-rectangle",
        }
    }
}

pub fn pattern_class(name: &str) -> Option<PatternClass> {
    match name {
        "A_ur" | "A_dr" => Some(PatternClass::Arc),
        "R_cl" | "R_cc" => Some(PatternClass::MRectangle),
        n if n.len() == 3 && n.starts_with("L_") && MODE_TERMINALS.contains(&&n[2..]) => Some(PatternClass::Line),
        _ => None,
    }
}

fn line_rules(b: GrammarBuilder, u: &str) -> GrammarBuilder {
    let l = format!("L_{u}");
    b.rule(&l, &format!("{u} {l}"), LINE_REC).rule(&l, u, 1.0 - LINE_REC)
}

fn pattern_rules(b: GrammarBuilder, name: &str) -> GrammarBuilder {
    match name {
        "A_ur" => b
            .rule("A_ur", "a A_ur c", ARC_RULE)
            .rule("A_ur", "b A_ur", ARC_RULE)
            .rule("A_ur", "A_ur b", ARC_RULE)
            .rule("A_ur", "a c", ARC_RULE)
            .rule("A_ur", "b", ARC_RULE),
        "A_dr" => b
            .rule("A_dr", "c A_dr a", ARC_RULE)
            .rule("A_dr", "b A_dr", ARC_RULE)
            .rule("A_dr", "A_dr b", ARC_RULE)
            .rule("A_dr", "c a", ARC_RULE)
            .rule("A_dr", "b", ARC_RULE),
        "R_cl" => {
            let b = b
                .rule("R_cl", "T_cl L_h", 1.0)
                .rule("T_cl", "b T_cl f", TURN_REC)
                .rule("T_cl", "L_d", 1.0 - TURN_REC);
            line_rules(line_rules(b, "d"), "h")
        }
        "R_cc" => {
            let b = b
                .rule("R_cc", "T_cc L_d", 1.0)
                .rule("T_cc", "b T_cc f", TURN_REC)
                .rule("T_cc", "L_h", 1.0 - TURN_REC);
            line_rules(line_rules(b, "h"), "d")
        }
        line => line_rules(b, &line[2..]),
    }
}

fn declared(start: &str) -> GrammarBuilder {
    GrammarBuilder::new(start).terminals(MODE_TERMINALS)
}

/// One grammar per pattern, each wrapped as `S -> pattern`.
pub fn builtin_patterns() -> IndexMap<String, Grammar> {
    PATTERN_NAMES
        .iter()
        .map(|&name| {
            let b = declared("S").rule("S", name, 1.0);
            (name.to_string(), pattern_rules(b, name).build())
        })
        .collect()
}

/// Eight-way line grammar `S -> L_a | ... | L_h`, uniform over directions.
pub fn line_grammar() -> Grammar {
    let mut b = declared("S");
    for u in MODE_TERMINALS {
        b = b.rule("S", &format!("L_{u}"), 1.0 / 8.0);
    }
    for u in MODE_TERMINALS {
        b = line_rules(b, u);
    }
    b.build()
}

/// All twelve patterns under one start symbol, uniform over patterns.
pub fn full_grammar() -> Grammar {
    let mut b = declared("S");
    for name in PATTERN_NAMES {
        b = b.rule("S", name, 1.0 / PATTERN_NAMES.len() as f64);
    }
    for name in PATTERN_NAMES.iter().filter(|n| !n.starts_with("L_")) {
        b = pattern_rules(b, name);
    }
    for u in MODE_TERMINALS {
        b = line_rules(b, u);
    }
    let g = b.build();
    // line rules for d and h were emitted twice via the rectangles
    dedup_rules(g)
}

fn dedup_rules(g: Grammar) -> Grammar {
    let mut seen = Vec::new();
    let mut prods = Vec::new();
    for p in g.productions() {
        let key = (p.lhs.clone(), p.rhs.clone());
        if !seen.contains(&key) {
            seen.push(key);
            prods.push(p.clone());
        }
    }
    Grammar::new(g.terminals().to_vec(), g.nonterminals().to_vec(), prods, g.start())
}

/// Resolves a built-in name: a pattern, `line`, or `full`.
pub fn named_grammar(name: &str) -> Result<Grammar, GrammarError> {
    match name {
        "line" | "lines" => Ok(line_grammar()),
        "full" => Ok(full_grammar()),
        other => builtin_patterns().shift_remove(other).ok_or_else(|| GrammarError::UnknownGrammar(other.to_string())),
    }
}

pub fn is_line_string(s: &[&str]) -> bool {
    !s.is_empty() && s.iter().all(|t| *t == s[0])
}

fn is_arc(s: &[&str], open: &str, close: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    let mut lo = 0;
    let mut hi = s.len();
    while lo < hi && s[lo] == "b" {
        lo += 1;
    }
    while hi > lo && s[hi - 1] == "b" {
        hi -= 1;
    }
    if lo == hi {
        return true;
    }
    if hi - lo < 2 || s[lo] != open || s[hi - 1] != close {
        return false;
    }
    let inner = &s[lo + 1..hi - 1];
    inner.is_empty() || is_arc(inner, open, close)
}

/// Membership in the up-right arc language.
pub fn is_arc_ur_string(s: &[&str]) -> bool {
    is_arc(s, "a", "c")
}

/// Membership in the down-right arc language.
pub fn is_arc_dr_string(s: &[&str]) -> bool {
    is_arc(s, "c", "a")
}

fn run(s: &[&str], t: &str) -> usize {
    s.iter().take_while(|x| **x == t).count()
}

fn is_rect(s: &[&str], first_side: &str, last_side: &str) -> bool {
    // b^n first^+ f^n last^+
    let n = run(s, "b");
    let rest = &s[n..];
    let k = run(rest, first_side);
    if k == 0 {
        return false;
    }
    let rest = &rest[k..];
    let m = run(rest, "f");
    if m != n {
        return false;
    }
    let rest = &rest[m..];
    let j = run(rest, last_side);
    j > 0 && j == rest.len()
}

/// Membership in the clockwise m-rectangle language `b^n d^+ f^n h^+`.
pub fn is_rect_cl_string(s: &[&str]) -> bool {
    is_rect(s, "d", "h")
}

/// Membership in the counter-clockwise m-rectangle language `b^n h^+ f^n d^+`.
pub fn is_rect_cc_string(s: &[&str]) -> bool {
    is_rect(s, "h", "d")
}
