//! Line-oriented grammar files.
//!
//! ```text
//! # comment
//! %start S
//! %terminals a b c
//! %nonterminals S A
//! S -> A @ 1.0
//! A -> a A c @ 0.5
//! A -> b @ 0.5
//! ```
//!
//! Headers are optional. Without `%nonterminals`, every left-hand side is a
//! nonterminal; without `%terminals`, every other right-hand symbol is a
//! terminal. Without `%start`, the first left-hand side is the start symbol.

use thiserror::Error;

use super::{Grammar, Production, Symbol};

#[derive(Debug, Error, PartialEq)]
pub enum ParseGrammarError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("grammar file contains no productions")]
    Empty,
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseGrammarError {
    ParseGrammarError::Syntax { line, msg: msg.into() }
}

pub(super) fn parse(src: &str) -> Result<Grammar, ParseGrammarError> {
    let mut start: Option<String> = None;
    let mut terminals: Option<Vec<String>> = None;
    let mut nonterminals: Option<Vec<String>> = None;
    let mut raw: Vec<(usize, String, Vec<String>, f64)> = Vec::new();

    for (i, full) in src.lines().enumerate() {
        let ln = i + 1;
        let line = full.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('%') {
            let mut toks = rest.split_whitespace();
            let key = toks.next().ok_or_else(|| syntax(ln, "empty header"))?;
            let vals: Vec<String> = toks.map(str::to_string).collect();
            match key {
                "start" => {
                    if vals.len() != 1 {
                        return Err(syntax(ln, "%start takes exactly one symbol"));
                    }
                    start = Some(vals[0].clone());
                }
                "terminals" => terminals.get_or_insert_with(Vec::new).extend(vals),
                "nonterminals" => nonterminals.get_or_insert_with(Vec::new).extend(vals),
                other => return Err(syntax(ln, format!("unknown header `%{other}`"))),
            }
            continue;
        }
        let (lhs, rest) = line.split_once("->").ok_or_else(|| syntax(ln, "expected `LHS -> rhs @ prob`"))?;
        let lhs = lhs.trim();
        if lhs.is_empty() || lhs.contains(char::is_whitespace) {
            return Err(syntax(ln, "left-hand side must be a single symbol"));
        }
        let (rhs, prob) = rest.rsplit_once('@').ok_or_else(|| syntax(ln, "missing `@ prob`"))?;
        let prob: f64 = prob.trim().parse().map_err(|_| syntax(ln, format!("bad probability `{}`", prob.trim())))?;
        let rhs: Vec<String> = rhs.split_whitespace().map(str::to_string).collect();
        raw.push((ln, lhs.to_string(), rhs, prob));
    }

    if raw.is_empty() {
        return Err(ParseGrammarError::Empty);
    }

    let mut nts = nonterminals.unwrap_or_default();
    for (_, lhs, _, _) in &raw {
        if !nts.contains(lhs) {
            nts.push(lhs.clone());
        }
    }
    let start = start.unwrap_or_else(|| raw[0].1.clone());
    if !nts.contains(&start) {
        nts.insert(0, start.clone());
    }
    let explicit_terms = terminals.is_some();
    let mut terms = terminals.unwrap_or_default();
    let mut productions = Vec::with_capacity(raw.len());
    for (_, lhs, rhs, prob) in raw {
        let rhs = rhs
            .into_iter()
            .map(|s| {
                if nts.contains(&s) {
                    Symbol::Nonterminal(s)
                } else {
                    if !explicit_terms && !terms.contains(&s) {
                        terms.push(s.clone());
                    }
                    Symbol::Terminal(s)
                }
            })
            .collect();
        productions.push(Production { lhs, rhs, prob });
    }
    Ok(Grammar::new(terms, nts, productions, start))
}

pub(super) fn to_text(g: &Grammar) -> String {
    let mut out = String::new();
    out.push_str(&format!("%start {}\n", g.start()));
    out.push_str(&format!("%terminals {}\n", g.terminals().join(" ")));
    out.push_str(&format!("%nonterminals {}\n", g.nonterminals().join(" ")));
    for p in g.productions() {
        let rhs: Vec<&str> = p.rhs.iter().map(Symbol::name).collect();
        out.push_str(&format!("{} -> {} @ {}\n", p.lhs, rhs.join(" "), p.prob));
    }
    out
}
