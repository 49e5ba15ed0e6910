//! Stochastic context-free grammars: representation, validation, structural
//! analysis, built-in trajectory grammars and an independent inside oracle.

mod analysis;
mod builtin;
mod oracle;
mod text;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{
    augment_nondetection, is_well_posed, mean_matrix, spectral_radius, MeanMatrix, SpectralRadius, WellPosedness,
};
pub use builtin::{
    builtin_patterns, full_grammar, is_arc_dr_string, is_arc_ur_string, is_line_string, is_rect_cc_string,
    is_rect_cl_string, line_grammar, mode_angle, named_grammar, pattern_class, PatternClass, MODE_TERMINALS, PATTERN_NAMES,
};
pub use oracle::{enumerate_derivations, inside_oracle, Derivation, ORACLE_MAX_LEN};
pub use text::ParseGrammarError;

/// Tolerance on per-lhs probability sums.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Symbol {
    Terminal(String),
    Nonterminal(String),
}

impl Symbol {
    pub fn name(&self) -> &str {
        match self {
            Symbol::Terminal(s) | Symbol::Nonterminal(s) => s,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Symbol::Terminal(_))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

impl Production {
    /// A rule whose right-hand side is a single nonterminal.
    pub fn is_unit(&self) -> bool {
        self.rhs.len() == 1 && !self.rhs[0].is_terminal()
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.lhs)?;
        for s in &self.rhs {
            write!(f, " {s}")?;
        }
        write!(f, " @ {}", self.prob)
    }
}

/// The four-tuple (nonterminals, terminals, productions, start).
///
/// Declaration order of symbols and rules is preserved; it fixes matrix
/// indexing and tie-breaking everywhere downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    terminals: Vec<String>,
    nonterminals: Vec<String>,
    productions: Vec<Production>,
    start: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    StartNotDeclared { start: String },
    SymbolOverlap { symbol: String },
    UndeclaredLhs { lhs: String },
    EmptyRule { lhs: String, rule: usize },
    UndeclaredSymbol { lhs: String, symbol: String },
    BadProbability { lhs: String, rule: usize, prob: f64 },
    ProbabilitySum { lhs: String, sum: f64 },
    Unreachable { nonterminal: String },
    Unproductive { nonterminal: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StartNotDeclared { start } => write!(f, "start symbol `{start}` is not a declared nonterminal"),
            Violation::SymbolOverlap { symbol } => {
                write!(f, "`{symbol}` is declared both terminal and nonterminal")
            }
            Violation::UndeclaredLhs { lhs } => write!(f, "left-hand side `{lhs}` is not a declared nonterminal"),
            Violation::EmptyRule { lhs, rule } => write!(f, "rule #{rule} of `{lhs}` has an empty right-hand side"),
            Violation::UndeclaredSymbol { lhs, symbol } => {
                write!(f, "rule of `{lhs}` uses undeclared symbol `{symbol}`")
            }
            Violation::BadProbability { lhs, rule, prob } => {
                write!(f, "rule #{rule} of `{lhs}` has probability {prob} outside (0, 1]")
            }
            Violation::ProbabilitySum { lhs, sum } => {
                write!(f, "probabilities of `{lhs}` sum to {sum}, expected 1")
            }
            Violation::Unreachable { nonterminal } => write!(f, "`{nonterminal}` is unreachable from the start symbol"),
            Violation::Unproductive { nonterminal } => {
                write!(f, "`{nonterminal}` derives no terminal string")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("invalid grammar: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("symbol `{0}` already exists in the grammar")]
    SymbolCollision(String),
    #[error("non-detection probability {0} must lie in [0, 1)")]
    BadNondetectionProb(f64),
    #[error("unknown terminal `{0}`")]
    UnknownTerminal(String),
    #[error("string of length {len} exceeds the oracle limit of {max}")]
    StringTooLong { len: usize, max: usize },
    #[error("unknown grammar `{0}`")]
    UnknownGrammar(String),
    #[error(transparent)]
    Parse(#[from] ParseGrammarError),
    #[error("grammar JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Grammar {
    /// Assembles a grammar without validating it; see [`validate`].
    pub fn new(
        terminals: Vec<String>,
        nonterminals: Vec<String>,
        productions: Vec<Production>,
        start: impl Into<String>,
    ) -> Self {
        Grammar { terminals, nonterminals, productions, start: start.into() }
    }

    /// Convenience constructor: symbols are classified by whether they appear
    /// as a left-hand side. Every rule is written `lhs -> rhs tokens`.
    pub fn from_rules(start: &str, rules: &[(&str, &str, f64)]) -> Self {
        let mut b = GrammarBuilder::new(start);
        for &(lhs, rhs, p) in rules {
            b = b.rule(lhs, rhs, p);
        }
        b.build()
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn has_terminal(&self, t: &str) -> bool {
        self.terminals.iter().any(|x| x == t)
    }

    pub fn has_nonterminal(&self, n: &str) -> bool {
        self.nonterminals.iter().any(|x| x == n)
    }

    pub fn productions_of<'a>(&'a self, lhs: &'a str) -> impl Iterator<Item = (usize, &'a Production)> + 'a {
        self.productions.iter().enumerate().filter(move |(_, p)| p.lhs == lhs)
    }

    pub fn to_text(&self) -> String {
        text::to_text(self)
    }

    pub fn from_text(src: &str) -> Result<Self, ParseGrammarError> {
        text::parse(src)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }

    pub fn from_json(src: &str) -> Result<Self, GrammarError> {
        Ok(serde_json::from_str(src)?)
    }

    /// Same grammar with a different start symbol (which must already be declared).
    pub fn with_start(&self, start: &str) -> Self {
        let mut g = self.clone();
        g.start = start.to_string();
        g
    }

    /// Restriction to the nonterminals reachable from the start symbol. Terminal
    /// declarations are kept intact.
    pub fn reachable_subgrammar(&self) -> Self {
        let reach = reachable(self);
        Grammar {
            terminals: self.terminals.clone(),
            nonterminals: self.nonterminals.iter().filter(|n| reach.contains(n.as_str())).cloned().collect(),
            productions: self.productions.iter().filter(|p| reach.contains(p.lhs.as_str())).cloned().collect(),
            start: self.start.clone(),
        }
    }

    /// Fails with every violation when the grammar is unusable.
    pub fn ensure_valid(&self) -> Result<(), GrammarError> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(GrammarError::Invalid(v))
        }
    }
}

/// Incremental grammar construction from `lhs -> rhs` strings.
#[derive(Clone, Debug)]
pub struct GrammarBuilder {
    start: String,
    terminals: Option<Vec<String>>,
    nonterminals: Vec<String>,
    rules: Vec<(String, Vec<String>, f64)>,
}

impl GrammarBuilder {
    pub fn new(start: &str) -> Self {
        GrammarBuilder { start: start.to_string(), terminals: None, nonterminals: Vec::new(), rules: Vec::new() }
    }

    /// Declares the terminal alphabet explicitly (otherwise inferred).
    pub fn terminals<I, S>(mut self, ts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.terminals = Some(ts.into_iter().map(Into::into).collect());
        self
    }

    pub fn nonterminal(mut self, n: &str) -> Self {
        if !self.nonterminals.iter().any(|x| x == n) {
            self.nonterminals.push(n.to_string());
        }
        self
    }

    pub fn rule(mut self, lhs: &str, rhs: &str, prob: f64) -> Self {
        let toks = rhs.split_whitespace().map(str::to_string).collect();
        self.rules.push((lhs.to_string(), toks, prob));
        self
    }

    pub fn build(self) -> Grammar {
        let mut nonterminals = Vec::new();
        let push_nt = |n: &str, v: &mut Vec<String>| {
            if !v.iter().any(|x| x == n) {
                v.push(n.to_string());
            }
        };
        push_nt(&self.start, &mut nonterminals);
        for n in &self.nonterminals {
            push_nt(n, &mut nonterminals);
        }
        for (lhs, _, _) in &self.rules {
            push_nt(lhs, &mut nonterminals);
        }
        let explicit = self.terminals.is_some();
        let mut terminals = self.terminals.unwrap_or_default();
        let mut productions = Vec::with_capacity(self.rules.len());
        for (lhs, toks, prob) in self.rules {
            let rhs = toks
                .into_iter()
                .map(|t| {
                    if nonterminals.contains(&t) {
                        Symbol::Nonterminal(t)
                    } else {
                        if !explicit && !terminals.contains(&t) {
                            terminals.push(t.clone());
                        }
                        Symbol::Terminal(t)
                    }
                })
                .collect();
            productions.push(Production { lhs, rhs, prob });
        }
        Grammar { terminals, nonterminals, productions, start: self.start }
    }
}

/// Every invariant violation of `g`; empty means usable by all other operations.
pub fn validate(g: &Grammar) -> Vec<Violation> {
    let mut out = Vec::new();
    let terms: HashSet<&str> = g.terminals.iter().map(String::as_str).collect();
    let nts: HashSet<&str> = g.nonterminals.iter().map(String::as_str).collect();

    if !nts.contains(g.start.as_str()) {
        out.push(Violation::StartNotDeclared { start: g.start.clone() });
    }
    for t in &g.terminals {
        if nts.contains(t.as_str()) {
            out.push(Violation::SymbolOverlap { symbol: t.clone() });
        }
    }

    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    let mut reported_lhs = HashSet::new();
    for (i, p) in g.productions.iter().enumerate() {
        if !nts.contains(p.lhs.as_str()) && reported_lhs.insert(p.lhs.as_str()) {
            out.push(Violation::UndeclaredLhs { lhs: p.lhs.clone() });
        }
        if p.rhs.is_empty() {
            out.push(Violation::EmptyRule { lhs: p.lhs.clone(), rule: i });
        }
        for s in &p.rhs {
            let ok = match s {
                Symbol::Terminal(t) => terms.contains(t.as_str()),
                Symbol::Nonterminal(n) => nts.contains(n.as_str()),
            };
            if !ok {
                out.push(Violation::UndeclaredSymbol { lhs: p.lhs.clone(), symbol: s.name().to_string() });
            }
        }
        if !(p.prob > 0.0 && p.prob <= 1.0) {
            out.push(Violation::BadProbability { lhs: p.lhs.clone(), rule: i, prob: p.prob });
        }
        *sums.entry(p.lhs.as_str()).or_default() += p.prob;
    }
    for n in &g.nonterminals {
        if let Some(&sum) = sums.get(n.as_str()) {
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                out.push(Violation::ProbabilitySum { lhs: n.clone(), sum });
            }
        }
    }

    let reach = reachable(g);
    let prod = productive(g);
    for n in &g.nonterminals {
        if !reach.contains(n.as_str()) {
            out.push(Violation::Unreachable { nonterminal: n.clone() });
        }
        if !prod.contains(n.as_str()) {
            out.push(Violation::Unproductive { nonterminal: n.clone() });
        }
    }
    out
}

fn reachable(g: &Grammar) -> HashSet<&str> {
    let mut seen = HashSet::new();
    let mut stack = vec![g.start.as_str()];
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            continue;
        }
        for p in g.productions.iter().filter(|p| p.lhs == n) {
            for s in &p.rhs {
                if let Symbol::Nonterminal(m) = s {
                    if !seen.contains(m.as_str()) {
                        stack.push(m);
                    }
                }
            }
        }
    }
    seen
}

fn productive(g: &Grammar) -> HashSet<&str> {
    let mut prod: HashSet<&str> = HashSet::new();
    loop {
        let before = prod.len();
        for p in &g.productions {
            if prod.contains(p.lhs.as_str()) || p.rhs.is_empty() {
                continue;
            }
            let all = p.rhs.iter().all(|s| match s {
                Symbol::Terminal(_) => true,
                Symbol::Nonterminal(n) => prod.contains(n.as_str()),
            });
            if all {
                prod.insert(p.lhs.as_str());
            }
        }
        if prod.len() == before {
            return prod;
        }
    }
}

/// Integer-indexed view of a valid grammar used by the numeric engines.
#[derive(Clone, Debug)]
pub struct IndexedGrammar {
    pub terminals: Vec<String>,
    pub nonterminals: Vec<String>,
    pub rules: Vec<IndexedRule>,
    pub start: usize,
    pub rules_by_lhs: Vec<Vec<usize>>,
    term_ix: HashMap<String, usize>,
    nt_ix: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    T(usize),
    N(usize),
}

#[derive(Clone, Debug)]
pub struct IndexedRule {
    pub lhs: usize,
    pub rhs: Vec<Sym>,
    pub prob: f64,
}

impl IndexedRule {
    pub fn is_unit(&self) -> bool {
        matches!(self.rhs.as_slice(), [Sym::N(_)])
    }
}

impl IndexedGrammar {
    /// Indexes a grammar, rejecting it when [`validate`] reports anything.
    pub fn new(g: &Grammar) -> Result<Self, GrammarError> {
        g.ensure_valid()?;
        let term_ix: HashMap<String, usize> = g.terminals.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let nt_ix: HashMap<String, usize> = g.nonterminals.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut rules_by_lhs = vec![Vec::new(); g.nonterminals.len()];
        let rules = g
            .productions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let lhs = nt_ix[&p.lhs];
                rules_by_lhs[lhs].push(i);
                IndexedRule {
                    lhs,
                    rhs: p
                        .rhs
                        .iter()
                        .map(|s| match s {
                            Symbol::Terminal(t) => Sym::T(term_ix[t]),
                            Symbol::Nonterminal(n) => Sym::N(nt_ix[n]),
                        })
                        .collect(),
                    prob: p.prob,
                }
            })
            .collect();
        Ok(IndexedGrammar {
            terminals: g.terminals.clone(),
            nonterminals: g.nonterminals.clone(),
            rules,
            start: nt_ix[&g.start],
            rules_by_lhs,
            term_ix,
            nt_ix,
        })
    }

    pub fn terminal_index(&self, t: &str) -> Option<usize> {
        self.term_ix.get(t).copied()
    }

    pub fn nonterminal_index(&self, n: &str) -> Option<usize> {
        self.nt_ix.get(n).copied()
    }

    pub fn sym_name(&self, s: Sym) -> &str {
        match s {
            Sym::T(i) => &self.terminals[i],
            Sym::N(i) => &self.nonterminals[i],
        }
    }

    /// Maps a terminal string to indices.
    pub fn encode(&self, s: &[&str]) -> Result<Vec<usize>, GrammarError> {
        s.iter()
            .map(|t| self.terminal_index(t).ok_or_else(|| GrammarError::UnknownTerminal(t.to_string())))
            .collect()
    }
}

/// Splits a terminal string: whitespace-separated tokens, or single characters
/// when the string contains no whitespace.
pub fn tokenize(s: &str) -> Vec<&str> {
    if s.contains(char::is_whitespace) {
        s.split_whitespace().collect()
    } else {
        s.char_indices().map(|(i, c)| &s[i..i + c.len_utf8()]).collect()
    }
}
