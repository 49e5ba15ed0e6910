//! Most probable parse: the same prediction/scanning/completion recursions
//! with max in place of sum, plus backpointers.
//!
//! The sum-product chart relies on closures to fold left-corner and unit
//! chains; under max-product those chains are explored explicitly, and a
//! state is only updated on strict improvement, so cycles terminate.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use super::{Chart, ParseError};
use crate::grammar::Sym;
use crate::num::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParseTree {
    Node { lhs: String, rule: usize, start: usize, end: usize, children: Vec<ParseTree> },
    Leaf { terminal: String, position: usize },
}

impl ParseTree {
    /// Bracketed form, e.g. `A_ur(a A_ur(a c) c)`.
    pub fn bracketed(&self) -> String {
        match self {
            ParseTree::Leaf { terminal, .. } => terminal.clone(),
            ParseTree::Node { lhs, children, .. } => {
                let inner: Vec<String> = children.iter().map(ParseTree::bracketed).collect();
                format!("{lhs}({})", inner.join(" "))
            }
        }
    }

    /// One node per line, children indented by two spaces.
    pub fn to_indented(&self) -> String {
        let mut out = String::new();
        self.write_indented(0, &mut out);
        out
    }

    fn write_indented(&self, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match self {
            ParseTree::Leaf { terminal, position } => out.push_str(&format!("{pad}{terminal} @{position}\n")),
            ParseTree::Node { lhs, start, end, children, .. } => {
                out.push_str(&format!("{pad}{lhs} [{start}, {end}]\n"));
                for c in children {
                    c.write_indented(depth + 1, out);
                }
            }
        }
    }

    /// Rule indices in leftmost-derivation order.
    pub fn rules(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_rules(&mut out);
        out
    }

    fn collect_rules(&self, out: &mut Vec<usize>) {
        if let ParseTree::Node { rule, children, .. } = self {
            out.push(*rule);
            for c in children {
                c.collect_rules(out);
            }
        }
    }

    /// Terminal yield.
    pub fn leaves(&self) -> Vec<String> {
        match self {
            ParseTree::Leaf { terminal, .. } => vec![terminal.clone()],
            ParseTree::Node { children, .. } => children.iter().flat_map(ParseTree::leaves).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViterbiParse {
    pub tree: ParseTree,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug)]
enum Back {
    Start,
    Scan { prev: usize },
    Complete { pending: usize, finished: usize },
}

#[derive(Clone, Copy, Debug)]
struct VState<T> {
    start: usize,
    rule: usize,
    dot: usize,
    score: T,
    back: Back,
}

#[derive(Default)]
struct VCol<T> {
    states: Vec<VState<T>>,
    index: HashMap<(usize, usize, usize), usize>,
}

impl<T: Real> VCol<T> {
    fn new() -> Self {
        VCol { states: Vec::new(), index: HashMap::new() }
    }
}

/// Most probable parse of all inputs, from the initial dummy state.
pub fn viterbi_parse<T: Real>(chart: &Chart<T>) -> Result<ViterbiParse, ParseError> {
    viterbi_parse_from(chart, 0)
}

/// Most probable parse of the inputs after column `from` (a dummy column).
pub fn viterbi_parse_from<T: Real>(chart: &Chart<T>, from: usize) -> Result<ViterbiParse, ParseError> {
    if !chart.dummies().contains(&from) {
        return Err(ParseError::NoParse);
    }
    let g = chart.grammar();
    let dummy = chart.dummy_rule();
    let rules = &g.rules;
    let n = chart.current();
    let mut cols: Vec<VCol<T>> = (0..=n).map(|_| VCol::new()).collect();

    for k in from..=n {
        if k == from {
            let col = &mut cols[k];
            col.states.push(VState { start: k, rule: dummy, dot: 0, score: T::zero(), back: Back::Start });
            col.index.insert((k, dummy, 0), 0);
        } else {
            let input = &chart.columns[k].input;
            let (before, after) = cols.split_at_mut(k);
            let prev = &before[k - 1];
            let col = &mut after[0];
            for (pi, s) in prev.states.iter().enumerate() {
                if let Some(Sym::T(a)) = rules[s.rule].1.get(s.dot) {
                    let p = input[*a];
                    if p.is_finite_value() {
                        let key = (s.start, s.rule, s.dot + 1);
                        col.index.insert(key, col.states.len());
                        col.states.push(VState {
                            start: s.start,
                            rule: s.rule,
                            dot: s.dot + 1,
                            score: s.score + p,
                            back: Back::Scan { prev: pi },
                        });
                    }
                }
            }
            complete(&mut cols, k, rules, dummy);
        }
        if k < n {
            predict(&mut cols[k], k, g.indexed(), rules, &g.log_prob, dummy);
        }
    }

    let root = *cols[n].index.get(&(from, dummy, 1)).ok_or(ParseError::NoParse)?;
    let log_prob = cols[n].states[root].score.to_f64_lossy();
    let ParseTree::Node { mut children, .. } = build(&cols, n, root, chart) else { unreachable!() };
    Ok(ViterbiParse { tree: children.pop().ok_or(ParseError::NoParse)?, log_prob })
}

fn complete<T: Real>(cols: &mut [VCol<T>], k: usize, rules: &[(usize, Vec<Sym>)], dummy: usize) {
    let finished = |s: &VState<T>| s.dot == rules[s.rule].1.len() && s.rule != dummy;
    let mut queue: VecDeque<usize> =
        cols[k].states.iter().enumerate().filter(|(_, s)| finished(s)).map(|(i, _)| i).collect();
    while let Some(fi) = queue.pop_front() {
        let f = cols[k].states[fi];
        let y = rules[f.rule].0;
        let j = f.start;
        let (before, after) = cols.split_at_mut(k);
        let pend = &before[j];
        let col = &mut after[0];
        for (pi, p) in pend.states.iter().enumerate() {
            if rules[p.rule].1.get(p.dot) != Some(&Sym::N(y)) {
                continue;
            }
            let score = p.score + f.score;
            let key = (p.start, p.rule, p.dot + 1);
            let back = Back::Complete { pending: pi, finished: fi };
            let updated = match col.index.get(&key) {
                None => {
                    col.index.insert(key, col.states.len());
                    col.states.push(VState { start: p.start, rule: p.rule, dot: p.dot + 1, score, back });
                    Some(col.states.len() - 1)
                }
                Some(&i) => {
                    let old = col.states[i];
                    let better = score > old.score
                        || (score == old.score
                            && matches!(old.back, Back::Complete { finished: of, .. } if f.rule < col.states[of].rule));
                    if better {
                        col.states[i].score = score;
                        col.states[i].back = back;
                        Some(i)
                    } else {
                        None
                    }
                }
            };
            if let Some(i) = updated {
                if finished(&col.states[i]) && !queue.contains(&i) {
                    queue.push_back(i);
                }
            }
        }
    }
}

fn predict<T: Real>(
    col: &mut VCol<T>,
    k: usize,
    ig: &crate::grammar::IndexedGrammar,
    rules: &[(usize, Vec<Sym>)],
    log_prob: &[T],
    _dummy: usize,
) {
    let mut seen = vec![false; ig.nonterminals.len()];
    let mut queue = VecDeque::new();
    for s in &col.states {
        if let Some(Sym::N(z)) = rules[s.rule].1.get(s.dot) {
            if !seen[*z] {
                seen[*z] = true;
                queue.push_back(*z);
            }
        }
    }
    while let Some(z) = queue.pop_front() {
        for &r in &ig.rules_by_lhs[z] {
            let key = (k, r, 0);
            if !col.index.contains_key(&key) {
                col.index.insert(key, col.states.len());
                col.states.push(VState { start: k, rule: r, dot: 0, score: log_prob[r], back: Back::Start });
            }
            if let Some(Sym::N(y)) = rules[r].1.first() {
                if !seen[*y] {
                    seen[*y] = true;
                    queue.push_back(*y);
                }
            }
        }
    }
}

fn build<T: Real>(cols: &[VCol<T>], k: usize, idx: usize, chart: &Chart<T>) -> ParseTree {
    let g = chart.grammar();
    let top = cols[k].states[idx];
    let mut children = Vec::new();
    let (mut kk, mut i) = (k, idx);
    loop {
        let s = cols[kk].states[i];
        match s.back {
            Back::Start => break,
            Back::Scan { prev } => {
                let sym = g.rules[s.rule].1[s.dot - 1];
                children.push(ParseTree::Leaf { terminal: g.indexed().sym_name(sym).to_string(), position: kk });
                kk -= 1;
                i = prev;
            }
            Back::Complete { pending, finished } => {
                children.push(build(cols, kk, finished, chart));
                kk = cols[kk].states[finished].start;
                i = pending;
            }
        }
    }
    children.reverse();
    ParseTree::Node {
        lhs: g.lhs_name(g.rules[top.rule].0).to_string(),
        rule: top.rule,
        start: top.start,
        end: k,
        children,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CompiledGrammar, ParserConfig, SoftTerminal};
    use super::*;
    use crate::grammar::{builtin_patterns, enumerate_derivations, tokenize, Grammar};
    use crate::kinematics::KinematicState;

    fn chart(g: &Grammar, s: &str) -> Chart<f64> {
        let a = KinematicState::exact(0.0, 0.0, 0.0, 0.0, 0);
        let inputs: Vec<_> = tokenize(s).iter().enumerate().map(|(i, t)| SoftTerminal::hard(t, a.clone(), i + 1)).collect();
        Chart::parse_all(CompiledGrammar::new(g).unwrap(), a, &inputs, ParserConfig::exact())
    }

    #[test]
    fn arc_unique_tree() {
        let g = builtin_patterns()["A_ur"].clone();
        let v = viterbi_parse(&chart(&g, "aacc")).unwrap();
        assert_eq!(v.tree.bracketed(), "S(A_ur(a A_ur(a c) c))");
        assert!((v.log_prob - 0.04f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_b() {
        let g = builtin_patterns()["A_ur"].clone();
        let v = viterbi_parse(&chart(&g, "b")).unwrap();
        assert_eq!(v.tree.bracketed(), "S(A_ur(b))");
    }

    #[test]
    fn ambiguous_bb_is_argmax_of_enumeration() {
        let g = Grammar::from_rules("A", &[("A", "b A", 0.3), ("A", "A b", 0.2), ("A", "b", 0.5)]);
        let v = viterbi_parse(&chart(&g, "bb")).unwrap();
        let all = enumerate_derivations(&g, &["b", "b"], 25).unwrap();
        let best = all.iter().max_by(|a, b| a.prob.partial_cmp(&b.prob).unwrap()).unwrap();
        assert_eq!(v.tree.rules(), best.rules);
        assert!((v.log_prob - best.prob.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_parse() {
        let g = builtin_patterns()["A_ur"].clone();
        assert!(matches!(viterbi_parse(&chart(&g, "ca")), Err(ParseError::NoParse)));
    }
}
