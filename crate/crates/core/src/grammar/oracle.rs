//! Reference probabilities computed without the chart parser: a CYK inside
//! pass over a Chomsky-normal-form rewrite, and exhaustive enumeration of
//! leftmost derivations.

use nalgebra::DMatrix;

use super::{Grammar, GrammarError, IndexedGrammar, Sym};

/// Longest string the inside oracle accepts.
pub const ORACLE_MAX_LEN: usize = 20;

/// A leftmost derivation as the sequence of applied rule indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub rules: Vec<usize>,
    pub prob: f64,
}

enum CnfRule {
    Lex { lhs: usize, term: usize, prob: f64 },
    Bin { lhs: usize, left: usize, right: usize, prob: f64 },
}

/// Total probability that the grammar derives `s` from its start symbol.
pub fn inside_oracle(g: &Grammar, s: &[&str]) -> Result<f64, GrammarError> {
    if s.len() > ORACLE_MAX_LEN {
        return Err(GrammarError::StringTooLong { len: s.len(), max: ORACLE_MAX_LEN });
    }
    let ig = IndexedGrammar::new(g)?;
    let word = ig.encode(s)?;
    if word.is_empty() {
        return Ok(0.0);
    }
    let (n_nt, rules) = to_cnf(&ig);
    let n = word.len();
    // chart[i][len-1][A]
    let mut chart = vec![vec![vec![0.0f64; n_nt]; n]; n];
    for (i, &t) in word.iter().enumerate() {
        for r in &rules {
            if let CnfRule::Lex { lhs, term, prob } = *r {
                if term == t {
                    chart[i][0][lhs] += prob;
                }
            }
        }
    }
    for len in 2..=n {
        for i in 0..=n - len {
            for split in 1..len {
                for r in &rules {
                    if let CnfRule::Bin { lhs, left, right, prob } = *r {
                        let l = chart[i][split - 1][left];
                        if l == 0.0 {
                            continue;
                        }
                        let rr = chart[i + split][len - split - 1][right];
                        if rr != 0.0 {
                            chart[i][len - 1][lhs] += prob * l * rr;
                        }
                    }
                }
            }
        }
    }
    Ok(chart[0][n - 1][ig.start])
}

fn unit_closure(ig: &IndexedGrammar) -> DMatrix<f64> {
    let n = ig.nonterminals.len();
    let mut pu = DMatrix::<f64>::zeros(n, n);
    for r in &ig.rules {
        if let [Sym::N(b)] = r.rhs.as_slice() {
            pu[(r.lhs, *b)] += r.prob;
        }
    }
    (DMatrix::identity(n, n) - pu).try_inverse().expect("unit-rule cycle with probability one")
}

/// Unit-free, binarized rewrite. Fresh nonterminals are numbered after the
/// originals; every auxiliary rule has probability 1.
fn to_cnf(ig: &IndexedGrammar) -> (usize, Vec<CnfRule>) {
    let n = ig.nonterminals.len();
    let ru = unit_closure(ig);
    let mut next = n;
    let mut preterm = vec![None; ig.terminals.len()];
    let mut out = Vec::new();

    let mut sym_nt = |s: Sym, out: &mut Vec<CnfRule>, next: &mut usize| -> usize {
        match s {
            Sym::N(b) => b,
            Sym::T(t) => *preterm[t].get_or_insert_with(|| {
                let id = *next;
                *next += 1;
                out.push(CnfRule::Lex { lhs: id, term: t, prob: 1.0 });
                id
            }),
        }
    };

    for a in 0..n {
        for r in ig.rules.iter().filter(|r| !r.is_unit()) {
            let w = ru[(a, r.lhs)] * r.prob;
            if w == 0.0 {
                continue;
            }
            match r.rhs.as_slice() {
                [Sym::T(t)] => out.push(CnfRule::Lex { lhs: a, term: *t, prob: w }),
                [Sym::N(_)] => unreachable!(),
                rhs => {
                    let ids: Vec<usize> = rhs.iter().map(|&s| sym_nt(s, &mut out, &mut next)).collect();
                    let mut lhs = a;
                    let mut prob = w;
                    for k in 0..ids.len() - 2 {
                        let fresh = next;
                        next += 1;
                        out.push(CnfRule::Bin { lhs, left: ids[k], right: fresh, prob });
                        lhs = fresh;
                        prob = 1.0;
                    }
                    out.push(CnfRule::Bin { lhs, left: ids[ids.len() - 2], right: ids[ids.len() - 1], prob });
                }
            }
        }
    }
    (next, out)
}

/// Every leftmost derivation of `s` using at most `max_depth` rule applications.
pub fn enumerate_derivations(g: &Grammar, s: &[&str], max_depth: usize) -> Result<Vec<Derivation>, GrammarError> {
    let ig = IndexedGrammar::new(g)?;
    let word = ig.encode(s)?;
    let mut out = Vec::new();
    let mut rules = Vec::new();
    expand(&ig, &word, vec![Sym::N(ig.start)], 0, 1.0, &mut rules, max_depth, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    ig: &IndexedGrammar,
    word: &[usize],
    form: Vec<Sym>,
    matched: usize,
    prob: f64,
    rules: &mut Vec<usize>,
    max_depth: usize,
    out: &mut Vec<Derivation>,
) {
    // consume the terminal prefix of the sentential form
    let mut m = matched;
    let mut i = 0;
    while i < form.len() {
        match form[i] {
            Sym::T(t) => {
                if m >= word.len() || word[m] != t {
                    return;
                }
                m += 1;
                i += 1;
            }
            Sym::N(_) => break,
        }
    }
    let rest = &form[i..];
    if rest.is_empty() {
        if m == word.len() {
            out.push(Derivation { rules: rules.clone(), prob });
        }
        return;
    }
    // no empty rules: every remaining symbol yields at least one terminal
    if m + rest.len() > word.len() || rules.len() >= max_depth {
        return;
    }
    let Sym::N(a) = rest[0] else { unreachable!() };
    for &ri in &ig.rules_by_lhs[a] {
        let r = &ig.rules[ri];
        let mut next = Vec::with_capacity(r.rhs.len() + rest.len() - 1);
        next.extend_from_slice(&r.rhs);
        next.extend_from_slice(&rest[1..]);
        rules.push(ri);
        expand(ig, word, next, m, prob * r.prob, rules, max_depth, out);
        rules.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_patterns, tokenize};
    use super::*;

    fn arc() -> Grammar {
        builtin_patterns()["A_ur"].clone()
    }

    #[test]
    fn arc_examples() {
        let g = arc();
        assert!((inside_oracle(&g, &tokenize("ac")).unwrap() - 0.2).abs() < 1e-15);
        assert!((inside_oracle(&g, &tokenize("aacc")).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(inside_oracle(&g, &tokenize("aac")).unwrap(), 0.0);
    }

    #[test]
    fn unit_chain() {
        let g = Grammar::from_rules("S", &[("S", "A", 0.5), ("S", "a a", 0.5), ("A", "a", 1.0)]);
        assert!((inside_oracle(&g, &["a"]).unwrap() - 0.5).abs() < 1e-15);
        assert!((inside_oracle(&g, &["a", "a"]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ambiguous_string_sums_trees() {
        // bb under A -> bA | Ab | b: trees bA(b) and A(b)b
        let g = Grammar::from_rules("A", &[("A", "b A", 0.3), ("A", "A b", 0.2), ("A", "b", 0.5)]);
        let p = inside_oracle(&g, &["b", "b"]).unwrap();
        assert!((p - (0.3 * 0.5 + 0.2 * 0.5)).abs() < 1e-15);
        let d = enumerate_derivations(&g, &["b", "b"], 25).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn rejects_unknown_terminal_and_long_strings() {
        let g = arc();
        assert!(matches!(inside_oracle(&g, &["z"]), Err(GrammarError::UnknownTerminal(_))));
        let long = vec!["b"; 21];
        assert!(matches!(inside_oracle(&g, &long), Err(GrammarError::StringTooLong { .. })));
    }
}
