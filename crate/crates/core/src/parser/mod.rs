//! Probabilistic Earley chart parser over soft terminal inputs.
//!
//! Each state carries a forward probability `α` (all partial derivations of
//! the prefix passing through the state) and an inner probability `γ`
//! (derivations of the state's own span), both in log space. Left-corner and
//! unit-production chains are collapsed with the closures `R_L` and `R_U`, so
//! prediction and completion are single-pass.

mod chart;
mod viterbi;

use std::sync::Arc;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Grammar, GrammarError, IndexedGrammar, Sym};
use crate::kinematics::KinematicState;
use crate::num::{ln_or_neg_inf, Real};

pub use chart::{Chart, Origin, ParserStateView};
pub use viterbi::{viterbi_parse, viterbi_parse_from, ParseTree, ViterbiParse};

/// Name shown for the left-hand side of dummy start states.
pub const DUMMY_LHS: &str = "_";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("I - P_{0} is singular: the grammar has a probability-one {0} cycle")]
    SingularClosure(&'static str),
    #[error("similarity parameters invalid: theta1 must be > 0 and theta2 in (0, 2]")]
    BadSimilarity,
    #[error("soft terminal distribution sums to {0}, expected 1")]
    BadDistribution(f64),
    #[error("no complete parse")]
    NoParse,
    #[error("column {0} does not exist")]
    NoColumn(usize),
}

/// Left-corner and unit-production closures, row-indexed by nonterminal.
#[derive(Clone, Debug)]
pub struct Closures<T: Real> {
    pub r_l: DMatrix<T>,
    pub r_u: DMatrix<T>,
}

/// `R_L = (I - P_L)^-1` and `R_U = (I - P_U)^-1`.
pub fn closures<T: Real>(g: &Grammar) -> Result<Closures<T>, ParseError> {
    let ig = IndexedGrammar::new(g)?;
    closures_indexed(&ig)
}

fn closures_indexed<T: Real>(ig: &IndexedGrammar) -> Result<Closures<T>, ParseError> {
    let n = ig.nonterminals.len();
    let mut pl = DMatrix::<T>::zeros(n, n);
    let mut pu = DMatrix::<T>::zeros(n, n);
    for r in &ig.rules {
        if let Some(Sym::N(y)) = r.rhs.first() {
            pl[(r.lhs, *y)] += T::lit(r.prob);
            if r.rhs.len() == 1 {
                pu[(r.lhs, *y)] += T::lit(r.prob);
            }
        }
    }
    let inv = |p: DMatrix<T>, name: &'static str| -> Result<DMatrix<T>, ParseError> {
        let m = (DMatrix::identity(n, n) - p).try_inverse().ok_or(ParseError::SingularClosure(name))?;
        // a probability-one cycle leaves I - P numerically singular: huge or negative entries
        if m.iter().any(|v| !v.is_finite_value() || *v < T::lit(-1e-9)) {
            return Err(ParseError::SingularClosure(name));
        }
        Ok(m.map(|v| if v < T::zero() { T::zero() } else { v }))
    };
    Ok(Closures { r_l: inv(pl, "L")?, r_u: inv(pu, "U")? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// `f(h1, h2)`: the pending state's high anchor against the finished
    /// state's high anchor, i.e. the distance covered by the finished span.
    HighHigh,
    /// `f(h1, l2)`: the pending state's high anchor against the finished
    /// state's low anchor. Within one chart these coincide, so `f = 1`.
    #[default]
    HighLow,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig<T> {
    pub theta1: T,
    pub theta2: T,
    pub mode: SimilarityMode,
}

impl<T: Real> SimilarityConfig<T> {
    pub fn new(theta1: T, theta2: T, mode: SimilarityMode) -> Result<Self, ParseError> {
        if !(theta1 > T::zero()) || !(theta2 > T::zero()) || theta2 > T::lit(2.0) {
            return Err(ParseError::BadSimilarity);
        }
        Ok(SimilarityConfig { theta1, theta2, mode })
    }

    pub fn off() -> Self {
        SimilarityConfig { mode: SimilarityMode::Off, ..Self::default() }
    }

    /// `f(d)`, ignoring the mode.
    pub fn factor(&self, d: T) -> T {
        similarity(d, self)
    }
}

impl<T: Real> Default for SimilarityConfig<T> {
    fn default() -> Self {
        SimilarityConfig { theta1: T::lit(50.0), theta2: T::lit(1.5), mode: SimilarityMode::default() }
    }
}

/// Power-exponential similarity `exp(-(d/θ1)^θ2)`.
pub fn similarity<T: Real>(d: T, cfg: &SimilarityConfig<T>) -> T {
    (-(d / cfg.theta1).powf(cfg.theta2)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig<T> {
    pub similarity: SimilarityConfig<T>,
    /// Log offset below the column's best forward probability under which
    /// states are discarded; `None` disables pruning.
    pub prune: Option<T>,
}

impl<T: Real> Default for ParserConfig<T> {
    fn default() -> Self {
        ParserConfig { similarity: SimilarityConfig::default(), prune: Some(T::lit(-20.0)) }
    }
}

impl<T: Real> ParserConfig<T> {
    /// Similarity off and no pruning: pure probabilistic Earley parsing.
    pub fn exact() -> Self {
        ParserConfig { similarity: SimilarityConfig::off(), prune: None }
    }
}

/// One scan of parser input: a distribution over terminals plus the
/// kinematic estimate that accompanies it.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTerminal<T: Real> {
    pub dist: IndexMap<String, T>,
    pub kinematic: KinematicState<T>,
    pub scan_index: usize,
}

impl<T: Real> SoftTerminal<T> {
    pub fn new(dist: IndexMap<String, T>, kinematic: KinematicState<T>, scan_index: usize) -> Result<Self, ParseError> {
        let sum: f64 = dist.values().map(|v| v.to_f64_lossy()).sum();
        if (sum - 1.0).abs() > 1e-6 || dist.values().any(|v| *v < T::zero()) {
            return Err(ParseError::BadDistribution(sum));
        }
        Ok(SoftTerminal { dist, kinematic, scan_index })
    }

    /// All mass on one terminal.
    pub fn hard(terminal: &str, kinematic: KinematicState<T>, scan_index: usize) -> Self {
        let mut dist = IndexMap::new();
        dist.insert(terminal.to_string(), T::one());
        SoftTerminal { dist, kinematic, scan_index }
    }

    pub fn prob(&self, terminal: &str) -> T {
        self.dist.get(terminal).copied().unwrap_or_else(T::zero)
    }
}

/// Grammar compiled for parsing: rule table with an extra dummy start rule,
/// log probabilities and sparse closure lookups.
#[derive(Debug)]
pub struct CompiledGrammar<T: Real> {
    grammar: Grammar,
    ig: IndexedGrammar,
    closures: Closures<T>,
    /// `rules[i]` for grammar rules, then the dummy `_ -> S` at `dummy_rule`.
    rules: Vec<(usize, Vec<Sym>)>,
    log_prob: Vec<T>,
    dummy_rule: usize,
    dummy_lhs: usize,
    /// For an awaited nonterminal `Z`: every `Y` with `R_L(Z, Y) > 0`.
    rl_from: Vec<Vec<(usize, T)>>,
    /// For a finished nonterminal `Y`: every awaited `Z` with `R_U(Z, Y) > 0`.
    ru_to: Vec<Vec<(usize, T)>>,
}

impl<T: Real> CompiledGrammar<T> {
    pub fn new(g: &Grammar) -> Result<Arc<Self>, ParseError> {
        let ig = IndexedGrammar::new(g)?;
        let closures = closures_indexed::<T>(&ig)?;
        let n = ig.nonterminals.len();
        let mut rules: Vec<(usize, Vec<Sym>)> = ig.rules.iter().map(|r| (r.lhs, r.rhs.clone())).collect();
        let mut log_prob: Vec<T> = ig.rules.iter().map(|r| ln_or_neg_inf(T::lit(r.prob))).collect();
        let dummy_rule = rules.len();
        rules.push((n, vec![Sym::N(ig.start)]));
        log_prob.push(T::zero());
        let mut rl_from = vec![Vec::new(); n];
        let mut ru_to = vec![Vec::new(); n];
        for z in 0..n {
            for y in 0..n {
                let l = closures.r_l[(z, y)];
                if l > T::zero() {
                    rl_from[z].push((y, l.ln()));
                }
                let u = closures.r_u[(z, y)];
                if u > T::zero() {
                    ru_to[y].push((z, u.ln()));
                }
            }
        }
        Ok(Arc::new(CompiledGrammar {
            grammar: g.clone(),
            ig,
            closures,
            rules,
            log_prob,
            dummy_rule,
            dummy_lhs: n,
            rl_from,
            ru_to,
        }))
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn indexed(&self) -> &IndexedGrammar {
        &self.ig
    }

    pub fn closures(&self) -> &Closures<T> {
        &self.closures
    }

    pub fn terminals(&self) -> &[String] {
        &self.ig.terminals
    }

    fn lhs_name(&self, lhs: usize) -> &str {
        if lhs == self.dummy_lhs {
            DUMMY_LHS
        } else {
            &self.ig.nonterminals[lhs]
        }
    }

    fn is_unit(&self, rule: usize) -> bool {
        rule != self.dummy_rule && matches!(self.rules[rule].1.as_slice(), [Sym::N(_)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closures_identity_without_chains() {
        let g = Grammar::from_rules("S", &[("S", "a S", 0.5), ("S", "a", 0.5)]);
        let c = closures::<f64>(&g).unwrap();
        assert_eq!(c.r_l, DMatrix::identity(1, 1));
        assert_eq!(c.r_u, DMatrix::identity(1, 1));
    }

    #[test]
    fn left_corner_chain() {
        let g = Grammar::from_rules(
            "S",
            &[("S", "A x", 0.5), ("S", "x", 0.5), ("A", "B y", 1.0), ("B", "z", 1.0)],
        );
        let c = closures::<f64>(&g).unwrap();
        // S -> A -> B
        assert!((c.r_l[(0, 2)] - 0.5).abs() < 1e-15);
        assert!((c.r_l[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(c.r_l[(1, 0)], 0.0);
    }

    #[test]
    fn similarity_values() {
        let cfg = SimilarityConfig::new(50.0f64, 1.5, SimilarityMode::HighHigh).unwrap();
        assert_eq!(similarity(0.0, &cfg), 1.0);
        assert!((similarity(50.0, &cfg) - (-1.0f64).exp()).abs() < 1e-15);
        let cfg2 = SimilarityConfig::new(50.0f64, 2.0, SimilarityMode::HighHigh).unwrap();
        assert!((similarity(100.0, &cfg2) - (-4.0f64).exp()).abs() < 1e-15);
        assert!(SimilarityConfig::new(0.0f64, 1.0, SimilarityMode::Off).is_err());
        assert!(SimilarityConfig::new(1.0f64, 2.5, SimilarityMode::Off).is_err());
    }

    #[test]
    fn soft_terminal_must_normalize() {
        let k = KinematicState::exact(0.0f64, 0.0, 0.0, 0.0, 0);
        let mut d = IndexMap::new();
        d.insert("a".to_string(), 0.5);
        assert!(SoftTerminal::new(d.clone(), k.clone(), 1).is_err());
        d.insert("b".to_string(), 0.5);
        assert!(SoftTerminal::new(d, k, 1).is_ok());
    }
}
