use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{Grammar, GrammarError, Production, Symbol};

/// Expected offspring counts: entry `(A, B)` is the expected number of `B`
/// produced by one rewrite of `A`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanMatrix {
    pub labels: Vec<String>,
    #[serde(serialize_with = "ser_rows")]
    pub matrix: DMatrix<f64>,
}

fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl MeanMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let labels = (0..matrix.nrows()).map(|i| format!("N{i}")).collect();
        MeanMatrix { labels, matrix }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|x| x == a)?;
        let j = self.labels.iter().position(|x| x == b)?;
        Some(self.matrix[(i, j)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralRadius {
    pub radius: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WellPosedness {
    pub subcritical: bool,
    pub radius: f64,
    pub converged: bool,
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 10_000;
const SUBCRITICAL_MARGIN: f64 = 1e-9;

pub fn mean_matrix(g: &Grammar) -> Result<MeanMatrix, GrammarError> {
    g.ensure_valid()?;
    let n = g.nonterminals().len();
    let ix = |s: &str| g.nonterminals().iter().position(|x| x == s).expect("validated");
    let mut m = DMatrix::zeros(n, n);
    for p in g.productions() {
        let a = ix(&p.lhs);
        for s in &p.rhs {
            if let Symbol::Nonterminal(b) = s {
                m[(a, ix(b))] += p.prob;
            }
        }
    }
    Ok(MeanMatrix { labels: g.nonterminals().to_vec(), matrix: m })
}

/// Dominant eigenvalue magnitude of a non-negative square matrix.
///
/// The matrix is split into strongly connected blocks; the radius is the
/// largest block radius. Each irreducible block is iterated as `B + I`, which
/// is primitive, so plain power iteration converges even for periodic blocks.
pub fn spectral_radius(m: &MeanMatrix) -> SpectralRadius {
    let a = &m.matrix;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "mean matrix must be square");
    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..n).map(|i| graph.add_node(i)).collect();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut best = SpectralRadius { radius: 0.0, converged: true, iterations: 0 };
    for comp in tarjan_scc(&graph) {
        let idx: Vec<usize> = comp.iter().map(|&v| graph[v]).collect();
        let r = if idx.len() == 1 {
            SpectralRadius { radius: a[(idx[0], idx[0])], converged: true, iterations: 0 }
        } else {
            let block = DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])]);
            power_iteration(&block)
        };
        best.iterations += r.iterations;
        best.converged &= r.converged;
        if r.radius > best.radius {
            best.radius = r.radius;
        }
    }
    best
}

fn power_iteration(block: &DMatrix<f64>) -> SpectralRadius {
    let k = block.nrows();
    let shifted = block + DMatrix::identity(k, k);
    let mut x = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut lambda = f64::NAN;
    for it in 1..=POWER_MAX_ITER {
        let y = &shifted * &x;
        let next = x.dot(&y) / x.dot(&x);
        let norm = y.norm();
        x = y / norm;
        if (next - lambda).abs() < POWER_TOL {
            return SpectralRadius { radius: (next - 1.0).max(0.0), converged: true, iterations: it };
        }
        lambda = next;
    }
    SpectralRadius { radius: (lambda - 1.0).max(0.0), converged: false, iterations: POWER_MAX_ITER }
}

pub fn is_well_posed(g: &Grammar) -> Result<WellPosedness, GrammarError> {
    let sr = spectral_radius(&mean_matrix(g)?);
    Ok(WellPosedness { subcritical: sr.radius < 1.0 - SUBCRITICAL_MARGIN, radius: sr.radius, converged: sr.converged })
}

/// Adds a non-detection variant `lhs -> nd σ` beside every terminal-initial
/// rule `lhs -> t σ`. The original keeps `(1 - nd_prob)` of its mass and the
/// variant receives `nd_prob` of it, so every left-hand side still sums to 1.
pub fn augment_nondetection(g: &Grammar, nd_symbol: &str, nd_prob: f64) -> Result<Grammar, GrammarError> {
    if g.has_terminal(nd_symbol) || g.has_nonterminal(nd_symbol) {
        return Err(GrammarError::SymbolCollision(nd_symbol.to_string()));
    }
    if !(0.0..1.0).contains(&nd_prob) {
        return Err(GrammarError::BadNondetectionProb(nd_prob));
    }
    let has_terminal_initial = g.productions().iter().any(|p| matches!(p.rhs.first(), Some(Symbol::Terminal(_))));
    if !has_terminal_initial || nd_prob == 0.0 {
        return Ok(g.clone());
    }
    let mut productions = Vec::with_capacity(g.productions().len() * 2);
    for p in g.productions() {
        if let Some(Symbol::Terminal(_)) = p.rhs.first() {
            productions.push(Production { lhs: p.lhs.clone(), rhs: p.rhs.clone(), prob: p.prob * (1.0 - nd_prob) });
            let mut rhs = p.rhs.clone();
            rhs[0] = Symbol::Terminal(nd_symbol.to_string());
            productions.push(Production { lhs: p.lhs.clone(), rhs, prob: p.prob * nd_prob });
        } else {
            productions.push(p.clone());
        }
    }
    let mut terminals = g.terminals().to_vec();
    terminals.push(nd_symbol.to_string());
    Ok(Grammar::new(terminals, g.nonterminals().to_vec(), productions, g.start()))
}

#[cfg(test)]
mod tests {
    use super::super::validate;
    use super::*;

    #[test]
    fn scalar_and_diagonal() {
        let m = MeanMatrix::from_matrix(DMatrix::from_row_slice(1, 1, &[0.4]));
        assert_eq!(spectral_radius(&m).radius, 0.4);
        let m = MeanMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7])));
        assert_eq!(spectral_radius(&m).radius, 0.7);
    }

    #[test]
    fn periodic_block_converges() {
        // eigenvalues ±0.8: plain power iteration would oscillate
        let m = MeanMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 0.8, 0.8, 0.0]));
        let r = spectral_radius(&m);
        assert!(r.converged);
        assert!((r.radius - 0.8).abs() < 1e-10);
    }

    #[test]
    fn defective_reducible_matrix() {
        // Jordan-like upper triangular block structure
        let m = MeanMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]));
        let r = spectral_radius(&m);
        assert!(r.converged);
        assert_eq!(r.radius, 0.5);
    }

    #[test]
    fn geometric_and_branching() {
        let g = Grammar::from_rules("S", &[("S", "a S", 0.5), ("S", "a", 0.5)]);
        let w = is_well_posed(&g).unwrap();
        assert!(w.subcritical);
        assert!((w.radius - 0.5).abs() < 1e-12);
        let g = Grammar::from_rules("S", &[("S", "S S", 0.6), ("S", "a", 0.4)]);
        let w = is_well_posed(&g).unwrap();
        assert!(!w.subcritical);
        assert!((w.radius - 1.2).abs() < 1e-9);
    }

    #[test]
    fn nondetection_split() {
        let g = Grammar::from_rules("L", &[("L", "a L", 0.5), ("L", "a", 0.5)]);
        let aug = augment_nondetection(&g, "nd", 0.1).unwrap();
        let probs: Vec<f64> = aug.productions().iter().map(|p| p.prob).collect();
        let expect = [0.45, 0.05, 0.45, 0.05];
        for (p, e) in probs.iter().zip(expect) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!(aug.productions()[1].to_string(), "L -> nd L @ 0.05");
        assert!(validate(&aug).is_empty());
        assert!(matches!(augment_nondetection(&g, "a", 0.1), Err(GrammarError::SymbolCollision(_))));
    }

    #[test]
    fn nondetection_noop_without_terminal_initial_rules() {
        // every productive grammar has one, so the no-op case is an unvalidated grammar
        let g = Grammar::from_rules("S", &[("S", "S x", 1.0)]);
        assert_eq!(augment_nondetection(&g, "nd", 0.1).unwrap(), g);
    }
}
