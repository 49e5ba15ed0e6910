use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use super::{CompiledGrammar, ParseError, ParserConfig, SimilarityMode, SoftTerminal};
use crate::grammar::Sym;
use crate::kinematics::KinematicState;
use crate::num::{log_add, ln_or_neg_inf, Real};

#[derive(Clone, Copy, Debug)]
pub(super) struct State<T> {
    pub start: usize,
    pub rule: usize,
    pub dot: usize,
    pub alpha: T,
    pub gamma: T,
}

type Key = (usize, usize, usize);

#[derive(Clone, Debug)]
pub(super) struct Column<T: Real> {
    pub states: Vec<State<T>>,
    index: HashMap<Key, usize>,
    pub anchor: KinematicState<T>,
    /// Log input distribution that produced this column (empty for column 0).
    pub input: Vec<T>,
    /// Per nonterminal: states awaiting it. Built when the column is closed.
    waiting: Vec<Vec<usize>>,
    closed: bool,
}

impl<T: Real> Column<T> {
    fn new(anchor: KinematicState<T>, input: Vec<T>) -> Self {
        Column { states: Vec::new(), index: HashMap::new(), anchor, input, waiting: Vec::new(), closed: false }
    }

    /// Inserts or merges by log-sum-exp; returns the state's position.
    fn add(&mut self, start: usize, rule: usize, dot: usize, alpha: T, gamma: T) -> usize {
        match self.index.get(&(start, rule, dot)) {
            Some(&i) => {
                let s = &mut self.states[i];
                s.alpha = log_add(s.alpha, alpha);
                s.gamma = log_add(s.gamma, gamma);
                i
            }
            None => {
                let i = self.states.len();
                self.states.push(State { start, rule, dot, alpha, gamma });
                self.index.insert((start, rule, dot), i);
                i
            }
        }
    }

    fn retain(&mut self, mut keep: impl FnMut(&State<T>) -> bool) {
        self.states.retain(|s| keep(s));
        self.index = self.states.iter().enumerate().map(|(i, s)| ((s.start, s.rule, s.dot), i)).collect();
    }

    fn best_alpha(&self) -> T {
        self.states.iter().fold(T::neg_infinity(), |m, s| if s.alpha > m { s.alpha } else { m })
    }
}

/// Which operation produced a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Init,
    Predict,
    Scan,
    Complete,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Init => "init",
            Origin::Predict => "predict",
            Origin::Scan => "scan",
            Origin::Complete => "complete",
        }
    }
}

/// Read-only view of one chart state, as written to chart dumps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParserStateView {
    pub end: usize,
    pub start: usize,
    pub lhs: String,
    pub rhs: Vec<String>,
    pub dot: usize,
    pub origin: Origin,
    pub text: String,
    pub forward: f64,
    pub inner: f64,
    pub log_forward: f64,
    pub log_inner: f64,
    pub low: [f64; 4],
    pub high: [f64; 4],
}

/// Chart of one grammar over a growing input. Column `k` holds the states
/// ending after `k` inputs; the anchor of column `k` is the kinematic
/// estimate of input `k` (or the initial anchor for column 0), so a state
/// spanning `i..k` has low anchor `anchors[i]` and high anchor `anchors[k]`.
#[derive(Clone, Debug)]
pub struct Chart<T: Real> {
    g: Arc<CompiledGrammar<T>>,
    cfg: ParserConfig<T>,
    pub(super) columns: Vec<Column<T>>,
    /// Columns at which dummy start states were inserted.
    dummies: Vec<usize>,
}

impl<T: Real> Chart<T> {
    /// Column 0 with the dummy `_0 -> .S`, followed by one prediction pass.
    pub fn new(g: Arc<CompiledGrammar<T>>, anchor: KinematicState<T>, cfg: ParserConfig<T>) -> Self {
        let mut c = Chart { g, cfg, columns: vec![Column::new(anchor, Vec::new())], dummies: Vec::new() };
        c.insert_dummy();
        c.predict();
        c
    }

    pub fn grammar(&self) -> &Arc<CompiledGrammar<T>> {
        &self.g
    }

    pub fn config(&self) -> &ParserConfig<T> {
        &self.cfg
    }

    /// Index of the newest column.
    pub fn current(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn column_len(&self, k: usize) -> usize {
        self.columns.get(k).map_or(0, |c| c.states.len())
    }

    pub fn anchor(&self, k: usize) -> Option<&KinematicState<T>> {
        self.columns.get(k).map(|c| &c.anchor)
    }

    /// True when the newest column holds no state: no further input can be parsed.
    pub fn is_dead(&self) -> bool {
        self.columns.last().is_none_or(|c| c.states.is_empty())
    }

    /// Adds `k: _k -> .S` at the newest column (before its prediction pass).
    pub fn insert_dummy(&mut self) {
        let k = self.current();
        let col = &mut self.columns[k];
        assert!(!col.closed, "dummy states must precede prediction");
        col.add(k, self.g.dummy_rule, 0, T::zero(), T::zero());
        if !self.dummies.contains(&k) {
            self.dummies.push(k);
        }
    }

    /// Scan, complete and predict for one input.
    pub fn step(&mut self, input: &SoftTerminal<T>) {
        self.scan(input);
        self.complete();
        self.prune_column();
        self.predict();
    }

    /// Like [`step`](Self::step) but without the final prediction pass, as
    /// when `input` is the last symbol of a batch.
    pub fn step_final(&mut self, input: &SoftTerminal<T>) {
        self.scan(input);
        self.complete();
        self.prune_column();
    }

    /// Parses a whole batch of inputs, without predicting past the last one.
    pub fn parse_all(
        g: Arc<CompiledGrammar<T>>,
        anchor: KinematicState<T>,
        inputs: &[SoftTerminal<T>],
        cfg: ParserConfig<T>,
    ) -> Self {
        let mut c = Chart::new(g, anchor, cfg);
        for (i, x) in inputs.iter().enumerate() {
            if i + 1 == inputs.len() {
                c.step_final(x);
            } else {
                c.step(x);
            }
        }
        c
    }

    fn close_current(&mut self) {
        let n = self.g.dummy_lhs;
        let k = self.current();
        let col = &mut self.columns[k];
        if col.closed {
            return;
        }
        let mut waiting = vec![Vec::new(); n];
        for (i, s) in col.states.iter().enumerate() {
            if let Some(Sym::N(z)) = self.g.rules[s.rule].1.get(s.dot) {
                waiting[*z].push(i);
            }
        }
        col.waiting = waiting;
        col.closed = true;
    }

    /// Advances every state awaiting a terminal into a new column, weighting
    /// by the input probability of that terminal.
    pub fn scan(&mut self, input: &SoftTerminal<T>) {
        self.close_current();
        let log_dist: Vec<T> = self.g.terminals().iter().map(|t| ln_or_neg_inf(input.prob(t))).collect();
        let k = self.current();
        let mut next = Column::new(input.kinematic.clone(), log_dist.clone());
        for s in &self.columns[k].states {
            if let Some(Sym::T(a)) = self.g.rules[s.rule].1.get(s.dot) {
                let p = log_dist[*a];
                if p.is_finite_value() {
                    next.add(s.start, s.rule, s.dot + 1, s.alpha + p, s.gamma + p);
                }
            }
        }
        self.columns.push(next);
    }

    /// Completes finished states of the newest column against their pending
    /// parents, to a fixed point.
    ///
    /// A finished state starting at `j` only creates finished states starting
    /// before `j` (no empty rules; same-start results are unit rules, which
    /// `R_U` already accounts for and which therefore complete nothing). So
    /// finished states are processed in decreasing start order, each after all
    /// of its contributions have been merged in.
    pub fn complete(&mut self) {
        let k = self.current();
        let g = Arc::clone(&self.g);
        let mut heap: BinaryHeap<(usize, usize)> = BinaryHeap::new();
        let mut queued = std::collections::HashSet::new();
        for (i, s) in self.columns[k].states.iter().enumerate() {
            if s.dot == g.rules[s.rule].1.len() && !g.is_unit(s.rule) && s.rule != g.dummy_rule {
                heap.push((s.start, i));
                queued.insert(i);
            }
        }
        while let Some((j, fi)) = heap.pop() {
            let f = self.columns[k].states[fi];
            let y = g.rules[f.rule].0;
            let log_f = self.log_similarity(j, k);
            if !log_f.is_finite_value() {
                continue;
            }
            let (before, after) = self.columns.split_at_mut(k);
            let pend_col = &before[j];
            let col = &mut after[0];
            for &(z, lru) in &g.ru_to[y] {
                for &pi in &pend_col.waiting[z] {
                    let p = pend_col.states[pi];
                    let w = lru + f.gamma + log_f;
                    let idx = col.add(p.start, p.rule, p.dot + 1, p.alpha + w, p.gamma + w);
                    let finished = p.dot + 1 == g.rules[p.rule].1.len();
                    if finished && !g.is_unit(p.rule) && p.rule != g.dummy_rule && queued.insert(idx) {
                        heap.push((p.start, idx));
                    }
                }
            }
        }
    }

    fn log_similarity(&self, j: usize, k: usize) -> T {
        let sim = &self.cfg.similarity;
        match sim.mode {
            SimilarityMode::Off | SimilarityMode::HighLow => T::zero(),
            SimilarityMode::HighHigh => {
                let d = self.columns[j].anchor.distance_to(&self.columns[k].anchor);
                -(d / sim.theta1).powf(sim.theta2)
            }
        }
    }

    fn prune_column(&mut self) {
        if let Some(th) = self.cfg.prune {
            let k = self.current();
            let col = &mut self.columns[k];
            let floor = col.best_alpha() + th;
            col.retain(|s| s.alpha >= floor);
        }
    }

    /// Predicts every rule reachable through left corners from the
    /// nonterminals awaited in the newest column, then closes the column.
    pub fn predict(&mut self) {
        let k = self.current();
        let g = Arc::clone(&self.g);
        let n = g.dummy_lhs;
        let ninf = T::neg_infinity();
        let mut awaited = vec![ninf; n];
        let col = &self.columns[k];
        for s in &col.states {
            // predicted states are already covered by R_L; only sources predict
            if s.dot == 0 && s.rule != g.dummy_rule {
                continue;
            }
            if let Some(Sym::N(z)) = g.rules[s.rule].1.get(s.dot) {
                awaited[*z] = log_add(awaited[*z], s.alpha);
            }
        }
        let mut reach = vec![ninf; n];
        for (z, &a) in awaited.iter().enumerate() {
            if a == ninf {
                continue;
            }
            for &(y, lrl) in &g.rl_from[z] {
                reach[y] = log_add(reach[y], a + lrl);
            }
        }
        let floor = self.cfg.prune.map(|th| col.best_alpha() + th);
        let col = &mut self.columns[k];
        for (y, &b) in reach.iter().enumerate() {
            if b == ninf {
                continue;
            }
            for &r in &g.ig.rules_by_lhs[y] {
                let alpha = b + g.log_prob[r];
                if floor.is_some_and(|f| alpha < f) {
                    continue;
                }
                col.add(k, r, 0, alpha, g.log_prob[r]);
            }
        }
        self.close_current();
    }

    /// Log prefix probability at column `k`: the summed forward probability
    /// of the states created by scanning input `k`. Column 0 gives `0` (= ln 1).
    pub fn log_prefix_probability(&self, k: usize) -> T {
        if k == 0 {
            return T::zero();
        }
        let Some(col) = self.columns.get(k) else {
            return T::neg_infinity();
        };
        col.states
            .iter()
            .filter(|s| s.dot > 0 && matches!(self.g.rules[s.rule].1[s.dot - 1], Sym::T(_)))
            .fold(T::neg_infinity(), |acc, s| log_add(acc, s.alpha))
    }

    pub fn prefix_probability(&self, k: usize) -> T {
        self.log_prefix_probability(k).exp()
    }

    /// Log probability that the inputs from column `from` to `k` form a
    /// complete sentence, read from the completed dummy `k: _from -> S.`.
    pub fn log_sentence_probability_from(&self, from: usize, k: usize) -> T {
        self.columns
            .get(k)
            .and_then(|c| c.index.get(&(from, self.g.dummy_rule, 1)).map(|&i| c.states[i].gamma))
            .unwrap_or_else(T::neg_infinity)
    }

    pub fn log_sentence_probability(&self, k: usize) -> T {
        self.log_sentence_probability_from(0, k)
    }

    pub fn sentence_probability(&self, k: usize) -> T {
        self.log_sentence_probability(k).exp()
    }

    /// Distribution of the next terminal given the inputs up to column `k`,
    /// indexed like the grammar's terminals. Uniform when nothing at `k`
    /// awaits a terminal.
    pub fn next_terminal_distribution(&self, k: usize) -> Vec<T> {
        let nt = self.g.terminals().len();
        let mut mass = vec![T::neg_infinity(); nt];
        if let Some(col) = self.columns.get(k) {
            for s in &col.states {
                if let Some(Sym::T(u)) = self.g.rules[s.rule].1.get(s.dot) {
                    mass[*u] = log_add(mass[*u], s.alpha);
                }
            }
        }
        let total = crate::num::log_sum_exp(mass.iter().copied());
        if !total.is_finite_value() {
            return vec![T::one() / T::lit(nt as f64); nt];
        }
        mass.iter().map(|&m| (m - total).exp()).collect()
    }

    fn origin(&self, s: &State<T>) -> Origin {
        if s.dot == 0 {
            return if s.rule == self.g.dummy_rule { Origin::Init } else { Origin::Predict };
        }
        match self.g.rules[s.rule].1[s.dot - 1] {
            Sym::T(_) => Origin::Scan,
            Sym::N(_) => Origin::Complete,
        }
    }

    /// Human-readable form `k: X_i -> λ . μ`.
    pub(super) fn state_text(&self, k: usize, s: &State<T>) -> String {
        let (lhs, rhs) = &self.g.rules[s.rule];
        let name = if s.rule == self.g.dummy_rule { "" } else { self.g.lhs_name(*lhs) };
        let mut out = format!("{k}: {name}_{} ->", s.start);
        for (i, sym) in rhs.iter().enumerate() {
            if i == s.dot {
                out.push_str(" .");
            }
            out.push(' ');
            out.push_str(self.g.ig.sym_name(*sym));
        }
        if s.dot == rhs.len() {
            out.push_str(" .");
        }
        out
    }

    /// States of column `k` in insertion order.
    pub fn states(&self, k: usize) -> Result<Vec<ParserStateView>, ParseError> {
        let col = self.columns.get(k).ok_or(ParseError::NoColumn(k))?;
        let arr = |a: &KinematicState<T>| [a.x(), a.y(), a.vx(), a.vy()].map(|v| v.to_f64_lossy());
        Ok(col
            .states
            .iter()
            .map(|s| {
                let (lhs, rhs) = &self.g.rules[s.rule];
                let la = s.alpha.to_f64_lossy();
                let lg = s.gamma.to_f64_lossy();
                ParserStateView {
                    end: k,
                    start: s.start,
                    lhs: self.g.lhs_name(*lhs).to_string(),
                    rhs: rhs.iter().map(|x| self.g.ig.sym_name(*x).to_string()).collect(),
                    dot: s.dot,
                    origin: self.origin(s),
                    text: self.state_text(k, s),
                    forward: la.exp(),
                    inner: lg.exp(),
                    log_forward: la,
                    log_inner: lg,
                    low: arr(&self.columns[s.start].anchor),
                    high: arr(&col.anchor),
                }
            })
            .collect())
    }

    /// JSON lines, one state per line, columns in order.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        for k in 0..self.columns.len() {
            for v in self.states(k).expect("column exists") {
                out.push_str(&serde_json::to_string(&v).expect("state serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub(super) fn dummy_rule(&self) -> usize {
        self.g.dummy_rule
    }

    pub(super) fn dummies(&self) -> &[usize] {
        &self.dummies
    }
}
