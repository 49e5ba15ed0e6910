//! Online syntactic classification: a tracker per target hypothesis feeds
//! its mode probabilities, scan by scan, into one chart per candidate
//! pattern; the best pattern's predicted next terminal feeds back into the
//! tracker's mode update.

mod trace;

use std::sync::Arc;

use indexmap::IndexMap;
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{augment_nondetection, Grammar, GrammarError, MODE_TERMINALS};
use crate::kinematics::{convert_measurement, transition_matrices, Detection, KinematicState};
use crate::num::Real;
use crate::parser::{viterbi_parse, Chart, CompiledGrammar, ParseError, ParserConfig, SimilarityConfig, SoftTerminal, ViterbiParse};
use crate::tracker::{imm_step, init_from_detection, pf_step, ImmBank, ParticleSet, TrackerConfig, TrackerError, N_MODES};

pub use trace::{classify_map, Classification, PatternLikelihoodTrace, TraceRow};

/// Terminal scanned on a missed detection.
pub const ND_SYMBOL: &str = "nd";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("no candidate patterns")]
    NoPatterns,
    #[error("pattern `{0}` does not use the eight mode terminals")]
    BadTerminals(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrackerKind {
    Imm,
    Pf { particles: usize, resample_threshold: f64 },
}

/// Which charts supply the grammar's mode prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackSource {
    /// The MAP pattern's chart alone.
    #[default]
    BestPattern,
    /// Every live chart, weighted by its pattern posterior.
    PosteriorMix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig<T: Real> {
    pub tracker: TrackerConfig<T>,
    pub tracker_kind: TrackerKind,
    pub parser: ParserConfig<T>,
    pub feedback: bool,
    pub feedback_source: FeedbackSource,
    /// Probability mass given to the non-detection variant of each rule.
    pub nd_prob: f64,
    /// Feed mode distributions (soft) or their argmax (hard) to the charts.
    pub soft: bool,
    /// Uniform mass mixed into each soft terminal, `(1 - ε) w + ε / 8`, so a
    /// single overconfident mode estimate cannot veto a pattern.
    pub input_floor: f64,
    /// Similarity between a hypothesis' predicted position and a detection.
    pub association: SimilarityConfig<T>,
    /// Detections whose best similarity is below this spawn a new hypothesis.
    pub spawn_threshold: T,
    /// Seed for particle filters; hypothesis `i` uses `seed + i`.
    pub seed: u64,
}

impl<T: Real> Default for ClassifierConfig<T> {
    fn default() -> Self {
        ClassifierConfig {
            tracker: TrackerConfig::default(),
            tracker_kind: TrackerKind::Imm,
            parser: ParserConfig::default(),
            feedback: true,
            feedback_source: FeedbackSource::default(),
            nd_prob: 0.05,
            soft: true,
            input_floor: 0.01,
            association: SimilarityConfig { theta1: T::lit(400.0), ..SimilarityConfig::default() },
            spawn_threshold: T::lit(0.01),
            seed: 0,
        }
    }
}

/// Candidate pattern grammars, augmented with the non-detection terminal
/// and compiled once.
#[derive(Clone, Debug)]
pub struct PatternSet<T: Real> {
    pub names: Vec<String>,
    compiled: Vec<Arc<CompiledGrammar<T>>>,
    /// Position of each mode terminal `a..h` in each grammar's terminal list.
    mode_slots: Vec<[Option<usize>; N_MODES]>,
}

impl<T: Real> PatternSet<T> {
    pub fn new(patterns: &IndexMap<String, Grammar>, nd_prob: f64) -> Result<Self, ClassifierError> {
        if patterns.is_empty() {
            return Err(ClassifierError::NoPatterns);
        }
        let mut names = Vec::new();
        let mut compiled = Vec::new();
        let mut mode_slots = Vec::new();
        for (name, g) in patterns {
            if g.terminals().iter().any(|t| !MODE_TERMINALS.contains(&t.as_str())) {
                return Err(ClassifierError::BadTerminals(name.clone()));
            }
            let aug = augment_nondetection(g, ND_SYMBOL, nd_prob)?;
            let cg = CompiledGrammar::new(&aug)?;
            let mut slots = [None; N_MODES];
            for (j, m) in MODE_TERMINALS.iter().enumerate() {
                slots[j] = cg.terminals().iter().position(|t| t == m);
            }
            names.push(name.clone());
            compiled.push(cg);
            mode_slots.push(slots);
        }
        Ok(PatternSet { names, compiled, mode_slots })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn compiled(&self, i: usize) -> &Arc<CompiledGrammar<T>> {
        &self.compiled[i]
    }
}

#[derive(Clone, Debug)]
enum TrackerState<T: Real> {
    Imm(ImmBank<T>),
    Pf(Box<(ParticleSet<T>, ChaCha8Rng, T)>),
}

/// One target hypothesis: its tracker, one chart per pattern and the trace.
#[derive(Clone, Debug)]
pub struct TrackHypothesis<T: Real> {
    pub id: usize,
    tracker: TrackerState<T>,
    charts: Vec<Chart<T>>,
    live: Vec<bool>,
    /// Last combined estimate.
    pub estimate: KinematicState<T>,
    /// False once every chart has died.
    pub alive: bool,
    pub trace: PatternLikelihoodTrace,
    /// Detections used, as indices into the input stream.
    pub detections: Vec<usize>,
}

fn log_posterior<T: Real>(log_probs: &[T], live: &[bool]) -> Vec<f64> {
    let lp: Vec<f64> = log_probs
        .iter()
        .zip(live)
        .map(|(l, &ok)| if ok { l.to_f64_lossy() } else { f64::NEG_INFINITY })
        .collect();
    let total = crate::num::log_sum_exp(lp.iter().copied());
    if !total.is_finite() {
        return vec![0.0; lp.len()];
    }
    lp.iter().map(|l| (l - total).exp()).collect()
}

impl<T: Real> TrackHypothesis<T> {
    /// Starts a hypothesis from a detection: tracker initialization and a
    /// fresh chart per pattern anchored at the initial estimate.
    pub fn spawn(
        id: usize,
        d: &Detection<T>,
        index: usize,
        patterns: &PatternSet<T>,
        cfg: &ClassifierConfig<T>,
    ) -> Result<Self, ClassifierError> {
        let init = init_from_detection(d, &cfg.tracker)?;
        let tracker = match cfg.tracker_kind {
            TrackerKind::Imm => TrackerState::Imm(ImmBank::new(&init)),
            TrackerKind::Pf { particles, resample_threshold } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(id as u64));
                let ps = ParticleSet::from_gaussian(&init, particles, &mut rng);
                TrackerState::Pf(Box::new((ps, rng, T::lit(resample_threshold))))
            }
        };
        let charts = (0..patterns.len())
            .map(|i| Chart::new(patterns.compiled(i).clone(), init.clone(), cfg.parser))
            .collect();
        Ok(TrackHypothesis {
            id,
            tracker,
            charts,
            live: vec![true; patterns.len()],
            estimate: init,
            alive: true,
            trace: PatternLikelihoodTrace::new(id, patterns.names.clone()),
            detections: vec![index],
        })
    }

    /// Scan index of the last estimate.
    pub fn last_scan(&self) -> usize {
        self.estimate.t
    }

    pub fn charts(&self) -> &[Chart<T>] {
        &self.charts
    }

    /// Position predicted for scan `t` by constant velocity from the last estimate.
    pub fn predicted_position(&self, t: usize, period: T) -> Vector2<T> {
        let dt = period * T::lit(t.saturating_sub(self.estimate.t) as f64);
        let (f, _) = transition_matrices(dt);
        let x = f * self.estimate.mean;
        Vector2::new(x[0], x[1])
    }

    fn current_log_probs(&self) -> Vec<T> {
        self.charts
            .iter()
            .zip(&self.live)
            .map(|(c, &ok)| if ok { c.log_prefix_probability(c.current()) } else { T::neg_infinity() })
            .collect()
    }

    /// The grammar's distribution over the eight modes for the next scan.
    pub fn mode_prior(&self, patterns: &PatternSet<T>, source: FeedbackSource) -> Option<[T; N_MODES]> {
        let post = log_posterior(&self.current_log_probs(), &self.live);
        let weights: Vec<f64> = match source {
            FeedbackSource::PosteriorMix => post.clone(),
            FeedbackSource::BestPattern => {
                let best = trace::argmax_label(&post, &patterns.names)?;
                (0..post.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
            }
        };
        let mut out = [T::zero(); N_MODES];
        let mut any = false;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 || !self.live[i] {
                continue;
            }
            let c = &self.charts[i];
            let dist = c.next_terminal_distribution(c.current());
            let mut modes = [T::zero(); N_MODES];
            let mut s = T::zero();
            for (j, slot) in patterns.mode_slots[i].iter().enumerate() {
                if let Some(k) = slot {
                    modes[j] = dist[*k];
                    s += dist[*k];
                }
            }
            if s > T::zero() {
                any = true;
                for j in 0..N_MODES {
                    out[j] += modes[j] / s * T::lit(w);
                }
            }
        }
        let s = out.iter().fold(T::zero(), |a, &b| a + b);
        (any && s > T::zero()).then(|| out.map(|v| v / s))
    }

    /// One scan: tracker step (with the grammar prior when feedback is on),
    /// then every live chart scans the resulting soft terminal. `d` may be a
    /// miss, in which case the tracker only predicts and the charts scan the
    /// non-detection terminal.
    pub fn step(
        &mut self,
        d: &Detection<T>,
        index: Option<usize>,
        patterns: &PatternSet<T>,
        cfg: &ClassifierConfig<T>,
    ) -> Result<&TraceRow, ClassifierError> {
        let prior = if cfg.feedback { self.mode_prior(patterns, cfg.feedback_source) } else { None };
        let prior_slice = prior.as_ref().map(|p| p.as_slice());
        let (estimate, mode_probs, n_eff) = match &mut self.tracker {
            TrackerState::Imm(bank) => {
                let (next, out) = imm_step(bank, d, &cfg.tracker, prior_slice)?;
                *bank = next;
                (out.combined, out.data_mode_probs, None)
            }
            TrackerState::Pf(b) => {
                let (ps, rng, thr) = &mut **b;
                if let Some(p) = &prior {
                    // grammar prior enters as a reweighting of particle modes
                    reweight_particles(ps, p, cfg.tracker.feedback_weight);
                }
                let out = pf_step(ps, d, &cfg.tracker, *thr, rng);
                (out.estimate, out.mode_probs, Some(out.n_eff.to_f64_lossy()))
            }
        };
        self.estimate = estimate.clone();
        if let Some(i) = index {
            self.detections.push(i);
        }

        let mut dist = IndexMap::new();
        if d.is_miss {
            dist.insert(ND_SYMBOL.to_string(), T::one());
        } else if cfg.soft {
            let eps = T::lit(cfg.input_floor);
            let u = eps / T::lit(N_MODES as f64);
            for (j, m) in MODE_TERMINALS.iter().enumerate() {
                dist.insert(m.to_string(), (T::one() - eps) * mode_probs[j] + u);
            }
        } else {
            let best = (0..N_MODES).fold(0, |b, j| if mode_probs[j] > mode_probs[b] { j } else { b });
            dist.insert(MODE_TERMINALS[best].to_string(), T::one());
        }
        let input = SoftTerminal { dist, kinematic: estimate.clone(), scan_index: d.t };
        for (c, live) in self.charts.iter_mut().zip(self.live.iter_mut()) {
            if *live {
                c.step(&input);
                if c.is_dead() {
                    *live = false;
                }
            }
        }
        if !self.live.iter().any(|&l| l) {
            self.alive = false;
        }
        let log_probs = self.current_log_probs();
        let posterior = log_posterior(&log_probs, &self.live);
        let row = TraceRow {
            scan: d.t,
            is_miss: d.is_miss,
            log_probs: log_probs.iter().map(|l| l.to_f64_lossy()).collect(),
            map_label: trace::argmax_label(&posterior, &patterns.names).map(|i| patterns.names[i].clone()),
            posterior,
            mode_probs: mode_probs.map(|v| v.to_f64_lossy()),
            mode_prior: prior.map(|p| p.map(|v| v.to_f64_lossy())),
            state: [estimate.x(), estimate.y(), estimate.vx(), estimate.vy()].map(|v| v.to_f64_lossy()),
            cov: {
                let mut c = [0.0; 16];
                for (k, v) in estimate.cov.transpose().iter().enumerate() {
                    c[k] = v.to_f64_lossy();
                }
                c
            },
            position_cov_trace: estimate.position_cov_trace().to_f64_lossy(),
            n_eff,
        };
        self.trace.rows.push(row);
        Ok(self.trace.rows.last().expect("just pushed"))
    }

    /// Most probable parse of the inputs so far under pattern `i`.
    pub fn viterbi(&self, i: usize) -> Result<ViterbiParse, ParseError> {
        viterbi_parse(&self.charts[i])
    }
}

/// Multiplies particle weights by `1 − w + w · prior[mode] · 8`, the
/// particle-level counterpart of averaging the mode distribution with the
/// grammar prior.
fn reweight_particles<T: Real>(ps: &mut ParticleSet<T>, prior: &[T; N_MODES], weight: T) {
    let n = T::lit(N_MODES as f64);
    let mut total = T::zero();
    for (w, &m) in ps.weights.iter_mut().zip(&ps.modes) {
        *w *= T::one() - weight + weight * prior[m] * n;
        total += *w;
    }
    if total > T::zero() {
        for w in ps.weights.iter_mut() {
            *w /= total;
        }
    }
}

/// Routes a detection stream to target hypotheses and steps them.
#[derive(Clone, Debug)]
pub struct Classifier<T: Real> {
    pub cfg: ClassifierConfig<T>,
    pub patterns: PatternSet<T>,
    pub hypotheses: Vec<TrackHypothesis<T>>,
    /// Scan currently being assembled.
    scan: Option<usize>,
    /// Hypotheses that already received a detection in the current scan.
    served: Vec<usize>,
    /// Platform of the newest record, used for implicit misses.
    last_platform: Option<crate::kinematics::Platform<T>>,
    received: usize,
}

/// Result of associating one detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assignment<T> {
    /// Existing hypothesis and the similarity of the match.
    Existing { id: usize, similarity: T },
    Spawn,
}

impl<T: Real> Classifier<T> {
    pub fn new(patterns: &IndexMap<String, Grammar>, cfg: ClassifierConfig<T>) -> Result<Self, ClassifierError> {
        let patterns = PatternSet::new(patterns, cfg.nd_prob)?;
        Ok(Classifier { cfg, patterns, hypotheses: Vec::new(), scan: None, served: Vec::new(), last_platform: None, received: 0 })
    }

    /// The live hypothesis, not yet served this scan, whose predicted
    /// position is most similar to the detection; spawn when even the best
    /// similarity is below the threshold.
    pub fn associate(&self, d: &Detection<T>) -> Result<Assignment<T>, ClassifierError> {
        let z = convert_measurement(d, &self.cfg.tracker.noise).map_err(TrackerError::from)?;
        let pos = Vector2::new(z.z[0], z.z[1]);
        let period = self.cfg.tracker.noise.period;
        let mut best: Option<(usize, T)> = None;
        let same_scan = self.scan == Some(d.t);
        for h in self.hypotheses.iter().filter(|h| h.alive && !(same_scan && self.served.contains(&h.id))) {
            let dist = (h.predicted_position(d.t, period) - pos).norm();
            let s = self.cfg.association.factor(dist);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((h.id, s));
            }
        }
        Ok(match best {
            Some((id, similarity)) if similarity >= self.cfg.spawn_threshold => Assignment::Existing { id, similarity },
            _ => Assignment::Spawn,
        })
    }

    /// Closes the current scan: live hypotheses that received no detection
    /// take a missed-detection step.
    fn close_scan(&mut self) -> Result<(), ClassifierError> {
        let (Some(t), Some(p)) = (self.scan, self.last_platform) else { return Ok(()) };
        for h in self.hypotheses.iter_mut() {
            if h.alive && !self.served.contains(&h.id) && h.last_scan() < t {
                h.step(&Detection::miss(t, p), None, &self.patterns, &self.cfg)?;
            }
        }
        self.served.clear();
        Ok(())
    }

    /// Feeds one record of an arrival-ordered stream. Explicit miss records
    /// only mark the scan as observed.
    pub fn push(&mut self, d: &Detection<T>) -> Result<Option<usize>, ClassifierError> {
        let index = self.received;
        self.received += 1;
        if self.scan.is_some_and(|t| d.t > t) {
            self.close_scan()?;
        }
        self.scan = Some(self.scan.map_or(d.t, |t| t.max(d.t)));
        self.last_platform = Some(d.platform);
        if d.is_miss {
            return Ok(None);
        }
        let id = match self.associate(d)? {
            Assignment::Existing { id, .. } => {
                let h = self.hypotheses.iter_mut().find(|h| h.id == id).expect("live id");
                h.step(d, Some(index), &self.patterns, &self.cfg)?;
                id
            }
            Assignment::Spawn => {
                let id = self.hypotheses.len();
                self.hypotheses.push(TrackHypothesis::spawn(id, d, index, &self.patterns, &self.cfg)?);
                id
            }
        };
        self.served.push(id);
        Ok(Some(id))
    }

    /// Closes the last scan.
    pub fn finish(&mut self) -> Result<(), ClassifierError> {
        self.close_scan()?;
        self.scan = None;
        Ok(())
    }

    /// Runs a whole stream and returns the hypotheses.
    pub fn run(mut self, stream: &[Detection<T>]) -> Result<Vec<TrackHypothesis<T>>, ClassifierError> {
        for d in stream {
            self.push(d)?;
        }
        self.finish()?;
        Ok(self.hypotheses)
    }
}

/// Parses a mode string directly, one hard terminal per scan, bypassing the
/// tracker. Returns the trace of every pattern.
pub fn classify_modes<T: Real>(
    patterns: &PatternSet<T>,
    modes: &[&str],
    parser: ParserConfig<T>,
) -> Result<(PatternLikelihoodTrace, Vec<Chart<T>>), ClassifierError> {
    let anchor = KinematicState::exact(T::zero(), T::zero(), T::zero(), T::zero(), 0);
    let mut charts: Vec<Chart<T>> =
        (0..patterns.len()).map(|i| Chart::new(patterns.compiled(i).clone(), anchor.clone(), parser)).collect();
    let mut live = vec![true; patterns.len()];
    let mut trace = PatternLikelihoodTrace::new(0, patterns.names.clone());
    for (k, m) in modes.iter().enumerate() {
        let input = SoftTerminal::hard(m, anchor.clone(), k + 1);
        for (c, l) in charts.iter_mut().zip(live.iter_mut()) {
            if *l {
                if k + 1 == modes.len() {
                    c.step_final(&input);
                } else {
                    c.step(&input);
                }
                if c.is_dead() {
                    *l = false;
                }
            }
        }
        let lp: Vec<T> = charts
            .iter()
            .zip(&live)
            .map(|(c, &ok)| if ok { c.log_prefix_probability(c.current()) } else { T::neg_infinity() })
            .collect();
        let posterior = log_posterior(&lp, &live);
        let mut mode_probs = [0.0; N_MODES];
        if let Some(j) = MODE_TERMINALS.iter().position(|t| t == m) {
            mode_probs[j] = 1.0;
        }
        trace.rows.push(TraceRow {
            scan: k + 1,
            is_miss: *m == ND_SYMBOL,
            log_probs: lp.iter().map(|l| l.to_f64_lossy()).collect(),
            map_label: trace::argmax_label(&posterior, &patterns.names).map(|i| patterns.names[i].clone()),
            posterior,
            mode_probs,
            mode_prior: None,
            state: [0.0; 4],
            cov: [0.0; 16],
            position_cov_trace: 0.0,
            n_eff: None,
        });
    }
    Ok((trace, charts))
}

#[cfg(test)]
mod tests;
