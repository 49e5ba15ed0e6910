//! Ground-truth trajectories from sampled mode strings, and noisy radar
//! detections of them from a moving platform.

use nalgebra::{Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{
    is_arc_dr_string, is_arc_ur_string, is_line_string, is_rect_cc_string, is_rect_cl_string, is_well_posed,
    pattern_class, Grammar, GrammarError, IndexedGrammar, Sym,
};
use crate::kinematics::{
    mode_heading, mode_index, mode_noise_cov, observe, transition_matrices, Detection, KinematicState, KinematicsError,
    NoiseConfig, Platform,
};
use crate::num::Real;

/// Depth cap used when none is configured for a subcritical grammar.
pub const SAFETY_DEPTH: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("derivation exceeded depth cap {0}")]
    DepthExceeded(usize),
    #[error("grammar is not subcritical (spectral radius {0}); an explicit depth cap is required")]
    Supercritical(f64),
    #[error("invalid scenario field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("no acceptable mode string after {0} draws")]
    RejectionExhausted(usize),
    #[error("unknown mode terminal `{0}`")]
    UnknownMode(String),
}

/// How a new mode changes the nominal velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Steer {
    /// Velocity is rotated to the mode heading at the first scan of each mode.
    #[default]
    Hard,
    /// Velocity relaxes towards the mode heading by a fixed fraction each scan.
    Soft,
}

/// Fraction of the gap to the mode velocity closed per scan under soft steering.
pub const SOFT_STEER_GAIN: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig<T> {
    /// Built-in grammar name or grammar file path; resolved by the caller.
    pub grammar: String,
    /// Nominal target speed, m/s.
    pub speed: T,
    pub noise: NoiseConfig<T>,
    pub p_detect: T,
    pub platform: Platform<T>,
    /// Target position at scan 0.
    pub start: [T; 2],
    pub seed: u64,
    /// Derivation depth cap. Required for grammars that are not subcritical.
    pub max_depth: Option<usize>,
    pub scans_per_mode: usize,
    pub steer: Steer,
    pub process_noise: bool,
    pub measurement_noise: bool,
    /// Redraw mode strings until they are a distinctive instance of their
    /// pattern (arcs with both turns, rectangles with all four sides).
    pub distinctive: bool,
    /// Redraw mode strings longer than this.
    pub max_modes: Option<usize>,
}

impl<T: Real> Default for ScenarioConfig<T> {
    fn default() -> Self {
        ScenarioConfig {
            grammar: "A_ur".to_string(),
            speed: T::lit(15.0),
            noise: NoiseConfig::default(),
            p_detect: T::one(),
            platform: Platform { x: T::lit(-3000.0), y: T::lit(-1000.0), z: T::lit(3000.0), vx: T::lit(100.0), vy: T::zero() },
            start: [T::zero(), T::zero()],
            seed: 0,
            max_depth: None,
            scans_per_mode: 10,
            steer: Steer::Hard,
            process_noise: true,
            measurement_noise: true,
            distinctive: true,
            max_modes: Some(8),
        }
    }
}

impl<T: Real> ScenarioConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, msg: &str| Err(SimError::Config { field, msg: msg.to_string() });
        if !(self.p_detect > T::zero() && self.p_detect <= T::one()) {
            return bad("p_detect", &format!("{} not in (0, 1]", self.p_detect));
        }
        if !(self.speed > T::zero()) {
            return bad("speed", "must be positive");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth", "must be at least 1");
        }
        if self.scans_per_mode == 0 {
            return bad("scans_per_mode", "must be at least 1");
        }
        if self.max_modes == Some(0) {
            return bad("max_modes", "must be at least 1");
        }
        if !self.platform.z.is_finite_value() || !(self.platform.z >= T::zero()) {
            return bad("platform.z", "must be finite and non-negative");
        }
        self.noise.validate().map_err(|e| SimError::Config { field: "noise", msg: e.to_string() })
    }
}

/// Terminal yield of a sampled derivation and the rules used, in leftmost order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub terminals: Vec<String>,
    pub rules: Vec<usize>,
}

/// Leftmost derivation sampler.
#[derive(Clone, Debug)]
pub struct Sampler {
    ig: IndexedGrammar,
    cum: Vec<Vec<(f64, usize)>>,
    max_depth: usize,
    supercritical: bool,
}

impl Sampler {
    /// Without a depth cap a supercritical grammar is refused; with one it is
    /// accepted and flagged.
    pub fn new(g: &Grammar, max_depth: Option<usize>) -> Result<Self, SimError> {
        g.ensure_valid()?;
        let wp = is_well_posed(g)?;
        if !wp.subcritical && max_depth.is_none() {
            return Err(SimError::Supercritical(wp.radius));
        }
        let ig = IndexedGrammar::new(g)?;
        let cum = ig
            .rules_by_lhs
            .iter()
            .map(|rs| {
                let mut acc = 0.0;
                rs.iter()
                    .map(|&r| {
                        acc += ig.rules[r].prob;
                        (acc, r)
                    })
                    .collect()
            })
            .collect();
        Ok(Sampler { ig, cum, max_depth: max_depth.unwrap_or(SAFETY_DEPTH), supercritical: !wp.subcritical })
    }

    pub fn is_supercritical(&self) -> bool {
        self.supercritical
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sampled, SimError> {
        let mut terminals = Vec::new();
        let mut rules = Vec::new();
        // (symbol, depth); top of stack is the leftmost pending symbol
        let mut stack = vec![(Sym::N(self.ig.start), 1usize)];
        while let Some((sym, depth)) = stack.pop() {
            match sym {
                Sym::T(t) => terminals.push(self.ig.terminals[t].clone()),
                Sym::N(n) => {
                    if depth > self.max_depth {
                        return Err(SimError::DepthExceeded(self.max_depth));
                    }
                    let choices = &self.cum[n];
                    let total = choices.last().map(|c| c.0).unwrap_or(1.0);
                    let u: f64 = rng.random::<f64>() * total;
                    let r = choices.iter().find(|c| u < c.0).unwrap_or(choices.last().expect("productive")).1;
                    rules.push(r);
                    for &s in self.ig.rules[r].rhs.iter().rev() {
                        stack.push((s, depth + 1));
                    }
                }
            }
        }
        Ok(Sampled { terminals, rules })
    }

    /// Name of the pattern a derivation instantiates: the nonterminal chosen
    /// by the start rule when that rule is a unit rule, else the start symbol.
    pub fn label(&self, s: &Sampled) -> String {
        let first = &self.ig.rules[s.rules[0]];
        match first.rhs.as_slice() {
            [Sym::N(n)] => self.ig.nonterminals[*n].clone(),
            _ => self.ig.nonterminals[self.ig.start].clone(),
        }
    }
}

/// One draw from the grammar with the given depth cap.
pub fn sample_derivation<R: Rng + ?Sized>(g: &Grammar, rng: &mut R, max_depth: Option<usize>) -> Result<Vec<String>, SimError> {
    Ok(Sampler::new(g, max_depth)?.sample(rng)?.terminals)
}

/// Whether a mode string shows every feature of its pattern: arcs turn both
/// ways, rectangles have all four sides. Lines and unknown labels always pass.
pub fn is_distinctive(label: &str, modes: &[&str]) -> bool {
    let has = |t: &str| modes.contains(&t);
    match label {
        "A_ur" => is_arc_ur_string(modes) && has("a") && has("c"),
        "A_dr" => is_arc_dr_string(modes) && has("a") && has("c"),
        "R_cl" => is_rect_cl_string(modes) && ["b", "d", "f", "h"].iter().all(|t| has(t)),
        "R_cc" => is_rect_cc_string(modes) && ["b", "d", "f", "h"].iter().all(|t| has(t)),
        l if pattern_class(l).is_some() => is_line_string(modes),
        _ => true,
    }
}

/// Trajectory of a mode string. Scan `k` uses mode `modes[k / scans_per_mode]`;
/// state 0 starts at `cfg.start` with speed `cfg.speed` along the first mode.
pub fn modes_to_trajectory<T: Real, R: Rng + ?Sized>(
    modes: &[String],
    cfg: &ScenarioConfig<T>,
    rng: &mut R,
) -> Result<Vec<KinematicState<T>>, SimError> {
    let idx: Vec<usize> = modes
        .iter()
        .map(|m| mode_index(m).ok_or_else(|| SimError::UnknownMode(m.clone())))
        .collect::<Result<_, _>>()?;
    let Some(&first) = idx.first() else { return Ok(Vec::new()) };
    let (f, g) = transition_matrices(cfg.noise.period);
    let chol: Vec<_> =
        (0..8).map(|j| mode_noise_cov(j, &cfg.noise).cholesky().map(|c| c.l()).unwrap_or_else(nalgebra::Matrix2::zeros)).collect();
    let v0 = mode_heading::<T>(first) * cfg.speed;
    let mut x = Vector4::new(cfg.start[0], cfg.start[1], v0[0], v0[1]);
    let n = idx.len() * cfg.scans_per_mode;
    let mut out = Vec::with_capacity(n);
    out.push(KinematicState::new(x, nalgebra::Matrix4::zeros(), 0));
    for k in 1..n {
        let j = idx[k / cfg.scans_per_mode];
        let target = mode_heading::<T>(j) * cfg.speed;
        match cfg.steer {
            Steer::Hard if k % cfg.scans_per_mode == 0 => {
                x[2] = target[0];
                x[3] = target[1];
            }
            Steer::Hard => {}
            Steer::Soft => {
                let gain = T::lit(SOFT_STEER_GAIN);
                let (vx, vy) = (x[2], x[3]);
                x[2] = vx + (target[0] - vx) * gain;
                x[3] = vy + (target[1] - vy) * gain;
            }
        }
        let w = if cfg.process_noise {
            chol[j] * Vector2::new(T::lit(StandardNormal.sample(rng)), T::lit(StandardNormal.sample(rng)))
        } else {
            Vector2::zeros()
        };
        x = f * x + g * w;
        out.push(KinematicState::new(x, nalgebra::Matrix4::zeros(), k));
    }
    Ok(out)
}

/// Platform position at scan `k`.
pub fn platform_at<T: Real>(cfg: &ScenarioConfig<T>, k: usize) -> Platform<T> {
    cfg.platform.advanced(cfg.noise.period * T::lit(k as f64))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut a = a % two_pi;
    if a <= -T::pi() {
        a += two_pi;
    } else if a > T::pi() {
        a -= two_pi;
    }
    a
}

/// Noisy detections of a truth sequence, one per scan.
pub fn emit_detections<T: Real, R: Rng + ?Sized>(
    truth: &[KinematicState<T>],
    cfg: &ScenarioConfig<T>,
    rng: &mut R,
) -> Result<Vec<Detection<T>>, SimError> {
    let n = &cfg.noise;
    let mut out = Vec::with_capacity(truth.len());
    for s in truth {
        let p = platform_at(cfg, s.t);
        let m = observe(&s.mean, &p)?;
        // draw every variate even for misses so the stream does not shift
        let e: [f64; 3] = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let u: f64 = rng.random();
        if T::lit(u) >= cfg.p_detect {
            out.push(Detection::miss(s.t, p));
            continue;
        }
        let mut d = Detection::hit(s.t, m, p);
        if cfg.measurement_noise {
            d.r += n.sigma_r * T::lit(e[0]);
            d.rdot += n.sigma_rdot * T::lit(e[1]);
            d.theta = wrap_angle(d.theta + n.sigma_theta * T::lit(e[2]));
        }
        out.push(d);
    }
    Ok(out)
}

/// A single simulated target.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T: Real> {
    pub label: String,
    pub modes: Vec<String>,
    pub truth: Vec<KinematicState<T>>,
    pub detections: Vec<Detection<T>>,
}

fn draw_modes<R: Rng + ?Sized>(sampler: &Sampler, cfg_distinctive: bool, max_modes: Option<usize>, rng: &mut R) -> Result<(String, Vec<String>), SimError> {
    const ATTEMPTS: usize = 100_000;
    for _ in 0..ATTEMPTS {
        let s = sampler.sample(rng)?;
        let label = sampler.label(&s);
        if max_modes.is_some_and(|m| s.terminals.len() > m) {
            continue;
        }
        let refs: Vec<&str> = s.terminals.iter().map(String::as_str).collect();
        if cfg_distinctive && !is_distinctive(&label, &refs) {
            continue;
        }
        return Ok((label, s.terminals));
    }
    Err(SimError::RejectionExhausted(ATTEMPTS))
}

/// Samples a mode string, a trajectory and its detections. The RNG is seeded
/// from `cfg.seed`, so equal configurations give identical scenarios.
pub fn simulate<T: Real>(g: &Grammar, cfg: &ScenarioConfig<T>) -> Result<Scenario<T>, SimError> {
    cfg.validate()?;
    let sampler = Sampler::new(g, cfg.max_depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (label, modes) = draw_modes(&sampler, cfg.distinctive, cfg.max_modes, &mut rng)?;
    scenario_from_modes(label, modes, cfg, &mut rng)
}

/// Trajectory and detections for a given mode string.
pub fn scenario_from_modes<T: Real, R: Rng + ?Sized>(
    label: String,
    modes: Vec<String>,
    cfg: &ScenarioConfig<T>,
    rng: &mut R,
) -> Result<Scenario<T>, SimError> {
    let truth = modes_to_trajectory(&modes, cfg, rng)?;
    let detections = emit_detections(&truth, cfg, rng)?;
    Ok(Scenario { label, modes, truth, detections })
}

/// Arrival-ordered detection with its hidden source.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedDetection<T> {
    pub detection: Detection<T>,
    /// Index into [`Pincer::targets`].
    pub source: usize,
    /// Index into the source's truth sequence.
    pub truth_index: usize,
}

/// Two mirrored arcs whose detections arrive interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Pincer<T: Real> {
    pub targets: Vec<Scenario<T>>,
    pub stream: Vec<TaggedDetection<T>>,
}

/// Mirror image of a mode string about the east-west axis.
pub fn mirror_modes(modes: &[String]) -> Vec<String> {
    modes
        .iter()
        .map(|m| {
            let flipped = match m.as_str() {
                "a" => "c",
                "c" => "a",
                "d" => "h",
                "h" => "d",
                "e" => "g",
                "g" => "e",
                other => other,
            };
            flipped.to_string()
        })
        .collect()
}

/// Lateral separation of the two pincer arms at scan 0, metres.
pub const PINCER_OFFSET: f64 = 2000.0;

/// An up-right arc and its mirror image, a down-right arc, started
/// `offset` metres apart north-south. Within a scan the two detections
/// arrive in random order; identities are only kept in the tags.
pub fn scenario_pincer<T: Real>(g_ur: &Grammar, cfg: &ScenarioConfig<T>, offset: T) -> Result<Pincer<T>, SimError> {
    cfg.validate()?;
    let sampler = Sampler::new(g_ur, cfg.max_depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (label, modes) = draw_modes(&sampler, cfg.distinctive, cfg.max_modes, &mut rng)?;
    let half = offset * T::lit(0.5);
    let up = ScenarioConfig { start: [cfg.start[0], cfg.start[1] + half], ..cfg.clone() };
    let down = ScenarioConfig { start: [cfg.start[0], cfg.start[1] - half], ..cfg.clone() };
    let mirrored = mirror_modes(&modes);
    let mirror_label = if label == "A_ur" { "A_dr".to_string() } else { format!("mirror({label})") };
    let a = scenario_from_modes(label, modes, &up, &mut rng)?;
    let b = scenario_from_modes(mirror_label, mirrored, &down, &mut rng)?;
    let mut stream = Vec::with_capacity(a.detections.len() + b.detections.len());
    for k in 0..a.detections.len().max(b.detections.len()) {
        let mut pair = Vec::new();
        if let Some(d) = a.detections.get(k) {
            pair.push(TaggedDetection { detection: *d, source: 0, truth_index: k });
        }
        if let Some(d) = b.detections.get(k) {
            pair.push(TaggedDetection { detection: *d, source: 1, truth_index: k });
        }
        if pair.len() == 2 && rng.random::<bool>() {
            pair.swap(0, 1);
        }
        stream.extend(pair);
    }
    Ok(Pincer { targets: vec![a, b], stream })
}
