use nalgebra::{Matrix2, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{heading_log_factor, TrackerConfig, N_MODES};
use crate::kinematics::{mode_noise_cov, observe, transition_matrices, Detection, KinematicState};
use crate::num::{normalize_log_weights, Real};

/// Weighted particles, each carrying a state and a mode index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet<T: Real> {
    pub states: Vec<Vector4<T>>,
    pub modes: Vec<usize>,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfStep<T: Real> {
    /// Effective sample size before any resampling.
    pub n_eff: T,
    pub resampled: bool,
    /// Every weight underflowed; weights were reset to uniform.
    pub diverged: bool,
    pub mode_probs: [T; N_MODES],
    pub estimate: KinematicState<T>,
}

impl<T: Real> ParticleSet<T> {
    /// `n` particles drawn from `N(init.mean, init.cov)` with modes spread
    /// uniformly.
    pub fn from_gaussian<R: Rng + ?Sized>(init: &KinematicState<T>, n: usize, rng: &mut R) -> Self {
        let l = cholesky4(&init.cov);
        let states = (0..n).map(|_| init.mean + l * std_normal4(rng)).collect();
        let modes = (0..n).map(|i| i % N_MODES).collect();
        ParticleSet { states, modes, weights: vec![T::one() / T::lit(n as f64); n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mode_probs(&self) -> [T; N_MODES] {
        let mut p = [T::zero(); N_MODES];
        for (&m, &w) in self.modes.iter().zip(&self.weights) {
            p[m] += w;
        }
        p
    }

    /// Weighted mean and covariance of the particle states.
    pub fn estimate(&self, t: usize) -> KinematicState<T> {
        let mut mean = Vector4::zeros();
        for (x, &w) in self.states.iter().zip(&self.weights) {
            mean += x * w;
        }
        let mut cov = nalgebra::Matrix4::zeros();
        for (x, &w) in self.states.iter().zip(&self.weights) {
            let d = x - mean;
            cov += d * d.transpose() * w;
        }
        KinematicState::new(mean, (cov + cov.transpose()) * T::lit(0.5), t)
    }
}

fn std_normal4<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Vector4<T> {
    Vector4::from_fn(|_, _| T::lit(StandardNormal.sample(rng)))
}

fn cholesky4<T: Real>(m: &nalgebra::Matrix4<T>) -> nalgebra::Matrix4<T> {
    match m.cholesky() {
        Some(c) => c.l(),
        None => {
            let (fixed, _) = crate::kinematics::repair_covariance(m);
            let jitter = nalgebra::Matrix4::identity() * T::lit(1e-9);
            (fixed + jitter).cholesky().map(|c| c.l()).unwrap_or_else(nalgebra::Matrix4::zeros)
        }
    }
}

fn cholesky2<T: Real>(m: &Matrix2<T>) -> Matrix2<T> {
    m.cholesky().map(|c| c.l()).unwrap_or_else(Matrix2::zeros)
}

/// `1 / Σ w²` of normalized weights.
pub fn effective_sample_size<T: Real>(weights: &[T]) -> T {
    let s = weights.iter().fold(T::zero(), |a, &w| a + w * w);
    if s > T::zero() {
        T::one() / s
    } else {
        T::zero()
    }
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers
/// into the cumulative weights.
pub fn systematic_resample_indices<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    let step = total / T::lit(n as f64);
    let u0: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = (T::lit(u0) + T::lit(k as f64)) * step;
        while u > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Resamples in place and resets the weights to uniform.
pub fn systematic_resample<T: Real, R: Rng + ?Sized>(ps: &mut ParticleSet<T>, rng: &mut R) {
    let idx = systematic_resample_indices(&ps.weights, rng);
    ps.states = idx.iter().map(|&i| ps.states[i]).collect();
    ps.modes = idx.iter().map(|&i| ps.modes[i]).collect();
    let n = ps.len();
    ps.weights = vec![T::one() / T::lit(n as f64); n];
}

/// Generic particle filter step with caller-supplied dynamics and
/// likelihood. `propagate` moves one particle (state, mode) in place;
/// `loglik` returns its log measurement likelihood, or `None` to leave the
/// weight unchanged.
pub fn pf_step_with<T, R, P, L>(
    ps: &mut ParticleSet<T>,
    mut propagate: P,
    mut loglik: L,
    resample_threshold: T,
    t: usize,
    rng: &mut R,
) -> PfStep<T>
where
    T: Real,
    R: Rng + ?Sized,
    P: FnMut(&mut Vector4<T>, &mut usize, &mut R),
    L: FnMut(&Vector4<T>, usize) -> Option<T>,
{
    for (x, m) in ps.states.iter_mut().zip(ps.modes.iter_mut()) {
        propagate(x, m, rng);
    }
    let lw: Vec<T> = ps
        .states
        .iter()
        .zip(&ps.modes)
        .zip(&ps.weights)
        .map(|((x, &m), &w)| crate::num::ln_or_neg_inf(w) + loglik(x, m).unwrap_or_else(T::zero))
        .collect();
    let (w, total) = normalize_log_weights(&lw);
    let n = ps.len();
    let diverged = !total.is_finite_value();
    ps.weights = if diverged { vec![T::one() / T::lit(n as f64); n] } else { w };
    let n_eff = effective_sample_size(&ps.weights);
    let mode_probs = ps.mode_probs();
    let estimate = ps.estimate(t);
    let resampled = n_eff < resample_threshold * T::lit(n as f64);
    if resampled {
        systematic_resample(ps, rng);
    }
    PfStep { n_eff, resampled, diverged, mode_probs, estimate }
}

/// Multiple-model particle filter step: modes drawn from the transition
/// rows, mode-conditioned process noise, and the polar measurement
/// likelihood on `(r, ṙ, θ)`.
pub fn pf_step<T: Real, R: Rng + ?Sized>(
    ps: &mut ParticleSet<T>,
    d: &Detection<T>,
    cfg: &TrackerConfig<T>,
    resample_threshold: T,
    rng: &mut R,
) -> PfStep<T> {
    let (f, g) = transition_matrices(cfg.noise.period);
    let chols: Vec<Matrix2<T>> = (0..N_MODES).map(|j| cholesky2(&mode_noise_cov(j, &cfg.noise))).collect();
    let pi = cfg.transition;
    let propagate = |x: &mut Vector4<T>, m: &mut usize, rng: &mut R| {
        let u: f64 = rng.random();
        let mut acc = T::zero();
        let mut next = N_MODES - 1;
        for j in 0..N_MODES {
            acc += pi[(*m, j)];
            if T::lit(u) < acc {
                next = j;
                break;
            }
        }
        *m = next;
        let e = Vector2::new(T::lit(StandardNormal.sample(rng)), T::lit(StandardNormal.sample(rng)));
        *x = f * *x + g * (chols[next] * e);
    };
    let n = &cfg.noise;
    let kappa = cfg.heading_kappa;
    let loglik = |x: &Vector4<T>, m: usize| -> Option<T> {
        if d.is_miss {
            return None;
        }
        let Ok(h) = observe(x, &d.platform) else { return Some(T::neg_infinity()) };
        let er = (d.r - h.r) / n.sigma_r;
        let ed = (d.rdot - h.rdot) / n.sigma_rdot;
        let mut dt = d.theta - h.theta;
        let pi2 = T::two_pi();
        while dt > T::pi() {
            dt -= pi2;
        }
        while dt < -T::pi() {
            dt += pi2;
        }
        let et = dt / n.sigma_theta;
        let mut l = -(er * er + ed * ed + et * et) * T::lit(0.5);
        l += heading_log_factor(m, &Vector2::new(x[2], x[3]), &Matrix2::zeros(), kappa);
        Some(l)
    };
    pf_step_with(ps, propagate, loglik, resample_threshold, d.t, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&vec![0.01f64; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(effective_sample_size(&[1.0f64, 0.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.5f64, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn resample_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = systematic_resample_indices(&[0.0f64, 0.0, 1.0, 0.0], &mut rng);
        assert_eq!(idx, vec![2, 2, 2, 2]);
    }

    #[test]
    fn uniform_weights_not_resampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = KinematicState::exact(0.0f64, 0.0, 0.0, 0.0, 0);
        let mut ps = ParticleSet::from_gaussian(&init, 100, &mut rng);
        let out = pf_step_with(&mut ps, |_, _, _| {}, |_, _| None, 0.5, 1, &mut rng);
        assert!((out.n_eff - 100.0).abs() < 1e-9);
        assert!(!out.resampled);
    }

    #[test]
    fn one_hot_triggers_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = KinematicState::exact(0.0f64, 0.0, 0.0, 0.0, 0);
        let mut ps = ParticleSet::from_gaussian(&init, 10, &mut rng);
        let out = pf_step_with(
            &mut ps,
            |_, _, _| {},
            |_, m| Some(if m == 3 { 0.0 } else { f64::NEG_INFINITY }),
            0.5,
            1,
            &mut rng,
        );
        assert!(out.resampled);
        assert!(ps.modes.iter().all(|&m| m == 3));
    }

    #[test]
    fn underflow_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = KinematicState::exact(0.0f64, 0.0, 0.0, 0.0, 0);
        let mut ps = ParticleSet::from_gaussian(&init, 10, &mut rng);
        let out = pf_step_with(&mut ps, |_, _, _| {}, |_, _| Some(f64::NEG_INFINITY), 0.5, 1, &mut rng);
        assert!(out.diverged);
        assert!((ps.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
