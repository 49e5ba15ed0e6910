use nalgebra::{Matrix3, Matrix4, Vector2, Vector4};

use super::{feedback_mix, heading_log_factor, FeedbackTiming, TrackerConfig, TrackerError, N_MODES};
use crate::kinematics::{
    convert_measurement, converted_h, measurement_jacobian, process_cov, repair_covariance, transition_matrices,
    Detection, KinematicState,
};
use crate::num::{normalize_log_weights, Real};

/// Per-mode estimates and mode probabilities of an IMM filter.
#[derive(Clone, Debug, PartialEq)]
pub struct ImmBank<T: Real> {
    pub means: [Vector4<T>; N_MODES],
    pub covs: [Matrix4<T>; N_MODES],
    pub probs: [T; N_MODES],
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImmStep<T: Real> {
    pub combined: KinematicState<T>,
    pub mode_probs: [T; N_MODES],
    /// Mode posterior from the transition prior and likelihoods alone,
    /// before any grammar prior is blended in.
    pub data_mode_probs: [T; N_MODES],
    /// Log of `Σ_j Λ_j c_j`, the measurement likelihood under the mixture.
    pub log_likelihood: T,
    /// Some covariance needed eigenvalue clamping.
    pub repaired: bool,
}

impl<T: Real> ImmBank<T> {
    /// Every mode starts from `init` with uniform mode probabilities.
    pub fn new(init: &KinematicState<T>) -> Self {
        ImmBank {
            means: [init.mean; N_MODES],
            covs: [init.cov; N_MODES],
            probs: [T::one() / T::lit(N_MODES as f64); N_MODES],
            t: init.t,
        }
    }

    pub fn combined(&self) -> KinematicState<T> {
        combine(&self.means, &self.covs, &self.probs, self.t)
    }
}

fn combine<T: Real>(
    means: &[Vector4<T>; N_MODES],
    covs: &[Matrix4<T>; N_MODES],
    w: &[T; N_MODES],
    t: usize,
) -> KinematicState<T> {
    let mut x = Vector4::zeros();
    for j in 0..N_MODES {
        x += means[j] * w[j];
    }
    let mut p = Matrix4::zeros();
    for j in 0..N_MODES {
        let d = means[j] - x;
        p += (covs[j] + d * d.transpose()) * w[j];
    }
    KinematicState::new(x, (p + p.transpose()) * T::lit(0.5), t)
}

fn normalize<T: Real>(v: &mut [T; N_MODES]) {
    let s = v.iter().fold(T::zero(), |a, &b| a + b);
    if s > T::zero() {
        for x in v.iter_mut() {
            *x /= s;
        }
    } else {
        *v = [T::one() / T::lit(N_MODES as f64); N_MODES];
    }
}

/// One IMM cycle: mixing, mode-matched EKF prediction and update in the
/// converted measurement space, mode probability update (optionally blended
/// with a grammar prior), and combination. A missed detection runs the
/// prediction only and propagates mode probabilities through the transition
/// matrix.
pub fn imm_step<T: Real>(
    bank: &ImmBank<T>,
    d: &Detection<T>,
    cfg: &TrackerConfig<T>,
    mode_prior: Option<&[T]>,
) -> Result<(ImmBank<T>, ImmStep<T>), TrackerError> {
    let pi = &cfg.transition;
    let w = &bank.probs;

    // predicted mode probabilities c_j and mixing weights u_{i|j}
    let mut c = [T::zero(); N_MODES];
    for j in 0..N_MODES {
        for i in 0..N_MODES {
            c[j] += pi[(i, j)] * w[i];
        }
    }
    let mut means = [Vector4::zeros(); N_MODES];
    let mut covs = [Matrix4::zeros(); N_MODES];
    for j in 0..N_MODES {
        let mut x0 = Vector4::zeros();
        let mut u = [T::zero(); N_MODES];
        for i in 0..N_MODES {
            u[i] = if c[j] > T::zero() { pi[(i, j)] * w[i] / c[j] } else { T::zero() };
            x0 += bank.means[i] * u[i];
        }
        let mut p0 = Matrix4::zeros();
        for i in 0..N_MODES {
            let dx = bank.means[i] - x0;
            p0 += (bank.covs[i] + dx * dx.transpose()) * u[i];
        }
        means[j] = x0;
        covs[j] = p0;
    }

    let (f, _) = transition_matrices(cfg.noise.period);
    let mut repaired = false;
    let mut log_lik = [T::zero(); N_MODES];
    let converted = if d.is_miss { None } else { Some(convert_measurement(d, &cfg.noise)?) };
    for j in 0..N_MODES {
        let x = f * means[j];
        let p = f * covs[j] * f.transpose() + process_cov(j, &cfg.noise);
        let Some(z) = &converted else {
            means[j] = x;
            covs[j] = (p + p.transpose()) * T::lit(0.5);
            continue;
        };
        let h = converted_h(&x, &d.platform)?;
        let hj = measurement_jacobian(&x, &d.platform)?;
        let s = hj * p * hj.transpose() + z.cov;
        let s = (s + s.transpose()) * T::lit(0.5);
        let (s_inv, log_det) = inverse_and_log_det(&s);
        let k = p * hj.transpose() * s_inv;
        let nu = z.z - h;
        let x_new = x + k * nu;
        let ikh = Matrix4::identity() - k * hj;
        let p_new = ikh * p * ikh.transpose() + k * z.cov * k.transpose();
        let (p_new, fixed) = repair_covariance(&p_new);
        repaired |= fixed;
        let two_pi = T::lit(std::f64::consts::TAU);
        let maha = (nu.transpose() * s_inv * nu)[0];
        log_lik[j] = -(maha + log_det + T::lit(3.0) * two_pi.ln()) * T::lit(0.5);
        let v = Vector2::new(x_new[2], x_new[3]);
        let pv = p_new.fixed_view::<2, 2>(2, 2).into_owned();
        log_lik[j] += heading_log_factor(j, &v, &pv, cfg.heading_kappa);
        means[j] = x_new;
        covs[j] = p_new;
    }

    // mode probability update
    let log_c: Vec<T> = c.iter().map(|&v| crate::num::ln_or_neg_inf(v)).collect();
    let post = |prior_log: &[T]| -> ([T; N_MODES], T) {
        let lw: Vec<T> = (0..N_MODES).map(|j| log_lik[j] + prior_log[j]).collect();
        let (p, total) = normalize_log_weights(&lw);
        let mut out = [T::zero(); N_MODES];
        out.copy_from_slice(&p);
        normalize(&mut out);
        (out, total)
    };
    let (mut probs, total) = post(&log_c);
    let data_mode_probs = probs;
    if let Some(prior) = mode_prior {
        let prior: Vec<T> = prior.to_vec();
        match cfg.feedback_timing {
            FeedbackTiming::PostLikelihood => {
                let log_g: Vec<T> = prior.iter().map(|&v| crate::num::ln_or_neg_inf(v)).collect();
                let (with_g, _) = post(&log_g);
                let mixed = feedback_mix(&probs, &with_g, cfg.feedback_weight)?;
                probs.copy_from_slice(&mixed);
            }
            FeedbackTiming::PreLikelihood => {
                let mixed = feedback_mix(&c, &prior, cfg.feedback_weight)?;
                let log_m: Vec<T> = mixed.iter().map(|&v| crate::num::ln_or_neg_inf(v)).collect();
                let (p, _) = post(&log_m);
                probs = p;
            }
        }
        normalize(&mut probs);
    }

    let t = d.t;
    let bank = ImmBank { means, covs, probs, t };
    let combined = bank.combined();
    let log_likelihood = if converted.is_some() { total } else { T::zero() };
    Ok((bank, ImmStep { combined, mode_probs: probs, data_mode_probs, log_likelihood, repaired }))
}

fn inverse_and_log_det<T: Real>(s: &Matrix3<T>) -> (Matrix3<T>, T) {
    if let Some(ch) = s.cholesky() {
        let l = ch.l();
        let log_det = (0..3).fold(T::zero(), |a, i| a + l[(i, i)].ln()) * T::lit(2.0);
        return (ch.inverse(), log_det);
    }
    let inv = s.try_inverse().unwrap_or_else(Matrix3::identity);
    (inv, s.determinant().abs().ln())
}

#[cfg(test)]
mod tests {
    use super::super::{default_transition, ModeMatrix};
    use super::*;
    use crate::kinematics::{observe, Platform};

    fn platform() -> Platform<f64> {
        Platform { x: 0.0, y: -2000.0, z: 3000.0, vx: 100.0, vy: 0.0 }
    }

    fn det(x: &Vector4<f64>, t: usize, p: Platform<f64>) -> Detection<f64> {
        Detection::hit(t, observe(x, &p).unwrap(), p)
    }

    fn cov0() -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(100.0, 100.0, 4.0, 4.0))
    }

    #[test]
    fn identity_transition_keeps_modes_unmixed() {
        let cfg = TrackerConfig::<f64> { transition: ModeMatrix::identity(), heading_kappa: 0.0, ..Default::default() };
        let mut bank = ImmBank::new(&KinematicState::new(Vector4::new(0.0, 0.0, 5.0, 0.0), cov0(), 0));
        bank.means[3] = Vector4::new(50.0, 50.0, 0.0, 0.0);
        let x = Vector4::new(5.0, 0.0, 5.0, 0.0);
        let (next, out) = imm_step(&bank, &det(&x, 1, platform()), &cfg, None).unwrap();
        // mode 3 evolved from its own estimate only
        let (f, _) = transition_matrices(1.0);
        let p = f * cov0() * f.transpose() + process_cov(3, &cfg.noise);
        let xp = f * Vector4::new(50.0, 50.0, 0.0, 0.0);
        let d = det(&x, 1, platform());
        let z = convert_measurement(&d, &cfg.noise).unwrap();
        let h = measurement_jacobian(&xp, &d.platform).unwrap();
        let s = h * p * h.transpose() + z.cov;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        let want = xp + k * (z.z - converted_h(&xp, &d.platform).unwrap());
        assert!((next.means[3] - want).abs().max() < 1e-9);
        assert!((out.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        bank.probs = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (_, out) = imm_step(&bank, &d, &cfg, None).unwrap();
        assert!((out.mode_probs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_likelihoods_leave_probs_at_prediction() {
        let cfg = TrackerConfig::<f64> { heading_kappa: 0.0, ..Default::default() };
        let bank = ImmBank::new(&KinematicState::new(Vector4::new(0.0, 0.0, 0.0, 0.0), cov0(), 0));
        // a miss: every likelihood is 1
        let (_, out) = imm_step(&bank, &Detection::miss(1, platform()), &cfg, None).unwrap();
        for p in out.mode_probs {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_normalized_and_cov_psd() {
        let cfg = TrackerConfig::<f64>::default();
        let mut x = Vector4::new(0.0, 0.0, 10.0, 0.0);
        let mut p = platform();
        let init = KinematicState::new(x, cov0(), 0);
        let mut bank = ImmBank::new(&init);
        let (f, _) = transition_matrices(1.0);
        for t in 1..40 {
            x = f * x;
            p = p.advanced(1.0);
            let prior = [0.05, 0.6, 0.05, 0.05, 0.05, 0.1, 0.05, 0.05];
            let (b, out) = imm_step(&bank, &det(&x, t, p), &cfg, Some(&prior)).unwrap();
            bank = b;
            assert!((out.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.combined.cov_is_psd());
        }
        let best = (0..8).max_by(|&a, &b| bank.probs[a].partial_cmp(&bank.probs[b]).unwrap()).unwrap();
        assert_eq!(best, 1);
        let _ = default_transition::<f64>();
    }
}
