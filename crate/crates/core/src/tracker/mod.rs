//! Multiple-model estimation of the motion mode and kinematic state: an
//! interacting multiple model filter with extended Kalman updates, a
//! multiple-model particle filter, and the grammar-driven mode prior.

mod imm;
mod pf;

use nalgebra::{Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{convert_measurement, mode_heading, Detection, KinematicState, KinematicsError, NoiseConfig};
use crate::num::Real;

pub use imm::{imm_step, ImmBank, ImmStep};
pub use pf::{
    effective_sample_size, pf_step, pf_step_with, systematic_resample, systematic_resample_indices, ParticleSet, PfStep,
};

pub const N_MODES: usize = 8;

/// Row-stochastic mode transition matrix, `pi[(i, j)] = P(a_k = j | a_{k-1} = i)`.
pub type ModeMatrix<T> = SMatrix<T, N_MODES, N_MODES>;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("distributions have different supports ({0} vs {1} entries)")]
    MismatchedSupport(usize, usize),
    #[error("feedback weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("transition matrix row {0} does not sum to 1")]
    BadTransition(usize),
}

/// Default transition matrix: 0.9 to stay, 0.04 to each neighbouring
/// heading and the remaining 0.02 shared by the other five.
pub fn default_transition<T: Real>() -> ModeMatrix<T> {
    ModeMatrix::from_fn(|i, j| {
        let d = (i as isize - j as isize).rem_euclid(N_MODES as isize);
        T::lit(match d {
            0 => 0.9,
            1 | 7 => 0.04,
            _ => 0.02 / 5.0,
        })
    })
}

pub fn check_transition<T: Real>(pi: &ModeMatrix<T>) -> Result<(), TrackerError> {
    for i in 0..N_MODES {
        let s: f64 = pi.row(i).iter().map(|v| v.to_f64_lossy()).sum();
        if (s - 1.0).abs() > 1e-9 || pi.row(i).iter().any(|v| *v < T::zero()) {
            return Err(TrackerError::BadTransition(i));
        }
    }
    Ok(())
}

/// Where the grammar's mode prior enters the mode update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackTiming {
    /// Average the two mode posteriors, one per mode prior.
    PostLikelihood,
    /// Average the two mode priors, then apply the likelihoods once.
    #[default]
    PreLikelihood,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig<T: Real> {
    /// Filter model. The default process noise is twice the simulator's:
    /// abrupt heading changes are larger maneuvers than the mode noise.
    pub noise: NoiseConfig<T>,
    pub transition: ModeMatrix<T>,
    /// Weight of the grammar prior in [`feedback_mix`].
    pub feedback_weight: T,
    pub feedback_timing: FeedbackTiming,
    /// Concentration of the heading factor applied to each mode likelihood;
    /// zero disables it. Process noise alone is symmetric under a half turn,
    /// so without it opposite headings are indistinguishable.
    pub heading_kappa: T,
    /// Prior standard deviation of the velocity component that the first
    /// detection does not observe, m/s.
    pub init_speed_sigma: T,
}

impl<T: Real> Default for TrackerConfig<T> {
    fn default() -> Self {
        TrackerConfig {
            noise: NoiseConfig { sigma_along: T::lit(1.0), sigma_ortho: T::lit(0.1), ..NoiseConfig::default() },
            transition: default_transition(),
            feedback_weight: T::lit(0.5),
            feedback_timing: FeedbackTiming::default(),
            heading_kappa: T::lit(8.0),
            init_speed_sigma: T::lit(15.0),
        }
    }
}

/// Convex combination `weight · cfg + (1 − weight) · rg`.
pub fn feedback_mix<T: Real>(rg: &[T], cfg: &[T], weight: T) -> Result<Vec<T>, TrackerError> {
    if rg.len() != cfg.len() {
        return Err(TrackerError::MismatchedSupport(rg.len(), cfg.len()));
    }
    if !(weight >= T::zero() && weight <= T::one()) {
        return Err(TrackerError::BadWeight(weight.to_f64_lossy()));
    }
    Ok(rg.iter().zip(cfg).map(|(&r, &c)| weight * c + (T::one() - weight) * r).collect())
}

/// Initial estimate from a single detection: converted position, and the
/// velocity component along the line of sight from the range rate. The
/// unobserved component gets `init_speed_sigma`.
pub fn init_from_detection<T: Real>(d: &Detection<T>, cfg: &TrackerConfig<T>) -> Result<KinematicState<T>, TrackerError> {
    let c = convert_measurement(d, &cfg.noise)?;
    let p = &d.platform;
    let los = Vector2::new(c.z[0] - p.x, c.z[1] - p.y);
    let rho = los.norm();
    if !(rho > T::zero()) {
        return Err(KinematicsError::ZeroRange.into());
    }
    let l = los / rho;
    // rdot = (rho / r) (l·v − l·v_p)
    let along = d.rdot * d.r / rho + l.dot(&Vector2::new(p.vx, p.vy));
    let v = l * along;
    let s_along = cfg.noise.sigma_rdot * d.r / rho;
    let o = Vector2::new(l[1], -l[0]);
    let vcov = l * l.transpose() * (s_along * s_along) + o * o.transpose() * (cfg.init_speed_sigma * cfg.init_speed_sigma);
    let mut cov = Matrix4::zeros();
    cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&c.cov.fixed_view::<2, 2>(0, 0));
    cov.fixed_view_mut::<2, 2>(2, 2).copy_from(&vcov);
    Ok(KinematicState::new(Vector4::new(c.z[0], c.z[1], v[0], v[1]), cov, d.t))
}

/// Log plausibility that velocity estimate `(v, pv)` points along mode `j`:
/// `κ s (cos Δ − 1)` with `Δ` the angle between `v` and the mode heading and
/// `s = |v|² / (|v|² + tr pv)` discounting poorly known velocities. Bounded
/// below by `−2κ`, so a wrong heading is penalized without locking the
/// filter into its current mode after a turn.
pub(crate) fn heading_log_factor<T: Real>(j: usize, v: &Vector2<T>, pv: &nalgebra::Matrix2<T>, kappa: T) -> T {
    let speed2 = v.norm_squared();
    if !(speed2 > T::zero()) || kappa == T::zero() {
        return T::zero();
    }
    let u = mode_heading::<T>(j);
    let cos = v.dot(&u) / speed2.sqrt();
    let s = speed2 / (speed2 + pv.trace());
    kappa * s * (cos - T::one())
}
