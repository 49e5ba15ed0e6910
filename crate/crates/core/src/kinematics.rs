//! Constant-velocity motion with mode-directed process noise, the GMTI
//! range / range-rate / azimuth observation, and its converted Cartesian form.
//!
//! Positions are on a flat ground plane, `x` east and `y` north, in meters.
//! Azimuth is measured clockwise from north: `theta = atan2(x̄, ȳ)`.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix4, Matrix4x2, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::MODE_TERMINALS;
use crate::num::Real;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("target coincides with the sensor (zero range)")]
    ZeroRange,
    #[error("a missed detection carries no measurement")]
    Miss,
    #[error("noise parameter `{0}` must be strictly positive")]
    NonPositive(&'static str),
    #[error("unknown mode terminal `{0}`")]
    UnknownMode(String),
}

/// Position/velocity estimate `(x, y, vx, vy)` with covariance at scan `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState<T: Real> {
    pub mean: Vector4<T>,
    pub cov: Matrix4<T>,
    pub t: usize,
}

impl<T: Real> KinematicState<T> {
    pub fn new(mean: Vector4<T>, cov: Matrix4<T>, t: usize) -> Self {
        KinematicState { mean, cov, t }
    }

    /// A state with zero covariance.
    pub fn exact(x: T, y: T, vx: T, vy: T, t: usize) -> Self {
        KinematicState { mean: Vector4::new(x, y, vx, vy), cov: Matrix4::zeros(), t }
    }

    pub fn x(&self) -> T {
        self.mean[0]
    }

    pub fn y(&self) -> T {
        self.mean[1]
    }

    pub fn vx(&self) -> T {
        self.mean[2]
    }

    pub fn vy(&self) -> T {
        self.mean[3]
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn distance_to(&self, other: &Self) -> T {
        (self.position() - other.position()).norm()
    }

    /// Trace of the position block of the covariance.
    pub fn position_cov_trace(&self) -> T {
        self.cov[(0, 0)] + self.cov[(1, 1)]
    }

    /// Symmetric to within `1e-9` (relative to the largest entry) and with no
    /// eigenvalue below `-1e-9` of that scale.
    pub fn cov_is_psd(&self) -> bool {
        is_sym_psd(&self.cov, 1e-9)
    }
}

pub(crate) fn is_sym_psd<T: Real>(m: &Matrix4<T>, tol: f64) -> bool {
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.to_f64_lossy().abs()));
    let tol = T::lit(tol * scale);
    let asym = (m - m.transpose()).abs().max();
    if asym > tol {
        return false;
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    sym.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
}

/// Symmetrizes `m` and clamps eigenvalues to at least `1e-12`. Returns the
/// repaired matrix and whether anything beyond symmetrization changed.
pub fn repair_covariance<T: Real>(m: &Matrix4<T>) -> (Matrix4<T>, bool) {
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let floor = T::lit(1e-12);
    if eig.eigenvalues.iter().all(|&e| e >= floor) {
        return (sym, false);
    }
    let clamped = eig.eigenvalues.map(|e| if e < floor { floor } else { e });
    let q = eig.eigenvectors;
    let fixed = q * Matrix4::from_diagonal(&clamped) * q.transpose();
    ((fixed + fixed.transpose()) * T::lit(0.5), true)
}

/// Sensor position (with altitude `z`) and ground velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Platform<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub vx: T,
    pub vy: T,
}

impl<T: Real> Platform<T> {
    /// Position after `dt` seconds of straight, level flight.
    pub fn advanced(&self, dt: T) -> Self {
        Platform { x: self.x + self.vx * dt, y: self.y + self.vy * dt, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement<T> {
    pub r: T,
    pub rdot: T,
    pub theta: T,
}

/// One radar report. A miss keeps the scan index and platform but its
/// measurement fields are meaningless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub t: usize,
    pub r: T,
    pub rdot: T,
    pub theta: T,
    pub platform: Platform<T>,
    #[serde(default)]
    pub is_miss: bool,
}

impl<T: Real> Detection<T> {
    pub fn hit(t: usize, m: Measurement<T>, platform: Platform<T>) -> Self {
        Detection { t, r: m.r, rdot: m.rdot, theta: m.theta, platform, is_miss: false }
    }

    pub fn miss(t: usize, platform: Platform<T>) -> Self {
        Detection { t, r: T::zero(), rdot: T::zero(), theta: T::zero(), platform, is_miss: true }
    }
}

/// How the along/orthogonal noise axes are oriented for a mode angle `a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAxes {
    /// Along axis is the heading `(sin a, cos a)` in east/north coordinates.
    #[default]
    Heading,
    /// Rotation `((sin a, cos a), (-cos a, sin a))` applied as `ρ D ρ'`. Its
    /// along axis is `(sin a, -cos a)`, which agrees with the heading only for
    /// the four axis-aligned modes.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig<T> {
    pub sigma_along: T,
    pub sigma_ortho: T,
    pub sigma_r: T,
    pub sigma_rdot: T,
    pub sigma_theta: T,
    /// Scan period in seconds.
    pub period: T,
    #[serde(default)]
    pub axes: NoiseAxes,
}

impl<T: Real> Default for NoiseConfig<T> {
    fn default() -> Self {
        NoiseConfig {
            sigma_along: T::lit(0.5),
            sigma_ortho: T::lit(0.05),
            sigma_r: T::lit(5.0),
            sigma_rdot: T::lit(0.1),
            sigma_theta: T::lit(2.5f64.to_radians()),
            period: T::lit(1.0),
            axes: NoiseAxes::Heading,
        }
    }
}

impl<T: Real> NoiseConfig<T> {
    /// Defaults with the along/orthogonal values exchanged (0.05 along, 0.5 across).
    pub fn swapped_process_noise() -> Self {
        let d = Self::default();
        NoiseConfig { sigma_along: d.sigma_ortho, sigma_ortho: d.sigma_along, ..d }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let checks = [
            ("sigma_along", self.sigma_along),
            ("sigma_ortho", self.sigma_ortho),
            ("sigma_r", self.sigma_r),
            ("sigma_rdot", self.sigma_rdot),
            ("sigma_theta", self.sigma_theta),
            ("period", self.period),
        ];
        for (name, v) in checks {
            if !(v > T::zero()) {
                return Err(KinematicsError::NonPositive(name));
            }
        }
        Ok(())
    }
}

/// Index of a mode terminal `a..h`.
pub fn mode_index(t: &str) -> Option<usize> {
    MODE_TERMINALS.iter().position(|&m| m == t)
}

/// Heading angle of mode `i`, `(i + 1) π/4`, measured clockwise from north.
pub fn mode_angle<T: Real>(i: usize) -> T {
    T::lit((i as f64 + 1.0) * std::f64::consts::FRAC_PI_4)
}

/// Unit heading vector `(sin a, cos a)` of mode `i` in east/north coordinates.
pub fn mode_heading<T: Real>(i: usize) -> Vector2<T> {
    let a: T = mode_angle(i);
    Vector2::new(a.sin(), a.cos())
}

/// `F` and `G` for sample period `t`.
pub fn transition_matrices<T: Real>(t: T) -> (Matrix4<T>, Matrix4x2<T>) {
    let o = T::zero();
    let l = T::one();
    let h = t * t * T::lit(0.5);
    #[rustfmt::skip]
    let f = Matrix4::new(
        l, o, t, o,
        o, l, o, t,
        o, o, l, o,
        o, o, o, l,
    );
    #[rustfmt::skip]
    let g = Matrix4x2::new(
        h, o,
        o, h,
        t, o,
        o, t,
    );
    (f, g)
}

/// Process-noise covariance of mode `i`: variance `σ_a²` along the mode
/// axis and `σ_o²` across it.
pub fn mode_noise_cov<T: Real>(i: usize, cfg: &NoiseConfig<T>) -> Matrix2<T> {
    let a: T = mode_angle(i);
    let (s, c) = (a.sin(), a.cos());
    let (along, ortho) = match cfg.axes {
        NoiseAxes::Heading => (Vector2::new(s, c), Vector2::new(c, -s)),
        NoiseAxes::Printed => (Vector2::new(s, -c), Vector2::new(c, s)),
    };
    let va = cfg.sigma_along * cfg.sigma_along;
    let vo = cfg.sigma_ortho * cfg.sigma_ortho;
    let q = along * along.transpose() * va + ortho * ortho.transpose() * vo;
    (q + q.transpose()) * T::lit(0.5)
}

/// Discretized process covariance `G Q G'` of mode `i`.
pub fn process_cov<T: Real>(i: usize, cfg: &NoiseConfig<T>) -> Matrix4<T> {
    let (_, g) = transition_matrices(cfg.period);
    g * mode_noise_cov(i, cfg) * g.transpose()
}

/// Noise-free range, range rate and azimuth of a ground target.
pub fn observe<T: Real>(x: &Vector4<T>, p: &Platform<T>) -> Result<Measurement<T>, KinematicsError> {
    let dx = x[0] - p.x;
    let dy = x[1] - p.y;
    let dz = -p.z;
    let r = (dx * dx + dy * dy + dz * dz).sqrt();
    if !(r > T::zero()) {
        return Err(KinematicsError::ZeroRange);
    }
    let rdot = (dx * (x[2] - p.vx) + dy * (x[3] - p.vy)) / r;
    Ok(Measurement { r, rdot, theta: dx.atan2(dy) })
}

/// Cartesian form of a detection: ground position and range rate with its
/// induced covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Converted<T: Real> {
    pub z: Vector3<T>,
    pub cov: Matrix3<T>,
}

/// Converts a detection to `(x, y, ṙ)`.
///
/// The slant range is first reduced to ground range `ρ = √(r² − z̄²)`, whose
/// standard deviation is `σ_r r/ρ`; the angle-dependent covariance then uses
/// `ρ` in place of `r`. With the sensor on the ground this is the plain polar
/// conversion.
pub fn convert_measurement<T: Real>(d: &Detection<T>, cfg: &NoiseConfig<T>) -> Result<Converted<T>, KinematicsError> {
    if d.is_miss {
        return Err(KinematicsError::Miss);
    }
    if !(d.r > T::zero()) {
        return Err(KinematicsError::ZeroRange);
    }
    let dz = d.platform.z;
    let rho2 = d.r * d.r - dz * dz;
    // a noisy slant range can fall below the altitude; keep a sliver of ground range
    let rho = if rho2 > T::zero() { rho2.sqrt() } else { d.r * T::lit(1e-6) };
    let sr = cfg.sigma_r * d.r / rho;
    let (s, c) = (d.theta.sin(), d.theta.cos());
    let z = Vector3::new(d.platform.x + rho * s, d.platform.y + rho * c, d.rdot);
    let cov = polar_cov(rho, d.theta, sr, cfg.sigma_theta, cfg.sigma_rdot);
    Ok(Converted { z, cov })
}

/// Covariance of `(r sin θ, r cos θ, ṙ)` under the first-order polar model.
pub fn polar_cov<T: Real>(r: T, theta: T, sigma_r: T, sigma_theta: T, sigma_rdot: T) -> Matrix3<T> {
    let (s, c) = (theta.sin(), theta.cos());
    let vr = sigma_r * sigma_r;
    let vt = r * r * sigma_theta * sigma_theta;
    let sx = vt * c * c + vr * s * s;
    let sy = vt * s * s + vr * c * c;
    let sxy = (vr - vt) * s * c;
    let o = T::zero();
    Matrix3::new(sx, sxy, o, sxy, sy, o, o, o, sigma_rdot * sigma_rdot)
}

/// Predicted converted measurement `(x, y, ṙ)` of a state.
pub fn converted_h<T: Real>(x: &Vector4<T>, p: &Platform<T>) -> Result<Vector3<T>, KinematicsError> {
    let m = observe(x, p)?;
    Ok(Vector3::new(x[0], x[1], m.rdot))
}

/// Jacobian of [`converted_h`] with respect to `(x, y, vx, vy)`.
pub fn measurement_jacobian<T: Real>(x: &Vector4<T>, p: &Platform<T>) -> Result<Matrix3x4<T>, KinematicsError> {
    let dx = x[0] - p.x;
    let dy = x[1] - p.y;
    let dz = -p.z;
    let r = (dx * dx + dy * dy + dz * dz).sqrt();
    if !(r > T::zero()) {
        return Err(KinematicsError::ZeroRange);
    }
    let dvx = x[2] - p.vx;
    let dvy = x[3] - p.vy;
    let rdot = (dx * dvx + dy * dvy) / r;
    let r2 = r * r;
    let o = T::zero();
    let l = T::one();
    #[rustfmt::skip]
    let j = Matrix3x4::new(
        l, o, o, o,
        o, l, o, o,
        dvx / r - rdot * dx / r2, dvy / r - rdot * dy / r2, dx / r, dy / r,
    );
    Ok(j)
}
