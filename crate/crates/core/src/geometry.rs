//! Planar geometry of the bi-static RIS scene.
//!
//! Orientation convention: the RIS array axis for orientation `alpha` is
//! `R(alpha)^T * e_x = (cos alpha, -sin alpha)`, i.e. `alpha` is measured
//! clockwise from the global +x axis. Anchor angles are measured
//! counter-clockwise from +y (`atan2(y, x) - pi/2`). With these two
//! conventions the far-field spatial frequency of the cascaded TX-RIS-RX
//! response is exactly `sin(theta_tx + alpha) + sin(theta_rx + alpha)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Vector2};

use crate::error::{Result, RisError};

/// Speed of light used throughout unless a config overrides it.
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Tolerance band within which an arcsin argument is clamped onto [-1, 1].
pub const ARCSIN_CLAMP: f64 = 1e-12;

pub type Vec2 = Vector2<f64>;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Unknown RIS pose: center position and orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisPose {
    pub center: Vec2,
    pub alpha: f64,
}

impl RisPose {
    pub fn new(center: Vec2, alpha: f64) -> Self {
        Self {
            center,
            alpha: wrap_angle(alpha),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.x.is_finite() && self.center.y.is_finite() && self.alpha.is_finite()
    }
}

/// TOA ellipse with the two anchors as foci.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParam {
    pub center: Vec2,
    pub beta: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
}

/// Counter-clockwise 2D rotation.
pub fn rotation_matrix(alpha: f64) -> Matrix2<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rotation_matrix`] with respect to its angle.
pub fn rotation_matrix_derivative(alpha: f64) -> Matrix2<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Unit vector along the RIS array axis.
pub fn array_axis(alpha: f64) -> Vec2 {
    rotation_matrix(alpha).transpose() * Vec2::x()
}

/// Derivative of [`array_axis`] with respect to `alpha`.
pub fn array_axis_derivative(alpha: f64) -> Vec2 {
    rotation_matrix_derivative(alpha).transpose() * Vec2::x()
}

/// Signed offset of element `m` from the array center, in units of the spacing.
#[inline]
pub fn element_offset(m: usize, num_elements: usize) -> f64 {
    m as f64 - (num_elements as f64 - 1.0) / 2.0
}

/// Global positions of the `num_elements` RIS elements, centered on the pose.
pub fn element_positions(pose: &RisPose, delta: f64, num_elements: usize) -> Vec<Vec2> {
    let axis = array_axis(pose.alpha);
    (0..num_elements)
        .map(|m| pose.center + axis * (element_offset(m, num_elements) * delta))
        .collect()
}

fn distance_checked(a: &Vec2, b: &Vec2, what: &str) -> Result<f64> {
    let d = (a - b).norm();
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(RisError::DegenerateGeometry(format!(
            "RIS coincides with the {what} at ({}, {})",
            b.x, b.y
        )))
    }
}

/// TX -> RIS -> RX propagation delay.
pub fn path_delay(p_tx: &Vec2, p_rx: &Vec2, p_ris: &Vec2, c: f64) -> Result<f64> {
    let d_tx = distance_checked(p_ris, p_tx, "transmitter")?;
    let d_rx = distance_checked(p_ris, p_rx, "receiver")?;
    Ok((d_tx + d_rx) / c)
}

/// Angles of the anchors seen from the RIS center, measured from +y.
pub fn anchor_angles(p_tx: &Vec2, p_rx: &Vec2, p_ris: &Vec2) -> Result<(f64, f64)> {
    distance_checked(p_ris, p_tx, "transmitter")?;
    distance_checked(p_ris, p_rx, "receiver")?;
    let angle = |anchor: &Vec2| {
        let d = anchor - p_ris;
        wrap_angle(d.y.atan2(d.x) - FRAC_PI_2)
    };
    Ok((angle(p_tx), angle(p_rx)))
}

/// Far-field spatial frequency at the RIS center.
pub fn omega_of(theta_tx: f64, theta_rx: f64, alpha: f64) -> f64 {
    (theta_tx + alpha).sin() + (theta_rx + alpha).sin()
}

pub fn ellipse_from_toa(p_tx: &Vec2, p_rx: &Vec2, tau_hat: f64, c: f64) -> Result<EllipseParam> {
    let separation = (p_rx - p_tx).norm();
    let path_length = c * tau_hat;
    if !(path_length > separation) {
        return Err(RisError::InfeasibleToa {
            path_length,
            separation,
        });
    }
    let center = (p_rx + p_tx) / 2.0;
    let semi_major = path_length / 2.0;
    let focal = (p_tx - center).norm();
    let semi_minor = (semi_major * semi_major - focal * focal).max(0.0).sqrt();
    let baseline = p_rx - p_tx;
    let beta = if separation > 0.0 {
        baseline.y.atan2(baseline.x)
    } else {
        0.0
    };
    Ok(EllipseParam {
        center,
        beta,
        semi_major,
        semi_minor,
    })
}

pub fn ellipse_point(e: &EllipseParam, nu: f64) -> Vec2 {
    let (s, c) = nu.sin_cos();
    rotation_matrix(e.beta) * Vec2::new(e.semi_major * c, e.semi_minor * s) + e.center
}

/// Inverse of [`ellipse_point`] for a point on (or radially projected onto) the ellipse.
pub fn ellipse_nu_of(e: &EllipseParam, p: &Vec2) -> f64 {
    let local = rotation_matrix(e.beta).transpose() * (p - e.center);
    (local.y / e.semi_minor).atan2(local.x / e.semi_major)
}

/// Which solution of `asin` to use when inverting the spatial frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArcsinBranch {
    Principal,
    Secondary,
}

/// Orientation that reproduces `omega_hat` for a RIS at `ellipse_point(e, nu)`.
pub fn alpha_from_nu(
    nu: f64,
    omega_hat: f64,
    e: &EllipseParam,
    p_tx: &Vec2,
    p_rx: &Vec2,
) -> Result<f64> {
    alpha_from_nu_branch(nu, omega_hat, e, p_tx, p_rx, ArcsinBranch::Principal)
}

pub fn alpha_from_nu_branch(
    nu: f64,
    omega_hat: f64,
    e: &EllipseParam,
    p_tx: &Vec2,
    p_rx: &Vec2,
    branch: ArcsinBranch,
) -> Result<f64> {
    let p = ellipse_point(e, nu);
    let (theta_tx, theta_rx) = anchor_angles(p_tx, p_rx, &p)?;
    alpha_from_angles(omega_hat, theta_tx, theta_rx, branch)
}

/// Solves `omega_of(theta_tx, theta_rx, alpha) = omega` for `alpha`.
pub fn alpha_from_angles(
    omega: f64,
    theta_tx: f64,
    theta_rx: f64,
    branch: ArcsinBranch,
) -> Result<f64> {
    let plus = (theta_tx + theta_rx) / 2.0;
    let minus = (theta_tx - theta_rx) / 2.0;
    let denom = 2.0 * minus.cos();
    if denom.abs() < f64::EPSILON {
        return Err(RisError::InfeasibleOrientation {
            argument: f64::INFINITY,
        });
    }
    let argument = omega / denom;
    if !argument.is_finite() || argument.abs() > 1.0 + ARCSIN_CLAMP {
        return Err(RisError::InfeasibleOrientation { argument });
    }
    let s = argument.clamp(-1.0, 1.0).asin();
    let sum_angle = match branch {
        ArcsinBranch::Principal => s,
        ArcsinBranch::Secondary => PI - s,
    };
    Ok(wrap_angle(sum_angle - plus))
}

/// Unit normal on the reflecting side, `R(alpha)^T e_y`.
pub fn surface_normal(alpha: f64) -> Vec2 {
    Vec2::new(alpha.sin(), alpha.cos())
}

/// True when both anchors are strictly on the reflecting side of the surface.
pub fn anchors_in_front(pose: &RisPose, p_tx: &Vec2, p_rx: &Vec2) -> bool {
    let n = surface_normal(pose.alpha);
    n.dot(&(p_tx - pose.center)) > 0.0 && n.dot(&(p_rx - pose.center)) > 0.0
}

/// Fraunhofer distance `2 D^2 / lambda` of an `num_elements`-element array.
pub fn fraunhofer_distance(num_elements: usize, delta: f64, lambda: f64) -> f64 {
    let aperture = num_elements as f64 * delta;
    2.0 * aperture * aperture / lambda
}
