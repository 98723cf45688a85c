//! Fisher information and Cramér-Rao bounds.
//!
//! The channel-level parameter vector is `eta = [rho, phi, tau, x, y, alpha]`
//! and the geometric one is `zeta = [rho, phi, x, y, alpha]`; `tau` is a
//! function of `(x, y)` through the anchor distances.
//!
//! Every derivative of the noiseless mean factors as
//! `sqrt(P_t) e^{j phi} e^{-j 2 pi tau n df} * f_l(n) * c_l(t)`, where only the
//! `tau` row has a subcarrier-dependent factor `f(n) = -j 2 pi n df`. The FIM
//! sum over `(t, n)` therefore splits into a product of a subcarrier moment and
//! a transmission sum, which is what [`fim_eta`] evaluates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Result, RisError};
use crate::geometry::{array_axis_derivative, element_offset, element_positions, RisPose, Vec2};
use crate::signal::{
    channel_amplitude, delay_steering, nearfield_response, PhaseProfiles, SystemConfig,
};

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type Matrix6x5 = SMatrix<f64, 6, 5>;

/// Equilibrated condition number above which a FIM is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

pub const ETA_LEN: usize = 6;
pub const IDX_RHO: usize = 0;
pub const IDX_PHI: usize = 1;
pub const IDX_TAU: usize = 2;
pub const IDX_X: usize = 3;
pub const IDX_Y: usize = 4;
pub const IDX_ALPHA: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaParams {
    pub rho: f64,
    pub phi: f64,
    pub tau: f64,
    pub p_ris: Vec2,
    pub alpha: f64,
}

impl EtaParams {
    /// Parameters implied by the geometry for a given pose and gain phase.
    pub fn from_pose(cfg: &SystemConfig, pose: &RisPose, phi: f64) -> Result<Self> {
        Ok(Self {
            rho: channel_amplitude(cfg, &pose.center)?,
            phi,
            tau: cfg.path_delay(&pose.center)?,
            p_ris: pose.center,
            alpha: pose.alpha,
        })
    }

    pub fn to_array(&self) -> [f64; ETA_LEN] {
        [
            self.rho,
            self.phi,
            self.tau,
            self.p_ris.x,
            self.p_ris.y,
            self.alpha,
        ]
    }

    pub fn from_array(v: [f64; ETA_LEN]) -> Self {
        Self {
            rho: v[0],
            phi: v[1],
            tau: v[2],
            p_ris: Vec2::new(v[3], v[4]),
            alpha: v[5],
        }
    }

    pub fn pose(&self) -> RisPose {
        RisPose {
            center: self.p_ris,
            alpha: self.alpha,
        }
    }
}

/// `b`, `db/dx`, `db/dy` and `db/dalpha` at a pose.
#[derive(Debug, Clone)]
pub struct ResponseDerivatives {
    pub b: DVector<Complex64>,
    pub d_x: DVector<Complex64>,
    pub d_y: DVector<Complex64>,
    pub d_alpha: DVector<Complex64>,
}

pub fn response_derivatives(cfg: &SystemConfig, pose: &RisPose) -> Result<ResponseDerivatives> {
    let b = nearfield_response(pose, cfg)?;
    let k = cfg.wavenumber();
    let m_count = cfg.num_elements;
    let r_tx0 = (pose.center - cfg.p_tx).norm();
    let r_rx0 = (pose.center - cfg.p_rx).norm();
    let kappa_tx0 = (pose.center - cfg.p_tx) / r_tx0;
    let kappa_rx0 = (pose.center - cfg.p_rx) / r_rx0;
    let axis_rate = array_axis_derivative(pose.alpha);
    let elements = element_positions(pose, cfg.element_spacing, m_count);

    let mut d_x = DVector::zeros(m_count);
    let mut d_y = DVector::zeros(m_count);
    let mut d_alpha = DVector::zeros(m_count);
    for (m, p) in elements.iter().enumerate() {
        let r_tx = (p - cfg.p_tx).norm();
        let r_rx = (p - cfg.p_rx).norm();
        if !(r_tx > 0.0 && r_rx > 0.0) {
            return Err(RisError::DegenerateGeometry(format!(
                "element {m} coincides with an anchor"
            )));
        }
        let kappa_tx = (p - cfg.p_tx) / r_tx;
        let kappa_rx = (p - cfg.p_rx) / r_rx;
        let grad = kappa_tx + kappa_rx - kappa_tx0 - kappa_rx0;
        let element_rate = axis_rate * (element_offset(m, m_count) * cfg.element_spacing);
        let psi = kappa_tx.dot(&element_rate) + kappa_rx.dot(&element_rate);
        let factor = Complex64::new(0.0, -k) * b[m];
        d_x[m] = factor * grad.x;
        d_y[m] = factor * grad.y;
        d_alpha[m] = factor * psi;
    }
    Ok(ResponseDerivatives {
        b,
        d_x,
        d_y,
        d_alpha,
    })
}

/// Per-transmission coefficients `c_l(t)` of each eta derivative (`6 x T`).
fn transmission_coefficients(
    eta: &EtaParams,
    derivs: &ResponseDerivatives,
    profiles: &PhaseProfiles,
) -> DMatrix<Complex64> {
    let gamma_t = profiles.gamma.transpose();
    let s_b = &gamma_t * &derivs.b;
    let s_x = &gamma_t * &derivs.d_x;
    let s_y = &gamma_t * &derivs.d_y;
    let s_alpha = &gamma_t * &derivs.d_alpha;
    let rho = Complex64::new(eta.rho, 0.0);
    let t_count = s_b.len();
    let mut c = DMatrix::zeros(ETA_LEN, t_count);
    for t in 0..t_count {
        c[(IDX_RHO, t)] = s_b[t];
        c[(IDX_PHI, t)] = Complex64::new(0.0, eta.rho) * s_b[t];
        c[(IDX_TAU, t)] = rho * s_b[t];
        c[(IDX_X, t)] = rho * s_x[t];
        c[(IDX_Y, t)] = rho * s_y[t];
        c[(IDX_ALPHA, t)] = rho * s_alpha[t];
    }
    c
}

fn check_profiles(cfg: &SystemConfig, profiles: &PhaseProfiles) -> Result<()> {
    if profiles.gamma.nrows() != cfg.num_elements || profiles.gamma.ncols() != cfg.num_transmissions
    {
        return Err(RisError::InvalidInput(format!(
            "phase profiles are {}x{}, expected {}x{}",
            profiles.gamma.nrows(),
            profiles.gamma.ncols(),
            cfg.num_elements,
            cfg.num_transmissions
        )));
    }
    Ok(())
}

/// Derivatives of every entry of the noiseless mean with respect to eta.
///
/// Row `l` holds `d mu[n, t] / d eta_l` at column `t * N_c + n`.
pub fn mu_derivatives(
    cfg: &SystemConfig,
    eta: &EtaParams,
    profiles: &PhaseProfiles,
) -> Result<DMatrix<Complex64>> {
    check_profiles(cfg, profiles)?;
    let derivs = response_derivatives(cfg, &eta.pose())?;
    let c = transmission_coefficients(eta, &derivs, profiles);
    let n_c = cfg.num_subcarriers;
    let d = delay_steering(eta.tau, n_c, cfg.subcarrier_spacing);
    let common = Complex64::from_polar(cfg.tx_power.sqrt(), eta.phi);
    let mut out = DMatrix::zeros(ETA_LEN, n_c * cfg.num_transmissions);
    for t in 0..cfg.num_transmissions {
        for n in 0..n_c {
            let base = common * d[n];
            let col = t * n_c + n;
            for l in 0..ETA_LEN {
                let f = if l == IDX_TAU {
                    Complex64::new(0.0, -2.0 * PI * n as f64 * cfg.subcarrier_spacing)
                } else {
                    Complex64::new(1.0, 0.0)
                };
                out[(l, col)] = base * f * c[(l, t)];
            }
        }
    }
    Ok(out)
}

/// `(2 / sigma^2) * sum Re{ d d^H }` over the columns of a derivative matrix.
pub fn fim_from_derivatives(derivatives: &DMatrix<Complex64>, noise_variance: f64) -> DMatrix<f64> {
    let rows = derivatives.nrows();
    let mut j = DMatrix::zeros(rows, rows);
    for col in derivatives.column_iter() {
        for a in 0..rows {
            for b in a..rows {
                j[(a, b)] += (col[a] * col[b].conj()).re;
            }
        }
    }
    for a in 0..rows {
        for b in 0..a {
            j[(a, b)] = j[(b, a)];
        }
    }
    j * (2.0 / noise_variance)
}

/// FIM over eta.
pub fn fim_eta(cfg: &SystemConfig, eta: &EtaParams, profiles: &PhaseProfiles) -> Result<Matrix6> {
    check_profiles(cfg, profiles)?;
    let derivs = response_derivatives(cfg, &eta.pose())?;
    let c = transmission_coefficients(eta, &derivs, profiles);

    let n_c = cfg.num_subcarriers as f64;
    let first_moment = n_c * (n_c - 1.0) / 2.0;
    let second_moment = (n_c - 1.0) * n_c * (2.0 * n_c - 1.0) / 6.0;
    let w = 2.0 * PI * cfg.subcarrier_spacing;

    // sum_n f_l(n) conj(f_k(n))
    let moment = |l: usize, k: usize| -> Complex64 {
        match (l == IDX_TAU, k == IDX_TAU) {
            (false, false) => Complex64::new(n_c, 0.0),
            (true, false) => Complex64::new(0.0, -w * first_moment),
            (false, true) => Complex64::new(0.0, w * first_moment),
            (true, true) => Complex64::new(w * w * second_moment, 0.0),
        }
    };

    let scale = 2.0 * cfg.tx_power / cfg.noise_variance;
    let mut j = Matrix6::zeros();
    for l in 0..ETA_LEN {
        for k in l..ETA_LEN {
            let cross: Complex64 = c
                .row(l)
                .iter()
                .zip(c.row(k).iter())
                .map(|(a, b)| a * b.conj())
                .sum();
            let value = scale * (moment(l, k) * cross).re;
            j[(l, k)] = value;
            j[(k, l)] = value;
        }
    }
    Ok(j)
}

/// Jacobian `d eta / d zeta`.
pub fn jacobian_t(p_ris: &Vec2, p_tx: &Vec2, p_rx: &Vec2, c: f64) -> Result<Matrix6x5> {
    let r_tx = (p_ris - p_tx).norm();
    let r_rx = (p_ris - p_rx).norm();
    if !(r_tx > 0.0 && r_rx > 0.0) {
        return Err(RisError::DegenerateGeometry(
            "RIS coincides with an anchor".into(),
        ));
    }
    let grad = ((p_ris - p_tx) / r_tx + (p_ris - p_rx) / r_rx) / c;
    let mut t = Matrix6x5::zeros();
    t[(IDX_RHO, 0)] = 1.0;
    t[(IDX_PHI, 1)] = 1.0;
    t[(IDX_TAU, 2)] = grad.x;
    t[(IDX_TAU, 3)] = grad.y;
    t[(IDX_X, 2)] = 1.0;
    t[(IDX_Y, 3)] = 1.0;
    t[(IDX_ALPHA, 4)] = 1.0;
    Ok(t)
}

pub fn fim_zeta(j_eta: &Matrix6, t: &Matrix6x5) -> Matrix5 {
    let j = t.transpose() * j_eta * t;
    (j + j.transpose()) * 0.5
}

/// Inverse of a symmetric FIM after diagonal equilibration.
///
/// Returns the inverse and the condition number of the equilibrated matrix.
pub fn invert_fim(j: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = j.nrows();
    let diag = j.diagonal();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(RisError::SingularFim {
            condition: f64::INFINITY,
        });
    }
    let scale = diag.map(|d| 1.0 / d.sqrt());
    let a = DMatrix::from_fn(n, n, |r, c| j[(r, c)] * scale[r] * scale[c]);
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(RisError::SingularFim { condition });
    }
    let inv_a = a
        .cholesky()
        .ok_or(RisError::SingularFim { condition })?
        .inverse();
    let inv = DMatrix::from_fn(n, n, |r, c| inv_a[(r, c)] * scale[r] * scale[c]);
    Ok((inv, condition))
}

/// TEB, PEB and OEB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    pub teb: f64,
    pub peb: f64,
    pub oeb: f64,
}

impl ErrorBounds {
    pub fn infinite() -> Self {
        Self {
            teb: f64::INFINITY,
            peb: f64::INFINITY,
            oeb: f64::INFINITY,
        }
    }
}

pub fn bounds(j_eta: &Matrix6, j_zeta: &Matrix5) -> Result<ErrorBounds> {
    let (inv_eta, _) = invert_fim(&DMatrix::from_iterator(6, 6, j_eta.iter().copied()))?;
    let (inv_zeta, _) = invert_fim(&DMatrix::from_iterator(5, 5, j_zeta.iter().copied()))?;
    Ok(ErrorBounds {
        teb: inv_eta[(IDX_TAU, IDX_TAU)].max(0.0).sqrt(),
        peb: (inv_zeta[(2, 2)] + inv_zeta[(3, 3)]).max(0.0).sqrt(),
        oeb: inv_zeta[(4, 4)].max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbReport {
    pub j_eta: Matrix6,
    pub j_zeta: Matrix5,
    pub teb: f64,
    pub peb: f64,
    pub oeb: f64,
    /// Largest condition estimate among FIMs that failed the singularity guard.
    pub singular: Option<f64>,
}

impl CrbReport {
    pub fn bounds(&self) -> ErrorBounds {
        ErrorBounds {
            teb: self.teb,
            peb: self.peb,
            oeb: self.oeb,
        }
    }
}

/// Full bound computation for a pose. Bounds whose FIM is near-singular are infinite.
pub fn crb_report(
    cfg: &SystemConfig,
    pose: &RisPose,
    phi: f64,
    profiles: &PhaseProfiles,
) -> Result<CrbReport> {
    let eta = EtaParams::from_pose(cfg, pose, phi)?;
    let j_eta = fim_eta(cfg, &eta, profiles)?;
    let t = jacobian_t(&pose.center, &cfg.p_tx, &cfg.p_rx, cfg.speed_of_light)?;
    let j_zeta = fim_zeta(&j_eta, &t);
    let mut singular = None;
    let mut guarded = |j: DMatrix<f64>| match invert_fim(&j) {
        Ok((inv, _)) => Ok(Some(inv)),
        Err(RisError::SingularFim { condition }) => {
            singular = Some(singular.map_or(condition, |c: f64| c.max(condition)));
            Ok(None)
        }
        Err(e) => Err(e),
    };
    // TEB and PEB/OEB come from different matrices; one being singular leaves the other finite.
    let inv_eta = guarded(DMatrix::from_iterator(6, 6, j_eta.iter().copied()))?;
    let inv_zeta = guarded(DMatrix::from_iterator(5, 5, j_zeta.iter().copied()))?;
    let teb = inv_eta.map_or(f64::INFINITY, |inv| inv[(IDX_TAU, IDX_TAU)].max(0.0).sqrt());
    let (peb, oeb) = inv_zeta.map_or((f64::INFINITY, f64::INFINITY), |inv| {
        (
            (inv[(2, 2)] + inv[(3, 3)]).max(0.0).sqrt(),
            inv[(4, 4)].max(0.0).sqrt(),
        )
    });
    Ok(CrbReport {
        j_eta,
        j_zeta,
        teb,
        peb,
        oeb,
        singular,
    })
}
