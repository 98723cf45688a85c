//! Independent forward model and finite-difference Fisher information used as
//! oracles. Nothing here calls the crate's own derivative code.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector2};
use num_complex::Complex64;
use ris_locate::SystemConfig;

/// `[rho, phi, tau, x, y, alpha]`
pub type Eta = [f64; 6];
/// `[rho, phi, x, y, alpha]`, with the delay implied by the position.
pub type Zeta = [f64; 5];

/// Reduced instance: 8 elements, 16 subcarriers, 4 transmissions, reference geometry.
pub fn reduced_config() -> SystemConfig {
    let mut cfg = SystemConfig::table_one();
    cfg.num_elements = 8;
    cfg.num_subcarriers = 16;
    cfg.num_transmissions = 4;
    cfg.ifft_size = 64;
    cfg
}

/// Noiseless mean, column-major `N_c x T` flattened, built from first principles.
pub fn mean(cfg: &SystemConfig, gamma: &DMatrix<Complex64>, eta: &Eta) -> Vec<Complex64> {
    let [rho, phi, tau, x, y, alpha] = *eta;
    let p = Vector2::new(x, y);
    let axis = Vector2::new(alpha.cos(), -alpha.sin());
    let k = 2.0 * PI / cfg.wavelength;
    let r_t0 = (p - cfg.p_tx).norm();
    let r_r0 = (p - cfg.p_rx).norm();
    let m_count = cfg.num_elements;
    let b: Vec<Complex64> = (0..m_count)
        .map(|m| {
            let pm = p + axis * ((m as f64 - (m_count as f64 - 1.0) / 2.0) * cfg.element_spacing);
            let excess = (pm - cfg.p_tx).norm() - r_t0 + (pm - cfg.p_rx).norm() - r_r0;
            Complex64::from_polar(1.0, -k * excess)
        })
        .collect();
    let g = Complex64::from_polar(rho * cfg.tx_power.sqrt(), phi);
    let mut out = Vec::with_capacity(cfg.num_subcarriers * cfg.num_transmissions);
    for t in 0..cfg.num_transmissions {
        let s: Complex64 = (0..m_count).map(|m| gamma[(m, t)] * b[m]).sum();
        for n in 0..cfg.num_subcarriers {
            let d = Complex64::from_polar(1.0, -2.0 * PI * tau * n as f64 * cfg.subcarrier_spacing);
            out.push(g * d * s);
        }
    }
    out
}

pub fn eta_of(cfg: &SystemConfig, zeta: &Zeta) -> Eta {
    let p = Vector2::new(zeta[2], zeta[3]);
    let tau = ((p - cfg.p_tx).norm() + (p - cfg.p_rx).norm()) / cfg.speed_of_light;
    [zeta[0], zeta[1], tau, zeta[2], zeta[3], zeta[4]]
}

/// Four-point central difference of `f` along coordinate `i` with step `h`.
pub fn central_difference<const N: usize>(
    f: impl Fn(&[f64; N]) -> Vec<Complex64>,
    x: &[f64; N],
    i: usize,
    h: f64,
) -> Vec<Complex64> {
    let at = |offset: f64| {
        let mut p = *x;
        p[i] += offset;
        f(&p)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    (0..p1.len())
        .map(|j| (8.0 * (p1[j] - m1[j]) - (p2[j] - m2[j])) / (12.0 * h))
        .collect()
}

/// Parameter-adapted steps: relative for the amplitude, phase-scaled otherwise.
pub fn eta_steps(cfg: &SystemConfig, eta: &Eta) -> Eta {
    // phase excursions of 1e-2 rad keep both truncation and rounding near 1e-10
    let tau_step = 1e-2 / (2.0 * PI * cfg.num_subcarriers as f64 * cfg.subcarrier_spacing);
    let len_step = 1e-2 * cfg.wavelength / (2.0 * PI);
    let alpha_step = len_step / (cfg.num_elements as f64 * cfg.element_spacing);
    [
        1e-4 * eta[0],
        1e-4,
        tau_step,
        len_step,
        len_step,
        alpha_step,
    ]
}

pub fn fd_derivatives_eta(
    cfg: &SystemConfig,
    gamma: &DMatrix<Complex64>,
    eta: &Eta,
) -> Vec<Vec<Complex64>> {
    let steps = eta_steps(cfg, eta);
    (0..6)
        .map(|i| central_difference(|e| mean(cfg, gamma, e), eta, i, steps[i]))
        .collect()
}

pub fn fd_derivatives_zeta(
    cfg: &SystemConfig,
    gamma: &DMatrix<Complex64>,
    zeta: &Zeta,
) -> Vec<Vec<Complex64>> {
    let eta_steps = eta_steps(cfg, &eta_of(cfg, zeta));
    let steps = [
        eta_steps[0],
        eta_steps[1],
        eta_steps[3],
        eta_steps[4],
        eta_steps[5],
    ];
    (0..5)
        .map(|i| central_difference(|z| mean(cfg, gamma, &eta_of(cfg, z)), zeta, i, steps[i]))
        .collect()
}

/// `(2 / sigma^2) Re{D D^H}`.
pub fn fim(derivatives: &[Vec<Complex64>], noise_variance: f64) -> DMatrix<f64> {
    let n = derivatives.len();
    DMatrix::from_fn(n, n, |a, b| {
        let s: f64 = derivatives[a]
            .iter()
            .zip(&derivatives[b])
            .map(|(x, y)| (x * y.conj()).re)
            .sum();
        2.0 * s / noise_variance
    })
}

pub fn eta_of_pose(cfg: &SystemConfig, x: f64, y: f64, alpha: f64, phi: f64) -> Eta {
    let p = Vector2::new(x, y);
    let (d_t, d_r) = ((p - cfg.p_tx).norm(), (p - cfg.p_rx).norm());
    let area = cfg.element_spacing * cfg.element_spacing / 4.0;
    let rho = (cfg.gain_tx * cfg.gain_rx * area * cfg.wavelength * cfg.wavelength
        / (64.0 * PI.powi(3)))
    .sqrt()
        / (d_t * d_r);
    [rho, phi, (d_t + d_r) / cfg.speed_of_light, x, y, alpha]
}

/// `‖A - B‖_F / ‖B‖_F` after scaling both by `diag(B)^{-1/2}` on each side.
pub fn equilibrated_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s: Vec<f64> = (0..b.nrows()).map(|i| 1.0 / b[(i, i)].sqrt()).collect();
    let scale =
        |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s[i] * s[j]);
    let (sa, sb) = (scale(a), scale(b));
    (sa - &sb).norm() / sb.norm()
}

pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Random pose below the anchor baseline with both anchors in front of the surface.
pub fn random_feasible_pose(cfg: &SystemConfig, rng: &mut impl rand::Rng) -> ris_locate::RisPose {
    loop {
        let center = Vector2::new(rng.random_range(-3.0..5.0), rng.random_range(-3.0..1.0));
        let pose = ris_locate::RisPose::new(center, rng.random_range(-PI..PI));
        let clear = (center - cfg.p_tx).norm() > 0.5 && (center - cfg.p_rx).norm() > 0.5;
        if clear && ris_locate::geometry::anchors_in_front(&pose, &cfg.p_tx, &cfg.p_rx) {
            return pose;
        }
    }
}

/// Search settings with the prior that the surface lies below the anchors.
pub fn below_baseline() -> ris_locate::SearchSettings {
    ris_locate::config::ConfigFile::table_one().search
}
