//! Observation model for the TX -> RIS -> RX path over `N_c` subcarriers and
//! `T` OFDM transmissions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RisError};
use crate::geometry::{self, element_positions, path_delay, RisPose, Vec2, SPEED_OF_LIGHT};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Receiver noise variance `n_f * N_0 * N_c * delta_f`, in watts.
pub fn noise_variance_from_psd(
    noise_figure_db: f64,
    noise_psd_dbm_hz: f64,
    num_subcarriers: usize,
    delta_f: f64,
) -> f64 {
    db_to_linear(noise_figure_db)
        * dbm_to_watts(noise_psd_dbm_hz)
        * num_subcarriers as f64
        * delta_f
}

/// Fixed physical and system parameters. Powers are linear watts.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub wavelength: f64,
    pub element_spacing: f64,
    pub num_elements: usize,
    pub num_subcarriers: usize,
    pub num_transmissions: usize,
    pub subcarrier_spacing: f64,
    pub tx_power: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    pub noise_variance: f64,
    pub ifft_size: usize,
    pub p_tx: Vec2,
    pub p_rx: Vec2,
    pub speed_of_light: f64,
}

impl SystemConfig {
    /// Reference scenario: 64 elements at half-wavelength spacing, 500 subcarriers
    /// at 120 kHz, 50 transmissions, TX at (0, 2), RX at (2, 2), P_t = 10 dBm and
    /// sigma^2 = -88 dBm.
    pub fn table_one() -> Self {
        Self {
            wavelength: 0.01,
            element_spacing: 0.005,
            num_elements: 64,
            num_subcarriers: 500,
            num_transmissions: 50,
            subcarrier_spacing: 120e3,
            tx_power: dbm_to_watts(10.0),
            gain_tx: 2.0,
            gain_rx: 2.0,
            noise_variance: dbm_to_watts(-88.0),
            ifft_size: 4096,
            p_tx: Vec2::new(0.0, 2.0),
            p_rx: Vec2::new(2.0, 2.0),
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    /// Lists every violated invariant.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let positive = [
            ("wavelength_m", self.wavelength),
            ("element_spacing_m", self.element_spacing),
            ("subcarrier_spacing_hz", self.subcarrier_spacing),
            ("tx power", self.tx_power),
            ("g_t", self.gain_tx),
            ("g_r", self.gain_rx),
            ("noise variance", self.noise_variance),
            ("speed_of_light_m_s", self.speed_of_light),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                errors.push(format!("{name} must be positive and finite (got {value})"));
            }
        }
        let counts = [
            ("num_elements", self.num_elements),
            ("num_subcarriers", self.num_subcarriers),
            ("num_transmissions", self.num_transmissions),
            ("ifft_size", self.ifft_size),
        ];
        for (name, value) in counts {
            if value < 1 {
                errors.push(format!("{name} must be at least 1"));
            }
        }
        if self.ifft_size < self.num_subcarriers {
            errors.push(format!(
                "ifft_size ({}) must be at least num_subcarriers ({})",
                self.ifft_size, self.num_subcarriers
            ));
        }
        if !self.ifft_size.is_power_of_two() {
            errors.push(format!(
                "ifft_size ({}) must be a power of two",
                self.ifft_size
            ));
        }
        for (name, p) in [("p_tx_m", self.p_tx), ("p_rx_m", self.p_rx)] {
            if !(p.x.is_finite() && p.y.is_finite()) {
                errors.push(format!("{name} must be finite"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(RisError::InvalidConfig(errors))
        }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn path_delay(&self, p_ris: &Vec2) -> Result<f64> {
        path_delay(&self.p_tx, &self.p_rx, p_ris, self.speed_of_light)
    }
}

/// Complex gain `rho * exp(j phi)` of the reflected path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGain {
    pub rho: f64,
    pub phi: f64,
}

impl ChannelGain {
    pub fn new(rho: f64, phi: f64) -> Self {
        Self {
            rho,
            phi: phi.rem_euclid(2.0 * PI),
        }
    }

    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.rho, self.phi)
    }
}

/// RIS phase profiles over time, one unit-modulus column per transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfiles {
    /// `M x T`
    pub gamma: DMatrix<Complex64>,
    pub seed: u64,
}

/// Ground truth kept alongside simulated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub pose: RisPose,
    pub gain: ChannelGain,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `N_c x T`
    pub y: DMatrix<Complex64>,
    pub profiles: PhaseProfiles,
    pub truth: Option<Truth>,
}

/// Free-space amplitude of the reflected path.
pub fn channel_amplitude(cfg: &SystemConfig, p_ris: &Vec2) -> Result<f64> {
    let d_tx = (cfg.p_tx - p_ris).norm();
    let d_rx = (cfg.p_rx - p_ris).norm();
    if !(d_tx > 0.0 && d_rx > 0.0) {
        return Err(RisError::DegenerateGeometry(
            "RIS coincides with an anchor".into(),
        ));
    }
    let area = cfg.element_spacing * cfg.element_spacing / 4.0;
    let numerator = cfg.gain_tx * cfg.gain_rx * area * cfg.wavelength * cfg.wavelength;
    Ok((numerator / (64.0 * PI.powi(3))).sqrt() / (d_tx * d_rx))
}

/// `[1, e^{-j 2 pi tau df}, ..., e^{-j 2 pi tau (N_c - 1) df}]`.
pub fn delay_steering(tau: f64, num_subcarriers: usize, delta_f: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        num_subcarriers,
        (0..num_subcarriers).map(|n| Complex64::cis(-2.0 * PI * tau * n as f64 * delta_f)),
    )
}

/// Per-element path-length excess `(R^t_m - R^t_o) + (R^r_m - R^r_o)`.
pub(crate) fn path_excess(pose: &RisPose, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let r_tx0 = (pose.center - cfg.p_tx).norm();
    let r_rx0 = (pose.center - cfg.p_rx).norm();
    if !(r_tx0 > 0.0 && r_rx0 > 0.0) {
        return Err(RisError::DegenerateGeometry(
            "RIS coincides with an anchor".into(),
        ));
    }
    Ok(
        element_positions(pose, cfg.element_spacing, cfg.num_elements)
            .iter()
            .map(|p| ((p - cfg.p_tx).norm() - r_tx0) + ((p - cfg.p_rx).norm() - r_rx0))
            .collect(),
    )
}

/// Near-field cascaded response `b = a_t (.) a_r`.
pub fn nearfield_response(pose: &RisPose, cfg: &SystemConfig) -> Result<DVector<Complex64>> {
    let k = cfg.wavenumber();
    let excess = path_excess(pose, cfg)?;
    Ok(DVector::from_iterator(
        excess.len(),
        excess.iter().map(|e| Complex64::cis(-k * e)),
    ))
}

/// Plane-wave response for spatial frequency `omega`, indexed from the array center.
pub fn ff_response(omega: f64, num_elements: usize, delta: f64, lambda: f64) -> DVector<Complex64> {
    let k = 2.0 * PI / lambda;
    DVector::from_iterator(
        num_elements,
        (0..num_elements).map(|m| {
            Complex64::cis(-k * geometry::element_offset(m, num_elements) * delta * omega)
        }),
    )
}

/// Uniform random phases, seeded and deterministic.
pub fn random_profiles(num_elements: usize, num_transmissions: usize, seed: u64) -> PhaseProfiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // column-major: element index varies fastest
    let gamma = DMatrix::from_fn(num_elements, num_transmissions, |_, _| {
        Complex64::cis(rng.random_range(0.0..2.0 * PI))
    });
    PhaseProfiles { gamma, seed }
}

/// Noiseless mean `g sqrt(P_t) d(tau) (Gamma^T b)^T`.
pub fn mean_observation(
    cfg: &SystemConfig,
    gain: Complex64,
    tau: f64,
    b: &DVector<Complex64>,
    profiles: &PhaseProfiles,
) -> DMatrix<Complex64> {
    let d = delay_steering(tau, cfg.num_subcarriers, cfg.subcarrier_spacing);
    let s = profiles.gamma.transpose() * b;
    let scale = gain * cfg.tx_power.sqrt();
    DMatrix::from_fn(cfg.num_subcarriers, s.len(), |n, t| scale * d[n] * s[t])
}

/// Circularly-symmetric complex Gaussian matrix with per-entry variance `variance`.
pub fn complex_noise(rows: usize, cols: usize, variance: f64, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (variance / 2.0).sqrt();
    let mut w = DMatrix::from_element(rows, cols, Complex64::new(0.0, 0.0));
    for v in w.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v = Complex64::new(sd * re, sd * im);
    }
    w
}

pub fn synthesize_observation(
    cfg: &SystemConfig,
    pose: &RisPose,
    profiles: &PhaseProfiles,
    phi: f64,
    noise_seed: Option<u64>,
) -> Result<Observation> {
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
    let rho = channel_amplitude(cfg, &pose.center)?;
    let tau = cfg.path_delay(&pose.center)?;
    let b = nearfield_response(pose, cfg)?;
    let gain = ChannelGain::new(rho, phi);
    let mut y = mean_observation(cfg, gain.complex(), tau, &b, profiles);
    if let Some(seed) = noise_seed {
        y += complex_noise(
            cfg.num_subcarriers,
            cfg.num_transmissions,
            cfg.noise_variance,
            seed,
        );
    }
    Ok(Observation {
        y,
        profiles: profiles.clone(),
        truth: Some(Truth {
            pose: *pose,
            gain,
            tau,
        }),
    })
}
