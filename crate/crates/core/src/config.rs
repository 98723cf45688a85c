//! JSON configuration files.
//!
//! Every key carries its unit in its name. Powers are given in dBm and the
//! noise figure in dB; they are converted to linear watts here and nowhere
//! else. The noise variance is derived as `n_f * N_0 * N_c * delta_f` unless
//! `noise_variance_dbm` is given.

use std::f64::consts::FRAC_PI_6;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RisError};
use crate::estimator::{SearchRegion, SearchSettings};
use crate::geometry::{anchors_in_front, RisPose, Vec2, SPEED_OF_LIGHT};
use crate::signal::{dbm_to_watts, noise_variance_from_psd, SystemConfig};

/// The shipped reference configuration.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub pose: PoseSection,
    #[serde(default)]
    pub search: SearchSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub wavelength_m: f64,
    pub element_spacing_m: f64,
    pub num_elements: usize,
    pub num_subcarriers: usize,
    pub num_transmissions: usize,
    pub subcarrier_spacing_hz: f64,
    pub p_t_dbm: f64,
    /// Linear antenna gains.
    pub g_t: f64,
    pub g_r: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Overrides the PSD-derived noise variance when present.
    #[serde(default)]
    pub noise_variance_dbm: Option<f64>,
    pub ifft_size: usize,
    pub p_tx_m: [f64; 2],
    pub p_rx_m: [f64; 2],
    #[serde(default = "default_speed_of_light")]
    pub speed_of_light_m_s: f64,
}

fn default_speed_of_light() -> f64 {
    SPEED_OF_LIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSection {
    pub p_ris_m: [f64; 2],
    pub alpha_rad: f64,
}

impl ConfigFile {
    /// Reference scenario with a search region below the anchor baseline.
    pub fn table_one() -> Self {
        Self {
            system: SystemSection {
                wavelength_m: 0.01,
                element_spacing_m: 0.005,
                num_elements: 64,
                num_subcarriers: 500,
                num_transmissions: 50,
                subcarrier_spacing_hz: 120e3,
                p_t_dbm: 10.0,
                g_t: 2.0,
                g_r: 2.0,
                noise_psd_dbm_hz: -174.0,
                noise_figure_db: 8.0,
                noise_variance_dbm: Some(-88.0),
                ifft_size: 4096,
                p_tx_m: [0.0, 2.0],
                p_rx_m: [2.0, 2.0],
                speed_of_light_m_s: SPEED_OF_LIGHT,
            },
            pose: PoseSection {
                p_ris_m: [0.0, 0.0],
                alpha_rad: FRAC_PI_6,
            },
            search: SearchSettings {
                region: Some(SearchRegion {
                    x_min_m: -20.0,
                    x_max_m: 20.0,
                    y_min_m: -20.0,
                    y_max_m: 2.0,
                }),
                ..SearchSettings::default()
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RisError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn system_config(&self) -> SystemConfig {
        let s = &self.system;
        let noise_variance = match s.noise_variance_dbm {
            Some(dbm) => dbm_to_watts(dbm),
            None => noise_variance_from_psd(
                s.noise_figure_db,
                s.noise_psd_dbm_hz,
                s.num_subcarriers,
                s.subcarrier_spacing_hz,
            ),
        };
        SystemConfig {
            wavelength: s.wavelength_m,
            element_spacing: s.element_spacing_m,
            num_elements: s.num_elements,
            num_subcarriers: s.num_subcarriers,
            num_transmissions: s.num_transmissions,
            subcarrier_spacing: s.subcarrier_spacing_hz,
            tx_power: dbm_to_watts(s.p_t_dbm),
            gain_tx: s.g_t,
            gain_rx: s.g_r,
            noise_variance,
            ifft_size: s.ifft_size,
            p_tx: Vec2::new(s.p_tx_m[0], s.p_tx_m[1]),
            p_rx: Vec2::new(s.p_rx_m[0], s.p_rx_m[1]),
            speed_of_light: s.speed_of_light_m_s,
        }
    }

    pub fn pose(&self) -> RisPose {
        RisPose::new(
            Vec2::new(self.pose.p_ris_m[0], self.pose.p_ris_m[1]),
            self.pose.alpha_rad,
        )
    }

    /// Converts to runtime types, reporting every violated invariant at once.
    pub fn resolve(&self) -> Result<(SystemConfig, RisPose, SearchSettings)> {
        let cfg = self.system_config();
        let pose = self.pose();
        let mut errors = Vec::new();
        for check in [cfg.validate(), self.search.validate()] {
            match check {
                Err(RisError::InvalidConfig(list)) => errors.extend(list),
                Err(e) => errors.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if !pose.is_finite() {
            errors.push("pose must be finite".into());
        } else if errors.is_empty() {
            if let Err(e) = cfg.path_delay(&pose.center) {
                errors.push(format!("pose: {e}"));
            } else if !anchors_in_front(&pose, &cfg.p_tx, &cfg.p_rx) {
                errors.push("pose puts an anchor behind the reflecting surface".into());
            }
        }
        if let Some(r) = &self.search.region {
            if pose.is_finite() && !r.contains(&pose.center) {
                errors.push("pose lies outside search.region".into());
            }
        }
        if errors.is_empty() {
            Ok((cfg, pose, self.search))
        } else {
            Err(RisError::InvalidConfig(errors))
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    let file = serde_json::from_str::<ConfigFile>(&text)
        .map_err(|e| RisError::Parse(format!("{}: {e}", path.display())))?;
    file.resolve()?;
    Ok(file)
}

pub fn parse_config(path: &Path) -> Result<(SystemConfig, RisPose, SearchSettings)> {
    load_config_file(path)?.resolve()
}
