//! Seeded Monte Carlo campaigns, sweeps and bound contours.
//!
//! Trial `i` of a campaign with master seed `s` draws its phase-profile seed,
//! noise seed and gain phase from ChaCha8 seeded with `s` on stream `i`, so
//! any trial can be reproduced on its own and the result does not depend on
//! how trials are scheduled across threads.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::crb::{crb_report, ErrorBounds};
use crate::error::{Result, RisError};
use crate::estimator::{estimate_pipeline, SearchSettings};
use crate::geometry::{wrap_angle, RisPose, Vec2};
use crate::signal::{
    dbm_to_watts, random_profiles, synthesize_observation, PhaseProfiles, SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialOptions {
    /// Skip the noise draw; every estimate should then be exact.
    pub noiseless: bool,
    /// Use one phase profile for every trial instead of redrawing it.
    pub fixed_profile: bool,
}

/// RMSEs over successful trials and RMS-averaged bounds over all trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStats {
    pub n_trials: usize,
    pub rmse_pos: f64,
    pub rmse_alpha: f64,
    pub rmse_tau: f64,
    pub peb: f64,
    pub oeb: f64,
    pub teb: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub stats: TrialStats,
}

/// Bounds at one sweep point, RMS-averaged over phase-profile draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsRow {
    pub axis_value: f64,
    pub bounds: ErrorBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// `10 log10(PEB)`, rows indexed by y and columns by x.
    pub peb_db: DMatrix<f64>,
    pub oeb_db: DMatrix<f64>,
    pub alpha: f64,
}

/// Which configuration parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Transmit power in dBm.
    Power,
    /// Subcarrier count at fixed spacing; noise variance scales with bandwidth.
    Subcarriers,
    /// RIS element count.
    Elements,
}

impl SweepAxis {
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Power => cfg.tx_power = dbm_to_watts(value),
            SweepAxis::Subcarriers => {
                let n_c = count_value(value, "subcarrier count")?;
                cfg.noise_variance = base.noise_variance * n_c as f64 / base.num_subcarriers as f64;
                cfg.num_subcarriers = n_c;
            }
            SweepAxis::Elements => cfg.num_elements = count_value(value, "element count")?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn count_value(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(RisError::InvalidInput(format!(
            "{what} must be a positive integer (got {value})"
        )))
    }
}

/// Per-trial seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSeeds {
    pub profile: u64,
    pub noise: u64,
    pub phi: f64,
}

pub fn trial_seeds(master_seed: u64, trial: u64, opts: &TrialOptions) -> TrialSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    let profile = rng.next_u64();
    let noise = rng.next_u64();
    let phi = rng.random_range(0.0..2.0 * PI);
    let profile = if opts.fixed_profile {
        fixed_profile_seed(master_seed)
    } else {
        profile
    };
    TrialSeeds {
        profile,
        noise,
        phi,
    }
}

fn fixed_profile_seed(master_seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::MAX);
    rng.next_u64()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    (pairwise_sum(&squares) / values.len() as f64).sqrt()
}

struct TrialResult {
    errors: Option<(f64, f64, f64)>,
    bounds: ErrorBounds,
}

fn bounds_for(cfg: &SystemConfig, pose: &RisPose, profiles: &PhaseProfiles) -> Result<ErrorBounds> {
    Ok(crb_report(cfg, pose, 0.0, profiles)?.bounds())
}

fn check_pose(cfg: &SystemConfig, pose: &RisPose) -> Result<()> {
    cfg.validate()?;
    if !pose.is_finite() {
        return Err(RisError::InvalidInput("pose must be finite".into()));
    }
    cfg.path_delay(&pose.center)?;
    Ok(())
}

pub fn run_trials(
    cfg: &SystemConfig,
    pose: &RisPose,
    n_trials: usize,
    master_seed: u64,
    s: &SearchSettings,
    opts: &TrialOptions,
) -> Result<TrialStats> {
    if n_trials == 0 {
        return Err(RisError::InvalidInput("n_trials must be at least 1".into()));
    }
    check_pose(cfg, pose)?;
    s.validate()?;

    let shared = if opts.fixed_profile {
        let profiles = random_profiles(
            cfg.num_elements,
            cfg.num_transmissions,
            fixed_profile_seed(master_seed),
        );
        let bounds = bounds_for(cfg, pose, &profiles)?;
        Some((profiles, bounds))
    } else {
        None
    };

    let results: Vec<Result<TrialResult>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let seeds = trial_seeds(master_seed, i, opts);
            let (profiles, bounds) = match &shared {
                Some((p, b)) => (p.clone(), *b),
                None => {
                    let p = random_profiles(cfg.num_elements, cfg.num_transmissions, seeds.profile);
                    let b = bounds_for(cfg, pose, &p)?;
                    (p, b)
                }
            };
            let noise = (!opts.noiseless).then_some(seeds.noise);
            let obs = synthesize_observation(cfg, pose, &profiles, seeds.phi, noise)?;
            let truth = obs.truth.expect("synthesized observations carry truth");
            let errors = estimate_pipeline(&obs, cfg, s).ok().map(|est| {
                (
                    (est.refined_pose.center - pose.center).norm(),
                    wrap_angle(est.refined_pose.alpha - pose.alpha),
                    est.toa.tau_hat - truth.tau,
                )
            });
            Ok(TrialResult { errors, bounds })
        })
        .collect();
    let results: Vec<TrialResult> = results.into_iter().collect::<Result<_>>()?;

    let ok: Vec<(f64, f64, f64)> = results.iter().filter_map(|r| r.errors).collect();
    let column =
        |f: fn(&ErrorBounds) -> f64| rms(&results.iter().map(|r| f(&r.bounds)).collect::<Vec<_>>());
    Ok(TrialStats {
        n_trials,
        rmse_pos: rms(&ok.iter().map(|e| e.0).collect::<Vec<_>>()),
        rmse_alpha: rms(&ok.iter().map(|e| e.1).collect::<Vec<_>>()),
        rmse_tau: rms(&ok.iter().map(|e| e.2).collect::<Vec<_>>()),
        peb: column(|b| b.peb),
        oeb: column(|b| b.oeb),
        teb: column(|b| b.teb),
        failures: n_trials - ok.len(),
    })
}

fn check_axis(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(RisError::InvalidInput("sweep axis is empty".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RisError::InvalidInput(
            "sweep axis values must be finite".into(),
        ));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RisError::InvalidInput(
            "sweep axis must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Monte Carlo campaign at every axis value, with the same master seed throughout.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cfg: &SystemConfig,
    pose: &RisPose,
    axis: SweepAxis,
    values: &[f64],
    n_trials: usize,
    master_seed: u64,
    s: &SearchSettings,
    opts: &TrialOptions,
) -> Result<Vec<SweepRow>> {
    check_axis(values)?;
    if n_trials == 0 {
        return Err(RisError::InvalidInput("n_trials must be at least 1".into()));
    }
    values
        .iter()
        .map(|&v| {
            let point = axis.apply(cfg, v)?;
            let stats = run_trials(&point, pose, n_trials, master_seed, s, opts)?;
            Ok(SweepRow {
                axis_value: v,
                stats,
            })
        })
        .collect()
}

pub fn sweep_power(
    cfg: &SystemConfig,
    pose: &RisPose,
    p_t_values_dbm: &[f64],
    n_trials: usize,
    master_seed: u64,
    s: &SearchSettings,
    opts: &TrialOptions,
) -> Result<Vec<SweepRow>> {
    sweep(
        cfg,
        pose,
        SweepAxis::Power,
        p_t_values_dbm,
        n_trials,
        master_seed,
        s,
        opts,
    )
}

pub fn sweep_bandwidth(
    cfg: &SystemConfig,
    pose: &RisPose,
    n_c_values: &[usize],
    n_trials: usize,
    master_seed: u64,
    s: &SearchSettings,
    opts: &TrialOptions,
) -> Result<Vec<SweepRow>> {
    let values: Vec<f64> = n_c_values.iter().map(|&v| v as f64).collect();
    sweep(
        cfg,
        pose,
        SweepAxis::Subcarriers,
        &values,
        n_trials,
        master_seed,
        s,
        opts,
    )
}

pub fn sweep_ris_size(
    cfg: &SystemConfig,
    pose: &RisPose,
    m_values: &[usize],
    n_trials: usize,
    master_seed: u64,
    s: &SearchSettings,
    opts: &TrialOptions,
) -> Result<Vec<SweepRow>> {
    let values: Vec<f64> = m_values.iter().map(|&v| v as f64).collect();
    sweep(
        cfg,
        pose,
        SweepAxis::Elements,
        &values,
        n_trials,
        master_seed,
        s,
        opts,
    )
}

/// Bounds only, RMS-averaged over the phase profiles trials `0..draws` would use.
pub fn sweep_bounds(
    cfg: &SystemConfig,
    pose: &RisPose,
    axis: SweepAxis,
    values: &[f64],
    master_seed: u64,
    draws: usize,
) -> Result<Vec<BoundsRow>> {
    check_axis(values)?;
    if draws == 0 {
        return Err(RisError::InvalidInput("draws must be at least 1".into()));
    }
    check_pose(cfg, pose)?;
    values
        .iter()
        .map(|&v| {
            let point = axis.apply(cfg, v)?;
            let per_draw: Vec<ErrorBounds> = (0..draws as u64)
                .into_par_iter()
                .map(|i| {
                    let seeds = trial_seeds(master_seed, i, &TrialOptions::default());
                    let profiles =
                        random_profiles(point.num_elements, point.num_transmissions, seeds.profile);
                    bounds_for(&point, pose, &profiles)
                })
                .collect::<Result<_>>()?;
            let column =
                |f: fn(&ErrorBounds) -> f64| rms(&per_draw.iter().map(f).collect::<Vec<_>>());
            Ok(BoundsRow {
                axis_value: v,
                bounds: ErrorBounds {
                    teb: column(|b| b.teb),
                    peb: column(|b| b.peb),
                    oeb: column(|b| b.oeb),
                },
            })
        })
        .collect()
}

fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Element-reversed copy of a phase profile, as seen by a mirror-image array.
pub fn reversed_profiles(profiles: &PhaseProfiles) -> PhaseProfiles {
    let m = profiles.gamma.nrows();
    PhaseProfiles {
        gamma: DMatrix::from_fn(m, profiles.gamma.ncols(), |r, c| {
            profiles.gamma[(m - 1 - r, c)]
        }),
        seed: profiles.seed,
    }
}

/// Bounds at one point; singular or degenerate cells are infinite.
pub fn cell_bounds(cfg: &SystemConfig, pose: &RisPose, profiles: &PhaseProfiles) -> ErrorBounds {
    crb_report(cfg, pose, 0.0, profiles).map_or(ErrorBounds::infinite(), |r| r.bounds())
}

/// PEB/OEB over a rectangular grid with one fixed phase profile.
pub fn contour_grid(
    cfg: &SystemConfig,
    alpha: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    profile_seed: u64,
) -> Result<ContourGrid> {
    cfg.validate()?;
    if resolution < 2 {
        return Err(RisError::InvalidInput(
            "resolution must be at least 2".into(),
        ));
    }
    if !(x_range.0 < x_range.1 && y_range.0 < y_range.1) {
        return Err(RisError::InvalidInput(
            "grid ranges must be increasing".into(),
        ));
    }
    let x_axis = crate::optimize::linspace(x_range.0, x_range.1, resolution);
    let y_axis = crate::optimize::linspace(y_range.0, y_range.1, resolution);
    for &y in &y_axis {
        for &x in &x_axis {
            let p = Vec2::new(x, y);
            if (p - cfg.p_tx).norm() < 1e-9 || (p - cfg.p_rx).norm() < 1e-9 {
                return Err(RisError::InvalidInput(format!(
                    "grid cell ({x}, {y}) coincides with an anchor"
                )));
            }
        }
    }
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, profile_seed);
    let cells: Vec<ErrorBounds> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let pose = RisPose::new(
                Vec2::new(x_axis[k % resolution], y_axis[k / resolution]),
                alpha,
            );
            cell_bounds(cfg, &pose, &profiles)
        })
        .collect();
    let peb_db = DMatrix::from_fn(resolution, resolution, |r, c| {
        to_db(cells[r * resolution + c].peb)
    });
    let oeb_db = DMatrix::from_fn(resolution, resolution, |r, c| {
        to_db(cells[r * resolution + c].oeb)
    });
    Ok(ContourGrid {
        x_axis,
        y_axis,
        peb_db,
        oeb_db,
        alpha: wrap_angle(alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_6;

    fn table_pose() -> RisPose {
        RisPose::new(Vec2::zeros(), FRAC_PI_6)
    }

    fn small() -> SystemConfig {
        let mut cfg = SystemConfig::table_one();
        cfg.num_subcarriers = 64;
        cfg.num_transmissions = 16;
        cfg.ifft_size = 512;
        cfg
    }

    fn lower_half() -> SearchSettings {
        SearchSettings {
            region: Some(crate::estimator::SearchRegion {
                x_min_m: -10.0,
                x_max_m: 10.0,
                y_min_m: -10.0,
                y_max_m: 2.0,
            }),
            ..Default::default()
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let o = TrialOptions::default();
        assert_eq!(trial_seeds(5, 3, &o), trial_seeds(5, 3, &o));
        assert_ne!(trial_seeds(5, 3, &o).noise, trial_seeds(5, 4, &o).noise);
        assert_ne!(trial_seeds(5, 3, &o).profile, trial_seeds(6, 3, &o).profile);
        let fixed = TrialOptions {
            fixed_profile: true,
            ..o
        };
        assert_eq!(
            trial_seeds(5, 3, &fixed).profile,
            trial_seeds(5, 9, &fixed).profile
        );
    }

    #[test]
    fn noiseless_trials_are_exact() {
        let cfg = SystemConfig::table_one();
        let opts = TrialOptions {
            noiseless: true,
            fixed_profile: false,
        };
        let stats = run_trials(&cfg, &table_pose(), 2, 11, &lower_half(), &opts).unwrap();
        assert_eq!(stats.failures, 0);
        assert!(stats.rmse_pos < 1e-6, "{stats:?}");
        assert!(stats.rmse_alpha < 1e-6);
        assert!(stats.rmse_tau < 1e-6);
    }

    #[test]
    fn trials_are_reproducible() {
        let cfg = small();
        let a = run_trials(
            &cfg,
            &table_pose(),
            3,
            42,
            &lower_half(),
            &TrialOptions::default(),
        )
        .unwrap();
        let b = run_trials(
            &cfg,
            &table_pose(),
            3,
            42,
            &lower_half(),
            &TrialOptions::default(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.rmse_alpha <= PI);
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = small();
        assert!(run_trials(
            &cfg,
            &table_pose(),
            0,
            1,
            &lower_half(),
            &TrialOptions::default()
        )
        .is_err());
        assert!(sweep_bandwidth(
            &cfg,
            &table_pose(),
            &[32, 64],
            0,
            1,
            &lower_half(),
            &TrialOptions::default()
        )
        .is_err());
    }

    #[test]
    fn power_doubling_scales_bounds() {
        let cfg = SystemConfig::table_one();
        let rows = sweep_bounds(
            &cfg,
            &table_pose(),
            SweepAxis::Power,
            &[10.0, 10.0 + 10.0 * 2f64.log10()],
            3,
            2,
        )
        .unwrap();
        let ratio = rows[1].bounds.peb / rows[0].bounds.peb;
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn power_axis_bounds_strictly_decrease() {
        let cfg = SystemConfig::table_one();
        let axis: Vec<f64> = (-4..=4).map(|i| 5.0 * i as f64).collect();
        let rows = sweep_bounds(&cfg, &table_pose(), SweepAxis::Power, &axis, 1, 1).unwrap();
        assert!(rows.windows(2).all(|w| w[1].bounds.peb < w[0].bounds.peb));
    }

    #[test]
    fn bandwidth_and_size_trends() {
        let cfg = SystemConfig::table_one();
        let pose = table_pose();
        let bw = sweep_bounds(
            &cfg,
            &pose,
            SweepAxis::Subcarriers,
            &[125.0, 250.0, 500.0, 1000.0],
            5,
            1,
        )
        .unwrap();
        assert!(bw.windows(2).all(|w| w[1].bounds.teb < w[0].bounds.teb));
        let size = sweep_bounds(
            &cfg,
            &pose,
            SweepAxis::Elements,
            &[16.0, 32.0, 64.0, 128.0],
            5,
            1,
        )
        .unwrap();
        assert!(size.windows(2).all(|w| w[1].bounds.oeb < w[0].bounds.oeb));
        assert!(size.windows(2).all(|w| w[1].bounds.peb < w[0].bounds.peb));
    }

    #[test]
    fn axis_validation() {
        let cfg = SystemConfig::table_one();
        let pose = table_pose();
        assert!(sweep_bounds(&cfg, &pose, SweepAxis::Power, &[], 1, 1).is_err());
        assert!(sweep_bounds(&cfg, &pose, SweepAxis::Power, &[1.0, 1.0], 1, 1).is_err());
        // more subcarriers than IFFT bins
        assert!(sweep_bounds(&cfg, &pose, SweepAxis::Subcarriers, &[8192.0], 1, 1).is_err());
        assert!(sweep_bounds(&cfg, &pose, SweepAxis::Elements, &[2.5], 1, 1).is_err());
    }

    #[test]
    fn mirrored_scene_has_mirrored_bounds() {
        let cfg = SystemConfig::table_one();
        let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 3);
        let mirrored = reversed_profiles(&profiles);
        for (x, y) in [(-1.3, 0.4), (0.2, -2.0), (3.1, 4.4)] {
            let a = cell_bounds(&cfg, &RisPose::new(Vec2::new(x, y), 0.0), &profiles);
            let b = cell_bounds(&cfg, &RisPose::new(Vec2::new(2.0 - x, y), 0.0), &mirrored);
            assert!((a.peb - b.peb).abs() < 1e-9 * a.peb, "{a:?} {b:?}");
            assert!((a.oeb - b.oeb).abs() < 1e-9 * a.oeb);
        }
    }

    #[test]
    fn contour_shapes_and_anchor_rejection() {
        let mut cfg = SystemConfig::table_one();
        cfg.num_subcarriers = 32;
        cfg.num_transmissions = 8;
        cfg.num_elements = 16;
        let grid = contour_grid(&cfg, 0.0, (-6.0, 6.0), (-6.0, 6.0), 5, 1).unwrap();
        assert_eq!(grid.peb_db.shape(), (5, 5));
        assert_eq!(grid.x_axis.len(), 5);
        // 0 and 2 are both grid values here, so (0, 2) is a cell
        let err = contour_grid(&cfg, 0.0, (-2.0, 2.0), (-2.0, 2.0), 3, 1);
        assert!(err.is_err());
    }

    #[test]
    fn near_anchor_beats_far_on_same_ray() {
        let cfg = SystemConfig::table_one();
        let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 9);
        let near = cell_bounds(&cfg, &RisPose::new(Vec2::new(0.0, 1.0), 0.0), &profiles);
        let far = cell_bounds(&cfg, &RisPose::new(Vec2::new(0.0, -4.0), 0.0), &profiles);
        assert!(near.peb < far.peb);
    }
}
