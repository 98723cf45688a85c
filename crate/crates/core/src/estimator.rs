//! Multi-stage RIS pose estimator.
//!
//! 1. TOA: IFFT peak over subcarriers, then a sub-bin line search.
//! 2. Far-field spatial frequency `omega` of the delay-compensated,
//!    subcarrier-summed observation.
//! 3. Line search over the TOA ellipse, with the orientation tied to `omega`
//!    and the full near-field response in the data-fit cost.
//! 4. BFGS refinement of the ML cost over `(x, y, alpha)`.
//!
//! The complex gain is always eliminated by its least-squares value.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::crb::{fim_eta, fim_zeta, invert_fim, jacobian_t, response_derivatives, EtaParams};
use crate::error::{Result, RisError};
use crate::geometry::{
    alpha_from_angles, anchor_angles, anchors_in_front, ellipse_from_toa, ellipse_point,
    wrap_angle, ArcsinBranch, RisPose, Vec2,
};
use crate::optimize::{
    argmin, bfgs_minimize_preconditioned, golden_section_min, linspace, BfgsSettings,
};
use crate::signal::{ff_response, nearfield_response, Observation, SystemConfig};

/// Line-search resolutions and quasi-Newton stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub delta_grid: usize,
    pub omega_grid: usize,
    pub nu_grid: usize,
    pub refine_iters_1d: usize,
    pub qn_max_iters: usize,
    pub qn_grad_tol: f64,
    /// Half-width of the window around `omega_hat` scanned jointly with `nu`.
    pub omega_window: f64,
    pub omega_window_grid: usize,
    /// Number of distinct ellipse minima handed to the ML refinement.
    pub refine_starts: usize,
    /// Minimum distance between two refinement starts.
    pub start_separation_m: f64,
    /// Prior region for the ellipse search; without one, mirror-image poses tie.
    pub region: Option<SearchRegion>,
}

/// Axis-aligned box the RIS center is known to lie in.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRegion {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
}

impl SearchRegion {
    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.x_min_m && p.x <= self.x_max_m && p.y >= self.y_min_m && p.y <= self.y_max_m
    }
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            delta_grid: 64,
            omega_grid: 1024,
            nu_grid: 720,
            refine_iters_1d: 40,
            qn_max_iters: 200,
            qn_grad_tol: 1e-9,
            omega_window: 0.1,
            omega_window_grid: 21,
            refine_starts: 6,
            start_separation_m: 0.05,
            region: None,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("delta_grid", self.delta_grid),
            ("omega_grid", self.omega_grid),
            ("nu_grid", self.nu_grid),
            ("refine_iters_1d", self.refine_iters_1d),
            ("qn_max_iters", self.qn_max_iters),
        ] {
            if v < 2 {
                errors.push(format!("{name} must be at least 2 (got {v})"));
            }
        }
        if !(self.qn_grad_tol > 0.0) {
            errors.push(format!(
                "qn_grad_tol must be positive (got {})",
                self.qn_grad_tol
            ));
        }
        if !(self.omega_window >= 0.0 && self.omega_window.is_finite()) {
            errors.push(format!(
                "omega_window must be finite and non-negative (got {})",
                self.omega_window
            ));
        }
        if self.omega_window_grid == 0 {
            errors.push("omega_window_grid must be at least 1".into());
        }
        if self.refine_starts == 0 {
            errors.push("refine_starts must be at least 1".into());
        }
        if !(self.start_separation_m >= 0.0 && self.start_separation_m.is_finite()) {
            errors.push(format!(
                "start_separation_m must be finite and non-negative (got {})",
                self.start_separation_m
            ));
        }
        if let Some(r) = &self.region {
            if !(r.x_min_m < r.x_max_m && r.y_min_m < r.y_max_m) {
                errors.push("region must have x_min_m < x_max_m and y_min_m < y_max_m".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(RisError::InvalidConfig(errors))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaEstimate {
    /// Bin the correction is measured from: the IFFT peak or the bin above it.
    pub k_coarse: usize,
    pub delta_fine: f64,
    pub tau_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub stage: &'static str,
    /// Residual energy relative to the energy of the data the stage fits.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisEstimate {
    pub toa: ToaEstimate,
    pub omega_hat: f64,
    /// Ellipse parameter and pose of the start whose refinement won.
    pub nu_hat: f64,
    pub initial_pose: RisPose,
    pub refined_pose: RisPose,
    pub g_r_hat: Complex64,
    pub cost_trace: Vec<StageCost>,
    pub refine_converged: bool,
    pub refine_iterations: usize,
}

impl RisEstimate {
    /// TOA implied by the refined position.
    pub fn refined_tau(&self, cfg: &SystemConfig) -> Result<f64> {
        cfg.path_delay(&self.refined_pose.center)
    }
}

/// `q_t = sum_n Y[n, t] e^{+j 2 pi tau n df}`, i.e. `Y^T d(-tau)`.
pub fn delay_compensated_sum(y: &DMatrix<Complex64>, tau: f64, delta_f: f64) -> DVector<Complex64> {
    let phasors: Vec<Complex64> = (0..y.nrows())
        .map(|n| Complex64::cis(2.0 * PI * tau * n as f64 * delta_f))
        .collect();
    DVector::from_iterator(
        y.ncols(),
        y.column_iter().map(|col| {
            col.iter()
                .zip(&phasors)
                .map(|(v, p)| v * p)
                .sum::<Complex64>()
        }),
    )
}

fn check_observation(obs: &Observation, cfg: &SystemConfig) -> Result<()> {
    let (rows, cols) = obs.y.shape();
    if rows != cfg.num_subcarriers || cols != cfg.num_transmissions {
        return Err(RisError::InvalidInput(format!(
            "observation is {rows}x{cols}, expected {}x{}",
            cfg.num_subcarriers, cfg.num_transmissions
        )));
    }
    if obs.profiles.gamma.nrows() != cfg.num_elements
        || obs.profiles.gamma.ncols() != cfg.num_transmissions
    {
        return Err(RisError::InvalidInput(
            "phase profile dimensions do not match the config".into(),
        ));
    }
    if cfg.ifft_size < cfg.num_subcarriers {
        return Err(RisError::InvalidInput(
            "ifft_size must be at least num_subcarriers".into(),
        ));
    }
    Ok(())
}

/// IFFT bin with the largest energy across transmissions.
pub fn coarse_toa(obs: &Observation, cfg: &SystemConfig) -> Result<usize> {
    check_observation(obs, cfg)?;
    let n_f = cfg.ifft_size;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_f);
    let mut energy = vec![0.0; n_f];
    let mut buffer = vec![Complex64::new(0.0, 0.0); n_f];
    for col in obs.y.column_iter() {
        buffer
            .iter_mut()
            .for_each(|v| *v = Complex64::new(0.0, 0.0));
        buffer[..col.len()].copy_from_slice(col.as_slice());
        ifft.process(&mut buffer);
        for (e, v) in energy.iter_mut().zip(&buffer) {
            *e += v.norm_sqr();
        }
    }
    let mut best = 0;
    for (k, e) in energy.iter().enumerate() {
        if *e > energy[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Sub-bin delay correction below the coarse IFFT bin.
///
/// The coarse peak can land on either side of the true delay, so the search
/// covers the bin below `k_coarse` and the one above it. A correction in the
/// upper bin is reported against `k_coarse + 1`, which keeps `delta_fine`
/// within `[0, 1 / (N_F delta_f)]`.
pub fn refine_toa(
    obs: &Observation,
    k_coarse: usize,
    cfg: &SystemConfig,
    s: &SearchSettings,
) -> Result<ToaEstimate> {
    check_observation(obs, cfg)?;
    let bin = 1.0 / (cfg.ifft_size as f64 * cfg.subcarrier_spacing);
    let coarse = k_coarse as f64 * bin;
    let objective = |delta: f64| -> f64 {
        -delay_compensated_sum(&obs.y, coarse - delta, cfg.subcarrier_spacing).norm_squared()
    };
    let lower = if k_coarse + 1 < cfg.ifft_size {
        -bin
    } else {
        0.0
    };
    let points = if lower < 0.0 {
        2 * s.delta_grid - 1
    } else {
        s.delta_grid
    };
    let grid = linspace(lower, bin, points);
    let values: Vec<f64> = grid.iter().map(|d| objective(*d)).collect();
    let (i, v) = argmin(&values)
        .ok_or_else(|| RisError::InvalidInput("TOA objective is not finite".into()))?;
    let step = (bin - lower) / (points - 1) as f64;
    let lo = (grid[i] - step).max(lower);
    let hi = (grid[i] + step).min(bin);
    let (delta, refined) = golden_section_min(objective, lo, hi, s.refine_iters_1d);
    let delta = if refined <= v { delta } else { grid[i] };
    // a peak this close to the bin edge is resolution noise, not the next bin
    let delta = if delta < 0.0 && delta > -1e-6 * bin {
        0.0
    } else {
        delta
    };
    let (k, delta_fine) = if delta < 0.0 {
        (k_coarse + 1, delta + bin)
    } else {
        (k_coarse, delta)
    };
    Ok(ToaEstimate {
        k_coarse: k,
        delta_fine,
        tau_hat: k as f64 * bin - delta_fine,
    })
}

/// Normalized residual of the delay-matched filter at `tau`.
fn toa_residual(obs: &Observation, cfg: &SystemConfig, tau: f64) -> f64 {
    let energy = obs.y.norm_squared();
    let captured = delay_compensated_sum(&obs.y, tau, cfg.subcarrier_spacing).norm_squared()
        / cfg.num_subcarriers as f64;
    (1.0 - captured / energy).max(0.0)
}

/// Spatial-frequency period of the far-field response, `lambda / delta`.
pub fn omega_period(cfg: &SystemConfig) -> f64 {
    cfg.wavelength / cfg.element_spacing
}

/// All aliases `omega + k * period` inside [-2, 2], sorted.
pub fn omega_aliases(omega: f64, cfg: &SystemConfig) -> Vec<f64> {
    let period = omega_period(cfg);
    let k_max = (4.0 / period).ceil() as i64 + 1;
    let mut out: Vec<f64> = (-k_max..=k_max)
        .map(|k| omega + k as f64 * period)
        .filter(|w| w.abs() <= 2.0)
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Estimated far-field spatial frequency, with its gain and normalized residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaEstimate {
    pub omega_hat: f64,
    pub g_r_hat: Complex64,
    pub residual: f64,
}

pub fn estimate_omega(
    obs: &Observation,
    tau_hat: f64,
    cfg: &SystemConfig,
    s: &SearchSettings,
) -> Result<OmegaEstimate> {
    check_observation(obs, cfg)?;
    if !tau_hat.is_finite() {
        return Err(RisError::InvalidInput("tau_hat must be finite".into()));
    }
    let y_r = delay_compensated_sum(&obs.y, tau_hat, cfg.subcarrier_spacing);
    let gamma_t = obs.profiles.gamma.transpose();
    let projection = |omega: f64| -> (f64, Complex64) {
        let b = ff_response(omega, cfg.num_elements, cfg.element_spacing, cfg.wavelength);
        let u = &gamma_t * b;
        let inner = u.dotc(&y_r);
        let norm = u.norm_squared();
        (inner.norm_sqr() / norm, inner / norm)
    };
    let objective = |omega: f64| -projection(omega).0;

    let grid = linspace(-2.0, 2.0, s.omega_grid);
    let values: Vec<f64> = grid.iter().map(|w| objective(*w)).collect();
    let (i, v) = argmin(&values)
        .ok_or_else(|| RisError::InvalidInput("omega objective is not finite".into()))?;
    let step = 4.0 / (s.omega_grid - 1) as f64;
    let (w, refined) = golden_section_min(
        objective,
        (grid[i] - step).max(-2.0),
        (grid[i] + step).min(2.0),
        s.refine_iters_1d,
    );
    let omega = if refined <= v { w } else { grid[i] };

    // aliases are indistinguishable here; report the one nearest zero
    let omega_hat = omega_aliases(omega, cfg)
        .into_iter()
        .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
        .unwrap_or(omega)
        .clamp(-2.0, 2.0);
    let (captured, gain) = projection(omega_hat);
    let n_c = cfg.num_subcarriers as f64;
    let sqrt_p = cfg.tx_power.sqrt();
    let y_energy = y_r.norm_squared();
    Ok(OmegaEstimate {
        omega_hat,
        g_r_hat: gain / (n_c * sqrt_p),
        residual: (1.0 - captured / y_energy).max(0.0),
    })
}

/// One local minimum of the ellipse search, polished by 1-D line searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuCandidate {
    pub nu: f64,
    pub pose: RisPose,
    /// Spatial frequency (an alias of `omega_hat`, possibly shifted within the window).
    pub omega: f64,
    pub branch: ArcsinBranch,
    pub residual: f64,
}

/// Ellipse line-search result; `candidates` is sorted by residual and starts with the best.
#[derive(Debug, Clone, PartialEq)]
pub struct NuEstimate {
    pub nu_hat: f64,
    pub initial_pose: RisPose,
    pub residual: f64,
    pub candidates: Vec<NuCandidate>,
}

/// Normalized data-fit cost at a fixed delay, gain eliminated.
struct FixedDelayCost<'a> {
    cfg: &'a SystemConfig,
    gamma_t: DMatrix<Complex64>,
    matched: DVector<Complex64>,
    energy: f64,
}

impl<'a> FixedDelayCost<'a> {
    fn new(obs: &Observation, cfg: &'a SystemConfig, tau: f64) -> Self {
        Self {
            cfg,
            gamma_t: obs.profiles.gamma.transpose(),
            matched: delay_compensated_sum(&obs.y, tau, cfg.subcarrier_spacing),
            energy: obs.y.norm_squared(),
        }
    }

    fn eval(&self, pose: &RisPose) -> f64 {
        let Ok(b) = nearfield_response(pose, self.cfg) else {
            return f64::INFINITY;
        };
        let s = &self.gamma_t * b;
        let captured =
            s.dotc(&self.matched).norm_sqr() / (self.cfg.num_subcarriers as f64 * s.norm_squared());
        (1.0 - captured / self.energy).max(0.0)
    }
}

pub fn estimate_nu(
    obs: &Observation,
    tau_hat: f64,
    omega_hat: f64,
    cfg: &SystemConfig,
    s: &SearchSettings,
) -> Result<NuEstimate> {
    check_observation(obs, cfg)?;
    if !(omega_hat.abs() <= 2.0) {
        return Err(RisError::NoFeasibleNu { omega_hat });
    }
    let ellipse = ellipse_from_toa(&cfg.p_tx, &cfg.p_rx, tau_hat, cfg.speed_of_light)?;
    let cost = FixedDelayCost::new(obs, cfg, tau_hat);

    let pose_at = |nu: f64, omega: f64, branch: ArcsinBranch| -> Option<RisPose> {
        let p = ellipse_point(&ellipse, nu);
        if s.region.is_some_and(|r| !r.contains(&p)) {
            return None;
        }
        let (theta_tx, theta_rx) = anchor_angles(&cfg.p_tx, &cfg.p_rx, &p).ok()?;
        let alpha = alpha_from_angles(omega, theta_tx, theta_rx, branch).ok()?;
        let pose = RisPose::new(p, alpha);
        anchors_in_front(&pose, &cfg.p_tx, &cfg.p_rx).then_some(pose)
    };
    let objective = |nu: f64, omega: f64, branch: ArcsinBranch| -> f64 {
        pose_at(nu, omega, branch).map_or(f64::INFINITY, |pose| cost.eval(&pose))
    };

    let step = 2.0 * PI / s.nu_grid as f64;
    let grid: Vec<f64> = (0..s.nu_grid).map(|i| i as f64 * step).collect();
    let offsets = if s.omega_window > 0.0 && s.omega_window_grid > 1 {
        linspace(-s.omega_window, s.omega_window, s.omega_window_grid)
    } else {
        vec![0.0]
    };
    let omega_step = if offsets.len() > 1 {
        offsets[1] - offsets[0]
    } else {
        0.0
    };

    // local minima along nu of every (alias, offset, branch) line
    let mut minima: Vec<(f64, f64, ArcsinBranch, f64)> = Vec::new();
    for center in omega_aliases(omega_hat, cfg) {
        for offset in &offsets {
            let omega = center + offset;
            for branch in [ArcsinBranch::Principal, ArcsinBranch::Secondary] {
                let values: Vec<f64> = grid
                    .iter()
                    .map(|nu| objective(*nu, omega, branch))
                    .collect();
                let n = values.len();
                for i in 0..n {
                    let v = values[i];
                    if v.is_finite() && v <= values[(i + n - 1) % n] && v < values[(i + 1) % n] {
                        minima.push((grid[i], omega, branch, v));
                    }
                }
            }
        }
    }
    if minima.is_empty() {
        return Err(RisError::NoFeasibleNu { omega_hat });
    }
    minima.sort_by(|a, b| a.3.total_cmp(&b.3));

    let polish = |(mut nu, mut omega, branch, mut residual): (f64, f64, ArcsinBranch, f64)| -> Option<NuCandidate> {
        let (nu1, v1) = golden_section_min(|x| objective(x, omega, branch), nu - step, nu + step, s.refine_iters_1d);
        if v1 <= residual {
            (nu, residual) = (nu1, v1);
        }
        if omega_step > 0.0 {
            let (w, v) = golden_section_min(|w| objective(nu, w, branch), omega - omega_step, omega + omega_step, s.refine_iters_1d);
            if v <= residual {
                (omega, residual) = (w, v);
            }
            let (nu2, v2) = golden_section_min(|x| objective(x, omega, branch), nu - step, nu + step, s.refine_iters_1d);
            if v2 <= residual {
                (nu, residual) = (nu2, v2);
            }
        }
        let nu = nu.rem_euclid(2.0 * PI);
        Some(NuCandidate {
            nu,
            pose: pose_at(nu, omega, branch)?,
            omega,
            branch,
            residual,
        })
    };

    let mut candidates: Vec<NuCandidate> = Vec::new();
    for m in minima {
        if candidates.len() >= s.refine_starts {
            break;
        }
        let p = ellipse_point(&ellipse, m.0);
        if candidates
            .iter()
            .any(|c| (c.pose.center - p).norm() < s.start_separation_m)
        {
            continue;
        }
        if let Some(c) = polish(m) {
            candidates.push(c);
        }
    }
    candidates.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let best = *candidates
        .first()
        .ok_or(RisError::NoFeasibleNu { omega_hat })?;
    Ok(NuEstimate {
        nu_hat: best.nu,
        initial_pose: best.pose,
        residual: best.residual,
        candidates,
    })
}

/// Normalized ML cost with the delay tied to the position.
///
/// Poses that put an anchor behind the reflecting surface, or that leave the
/// prior region, are infeasible.
pub struct MlCost<'a> {
    obs: &'a Observation,
    cfg: &'a SystemConfig,
    gamma_t: DMatrix<Complex64>,
    energy: f64,
    region: Option<SearchRegion>,
}

struct MlFit {
    gain: Complex64,
    residual: f64,
    s: DVector<Complex64>,
    d: Vec<Complex64>,
}

impl<'a> MlCost<'a> {
    pub fn new(obs: &'a Observation, cfg: &'a SystemConfig) -> Self {
        Self {
            obs,
            cfg,
            gamma_t: obs.profiles.gamma.transpose(),
            energy: obs.y.norm_squared(),
            region: None,
        }
    }

    pub fn with_region(mut self, region: Option<SearchRegion>) -> Self {
        self.region = region;
        self
    }

    fn fit_full(&self, pose: &RisPose) -> Option<MlFit> {
        let cfg = self.cfg;
        if !pose.is_finite() || !anchors_in_front(pose, &cfg.p_tx, &cfg.p_rx) {
            return None;
        }
        if self.region.is_some_and(|r| !r.contains(&pose.center)) {
            return None;
        }
        let tau = cfg.path_delay(&pose.center).ok()?;
        let b = nearfield_response(pose, cfg).ok()?;
        let s = &self.gamma_t * b;
        let matched = delay_compensated_sum(&self.obs.y, tau, cfg.subcarrier_spacing);
        let sqrt_p = cfg.tx_power.sqrt();
        let n_c = cfg.num_subcarriers;
        let gain = s.dotc(&matched) / (sqrt_p * n_c as f64 * s.norm_squared());
        let d: Vec<Complex64> = (0..n_c)
            .map(|n| Complex64::cis(-2.0 * PI * tau * n as f64 * cfg.subcarrier_spacing))
            .collect();
        let mut residual = 0.0;
        for (t, col) in self.obs.y.column_iter().enumerate() {
            let a = gain * sqrt_p * s[t];
            residual += col
                .iter()
                .zip(&d)
                .map(|(y, dn)| (y - a * dn).norm_sqr())
                .sum::<f64>();
        }
        Some(MlFit {
            gain,
            residual: residual / self.energy,
            s,
            d,
        })
    }

    /// Least-squares gain and normalized residual `||Y - g sqrt(P) d b^T Gamma||^2 / ||Y||^2`.
    pub fn fit(&self, pose: &RisPose) -> Option<(Complex64, f64)> {
        self.fit_full(pose).map(|f| (f.gain, f.residual))
    }

    pub fn eval(&self, pose: &RisPose) -> f64 {
        self.fit_full(pose).map_or(f64::INFINITY, |f| f.residual)
    }

    /// Gradient over `(x, y, alpha)` with the gain held at its least-squares value.
    pub fn gradient(&self, pose: &RisPose) -> Option<[f64; 3]> {
        let cfg = self.cfg;
        let fit = self.fit_full(pose)?;
        let rd = response_derivatives(cfg, pose).ok()?;
        let a = fit.gain * cfg.tx_power.sqrt();
        let df = cfg.subcarrier_spacing;
        let mut r_sum = DVector::<Complex64>::zeros(cfg.num_transmissions);
        let mut r_ramp = DVector::<Complex64>::zeros(cfg.num_transmissions);
        for (t, col) in self.obs.y.column_iter().enumerate() {
            let model = a * fit.s[t];
            let (mut sum, mut ramp) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for (n, (y, dn)) in col.iter().zip(&fit.d).enumerate() {
                let v = (y - model * dn).conj() * dn;
                sum += v;
                ramp += v * n as f64;
            }
            r_sum[t] = sum;
            r_ramp[t] = ramp * Complex64::new(0.0, -2.0 * PI * df);
        }
        let kappa = (pose.center - cfg.p_tx).normalize() + (pose.center - cfg.p_rx).normalize();
        let dtau = [
            kappa.x / cfg.speed_of_light,
            kappa.y / cfg.speed_of_light,
            0.0,
        ];
        let mut out = [0.0; 3];
        for (i, db) in [&rd.d_x, &rd.d_y, &rd.d_alpha].into_iter().enumerate() {
            let ds = &self.gamma_t * db;
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..cfg.num_transmissions {
                acc += r_ramp[t] * fit.s[t] * dtau[i] + r_sum[t] * ds[t];
            }
            out[i] = -2.0 * (a * acc).re / self.energy;
        }
        Some(out)
    }

    /// Gauss-Newton Hessian over `(x, y, alpha)`: the Fisher information at the
    /// fitted gain with the gain eliminated, rescaled to the normalized cost.
    pub fn gauss_newton_hessian(&self, pose: &RisPose) -> Option<DMatrix<f64>> {
        let cfg = self.cfg;
        let fit = self.fit_full(pose)?;
        let eta = EtaParams {
            rho: fit.gain.norm(),
            phi: fit.gain.arg(),
            tau: cfg.path_delay(&pose.center).ok()?,
            p_ris: pose.center,
            alpha: pose.alpha,
        };
        let j_eta = fim_eta(cfg, &eta, &self.obs.profiles).ok()?;
        let t = jacobian_t(&pose.center, &cfg.p_tx, &cfg.p_rx, cfg.speed_of_light).ok()?;
        let j = fim_zeta(&j_eta, &t);
        let gain_block = j.fixed_view::<2, 2>(0, 0).into_owned().try_inverse()?;
        let cross = j.fixed_view::<2, 3>(0, 2).into_owned();
        let schur =
            j.fixed_view::<3, 3>(2, 2).into_owned() - cross.transpose() * gain_block * cross;
        let h = (schur + schur.transpose()) * (0.5 * cfg.noise_variance / self.energy);
        let h = DMatrix::from_iterator(3, 3, h.iter().copied());
        h.iter().all(|v| v.is_finite()).then_some(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub pose: RisPose,
    pub g_r_hat: Complex64,
    pub residual: f64,
    pub initial_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

const GAUSS_NEWTON_POLISH_STEPS: usize = 5;

fn gauss_newton_step(cost: &MlCost, pose: &RisPose) -> Option<DVector<f64>> {
    let g = cost.gradient(pose)?;
    let (inv, _) = invert_fim(&cost.gauss_newton_hessian(pose)?).ok()?;
    let step = inv * DVector::from_row_slice(&g);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Quasi-Newton refinement of `(x, y, alpha)`; never returns a worse pose than it was given.
///
/// BFGS starts from the Gauss-Newton curvature at the initial pose and is
/// followed by a few Gauss-Newton steps.
pub fn refine_ml(
    obs: &Observation,
    initial_pose: &RisPose,
    cfg: &SystemConfig,
    s: &SearchSettings,
) -> Result<RefineOutcome> {
    check_observation(obs, cfg)?;
    if !initial_pose.is_finite() {
        return Err(RisError::InvalidInput("initial pose must be finite".into()));
    }
    let cost = MlCost::new(obs, cfg).with_region(s.region);
    let to_pose = |x: &DVector<f64>| RisPose {
        center: Vec2::new(x[0], x[1]),
        alpha: x[2],
    };
    let x0 = DVector::from_vec(vec![
        initial_pose.center.x,
        initial_pose.center.y,
        initial_pose.alpha,
    ]);
    let initial_residual = cost.eval(initial_pose);
    let settings = BfgsSettings {
        max_iterations: s.qn_max_iters,
        gradient_tolerance: s.qn_grad_tol,
        initial_step: cfg.wavelength * 1e-2,
    };
    let preconditioner = cost
        .gauss_newton_hessian(initial_pose)
        .and_then(|h| invert_fim(&h).ok())
        .map(|(inv, _)| inv);
    let outcome = bfgs_minimize_preconditioned(
        |x: &DVector<f64>| cost.eval(&to_pose(x)),
        |x: &DVector<f64>| {
            let g = cost.gradient(&to_pose(x)).unwrap_or([f64::NAN; 3]);
            DVector::from_row_slice(&g)
        },
        x0,
        preconditioner,
        &settings,
    );

    let (mut pose, mut residual) = if outcome.value <= initial_residual {
        let p = to_pose(&outcome.x);
        (RisPose::new(p.center, p.alpha), outcome.value)
    } else {
        (*initial_pose, initial_residual)
    };
    // Gauss-Newton polish, kept only while it lowers the cost
    for _ in 0..GAUSS_NEWTON_POLISH_STEPS {
        let Some(step) = gauss_newton_step(&cost, &pose) else {
            break;
        };
        let candidate = RisPose::new(
            pose.center - Vec2::new(step[0], step[1]),
            pose.alpha - step[2],
        );
        let value = cost.eval(&candidate);
        if !(value < residual) {
            break;
        }
        pose = candidate;
        residual = value;
    }
    let g_r_hat = cost
        .fit(&pose)
        .map_or(Complex64::new(f64::NAN, f64::NAN), |(g, _)| g);
    Ok(RefineOutcome {
        pose,
        g_r_hat,
        residual,
        initial_residual,
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

pub fn estimate_pipeline(
    obs: &Observation,
    cfg: &SystemConfig,
    s: &SearchSettings,
) -> Result<RisEstimate> {
    s.validate()?;
    let k = coarse_toa(obs, cfg).map_err(|e| e.in_stage("coarse TOA"))?;
    let toa = refine_toa(obs, k, cfg, s).map_err(|e| e.in_stage("TOA refinement"))?;
    let omega = estimate_omega(obs, toa.tau_hat, cfg, s).map_err(|e| e.in_stage("omega"))?;
    let nu = estimate_nu(obs, toa.tau_hat, omega.omega_hat, cfg, s)
        .map_err(|e| e.in_stage("ellipse search"))?;
    let mut winner: Option<(NuCandidate, RefineOutcome)> = None;
    for c in &nu.candidates {
        let r = refine_ml(obs, &c.pose, cfg, s).map_err(|e| e.in_stage("ML refinement"))?;
        if winner.as_ref().is_none_or(|w| r.residual < w.1.residual) {
            winner = Some((*c, r));
        }
    }
    let (start, refined) = winner.ok_or(RisError::NoFeasibleNu {
        omega_hat: omega.omega_hat,
    })?;

    let cost_trace = vec![
        StageCost {
            stage: "toa",
            residual: toa_residual(obs, cfg, toa.tau_hat),
        },
        StageCost {
            stage: "omega",
            residual: omega.residual,
        },
        StageCost {
            stage: "nu",
            residual: start.residual,
        },
        StageCost {
            stage: "refine",
            residual: refined.residual,
        },
    ];
    Ok(RisEstimate {
        toa,
        omega_hat: omega.omega_hat,
        nu_hat: start.nu,
        initial_pose: start.pose,
        refined_pose: RisPose::new(refined.pose.center, wrap_angle(refined.pose.alpha)),
        g_r_hat: refined.g_r_hat,
        cost_trace,
        refine_converged: refined.converged,
        refine_iterations: refined.iterations,
    })
}
