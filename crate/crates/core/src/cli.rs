//! The `ris-locate` command-line tool.
//!
//! Each experiment writes one CSV file and a JSON manifest next to it
//! (`<out>` with its extension replaced by `manifest.json`). The manifest
//! embeds the resolved configuration, the seed and every command flag, so
//! `ris-locate rerun --manifest <path>` regenerates the CSV byte for byte.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{load_config_file, ConfigFile};
use crate::crb::{crb_report, ErrorBounds};
use crate::error::{Result, RisError};
use crate::estimator::{estimate_pipeline, SearchSettings};
use crate::geometry::{anchor_angles, omega_of, RisPose};
use crate::montecarlo::{
    contour_grid, run_trials, sweep, sweep_bounds, trial_seeds, SweepAxis, TrialOptions, TrialStats,
};
use crate::signal::{dbm_to_watts, random_profiles, synthesize_observation, SystemConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "ris-locate",
    version,
    about = "Near-field RIS localization: bounds, estimation and Monte Carlo sweeps"
)]
pub struct Cli {
    /// JSON configuration; the built-in reference scenario when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// CSV output path; `<command>.csv` when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true, env = "RIS_LOCATE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(flatten)]
    Experiment(Experiment),
    /// Re-run the experiment recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print or write the reference configuration.
    DefaultConfig,
}

/// Experiment commands with their flags, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// TEB/PEB/OEB at the configured pose for one phase-profile draw.
    Bounds {
        #[command(flatten)]
        power: PowerOverride,
    },
    /// One synthesized observation through every estimator stage.
    Estimate {
        #[command(flatten)]
        power: PowerOverride,
        #[arg(long)]
        noiseless: bool,
    },
    /// Monte Carlo RMSE against the bounds.
    Trials {
        #[command(flatten)]
        power: PowerOverride,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Sweep transmit power from `--from` to `--to` dBm.
    SweepPower {
        #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 5.0)]
        step: f64,
        #[command(flatten)]
        mc: McArgs,
        /// Bounds only, averaged over `--n` phase-profile draws.
        #[arg(long)]
        bounds_only: bool,
    },
    /// Sweep the subcarrier count at fixed spacing.
    SweepBw {
        #[arg(long, value_delimiter = ',', default_values_t = [125usize, 250, 500, 1000])]
        values: Vec<usize>,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        bounds_only: bool,
    },
    /// Sweep the RIS element count.
    SweepSize {
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
        values: Vec<usize>,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        bounds_only: bool,
    },
    /// PEB/OEB over a grid of RIS positions, in dB.
    Contour {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha_rad: f64,
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        x_min: f64,
        #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
        x_max: f64,
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        y_min: f64,
        #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
        y_max: f64,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerOverride {
    /// Transmit power override in dBm.
    #[arg(long, allow_hyphen_values = true)]
    pub p_t_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub noiseless: bool,
    /// Reuse one phase profile for every trial.
    #[arg(long)]
    pub fixed_profile: bool,
}

impl McArgs {
    fn options(&self) -> TrialOptions {
        TrialOptions {
            noiseless: self.noiseless,
            fixed_profile: self.fixed_profile,
        }
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Bounds { .. } => "bounds",
            Experiment::Estimate { .. } => "estimate",
            Experiment::Trials { .. } => "trials",
            Experiment::SweepPower { .. } => "sweep-power",
            Experiment::SweepBw { .. } => "sweep-bw",
            Experiment::SweepSize { .. } => "sweep-size",
            Experiment::Contour { .. } => "contour",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp_unix_s: u64,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub output_path: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Command-specific flags.
    pub overrides: Experiment,
    pub config: ConfigFile,
}

/// Manifest path belonging to a CSV output.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

/// Header and rows of a result table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.into_inner()
            .map_err(|e| RisError::InvalidInput(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> RisError {
    RisError::InvalidInput(format!("csv: {e}"))
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn bounds_cells(b: &ErrorBounds) -> [String; 3] {
    [fmt_f64(b.teb), fmt_f64(b.peb), fmt_f64(b.oeb)]
}

const STATS_HEADER: [&str; 8] = [
    "n_trials",
    "failures",
    "rmse_pos_m",
    "rmse_alpha_rad",
    "rmse_tau_s",
    "peb_m",
    "oeb_rad",
    "teb_s",
];

fn stats_cells(s: &TrialStats) -> Vec<String> {
    vec![
        s.n_trials.to_string(),
        s.failures.to_string(),
        fmt_f64(s.rmse_pos),
        fmt_f64(s.rmse_alpha),
        fmt_f64(s.rmse_tau),
        fmt_f64(s.peb),
        fmt_f64(s.oeb),
        fmt_f64(s.teb),
    ]
}

fn with_power(cfg: &SystemConfig, power: &PowerOverride) -> SystemConfig {
    let mut cfg = cfg.clone();
    if let Some(dbm) = power.p_t_dbm {
        cfg.tx_power = dbm_to_watts(dbm);
    }
    cfg
}

/// Power axis `from, from + step, ...` up to and including `to`.
pub fn power_axis(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && from.is_finite() && to.is_finite() && from <= to) {
        return Err(RisError::InvalidInput(format!(
            "bad power axis from={from} to={to} step={step}"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| from + k as f64 * step).collect())
}

/// Runs one experiment and returns its table.
pub fn run_experiment(experiment: &Experiment, file: &ConfigFile, seed: u64) -> Result<Table> {
    let (cfg, pose, s) = file.resolve()?;
    match experiment {
        Experiment::Bounds { power } => {
            let cfg = with_power(&cfg, power);
            let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, seed);
            let report = crb_report(&cfg, &pose, 0.0, &profiles)?;
            let mut t = Table::new(&["teb_s", "peb_m", "oeb_rad"]);
            t.rows.push(bounds_cells(&report.bounds()).to_vec());
            Ok(t)
        }
        Experiment::Estimate { power, noiseless } => {
            estimate_table(&with_power(&cfg, power), &pose, &s, seed, *noiseless)
        }
        Experiment::Trials { power, mc } => {
            let cfg = with_power(&cfg, power);
            let stats = run_trials(&cfg, &pose, mc.n, seed, &s, &mc.options())?;
            let mut t = Table::new(&STATS_HEADER);
            t.rows.push(stats_cells(&stats));
            Ok(t)
        }
        Experiment::SweepPower {
            from,
            to,
            step,
            mc,
            bounds_only,
        } => {
            let values = power_axis(*from, *to, *step)?;
            sweep_table(
                &cfg,
                &pose,
                &s,
                SweepAxis::Power,
                "p_t_dbm",
                &values,
                mc,
                *bounds_only,
                seed,
            )
        }
        Experiment::SweepBw {
            values,
            mc,
            bounds_only,
        } => {
            let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            sweep_table(
                &cfg,
                &pose,
                &s,
                SweepAxis::Subcarriers,
                "n_c",
                &values,
                mc,
                *bounds_only,
                seed,
            )
        }
        Experiment::SweepSize {
            values,
            mc,
            bounds_only,
        } => {
            let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            sweep_table(
                &cfg,
                &pose,
                &s,
                SweepAxis::Elements,
                "m",
                &values,
                mc,
                *bounds_only,
                seed,
            )
        }
        Experiment::Contour {
            alpha_rad,
            x_min,
            x_max,
            y_min,
            y_max,
            resolution,
        } => {
            let grid = contour_grid(
                &cfg,
                *alpha_rad,
                (*x_min, *x_max),
                (*y_min, *y_max),
                *resolution,
                seed,
            )?;
            let mut t = Table::new(&["x_m", "y_m", "peb_db", "oeb_db"]);
            for (r, y) in grid.y_axis.iter().enumerate() {
                for (c, x) in grid.x_axis.iter().enumerate() {
                    t.rows.push(vec![
                        fmt_f64(*x),
                        fmt_f64(*y),
                        fmt_f64(grid.peb_db[(r, c)]),
                        fmt_f64(grid.oeb_db[(r, c)]),
                    ]);
                }
            }
            Ok(t)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_table(
    cfg: &SystemConfig,
    pose: &RisPose,
    s: &SearchSettings,
    axis: SweepAxis,
    axis_name: &str,
    values: &[f64],
    mc: &McArgs,
    bounds_only: bool,
    seed: u64,
) -> Result<Table> {
    let axis_cell = |v: f64| match axis {
        SweepAxis::Power => fmt_f64(v),
        _ => format!("{}", v as usize),
    };
    if bounds_only {
        let rows = sweep_bounds(cfg, pose, axis, values, seed, mc.n)?;
        let mut t = Table::new(&[axis_name, "teb_s", "peb_m", "oeb_rad"]);
        for row in rows {
            let mut cells = vec![axis_cell(row.axis_value)];
            cells.extend(bounds_cells(&row.bounds));
            t.rows.push(cells);
        }
        return Ok(t);
    }
    let rows = sweep(cfg, pose, axis, values, mc.n, seed, s, &mc.options())?;
    let mut header = vec![axis_name];
    header.extend(STATS_HEADER);
    let mut t = Table::new(&header);
    for row in rows {
        let mut cells = vec![axis_cell(row.axis_value)];
        cells.extend(stats_cells(&row.stats));
        t.rows.push(cells);
    }
    Ok(t)
}

fn estimate_table(
    cfg: &SystemConfig,
    pose: &RisPose,
    s: &SearchSettings,
    seed: u64,
    noiseless: bool,
) -> Result<Table> {
    let seeds = trial_seeds(seed, 0, &TrialOptions::default());
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, seeds.profile);
    let obs = synthesize_observation(
        cfg,
        pose,
        &profiles,
        seeds.phi,
        (!noiseless).then_some(seeds.noise),
    )?;
    let est = estimate_pipeline(&obs, cfg, s)?;
    let (theta_tx, theta_rx) = anchor_angles(&cfg.p_tx, &cfg.p_rx, &pose.center)?;
    let residual = |stage: &str| {
        est.cost_trace
            .iter()
            .find(|c| c.stage == stage)
            .map_or(String::new(), |c| fmt_f64(c.residual))
    };
    let e = String::new;
    let mut t = Table::new(&[
        "stage",
        "x_m",
        "y_m",
        "alpha_rad",
        "tau_s",
        "omega",
        "nu",
        "residual",
    ]);
    t.rows.push(vec![
        "truth".into(),
        fmt_f64(pose.center.x),
        fmt_f64(pose.center.y),
        fmt_f64(pose.alpha),
        fmt_f64(cfg.path_delay(&pose.center)?),
        fmt_f64(omega_of(theta_tx, theta_rx, pose.alpha)),
        e(),
        e(),
    ]);
    t.rows.push(vec![
        "toa".into(),
        e(),
        e(),
        e(),
        fmt_f64(est.toa.tau_hat),
        e(),
        e(),
        residual("toa"),
    ]);
    t.rows.push(vec![
        "omega".into(),
        e(),
        e(),
        e(),
        e(),
        fmt_f64(est.omega_hat),
        e(),
        residual("omega"),
    ]);
    t.rows.push(vec![
        "nu".into(),
        fmt_f64(est.initial_pose.center.x),
        fmt_f64(est.initial_pose.center.y),
        fmt_f64(est.initial_pose.alpha),
        e(),
        e(),
        fmt_f64(est.nu_hat),
        residual("nu"),
    ]);
    t.rows.push(vec![
        "refine".into(),
        fmt_f64(est.refined_pose.center.x),
        fmt_f64(est.refined_pose.center.y),
        fmt_f64(est.refined_pose.alpha),
        fmt_f64(est.refined_tau(cfg)?),
        e(),
        e(),
        residual("refine"),
    ]);
    Ok(t)
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(RisError::InvalidInput(
            "--threads must be at least 1".into(),
        )),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RisError::InvalidInput(e.to_string()))?
            .install(f),
    }
}

/// Runs the experiment described by `manifest` and writes its CSV and a fresh manifest.
pub fn execute(manifest: &RunManifest) -> Result<()> {
    let table = with_threads(manifest.threads, || {
        run_experiment(&manifest.overrides, &manifest.config, manifest.seed)
    })?;
    write_output(manifest, &table.to_csv()?)
}

fn write_output(manifest: &RunManifest, csv: &[u8]) -> Result<()> {
    if let Some(parent) = manifest
        .output_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&manifest.output_path, csv)?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    std::fs::write(manifest_path(&manifest.output_path), json)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| RisError::Parse(format!("{}: {e}", path.display())))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DefaultConfig => {
            let json = ConfigFile::table_one().to_json();
            match &cli.out {
                Some(path) => std::fs::write(path, json)?,
                None => print!("{json}"),
            }
            Ok(())
        }
        Command::Rerun { manifest } => {
            let mut m = read_manifest(&manifest)?;
            if let Some(out) = cli.out {
                m.output_path = out;
            }
            if cli.threads.is_some() {
                m.threads = cli.threads;
            }
            m.timestamp_unix_s = now_unix();
            m.tool_version = TOOL_VERSION.into();
            execute(&m)?;
            eprintln!("wrote {}", m.output_path.display());
            Ok(())
        }
        Command::Experiment(experiment) => {
            let config = match &cli.config {
                Some(path) => load_config_file(path)?,
                None => ConfigFile::table_one(),
            };
            let output_path = cli
                .out
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", experiment.name())));
            let m = RunManifest {
                tool_version: TOOL_VERSION.into(),
                timestamp_unix_s: now_unix(),
                command: experiment.name().into(),
                config_path: cli.config,
                output_path,
                seed: cli.seed,
                threads: cli.threads,
                overrides: experiment,
                config,
            };
            execute(&m)?;
            eprintln!("wrote {}", m.output_path.display());
            Ok(())
        }
    }
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            1
        }
    }
}
