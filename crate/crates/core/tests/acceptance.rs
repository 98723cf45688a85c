//! Acceptance suite: one PASS/FAIL line per criterion, then a nonzero exit if any failed.

mod common;

use std::f64::consts::FRAC_PI_6;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_locate::crb::{crb_report, mu_derivatives, ErrorBounds};
use ris_locate::estimator::estimate_pipeline;
use ris_locate::geometry::wrap_angle;
use ris_locate::montecarlo::{
    cell_bounds, contour_grid, reversed_profiles, run_trials, sweep_bounds, SweepAxis,
};
use ris_locate::signal::{dbm_to_watts, random_profiles, synthesize_observation};
use ris_locate::{EtaParams, RisPose, SystemConfig, TrialOptions, Vec2};

use common::*;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn reference_pose() -> RisPose {
    RisPose::new(Vec2::zeros(), FRAC_PI_6)
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn derivative_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = reduced_config();
    let mut worst = 0.0f64;
    for (seed, phi) in [(1, 0.0), (2, 1.3), (3, -2.2)] {
        let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, seed);
        let eta = eta_of_pose(&cfg, 0.0, 0.0, FRAC_PI_6, phi);
        let analytic = mu_derivatives(&cfg, &EtaParams::from_array(eta), &profiles).unwrap();
        for (l, row) in fd_derivatives_eta(&cfg, &profiles.gamma, &eta)
            .iter()
            .enumerate()
        {
            let scale = row.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let err = row
                .iter()
                .enumerate()
                .map(|(c, v)| (analytic[(l, c)] - v).norm())
                .fold(0.0, f64::max);
            worst = worst.max(err / scale);
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst < 1e-6 && within(elapsed, 10),
        detail: format!(
            "max relative error {worst:.2e} (< 1e-6), {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn power_scaling() -> Outcome {
    let cfg = SystemConfig::table_one();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 2024);
    let mut louder = cfg.clone();
    louder.tx_power = dbm_to_watts(30.0);
    let a = crb_report(&cfg, &reference_pose(), 0.0, &profiles).unwrap();
    let b = crb_report(&louder, &reference_pose(), 0.0, &profiles).unwrap();
    let deviations = [a.teb / b.teb, a.peb / b.peb, a.oeb / b.oeb].map(|r| (r / 10.0 - 1.0).abs());
    let worst = deviations.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst < 1e-9,
        detail: format!("10 dBm vs 30 dBm ratio deviation {worst:.2e} (< 1e-9)"),
    }
}

fn noiseless_exactness() -> Outcome {
    let start = Instant::now();
    let cfg = SystemConfig::table_one();
    let s = below_baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut pos, mut alpha, mut tau) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for i in 0..20 {
        let pose = random_feasible_pose(&cfg, &mut rng);
        let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 100 + i);
        let obs = synthesize_observation(&cfg, &pose, &profiles, 0.3 * i as f64, None).unwrap();
        match estimate_pipeline(&obs, &cfg, &s) {
            Ok(est) => {
                pos = pos.max((est.refined_pose.center - pose.center).norm());
                alpha = alpha.max(wrap_angle(est.refined_pose.alpha - pose.alpha).abs());
                tau = tau.max((est.toa.tau_hat - obs.truth.unwrap().tau).abs());
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures == 0 && pos < 1e-6 && alpha < 1e-6 && tau < 1e-11 && within(elapsed, 120),
        detail: format!(
            "20 geometries, max errors {pos:.2e} m, {alpha:.2e} rad, {tau:.2e} s, {failures} failures, {:.1} s (< 120 s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn rmse_attains_bound() -> Outcome {
    let start = Instant::now();
    let cfg = SystemConfig::table_one();
    let stats = run_trials(
        &cfg,
        &reference_pose(),
        100,
        2024,
        &below_baseline(),
        &TrialOptions::default(),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let ratios = [
        stats.rmse_pos / stats.peb,
        stats.rmse_alpha / stats.oeb,
        stats.rmse_tau / stats.teb,
    ];
    let in_band = ratios.iter().all(|r| (0.8..=1.5).contains(r));
    Outcome {
        pass: in_band && stats.failures == 0 && within(elapsed, 600),
        detail: format!(
            "RMSE/bound pos {:.3}, alpha {:.3}, tau {:.3} (each in [0.8, 1.5]), {} failures, {:.1} s (< 600 s)",
            ratios[0],
            ratios[1],
            ratios[2],
            stats.failures,
            elapsed.as_secs_f64()
        ),
    }
}

fn bandwidth_trend() -> Outcome {
    let start = Instant::now();
    let cfg = SystemConfig::table_one();
    let rows = sweep_bounds(
        &cfg,
        &reference_pose(),
        SweepAxis::Subcarriers,
        &[125.0, 250.0, 500.0, 1000.0],
        1,
        10,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let non_increasing =
        |f: fn(&ErrorBounds) -> f64| rows.windows(2).all(|w| f(&w[1].bounds) <= f(&w[0].bounds));
    let ok = non_increasing(|b| b.teb) && non_increasing(|b| b.peb) && non_increasing(|b| b.oeb);
    let peb: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.3e}", r.bounds.peb))
        .collect();
    let teb: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.3e}", r.bounds.teb))
        .collect();
    Outcome {
        pass: ok && within(elapsed, 60),
        detail: format!(
            "TEB [{}] s, PEB [{}] m, {:.1} s (< 60 s)",
            teb.join(", "),
            peb.join(", "),
            elapsed.as_secs_f64()
        ),
    }
}

fn ris_size_claim() -> Outcome {
    let cfg = SystemConfig::table_one();
    let rows = sweep_bounds(
        &cfg,
        &reference_pose(),
        SweepAxis::Elements,
        &[16.0, 32.0, 64.0, 128.0],
        1,
        10,
    )
    .unwrap();
    let decreasing =
        |f: fn(&ErrorBounds) -> f64| rows.windows(2).all(|w| f(&w[1].bounds) < f(&w[0].bounds));
    let peb_128 = rows[3].bounds.peb;
    let peb: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.3e}", r.bounds.peb))
        .collect();
    Outcome {
        pass: peb_128 < 0.01 && decreasing(|b| b.peb) && decreasing(|b| b.oeb),
        detail: format!(
            "PEB over M = 16..128 [{}] m, PEB(128) {peb_128:.4} m (< 0.01)",
            peb.join(", ")
        ),
    }
}

fn contour_structure() -> Outcome {
    let start = Instant::now();
    let cfg = SystemConfig::table_one();
    let n = 41;
    let grid = contour_grid(&cfg, 0.0, (-6.0, 6.0), (-6.0, 6.0), n, 1).unwrap();
    // The grid is not symmetric about x = 1, so each cell is compared with the
    // mirror-image scene: position (2 - x, y) seen through the element-reversed profile.
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 1);
    let mirrored = reversed_profiles(&profiles);
    let half_step = 0.5 * (grid.x_axis[1] - grid.x_axis[0]);
    let anchor_distance = |p: Vec2| (p - cfg.p_tx).norm().min((p - cfg.p_rx).norm());
    let (mut worst, mut worst_resolved) = (0.0f64, 0.0f64);
    let mut best: Option<(f64, Vec2)> = None;
    for (r, &y) in grid.y_axis.iter().enumerate() {
        for (c, &x) in grid.x_axis.iter().enumerate() {
            let p = Vec2::new(x, y);
            if anchor_distance(p) <= half_step {
                continue;
            }
            let peb = 10f64.powf(grid.peb_db[(r, c)] / 10.0);
            let image = cell_bounds(&cfg, &RisPose::new(Vec2::new(2.0 - x, y), 0.0), &mirrored).peb;
            if peb.is_finite() || image.is_finite() {
                let deviation = ((peb - image) / peb).abs();
                worst = worst.max(deviation);
                if peb < 10.0 {
                    worst_resolved = worst_resolved.max(deviation);
                }
            }
            if peb.is_finite() && best.is_none_or(|(b, _)| peb < b) {
                best = Some((peb, p));
            }
        }
    }
    let elapsed = start.elapsed();
    let (min_peb, at) = best.expect("grid has finite cells");
    let d = anchor_distance(at);
    Outcome {
        pass: worst < 1e-6 && d <= 1.0 && within(elapsed, 300),
        detail: format!(
            "mirror deviation {worst:.2e} (< 1e-6; {worst_resolved:.2e} where PEB < 10 m), min PEB {min_peb:.3e} m at ({:.1}, {:.1}), {d:.2} m from an anchor (<= 1 m), {:.1} s (< 300 s)",
            at.x,
            at.y,
            elapsed.as_secs_f64()
        ),
    }
}

fn rerun_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["ris-locate".to_string(), "--seed".into(), "5".into()];
        full.extend(args.iter().map(|a| a.to_string()));
        ris_locate::cli::main_with_args(full)
    };
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let commands: [(&str, &[&str]); 10] = [
        ("bounds", &["bounds"]),
        ("estimate", &["estimate"]),
        ("trials", &["trials", "--n", "3"]),
        (
            "sweep-power",
            &[
                "sweep-power",
                "--from",
                "0",
                "--to",
                "10",
                "--step",
                "10",
                "--n",
                "2",
            ],
        ),
        ("sweep-power-bounds", &["sweep-power", "--bounds-only"]),
        ("sweep-bw", &["sweep-bw", "--values", "125,250", "--n", "2"]),
        ("sweep-bw-bounds", &["sweep-bw", "--bounds-only"]),
        (
            "sweep-size",
            &["sweep-size", "--values", "16,32", "--n", "2"],
        ),
        ("sweep-size-bounds", &["sweep-size", "--bounds-only"]),
        ("contour", &["contour", "--resolution", "9"]),
    ];
    let mut mismatched = Vec::new();
    for (name, args) in commands {
        let out = path(&format!("{name}.csv"));
        let mut first: Vec<&str> = args.to_vec();
        first.extend(["--out", &out]);
        let manifest = path(&format!("{name}.manifest.json"));
        let again = path(&format!("{name}.rerun.csv"));
        let same = run(&first) == 0
            && run(&[
                "rerun",
                "--manifest",
                &manifest,
                "--out",
                &again,
                "--threads",
                "2",
            ]) == 0
            && read(Path::new(&out)) == read(Path::new(&again));
        if !same {
            mismatched.push(name);
        }
    }
    Outcome {
        pass: mismatched.is_empty(),
        detail: format!(
            "{} commands rerun from manifests, mismatches: {mismatched:?}",
            commands.len()
        ),
    }
}

fn read(path: &Path) -> Option<Vec<u8>> {
    std::fs::read(path).ok()
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("derivative oracle", derivative_oracle),
        ("bound power scaling", power_scaling),
        ("noiseless end-to-end exactness", noiseless_exactness),
        ("RMSE attains the bound at 10 dBm", rmse_attains_bound),
        ("bandwidth trend", bandwidth_trend),
        ("RIS size", ris_size_claim),
        ("contour structure", contour_structure),
        ("rerun determinism", rerun_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict} {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
