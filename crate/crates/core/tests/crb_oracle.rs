mod common;

use std::f64::consts::FRAC_PI_6;

use nalgebra::DMatrix;
use num_complex::Complex64;
use ris_locate::crb::{crb_report, fim_eta, fim_zeta, jacobian_t, mu_derivatives};
use ris_locate::signal::{random_profiles, synthesize_observation};
use ris_locate::{EtaParams, RisPose, SystemConfig, Vec2};

use common::*;

fn max_row_error(analytic: &DMatrix<Complex64>, fd: &[Vec<Complex64>]) -> f64 {
    fd.iter()
        .enumerate()
        .map(|(l, row)| {
            let scale = row.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let err = row
                .iter()
                .enumerate()
                .map(|(c, v)| (analytic[(l, c)] - v).norm())
                .fold(0.0, f64::max);
            err / scale
        })
        .fold(0.0, f64::max)
}

#[test]
fn forward_model_matches_synthesis() {
    let cfg = reduced_config();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 4);
    let pose = RisPose::new(Vec2::new(0.3, -0.7), 0.4);
    let obs = synthesize_observation(&cfg, &pose, &profiles, 1.1, None).unwrap();
    let ours = mean(
        &cfg,
        &profiles.gamma,
        &eta_of_pose(&cfg, 0.3, -0.7, 0.4, 1.1),
    );
    let scale = obs.y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (a, b) in obs.y.iter().zip(&ours) {
        assert!((a - b).norm() < 1e-12 * scale);
    }
}

#[test]
fn mean_derivatives_match_finite_differences() {
    let cfg = reduced_config();
    for (seed, x, y, alpha) in [
        (1, 0.0, 0.0, FRAC_PI_6),
        (2, 1.4, -1.1, -0.3),
        (3, -0.8, 0.9, 0.9),
    ] {
        let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, seed);
        let eta = eta_of_pose(&cfg, x, y, alpha, 0.7);
        let analytic = mu_derivatives(&cfg, &EtaParams::from_array(eta), &profiles).unwrap();
        let fd = fd_derivatives_eta(&cfg, &profiles.gamma, &eta);
        let err = max_row_error(&analytic, &fd);
        assert!(err < 1e-6, "pose ({x}, {y}, {alpha}): {err:e}");
    }
}

#[test]
fn fim_matches_finite_difference_assembly() {
    let cfg = reduced_config();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 11);
    let eta = eta_of_pose(&cfg, 0.0, 0.0, FRAC_PI_6, 0.2);
    let reference = fim(
        &fd_derivatives_eta(&cfg, &profiles.gamma, &eta),
        cfg.noise_variance,
    );
    let j = fim_eta(&cfg, &EtaParams::from_array(eta), &profiles).unwrap();
    let j = DMatrix::from_iterator(6, 6, j.iter().copied());
    assert!(relative_frobenius(&j, &reference) < 1e-5);
    assert!(equilibrated_relative_error(&j, &reference) < 1e-5);
}

#[test]
fn chain_rule_matches_direct_zeta_fim() {
    let cfg = reduced_config();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 12);
    for (x, y, alpha) in [(0.0, 0.0, FRAC_PI_6), (2.5, -0.4, -0.2)] {
        let eta = eta_of_pose(&cfg, x, y, alpha, 0.0);
        let zeta = [eta[0], eta[1], x, y, alpha];
        let direct = fim(
            &fd_derivatives_zeta(&cfg, &profiles.gamma, &zeta),
            cfg.noise_variance,
        );
        let j_eta = fim_eta(&cfg, &EtaParams::from_array(eta), &profiles).unwrap();
        let t = jacobian_t(&Vec2::new(x, y), &cfg.p_tx, &cfg.p_rx, cfg.speed_of_light).unwrap();
        let via_t = fim_zeta(&j_eta, &t);
        let via_t = DMatrix::from_iterator(5, 5, via_t.iter().copied());
        assert!(relative_frobenius(&via_t, &direct) < 1e-4);
        assert!(equilibrated_relative_error(&via_t, &direct) < 1e-4);
    }
}

#[test]
fn bounds_match_finite_difference_reference() {
    let cfg = SystemConfig::table_one();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 2024);
    let pose = RisPose::new(Vec2::zeros(), FRAC_PI_6);
    let report = crb_report(&cfg, &pose, 0.0, &profiles).unwrap();

    let eta = eta_of_pose(&cfg, 0.0, 0.0, FRAC_PI_6, 0.0);
    let zeta = [eta[0], eta[1], 0.0, 0.0, FRAC_PI_6];
    let j_eta = fim(
        &fd_derivatives_eta(&cfg, &profiles.gamma, &eta),
        cfg.noise_variance,
    );
    let j_zeta = fim(
        &fd_derivatives_zeta(&cfg, &profiles.gamma, &zeta),
        cfg.noise_variance,
    );
    let inv = |j: &DMatrix<f64>| {
        let s = DMatrix::from_diagonal(&j.diagonal().map(|v| 1.0 / v.sqrt()));
        &s * (&s * j * &s).try_inverse().unwrap() * &s
    };
    let (ie, iz) = (inv(&j_eta), inv(&j_zeta));
    let teb = ie[(2, 2)].sqrt();
    let peb = (iz[(2, 2)] + iz[(3, 3)]).sqrt();
    let oeb = iz[(4, 4)].sqrt();
    for (ours, reference) in [(report.teb, teb), (report.peb, peb), (report.oeb, oeb)] {
        assert!(
            ((ours - reference) / reference).abs() < 1e-4,
            "{ours:e} vs {reference:e}"
        );
    }
}

#[test]
fn fim_is_symmetric_and_psd_at_reference_pose() {
    let cfg = SystemConfig::table_one();
    let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, 5);
    let eta = EtaParams::from_pose(&cfg, &RisPose::new(Vec2::zeros(), FRAC_PI_6), 0.0).unwrap();
    let j = fim_eta(&cfg, &eta, &profiles).unwrap();
    assert!((j - j.transpose()).norm() <= 1e-12 * j.norm());
    let eig = j.symmetric_eigenvalues();
    assert!(eig.min() >= -1e-8 * eig.max());
}
