mod common;

use std::sync::Arc;

use bcdist::boundary_ops::*;
use bcdist::control::*;
use bcdist::distance::{overlap_curve, RGrid};
use bcdist::geometry::{BoundaryPoint, Cone, TauFunction};
use bcdist::Error;
use nalgebra::DVector;

use common::*;

fn zero_operator() -> ConnectingOperator {
    let basis = desk_basis();
    let ds = desk_dataset_with(vec![0.0; basis.len() * desk_receivers().len()]);
    assemble_connecting(&ds).unwrap()
}

#[test]
fn empty_mask_gives_zero_control() {
    let op = zero_operator();
    let masked = mask_operator(&op, &TauFunction::constant(0.0, 0.6).unwrap());
    let sol = solve_control(&op, &masked, 1e-5, &SolverSettings::default()).unwrap();
    assert!(sol.f_coeffs.iter().all(|&v| v == 0.0));
    assert_eq!(sol.stats.iterations, 0);
    assert_eq!(estimate_volume(&sol, &op).unwrap(), 0.0);
}

#[test]
fn zero_data_control_is_scaled_rhs() {
    let op = zero_operator();
    let alpha = 1e-3;
    let masked = mask_operator(&op, &TauFunction::constant(0.25, 0.6).unwrap());
    let sol = solve_control(&op, &masked, alpha, &SolverSettings::default()).unwrap();
    assert!(sol.stats.converged);
    for idx in 0..op.len() {
        let expect = if masked.mask[idx] { op.b_coeffs[idx] / alpha } else { 0.0 };
        assert!((sol.f_coeffs[idx] - expect).abs() <= 1e-8 * expect.abs().max(1.0), "{idx}");
        if !masked.mask[idx] {
            assert_eq!(sol.f_coeffs[idx], 0.0);
        }
    }
}

#[test]
fn zero_control_has_zero_volume_and_bad_inputs_fail() {
    let op = zero_operator();
    let sol = ControlSolution {
        f_coeffs: DVector::zeros(op.len()),
        tau: TauFunction::constant(0.3, 0.6).unwrap(),
        alpha: 1e-5,
        stats: SolverStats::default(),
    };
    assert_eq!(estimate_volume(&sol, &op).unwrap(), 0.0);
    let short = ControlSolution { f_coeffs: DVector::zeros(3), ..sol };
    assert!(matches!(estimate_volume(&short, &op), Err(Error::Dimension(_))));
    let masked = mask_operator(&op, &TauFunction::constant(0.3, 0.6).unwrap());
    for alpha in [0.0, -1.0, f64::NAN] {
        assert!(matches!(solve_control(&op, &masked, alpha, &SolverSettings::default()), Err(Error::Config(_))));
    }
}

#[test]
fn gmres_and_direct_agree_on_simulated_operator() {
    let op = mini_operator();
    let tau = TauFunction::constant(0.15, 0.3).unwrap();
    let masked = mask_operator(&op, &tau);
    let a = solve_control(&op, &masked, 1e-5, &SolverSettings::default()).unwrap();
    let direct = SolverSettings { solver: LinearSolver::Direct, ..Default::default() };
    let b = solve_control(&op, &masked, 1e-5, &direct).unwrap();
    assert!(a.stats.converged && a.stats.residual <= 1e-8);
    let (va, vb) = (estimate_volume(&a, &op).unwrap(), estimate_volume(&b, &op).unwrap());
    assert!((va - vb).abs() <= 1e-6 * vb.abs(), "{va} vs {vb}");
    for idx in 0..op.len() {
        if !masked.mask[idx] {
            assert_eq!(a.f_coeffs[idx], 0.0);
        }
    }
}

#[test]
fn memoised_volumes_are_bit_identical() {
    let op = mini_operator();
    let p = EstimatedVolumes::new(op.clone(), 1e-5, SolverSettings::default(), MaskMode::Center);
    let tau = TauFunction::new(0.1, vec![Cone::new(0.0, 0.2), Cone::new(0.2, 0.15)], 0.3).unwrap();
    let swapped = TauFunction::new(0.1, vec![Cone::new(0.2, 0.15), Cone::new(0.0, 0.2)], 0.3).unwrap();
    assert_eq!(tau.descriptor(), swapped.descriptor());
    let a = p.volume(&tau).unwrap();
    let b = p.volume(&tau).unwrap();
    let c = p.volume(&swapped).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(a.to_bits(), c.to_bits());
    assert_eq!(p.cache_stats(), (2, 1));

    let fresh = EstimatedVolumes::new(op, 1e-5, SolverSettings::default(), MaskMode::Center);
    assert_eq!(fresh.volume(&swapped).unwrap().to_bits(), a.to_bits());
}

#[test]
fn overlap_curve_reuses_the_fixed_windows() {
    let op = mini_operator();
    let p = EstimatedVolumes::new(op, 1e-5, SolverSettings::default(), MaskMode::Center);
    let (s, h) = (0.1, 0.05);
    let grid = RGrid::uniform(0.025, 0.025, 7, s, 0.3).unwrap();
    let curve = overlap_curve(&p, BoundaryPoint::new(0.0), s, h, BoundaryPoint::new(0.1), &grid).unwrap();
    assert_eq!(curve.len(), grid.len());
    let n = grid.len();
    let (hits, misses) = p.cache_stats();
    let extra = p.estimates().iter().filter(|e| e.tau == "0.3").count();
    assert_eq!(misses, 2 + 2 * n + extra);
    assert_eq!(hits + misses - extra, 4 * n);
    assert_eq!(p.estimates().len(), misses);
}

#[test]
fn nested_windows_are_nearly_monotone() {
    let op = mini_operator();
    let p = EstimatedVolumes::new(op, 1e-5, SolverSettings::default(), MaskMode::Center);
    let taus: Vec<TauFunction> =
        [0.05, 0.1, 0.15, 0.2, 0.25, 0.3].iter().map(|&v| TauFunction::constant(v, 0.3).unwrap()).collect();
    let vols: Vec<f64> = taus.iter().map(|t| p.volume(t).unwrap()).collect();
    for w in vols.windows(2) {
        assert!(w[0] <= w[1] + 0.02 * w[1], "{vols:?}");
    }
    let cone = TauFunction::new(0.1, vec![Cone::new(0.0, 0.2)], 0.3).unwrap();
    let v = p.volume(&cone).unwrap();
    assert!(vols[1] <= v + 0.02 * v && v <= vols[3] + 0.02 * vols[3]);
}

#[test]
fn projection_mode_solves_full_system() {
    let op = mini_operator();
    let tau = TauFunction::constant(0.15, 0.3).unwrap();
    let masked = project_operator(&op, &tau).unwrap();
    let sol = solve_control(&op, &masked, 1e-5, &SolverSettings::default()).unwrap();
    assert!(sol.stats.converged);
    let m = estimate_volume(&sol, &op).unwrap();
    assert!(m.is_finite() && m > 0.0);
}

#[test]
fn volume_report_lists_every_window() {
    let op = mini_operator();
    let p = EstimatedVolumes::new(Arc::clone(&op), 1e-5, SolverSettings::default(), MaskMode::Center);
    p.volume(&TauFunction::constant(0.1, 0.3).unwrap()).unwrap();
    p.volume(&TauFunction::cone(0.0, 0.2, 0.3).unwrap()).unwrap();
    let mut buf = Vec::new();
    p.write_report(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau,alpha,m_hat,iterations,residual");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.1,1e-5,") || lines[1].starts_with("0|cone(0,0.2),1e-5,"));
}
