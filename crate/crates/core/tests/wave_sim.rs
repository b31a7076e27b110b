mod common;

use bcdist::geometry::HalfPlaneGeometry;
use bcdist::wave_sim::dataset::{file_hash, DatasetReader};
use bcdist::wave_sim::*;
use bcdist::Error;

use common::*;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn dataset_round_trip_is_bit_identical() {
    let ds = mini_dataset();
    let m = mini();
    assert_eq!(ds.len(), m.basis.len());
    assert_eq!(ds.header.samples_per_source, m.receivers.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mini.bcnd");
    let hash = ds.save(&path).unwrap();
    assert_eq!(file_hash(&path).unwrap(), hash);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"BCND1");

    let back = NtDDataset::load(&path).unwrap();
    assert_eq!(&back, ds);
    for idx in 0..ds.len() {
        let (a, b) = (ds.trace(idx), back.trace(idx));
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let path2 = dir.path().join("again.bcnd");
    assert_eq!(back.save(&path2).unwrap(), hash);
    assert_eq!(std::fs::read(&path2).unwrap(), bytes);

    let mut reader = DatasetReader::open(&path).unwrap();
    let mut buf = vec![0.0; ds.header.samples_per_source];
    let mut count = 0;
    while reader.next_trace(&mut buf).unwrap() {
        assert_eq!(buf.as_slice(), ds.trace(count));
        count += 1;
    }
    assert_eq!(count, ds.len());
}

#[test]
fn truncated_dataset_is_rejected() {
    let ds = mini_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.bcnd");
    ds.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(NtDDataset::load(&path), Err(Error::Format(_) | Error::Io(_))));
    std::fs::write(&path, b"BCNDX").unwrap();
    assert!(NtDDataset::load(&path).is_err());
}

#[test]
fn deterministic_rebuild() {
    let m = mini();
    let again = build_ntd_dataset(&m.geometry, &m.basis, &m.receivers, &m.params).unwrap();
    assert_eq!(again.content_hash().unwrap(), mini_dataset().content_hash().unwrap());
}

/// Three standard deviations of the arrival time `t' + |x - x'|` over a
/// separable Gaussian source.
fn arrival_margin(basis: &SourceBasis) -> f64 {
    3.0 * (1.0 / basis.a_t + 1.0 / basis.a_x).sqrt()
}

#[test]
fn finite_speed_on_every_trace() {
    let ds = mini_dataset();
    let m = mini();
    let rx = &m.receivers;
    let margin = arrival_margin(&m.basis);
    for idx in 0..ds.len() {
        let (tc, xc) = m.basis.center(idx);
        let trace = ds.trace(idx);
        let peak = max_abs(trace);
        assert!(peak > 0.0);
        for l in 0..rx.times.count {
            let t = rx.times.point(l);
            for k in 0..rx.positions.count {
                let dist = (rx.positions.point(k) - xc).abs();
                if t < tc + dist - margin {
                    let v = trace[rx.index(l, k)];
                    assert!(v.abs() < 1e-3 * peak, "source {idx}, t = {t}, offset {dist}: {v} vs peak {peak}");
                }
            }
        }
    }
}

#[test]
fn first_arrival_at_offset_half() {
    let m = mini();
    let solver = WaveSolver::new(&m.geometry, &m.receivers, &m.basis, &m.params).unwrap();
    let idx = m.basis.index(0, 8);
    let (tc, xc) = m.basis.center(idx);
    let trace = solver.simulate_trace(&Forcing::basis_function(&m.basis, idx)).unwrap();
    let k = m.receivers.positions.index_of(xc + 0.5, 1e-9).or_else(|| m.receivers.positions.index_of(xc - 0.5, 1e-9));
    let k = k.expect("receiver at offset 0.5");
    let column: Vec<f64> = (0..m.receivers.times.count).map(|l| trace[m.receivers.index(l, k)]).collect();
    let peak = max_abs(&column);
    assert!(peak > 0.0);
    let cutoff = tc + 0.5 - arrival_margin(&m.basis);
    for (l, v) in column.iter().enumerate() {
        if m.receivers.times.point(l) < cutoff {
            assert!(v.abs() < 1e-3 * peak, "t = {}: {}", m.receivers.times.point(l), v / peak);
        }
    }
}

#[test]
fn traces_are_linear_in_the_source() {
    let m = mini();
    let solver = WaveSolver::new(&m.geometry, &m.receivers, &m.basis, &m.params).unwrap();
    let n = m.basis.len();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    f[m.basis.index(1, 6)] = 1.0;
    f[m.basis.index(2, 9)] = -0.5;
    g[m.basis.index(0, 8)] = 2.0;
    g[m.basis.index(2, 9)] = 0.25;
    let (alpha, beta) = (0.7, -1.3);
    let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
    let run = |c: &[f64]| solver.simulate_trace(&Forcing::from_basis(&m.basis, c).unwrap()).unwrap();
    let (uf, ug, uc) = (run(&f), run(&g), run(&combo));
    let expect: Vec<f64> = uf.iter().zip(&ug).map(|(a, b)| alpha * a + beta * b).collect();
    let scale = max_abs(&expect);
    let err = uc.iter().zip(&expect).fold(0.0_f64, |e, (a, b)| e.max((a - b).abs()));
    assert!(err <= 1e-10 * scale, "relative error {}", err / scale);

    let ds = mini_dataset();
    let single = run(&{
        let mut e = vec![0.0; n];
        e[m.basis.index(1, 6)] = 1.0;
        e
    });
    assert_eq!(single.as_slice(), ds.trace(m.basis.index(1, 6)));
}

#[test]
fn reciprocity_between_colocated_sources() {
    let ds = mini_dataset();
    let m = mini();
    let rx = &m.receivers;
    let i = 1;
    for (j, k) in [(3, 8), (5, 12), (8, 10), (2, 14)] {
        let (a, b) = (m.basis.index(i, j), m.basis.index(i, k));
        let ra = rx.positions.index_of(m.basis.positions.point(j), 1e-9).unwrap();
        let rb = rx.positions.index_of(m.basis.positions.point(k), 1e-9).unwrap();
        let ab: Vec<f64> = (0..rx.times.count).map(|l| ds.trace(a)[rx.index(l, rb)]).collect();
        let ba: Vec<f64> = (0..rx.times.count).map(|l| ds.trace(b)[rx.index(l, ra)]).collect();
        let scale = max_abs(&ab).max(max_abs(&ba));
        assert!(scale > 0.0);
        let err = ab.iter().zip(&ba).fold(0.0_f64, |e, (x, y)| e.max((x - y).abs()));
        assert!(err <= 1e-2 * scale, "sources {j}, {k}: {}", err / scale);
    }
}

#[test]
fn shifting_the_source_shifts_the_trace() {
    let ds = mini_dataset();
    let m = mini();
    let rx = &m.receivers;
    let shift = (m.basis.positions.step / rx.positions.step).round() as usize;
    for i in 0..m.basis.times.count {
        for j in 4..m.basis.positions.count - 5 {
            let (a, b) = (ds.trace(m.basis.index(i, j)), ds.trace(m.basis.index(i, j + 1)));
            let scale = max_abs(a);
            let mut err = 0.0_f64;
            for l in 0..rx.times.count {
                for k in 0..rx.positions.count - shift {
                    err = err.max((a[rx.index(l, k)] - b[rx.index(l, k + shift)]).abs());
                }
            }
            assert!(err <= 1e-3 * scale, "({i}, {j}): {}", err / scale);
        }
    }
}

#[test]
fn interior_field_of_zero_control_is_zero() {
    let m = mini();
    let solver = WaveSolver::new(&m.geometry, &m.receivers, &m.basis, &m.params).unwrap();
    let f = Forcing::from_basis(&m.basis, &vec![0.0; m.basis.len()]).unwrap();
    let field = solver.field_at(&f, m.geometry.horizon).unwrap();
    assert!(field.values.iter().all(|&v| v == 0.0));
    assert!(Forcing::from_basis(&m.basis, &[1.0]).is_err());
}

/// Traces of one smooth source on a fixed receiver grid for a given mesh.
fn refinement_trace(h: f64) -> Vec<f64> {
    let geometry = HalfPlaneGeometry::unit_speed(0.5, 0.3).unwrap();
    let basis = build_basis(
        &BasisConfig {
            a_t: 250.0,
            a_x: 250.0,
            times: UniformGrid::new(0.15, 0.05, 1),
            positions: UniformGrid::new(0.0, 0.05, 1),
            margin_sigmas: 3.0,
        },
        &geometry,
    )
    .unwrap();
    let receivers =
        ReceiverGrid { times: UniformGrid::new(0.0, 0.01, 61), positions: UniformGrid::new(-0.5, 0.025, 41) };
    let params = SolverParams { mesh_spacing: Some(h), time_step: Some(0.4 * h), ..Default::default() };
    let solver = WaveSolver::new(&geometry, &receivers, &basis, &params).unwrap();
    solver.simulate_trace(&Forcing::basis_function(&basis, 0)).unwrap()
}

#[test]
fn second_order_self_convergence() {
    let hs = [0.0125, 0.00625, 0.003125];
    let reference = refinement_trace(0.0015625);
    let errors: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let u = refinement_trace(h);
            u.iter().zip(&reference).fold(0.0_f64, |e, (a, b)| e.max((a - b).abs()))
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 3.0, "errors {errors:?}");
    }
}
