#![allow(dead_code)]

use std::sync::OnceLock;

use bcdist::geometry::HalfPlaneGeometry;
use bcdist::wave_sim::dataset::prepare_dataset;
use bcdist::wave_sim::*;

pub fn desk_geometry() -> HalfPlaneGeometry {
    HalfPlaneGeometry::unit_speed(1.0, 0.6).unwrap()
}

pub fn desk_basis() -> SourceBasis {
    let cfg = BasisConfig {
        a_t: 1e3,
        a_x: 1e3,
        times: UniformGrid::centered(0.3, 0.05, 10),
        positions: UniformGrid::centered(0.0, 0.05, 37),
        margin_sigmas: 3.0,
    };
    build_basis(&cfg, &desk_geometry()).unwrap()
}

pub fn desk_receivers() -> ReceiverGrid {
    ReceiverGrid { times: UniformGrid::new(0.0, 0.01, 121), positions: UniformGrid::new(-1.0, 0.025, 81) }
}

/// Small acquisition that simulates in a few seconds.
pub struct Mini {
    pub geometry: HalfPlaneGeometry,
    pub basis: SourceBasis,
    pub receivers: ReceiverGrid,
    pub params: SolverParams,
}

pub fn mini() -> Mini {
    let geometry = HalfPlaneGeometry::unit_speed(0.5, 0.3).unwrap();
    let cfg = BasisConfig {
        a_t: 1e3,
        a_x: 1e3,
        times: UniformGrid::centered(0.15, 0.05, 4),
        positions: UniformGrid::centered(0.0, 0.05, 17),
        margin_sigmas: 3.0,
    };
    let basis = build_basis(&cfg, &geometry).unwrap();
    let receivers =
        ReceiverGrid { times: UniformGrid::new(0.0, 0.01, 61), positions: UniformGrid::new(-0.5, 0.025, 41) };
    Mini { geometry, basis, receivers, params: SolverParams::default() }
}

pub fn mini_dataset() -> &'static NtDDataset {
    static DS: OnceLock<NtDDataset> = OnceLock::new();
    DS.get_or_init(|| {
        let m = mini();
        build_ntd_dataset(&m.geometry, &m.basis, &m.receivers, &m.params).unwrap()
    })
}

/// Dataset with the given traces and the header of the desk acquisition.
pub fn desk_dataset_with(traces: Vec<f64>) -> NtDDataset {
    let (_, header) =
        prepare_dataset(&desk_geometry(), &desk_basis(), &desk_receivers(), &SolverParams::default()).unwrap();
    NtDDataset::new(header, traces).unwrap()
}

pub fn mini_operator() -> std::sync::Arc<bcdist::boundary_ops::ConnectingOperator> {
    static OP: OnceLock<std::sync::Arc<bcdist::boundary_ops::ConnectingOperator>> = OnceLock::new();
    OP.get_or_init(|| std::sync::Arc::new(bcdist::boundary_ops::assemble_connecting(mini_dataset()).unwrap())).clone()
}
