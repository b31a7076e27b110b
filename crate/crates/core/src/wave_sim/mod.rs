//! Forward wave simulation and Neumann-to-Dirichlet data generation.

pub mod basis;
pub mod solver;

pub use basis::{build_basis, BasisConfig, ReceiverGrid, SourceBasis, UniformGrid};
pub use solver::{FdMesh, Forcing, InteriorField, RunOptions, SolverParams, WaveSolver};
pub mod dataset;

pub use dataset::{build_ntd_dataset, DatasetHeader, NtDDataset};
