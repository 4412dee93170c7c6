//! Volumetric reconstruction from posed range data.
//!
//! The crate fuses depth maps (or simulated laser scans) into a sparse,
//! block-hashed grid of truncated signed distance voxels, denoises the
//! grid with an observation-masked primal-dual total-variation solver,
//! extracts triangle meshes from the zero crossing, and benchmarks them
//! against reference point clouds. A variational stereo module produces
//! the input depth maps from rectified image pairs.

pub use nalgebra;

pub mod config;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod mesh;
pub mod regularizer;
pub mod stereo;
pub mod synth;
pub mod voxel;
