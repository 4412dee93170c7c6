//! File formats: PFM and 16-bit PNG depth maps, pose lists, PLY meshes
//! and point clouds, ASCII XYZ clouds.

mod depth_png;
pub mod kitti;
mod pfm;
mod ply;
mod poses;
mod xyz;

pub use depth_png::{read_depth_png, write_depth_png};
pub use pfm::{read_pfm, read_pfm_file, write_pfm, write_pfm_file};
pub use ply::{export_ply, export_ply_file, read_ply_points, read_ply_points_file};
pub use poses::{read_poses, read_poses_file, write_poses_file};
pub use xyz::{export_xyz_file, read_xyz_points, read_xyz_points_file, write_xyz_points_file};

use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Parse(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
}

impl IoError {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        IoError::Parse(msg.into())
    }
}
