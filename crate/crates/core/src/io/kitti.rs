//! Odometry-benchmark dataset adapters: calibration text, laser scan
//! binaries, and pose-transformed scan consolidation into one reference
//! cloud.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::IoError;
use crate::fusion::{CameraModel, Pose};

/// Projection matrices (rows of 12) keyed by name, e.g. "P0", "Tr".
#[derive(Clone, Debug)]
pub struct OdometryCalib {
    pub p0: [f64; 12],
    pub p1: [f64; 12],
    /// Laser-to-camera rigid transform (3x4 row-major).
    pub tr: Option<[f64; 12]>,
}

pub fn read_calib<P: AsRef<Path>>(path: P) -> Result<OdometryCalib, IoError> {
    let text = fs::read_to_string(&path)?;
    let mut p0 = None;
    let mut p1 = None;
    let mut tr = None;
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|e| IoError::parse(format!("calib line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            continue;
        }
        let mut arr = [0.0; 12];
        arr.copy_from_slice(&vals);
        match key.trim() {
            "P0" => p0 = Some(arr),
            "P1" => p1 = Some(arr),
            "Tr" => tr = Some(arr),
            _ => {}
        }
    }
    Ok(OdometryCalib {
        p0: p0.ok_or_else(|| IoError::parse("calib lacks P0"))?,
        p1: p1.ok_or_else(|| IoError::parse("calib lacks P1"))?,
        tr,
    })
}

impl OdometryCalib {
    /// Grayscale stereo camera: intrinsics from P0, baseline from P1's
    /// translation column (`P1[0,3] = -fx * baseline`).
    pub fn camera(&self, width: usize, height: usize) -> Result<CameraModel, IoError> {
        let fx = self.p0[0];
        let fy = self.p0[5];
        let cx = self.p0[2];
        let cy = self.p0[6];
        let baseline = -self.p1[3] / fx;
        CameraModel::new(fx, fy, cx, cy, width, height, baseline)
            .map_err(|e| IoError::parse(e.to_string()))
    }

    /// Laser-to-camera transform as rotation plus translation.
    pub fn laser_to_camera(&self) -> Option<(Matrix3<f64>, Vector3<f64>)> {
        let t = self.tr?;
        Some((
            Matrix3::new(t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]),
            Vector3::new(t[3], t[7], t[11]),
        ))
    }
}

/// Laser scan binary: packed f32 `(x, y, z, reflectance)` records in the
/// sensor frame.
pub fn read_laser_bin<P: AsRef<Path>>(path: P) -> Result<Vec<[f64; 3]>, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::parse(format!(
            "laser scan size {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let x = f32::from_le_bytes(rec[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(rec[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(rec[8..12].try_into().unwrap()) as f64;
        points.push([x, y, z]);
    }
    Ok(points)
}

/// Transform per-frame laser scans into the world frame via the camera
/// poses and concatenate them. `stride` keeps every n-th point of each
/// scan to bound memory.
pub fn consolidate_scans(
    poses: &[Pose],
    laser_to_cam: (Matrix3<f64>, Vector3<f64>),
    scans: &[Vec<[f64; 3]>],
    stride: usize,
) -> Result<Vec<[f64; 3]>, IoError> {
    if scans.len() != poses.len() {
        return Err(IoError::parse(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    let stride = stride.max(1);
    let (rot, trans) = laser_to_cam;
    let mut out = Vec::new();
    for (scan, pose) in scans.iter().zip(poses.iter()) {
        for p in scan.iter().step_by(stride) {
            let cam = rot * Vector3::new(p[0], p[1], p[2]) + trans;
            let world = pose.to_world(cam);
            out.push([world.x, world.y, world.z]);
        }
    }
    Ok(out)
}
