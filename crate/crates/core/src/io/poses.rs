//! Pose lists: one line per frame, 12 numbers forming the row-major 3x4
//! camera-to-world matrix (odometry text convention).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::IoError;
use crate::fusion::Pose;

pub fn read_poses<R: Read>(reader: R) -> Result<Vec<Pose>, IoError> {
    let mut poses = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| IoError::parse(format!("pose line {lineno}: bad number {t:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            return Err(IoError::parse(format!(
                "pose line {lineno}: expected 12 numbers, got {}",
                vals.len()
            )));
        }
        let rotation = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let translation = Vector3::new(vals[3], vals[7], vals[11]);
        let pose = Pose::new(rotation, translation)
            .map_err(|e| IoError::parse(format!("pose line {lineno}: {e}")))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_poses_file<P: AsRef<Path>>(path: P) -> Result<Vec<Pose>, IoError> {
    read_poses(File::open(path)?)
}

pub fn write_poses_file<P: AsRef<Path>>(poses: &[Pose], path: P) -> Result<(), IoError> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for pose in poses {
        let r = pose.rotation();
        let t = pose.translation();
        writeln!(
            w,
            "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        )?;
    }
    Ok(())
}
