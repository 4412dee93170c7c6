//! ASCII XYZ point clouds: one `x y z` triple per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::IoError;
use crate::mesh::TriangleMesh;

pub fn read_xyz_points<R: Read>(reader: R) -> Result<Vec<[f64; 3]>, IoError> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let mut p = [0.0f64; 3];
        for slot in &mut p {
            *slot = it
                .next()
                .ok_or_else(|| IoError::parse(format!("xyz line {}: missing coordinate", i + 1)))?
                .parse()
                .map_err(|e| IoError::parse(format!("xyz line {}: {e}", i + 1)))?;
        }
        points.push(p);
    }
    Ok(points)
}

pub fn read_xyz_points_file<P: AsRef<Path>>(path: P) -> Result<Vec<[f64; 3]>, IoError> {
    read_xyz_points(File::open(path)?)
}

pub fn write_xyz_points_file<P: AsRef<Path>>(points: &[[f64; 3]], path: P) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Vertex-only export of a mesh for the evaluator.
pub fn export_xyz_file<P: AsRef<Path>>(mesh: &TriangleMesh, path: P) -> Result<(), IoError> {
    write_xyz_points_file(&mesh.vertices, path)
}
