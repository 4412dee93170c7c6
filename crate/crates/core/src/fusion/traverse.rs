//! Exact voxel-lattice traversal (Amanatides-Woo stepping).

use nalgebra::Vector3;

use crate::voxel::VoxelCoord;

/// Visit every voxel intersected by the segment `origin + t * direction`,
/// `t` in `[0, t_max)`, exactly once and in order. `direction` must be
/// unit-length. Coordinates are in lattice units of `voxel_size` relative
/// to `grid_origin`.
pub(crate) fn walk_voxels(
    origin: Vector3<f64>,
    direction: Vector3<f64>,
    t_max: f64,
    grid_origin: Vector3<f64>,
    voxel_size: f64,
    mut visit: impl FnMut(VoxelCoord),
) {
    // Work in lattice units so a cell has unit extent.
    let start = (origin - grid_origin) / voxel_size;
    let t_end = t_max / voxel_size;

    let mut cell = [
        start.x.floor() as i32,
        start.y.floor() as i32,
        start.z.floor() as i32,
    ];
    let mut step = [0i32; 3];
    // Parametric distance to the first boundary and between boundaries,
    // per axis, in lattice units of t.
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];

    for a in 0..3 {
        let d = direction[a];
        if d > 0.0 {
            step[a] = 1;
            t_delta[a] = 1.0 / d;
            t_next[a] = ((cell[a] as f64 + 1.0) - start[a]) / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_delta[a] = -1.0 / d;
            t_next[a] = (start[a] - cell[a] as f64) / -d;
        }
    }

    let mut t = 0.0;
    while t < t_end {
        visit(VoxelCoord(cell));
        // Advance across the nearest cell boundary.
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        t = t_next[axis];
        if !t.is_finite() {
            break;
        }
        t_next[axis] += t_delta[axis];
        cell[axis] += step[axis];
    }
}
