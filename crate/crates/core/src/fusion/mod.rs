//! Integration of posed range observations into the block map.
//!
//! Depth maps are fused with the classic projective TSDF update: every voxel
//! of every allocated in-view block is projected into the depth image, the
//! signed distance `u = d - z_c` is evaluated against the truncation band,
//! and `(f, w)` follow the running weighted average. Laser-style rays update
//! the voxels they intersect directly.

mod traverse;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::voxel::{BlockCoord, BlockMap, StoreError, BLOCK_DIM};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid camera model: {0}")]
    InvalidIntrinsics(String),
    #[error("pose rotation is not rigid (deviation {0:.2e} exceeds 1e-6)")]
    NonRigidPose(f64),
    #[error("depth map is {got_w}x{got_h} but camera expects {want_w}x{want_h}")]
    DimensionMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("ray {index}: {reason}")]
    InvalidRay { index: usize, reason: String },
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Pinhole intrinsics plus the stereo baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Stereo baseline in meters; zero for non-stereo sources.
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        baseline: f64,
    ) -> Result<Self, FusionError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(FusionError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(FusionError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            baseline,
        })
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Checks orthonormality and `det = +1` to 1e-6.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, FusionError> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        let det_dev = (rotation.determinant() - 1.0).abs();
        let worst = dev.max(det_dev);
        if worst > 1e-6 {
            return Err(FusionError::NonRigidPose(worst));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera-frame point to world frame.
    #[inline]
    pub fn to_world(&self, p_c: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_c + self.translation
    }

    /// World point to camera frame (inverse transform).
    #[inline]
    pub fn to_camera(&self, p_g: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_g - self.translation)
    }
}

/// Per-pixel metric depth; non-finite or non-positive entries are invalid.
#[derive(Clone, Debug)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depths: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            depths: vec![f32::NAN; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, depths: Vec<f32>) -> Option<Self> {
        (depths.len() == width * height).then_some(DepthMap {
            width,
            height,
            depths,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn raw(&self) -> &[f32] {
        &self.depths
    }

    /// Depth at `(x, y)` when valid (finite and positive).
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.depths[y * self.width + x];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f32) {
        self.depths[y * self.width + x] = depth;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: usize, y: usize) {
        self.depths[y * self.width + x] = f32::NAN;
    }
}

/// Optional per-pixel color aligned with a depth map.
#[derive(Clone, Debug)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    /// Truncation distance in meters: voxels more than `mu` behind a
    /// surface are never touched.
    pub mu: f64,
    /// Saturation cap on the fusion weight (`f32::INFINITY` to disable).
    pub max_weight: f32,
    /// Depth readings beyond this range are ignored.
    pub max_range: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            mu: 1.0,
            max_weight: 100.0,
            max_range: 25.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.mu > 0.0) {
            return Err(FusionError::InvalidParams(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.max_weight >= 1.0) {
            return Err(FusionError::InvalidParams(format!(
                "max_weight must be >= 1, got {}",
                self.max_weight
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(FusionError::InvalidParams(format!(
                "max_range must be positive, got {}",
                self.max_range
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub blocks_allocated: u64,
    pub voxels_updated: u64,
    pub pixels_skipped: u64,
}

/// Signed distance of a voxel from the observed surface along the viewing
/// ray: positive between camera and surface, negative behind it.
#[inline]
pub fn sdf_from_depth(d_xy: f64, z_c: f64) -> f64 {
    d_xy - z_c
}

/// The TSDF running-average update. Returns `(f, w)` unchanged when the
/// voxel lies more than `mu` behind the surface; otherwise the weight grows
/// by one (saturating at `max_weight`) and `f` absorbs the truncated,
/// normalized distance.
#[inline]
pub fn tsdf_update(f_prev: f32, w_prev: f32, u_sdf: f64, params: &FusionParams) -> (f32, f32) {
    if u_sdf < -params.mu {
        return (f_prev, w_prev);
    }
    let u_tsdf = (u_sdf.clamp(-params.mu, params.mu) / params.mu) as f32;
    let w = (w_prev + 1.0).min(params.max_weight);
    let f = (u_tsdf + w_prev * f_prev) / (w_prev + 1.0);
    (f, w)
}

/// Fuse one depth map. Allocates every block that may contain updatable
/// voxels (the swept per-pixel frustum cells from the camera to `mu` behind
/// the surface), then updates all voxels of allocated in-view blocks.
pub fn integrate_depth_map(
    map: &mut BlockMap,
    depth: &DepthMap,
    cam: &CameraModel,
    pose: &Pose,
    params: &FusionParams,
) -> Result<FusionStats, FusionError> {
    integrate_depth_map_colored(map, depth, None, cam, pose, params)
}

/// As [`integrate_depth_map`], with an optional aligned color image whose
/// pixels enter the voxels' running color average.
pub fn integrate_depth_map_colored(
    map: &mut BlockMap,
    depth: &DepthMap,
    color: Option<&ColorImage>,
    cam: &CameraModel,
    pose: &Pose,
    params: &FusionParams,
) -> Result<FusionStats, FusionError> {
    params.validate()?;
    if depth.width != cam.width || depth.height != cam.height {
        return Err(FusionError::DimensionMismatch {
            want_w: cam.width,
            want_h: cam.height,
            got_w: depth.width,
            got_h: depth.height,
        });
    }
    if let Some(c) = color {
        if c.width != cam.width || c.height != cam.height {
            return Err(FusionError::DimensionMismatch {
                want_w: cam.width,
                want_h: cam.height,
                got_w: c.width,
                got_h: c.height,
            });
        }
    }

    let mut stats = FusionStats::default();
    stats.pixels_skipped = allocate_view_blocks(map, depth, cam, pose, params)?;
    stats.blocks_allocated = map.block_count() as u64;

    let voxel_size = map.voxel_size();
    let origin = map.origin();
    let rot_inv = pose.rotation.transpose();
    let cam_center = pose.translation;
    let far = if params.max_range.is_finite() {
        Some(params.max_range + params.mu)
    } else {
        None
    };
    let block_radius = 0.5 * (BLOCK_DIM as f64) * voxel_size * 3f64.sqrt();

    let updated: u64 = map
        .blocks_mut()
        .par_iter_mut()
        .map(|block| {
            let base = block.coords().base_voxel();
            let block_center = Vector3::new(
                (base.0[0] as f64 + 4.0) * voxel_size + origin.x,
                (base.0[1] as f64 + 4.0) * voxel_size + origin.y,
                (base.0[2] as f64 + 4.0) * voxel_size + origin.z,
            );
            let zc = (rot_inv * (block_center - cam_center)).z;
            // Conservative view cull: keep unless certainly behind the
            // camera or past the far band.
            if zc + block_radius <= 0.0 {
                return 0u64;
            }
            if let Some(far) = far {
                if zc - block_radius > far {
                    return 0u64;
                }
            }

            let mut updated = 0u64;
            for lz in 0..BLOCK_DIM {
                for ly in 0..BLOCK_DIM {
                    for lx in 0..BLOCK_DIM {
                        let center = Vector3::new(
                            ((base.0[0] + lx as i32) as f64 + 0.5) * voxel_size + origin.x,
                            ((base.0[1] + ly as i32) as f64 + 0.5) * voxel_size + origin.y,
                            ((base.0[2] + lz as i32) as f64 + 0.5) * voxel_size + origin.z,
                        );
                        let p_c = rot_inv * (center - cam_center);
                        if p_c.z <= 0.0 {
                            continue;
                        }
                        let px = (cam.fx * p_c.x / p_c.z + cam.cx).round();
                        let py = (cam.fy * p_c.y / p_c.z + cam.cy).round();
                        if px < 0.0 || py < 0.0 || px >= cam.width as f64 || py >= cam.height as f64
                        {
                            continue;
                        }
                        let (px, py) = (px as usize, py as usize);
                        let Some(d) = depth.get(px, py) else { continue };
                        let d = d as f64;
                        if d > params.max_range {
                            continue;
                        }
                        let u_sdf = sdf_from_depth(d, p_c.z);
                        if u_sdf < -params.mu {
                            continue;
                        }
                        let v = block.voxel_at_mut(lx, ly, lz);
                        let (f, w) = tsdf_update(v.f, v.w, u_sdf, params);
                        if let Some(c) = color {
                            let rgb = c.rgb[py * c.width + px];
                            let mut avg = [0u8; 3];
                            for i in 0..3 {
                                avg[i] = ((rgb[i] as f32 + v.w * v.rgb[i] as f32) / (v.w + 1.0))
                                    .round()
                                    .clamp(0.0, 255.0) as u8;
                            }
                            v.set_color(avg);
                        }
                        v.f = f;
                        v.w = w;
                        v.set_observed(w > 0.0);
                        updated += 1;
                    }
                }
            }
            updated
        })
        .sum();
    stats.voxels_updated = updated;
    Ok(stats)
}

/// Allocation pass: walk each valid pixel's view segment from the camera to
/// `mu` behind the surface (in camera depth), allocating every block within
/// the pixel's lateral footprint of the path. Returns the number of skipped
/// pixels.
fn allocate_view_blocks(
    map: &mut BlockMap,
    depth: &DepthMap,
    cam: &CameraModel,
    pose: &Pose,
    params: &FusionParams,
) -> Result<u64, FusionError> {
    let voxel_size = map.voxel_size();
    let block_edge = voxel_size * BLOCK_DIM as f64;
    let origin = map.origin();
    let cam_center = pose.translation;
    let mut skipped = 0u64;

    // Collect per pixel, then allocate in sorted order so the arena layout
    // is independent of traversal details.
    let mut wanted: std::collections::HashSet<BlockCoord> = std::collections::HashSet::new();
    // Lateral half-footprint of one pixel per unit depth.
    let lateral_per_z = 0.5 * (1.0 / (cam.fx * cam.fx) + 1.0 / (cam.fy * cam.fy)).sqrt();

    for py in 0..cam.height {
        for px in 0..cam.width {
            let Some(d) = depth.get(px, py) else {
                skipped += 1;
                continue;
            };
            let d = d as f64;
            if d > params.max_range {
                skipped += 1;
                continue;
            }
            // Camera-frame endpoint where camera depth reaches d + mu.
            let z_end = d + params.mu;
            let dir_c = Vector3::new(
                (px as f64 - cam.cx) / cam.fx,
                (py as f64 - cam.cy) / cam.fy,
                1.0,
            );
            let end_w = pose.to_world(dir_c * z_end);
            let seg = end_w - cam_center;
            let seg_len = seg.norm();
            let step = 0.5 * block_edge;
            let n_steps = (seg_len / step).ceil().max(1.0) as usize;
            let mut last_range: Option<(BlockCoord, BlockCoord)> = None;
            for i in 0..=n_steps {
                let s = i as f64 / n_steps as f64;
                let p = cam_center + seg * s;
                let half = lateral_per_z * z_end * s + 0.5 * seg_len / n_steps as f64 + 1e-9;
                let lo = BlockCoord([
                    (((p.x - half) - origin.x) / block_edge).floor() as i32,
                    (((p.y - half) - origin.y) / block_edge).floor() as i32,
                    (((p.z - half) - origin.z) / block_edge).floor() as i32,
                ]);
                let hi = BlockCoord([
                    (((p.x + half) - origin.x) / block_edge).floor() as i32,
                    (((p.y + half) - origin.y) / block_edge).floor() as i32,
                    (((p.z + half) - origin.z) / block_edge).floor() as i32,
                ]);
                if last_range == Some((lo, hi)) {
                    continue;
                }
                last_range = Some((lo, hi));
                for bz in lo.0[2]..=hi.0[2] {
                    for by in lo.0[1]..=hi.0[1] {
                        for bx in lo.0[0]..=hi.0[0] {
                            wanted.insert(BlockCoord::new(bx, by, bz));
                        }
                    }
                }
            }
        }
    }

    let mut ordered: Vec<BlockCoord> = wanted.into_iter().collect();
    ordered.sort();
    for c in ordered {
        map.alloc_block(c)?;
    }
    Ok(skipped)
}

/// A single range measurement: unit `direction` from `origin`, surface hit
/// at `range` meters.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub range: f64,
}

/// Fuse a batch of rays: every voxel intersected between each ray's origin
/// and `mu` past its surface hit receives the TSDF update for its projected
/// distance along the ray.
pub fn integrate_ray_scan(
    map: &mut BlockMap,
    rays: &[Ray],
    params: &FusionParams,
) -> Result<FusionStats, FusionError> {
    params.validate()?;
    for (index, ray) in rays.iter().enumerate() {
        if !(ray.range > 0.0) || !ray.range.is_finite() {
            return Err(FusionError::InvalidRay {
                index,
                reason: format!("range must be positive and finite, got {}", ray.range),
            });
        }
        if (ray.direction.norm() - 1.0).abs() > 1e-6 {
            return Err(FusionError::InvalidRay {
                index,
                reason: format!("direction must be unit length, |d| = {}", ray.direction.norm()),
            });
        }
    }

    let blocks_before = map.block_count();
    let mut updated = 0u64;
    let voxel_size = map.voxel_size();
    let origin = map.origin();

    for ray in rays {
        let t_max = ray.range + params.mu;
        let mut visited = Vec::new();
        traverse::walk_voxels(ray.origin, ray.direction, t_max, origin, voxel_size, |c| {
            visited.push(c)
        });
        for coords in visited {
            let center = map.voxel_to_world(coords);
            let t_center = (center - ray.origin).dot(&ray.direction);
            let u_sdf = ray.range - t_center;
            if u_sdf < -params.mu {
                continue;
            }
            let v = map.voxel_mut(coords, true)?.expect("allocated");
            let (f, w) = tsdf_update(v.f, v.w, u_sdf, params);
            v.f = f;
            v.w = w;
            v.set_observed(w > 0.0);
            updated += 1;
        }
    }

    Ok(FusionStats {
        blocks_allocated: (map.block_count() - blocks_before) as u64,
        voxels_updated: updated,
        pixels_skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::VoxelCoord;
    use approx::assert_relative_eq;

    fn plane_depth(cam: &CameraModel, z: f32) -> DepthMap {
        let mut d = DepthMap::new(cam.width, cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                d.set(x, y, z);
            }
        }
        d
    }

    fn test_cam(width: usize, height: usize) -> CameraModel {
        CameraModel::new(
            width as f64,
            width as f64,
            width as f64 / 2.0 - 0.5,
            height as f64 / 2.0 - 0.5,
            width,
            height,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn sdf_sign_convention() {
        assert_relative_eq!(sdf_from_depth(5.0, 4.5), 0.5);
        assert_relative_eq!(sdf_from_depth(5.0, 5.0), 0.0);
        assert_relative_eq!(sdf_from_depth(5.0, 6.0), -1.0);
    }

    #[test]
    fn tsdf_update_running_average() {
        let params = FusionParams {
            mu: 1.0,
            ..Default::default()
        };
        let (f, w) = tsdf_update(0.5, 2.0, 0.2, &params);
        assert_relative_eq!(f, 0.4, epsilon = 1e-6);
        assert_relative_eq!(w, 3.0);
    }

    #[test]
    fn tsdf_update_carve_protection() {
        let params = FusionParams {
            mu: 1.0,
            ..Default::default()
        };
        let (f, w) = tsdf_update(0.37, 4.0, -1.5, &params);
        assert_eq!((f, w), (0.37, 4.0));
    }

    #[test]
    fn tsdf_update_first_observation() {
        let params = FusionParams {
            mu: 1.0,
            ..Default::default()
        };
        let (f, w) = tsdf_update(0.0, 0.0, 0.3, &params);
        assert_relative_eq!(f, 0.3, epsilon = 1e-6);
        assert_relative_eq!(w, 1.0);
    }

    #[test]
    fn tsdf_update_weight_saturates() {
        let params = FusionParams {
            mu: 1.0,
            max_weight: 3.0,
            ..Default::default()
        };
        let mut state = (0.0f32, 0.0f32);
        for _ in 0..10 {
            state = tsdf_update(state.0, state.1, 0.5, &params);
            assert!(state.1 <= 3.0);
            assert!((-1.0..=1.0).contains(&state.0));
        }
        assert_eq!(state.1, 3.0);
    }

    #[test]
    fn pose_rejects_non_rigid() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Pose::new(m, Vector3::zeros()),
            Err(FusionError::NonRigidPose(_))
        ));
        // Reflection: orthonormal but det = -1.
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn fronto_parallel_plane_zero_crossing() {
        let cam = test_cam(64, 64);
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let params = FusionParams {
            mu: 1.0,
            max_weight: 100.0,
            max_range: 25.0,
        };
        let depth = plane_depth(&cam, 5.0);
        let stats =
            integrate_depth_map(&mut map, &depth, &cam, &Pose::identity(), &params).unwrap();
        assert!(stats.blocks_allocated > 0);
        assert!(stats.voxels_updated > 0);
        assert_eq!(stats.pixels_skipped, 0);

        // Along the optical axis the crossing sits between the voxel layers
        // straddling z = 5: f > 0 at z=4.95, f < 0 at z=5.05.
        let near = map.voxel(VoxelCoord::new(0, 0, 49)).unwrap();
        let behind = map.voxel(VoxelCoord::new(0, 0, 50)).unwrap();
        assert!(near.observed() && behind.observed());
        assert!(near.f > 0.0, "f at z=4.95 was {}", near.f);
        assert!(behind.f < 0.0, "f at z=5.05 was {}", behind.f);

        // Voxels more than mu behind the plane are untouched.
        assert!(map
            .voxel(VoxelCoord::new(0, 0, 61))
            .map_or(true, |v| !v.observed()));
    }

    #[test]
    fn projection_outside_image_leaves_voxels_untouched() {
        let cam = test_cam(8, 8);
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let params = FusionParams::default();
        // Voxel far off to the side of the tiny frustum.
        map.voxel_mut(VoxelCoord::new(200, 0, 10), true).unwrap();
        let depth = plane_depth(&cam, 2.0);
        integrate_depth_map(&mut map, &depth, &cam, &Pose::identity(), &params).unwrap();
        let v = map.voxel(VoxelCoord::new(200, 0, 10)).unwrap();
        assert!(!v.observed());
        assert_eq!((v.f, v.w), (0.0, 0.0));
    }

    #[test]
    fn repeated_integration_is_idempotent_in_f() {
        let cam = test_cam(32, 32);
        let params = FusionParams::default();
        let depth = plane_depth(&cam, 3.0);

        let mut once = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        integrate_depth_map(&mut once, &depth, &cam, &Pose::identity(), &params).unwrap();
        let mut twice = once.clone();
        integrate_depth_map(&mut twice, &depth, &cam, &Pose::identity(), &params).unwrap();

        for b in once.blocks() {
            let b2 = twice.block(b.coords()).unwrap();
            for (v1, v2) in b.voxels().iter().zip(b2.voxels().iter()) {
                assert_relative_eq!(v1.f, v2.f, epsilon = 1e-6);
                if v1.w > 0.0 {
                    assert_relative_eq!(v2.w, 2.0 * v1.w, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cam = test_cam(16, 16);
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let depth = DepthMap::new(8, 8);
        assert!(matches!(
            integrate_depth_map(&mut map, &depth, &cam, &Pose::identity(), &FusionParams::default()),
            Err(FusionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ray_scan_axis_aligned() {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let params = FusionParams {
            mu: 0.5,
            max_weight: 100.0,
            max_range: 100.0,
        };
        let rays = [Ray {
            origin: Vector3::new(0.0, 0.05, 0.05),
            direction: Vector3::new(1.0, 0.0, 0.0),
            range: 2.0,
        }];
        let stats = integrate_ray_scan(&mut map, &rays, &params).unwrap();
        assert_eq!(stats.voxels_updated, 25);

        let f_at = |x: i32| map.voxel(VoxelCoord::new(x, 0, 0)).unwrap().f;
        assert_relative_eq!(f_at(0), 1.0); // clamped far in front
        assert!(f_at(19) > 0.0 && f_at(20) < 0.0, "crossing at 2.0 m");
        for x in 1..25 {
            assert!(f_at(x) <= f_at(x - 1) + 1e-9, "f decreasing along the ray");
        }
        // Interpolated crossing is exactly at the surface.
        let (f0, f1) = (f_at(19), f_at(20));
        let x_cross = 1.95 + 0.1 * f0 / (f0 - f1);
        assert_relative_eq!(x_cross, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn ray_scan_rejects_degenerate_rays() {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let bad_range = [Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(1.0, 0.0, 0.0),
            range: 0.0,
        }];
        assert!(matches!(
            integrate_ray_scan(&mut map, &bad_range, &FusionParams::default()),
            Err(FusionError::InvalidRay { .. })
        ));
        let bad_dir = [Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(1.0, 1.0, 0.0),
            range: 2.0,
        }];
        assert!(matches!(
            integrate_ray_scan(&mut map, &bad_dir, &FusionParams::default()),
            Err(FusionError::InvalidRay { .. })
        ));
    }

    #[test]
    fn parallel_rays_update_disjoint_voxels() {
        let params = FusionParams {
            mu: 0.3,
            ..Default::default()
        };
        let ray_at = |y: f64| Ray {
            origin: Vector3::new(0.02, y, 0.05),
            direction: Vector3::new(1.0, 0.0, 0.0),
            range: 1.5,
        };
        let mut a = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        integrate_ray_scan(&mut a, &[ray_at(0.05)], &params).unwrap();
        let mut b = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        integrate_ray_scan(&mut b, &[ray_at(0.25)], &params).unwrap();

        let observed = |m: &BlockMap| -> Vec<VoxelCoord> {
            let mut out = Vec::new();
            for blk in m.blocks() {
                for (i, v) in blk.voxels().iter().enumerate() {
                    if v.observed() {
                        let base = blk.coords().base_voxel();
                        out.push(base.offset(
                            (i % 8) as i32,
                            ((i / 8) % 8) as i32,
                            (i / 64) as i32,
                        ));
                    }
                }
            }
            out.sort();
            out
        };
        let (oa, ob) = (observed(&a), observed(&b));
        assert!(!oa.is_empty() && !ob.is_empty());
        assert!(oa.iter().all(|c| !ob.contains(c)), "rays 2 voxels apart stay disjoint");
    }

    #[test]
    fn color_running_average() {
        let cam = test_cam(16, 16);
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let params = FusionParams::default();
        let depth = plane_depth(&cam, 2.0);
        let color = ColorImage {
            width: 16,
            height: 16,
            rgb: vec![[200, 100, 50]; 256],
        };
        integrate_depth_map_colored(&mut map, &depth, Some(&color), &cam, &Pose::identity(), &params)
            .unwrap();
        let v = map.voxel(VoxelCoord::new(0, 0, 19)).unwrap();
        assert!(v.observed());
        assert!(v.has_color());
        assert_eq!(v.rgb, [200, 100, 50]);
    }
}
