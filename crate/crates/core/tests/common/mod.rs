//! Shared acceptance-test fixtures: an independent dense-array reference
//! implementation of fusion and regularization (no code shared with the
//! block-map path), plus small scene helpers.

use nalgebra::Vector3;

use voxrecon_core::fusion::{CameraModel, DepthMap, FusionParams, Pose};

/// Dense voxel grid over a fixed extent; plain arrays, no hashing, no
/// blocks. Mirrors the update semantics from first principles.
pub struct DenseGrid {
    pub dims: [usize; 3],
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub f: Vec<f32>,
    pub w: Vec<f32>,
}

impl DenseGrid {
    pub fn new(dims: [usize; 3], origin: Vector3<f64>, voxel_size: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        DenseGrid {
            dims,
            origin,
            voxel_size,
            f: vec![0.0; n],
            w: vec![0.0; n],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        Vector3::new(
            (x as f64 + 0.5) * self.voxel_size + self.origin.x,
            (y as f64 + 0.5) * self.voxel_size + self.origin.y,
            (z as f64 + 0.5) * self.voxel_size + self.origin.z,
        )
    }

    /// Project every voxel of the grid into the depth map and apply the
    /// truncated signed-distance running average.
    pub fn integrate_depth_map(
        &mut self,
        depth: &DepthMap,
        cam: &CameraModel,
        pose: &Pose,
        params: &FusionParams,
    ) {
        let rot_inv = pose.rotation().transpose();
        let cam_center = pose.translation();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let p_c = rot_inv * (self.center(x, y, z) - cam_center);
                    if p_c.z <= 0.0 {
                        continue;
                    }
                    let px = (cam.fx * p_c.x / p_c.z + cam.cx).round();
                    let py = (cam.fy * p_c.y / p_c.z + cam.cy).round();
                    if px < 0.0 || py < 0.0 || px >= cam.width as f64 || py >= cam.height as f64 {
                        continue;
                    }
                    let Some(d) = depth.get(px as usize, py as usize) else {
                        continue;
                    };
                    let d = d as f64;
                    if d > params.max_range {
                        continue;
                    }
                    let u_sdf = d - p_c.z;
                    if u_sdf < -params.mu {
                        continue;
                    }
                    let i = self.idx(x, y, z);
                    let u_tsdf = (u_sdf.clamp(-params.mu, params.mu) / params.mu) as f32;
                    let (f_prev, w_prev) = (self.f[i], self.w[i]);
                    self.f[i] = (u_tsdf + w_prev * f_prev) / (w_prev + 1.0);
                    self.w[i] = (w_prev + 1.0).min(params.max_weight);
                }
            }
        }
    }

    fn observed(&self, x: isize, y: isize, z: isize) -> bool {
        if x < 0
            || y < 0
            || z < 0
            || x >= self.dims[0] as isize
            || y >= self.dims[1] as isize
            || z >= self.dims[2] as isize
        {
            return false;
        }
        self.w[self.idx(x as usize, y as usize, z as usize)] > 0.0
    }

    /// Primal-dual TV solve over the observed voxels with the masked
    /// forward-difference gradient and its negative-adjoint divergence,
    /// written directly on the dense arrays.
    pub fn regularize(&mut self, lambda: f64, sigma_p: f64, tau: f64, theta: f64, iters: usize) -> (f64, f64) {
        let n = self.f.len();
        let [nx, ny, nz] = self.dims;
        let omega: Vec<bool> = (0..n).map(|i| self.w[i] > 0.0).collect();
        let mut u: Vec<f64> = self.f.iter().map(|&v| v as f64).collect();
        let mut u_prev = u.clone();
        let mut u_hat = u.clone();
        let mut p = vec![[0.0f64; 3]; n];

        let at = |x: isize, y: isize, z: isize| -> Option<usize> {
            if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
                return None;
            }
            let i = x as usize + nx * (y as usize + ny * z as usize);
            omega[i].then_some(i)
        };

        let energy = |u: &[f64]| -> f64 {
            let mut e = 0.0;
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for x in 0..nx as isize {
                        let Some(i) = at(x, y, z) else { continue };
                        let mut sq = 0.0;
                        for (dx, dy, dz) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                            if let Some(j) = at(x + dx, y + dy, z + dz) {
                                let d = u[j] - u[i];
                                sq += d * d;
                            }
                        }
                        let r = self.f[i] as f64 - u[i];
                        e += sq.sqrt() + lambda * self.w[i] as f64 * r * r;
                    }
                }
            }
            e
        };

        let initial = energy(&u);
        for _ in 0..iters {
            // Dual ascent with projection.
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for x in 0..nx as isize {
                        let Some(i) = at(x, y, z) else { continue };
                        let mut pt = p[i];
                        for (a, off) in [(0usize, (1, 0, 0)), (1, (0, 1, 0)), (2, (0, 0, 1))] {
                            if let Some(j) = at(x + off.0, y + off.1, z + off.2) {
                                pt[a] += sigma_p * (u_hat[j] - u_hat[i]);
                            }
                        }
                        let norm = (pt[0] * pt[0] + pt[1] * pt[1] + pt[2] * pt[2]).sqrt();
                        let s = 1.0 / norm.max(1.0);
                        p[i] = [pt[0] * s, pt[1] * s, pt[2] * s];
                    }
                }
            }
            // Primal descent with the data prox.
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for x in 0..nx as isize {
                        let Some(i) = at(x, y, z) else { continue };
                        let mut div = 0.0;
                        for (a, off) in [(0usize, (1, 0, 0)), (1, (0, 1, 0)), (2, (0, 0, 1))] {
                            if at(x + off.0, y + off.1, z + off.2).is_some() {
                                div += p[i][a];
                            }
                            if let Some(j) = at(x - off.0, y - off.1, z - off.2) {
                                div -= p[j][a];
                            }
                        }
                        let u_tilde = u[i] + tau * div;
                        let tlw = tau * lambda * self.w[i] as f64;
                        u_prev[i] = u[i];
                        u[i] = (u_tilde + tlw * self.f[i] as f64) / (1.0 + tlw);
                    }
                }
            }
            // Relaxation.
            for i in 0..n {
                if omega[i] {
                    u_hat[i] = u[i] + theta * (u[i] - u_prev[i]);
                }
            }
        }
        let final_energy = energy(&u);
        for i in 0..n {
            if omega[i] {
                self.f[i] = u[i].clamp(-1.0, 1.0) as f32;
            }
        }
        (initial, final_energy)
    }
}

/// Deterministic hash noise in [0, 1).
pub fn hash01(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ seed.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 31;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 27;
    (h >> 40) as f64 / (1u64 << 24) as f64
}

/// Smooth bilinear value noise for stereo test textures.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (cx, cy) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - cx as f64, y - cy as f64);
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = hash01(cx, cy, seed);
    let v10 = hash01(cx + 1, cy, seed);
    let v01 = hash01(cx, cy + 1, seed);
    let v11 = hash01(cx + 1, cy + 1, seed);
    let a = v00 + sx * (v10 - v00);
    let b = v01 + sx * (v11 - v01);
    a + sy * (b - a)
}

pub fn smooth_texture(x: f64, y: f64) -> f64 {
    (0.5 * value_noise(x / 7.0, y / 7.0, 1)
        + 0.3 * value_noise(x / 3.1, y / 2.9, 2)
        + 0.2 * value_noise(x / 1.6, y / 1.7, 3))
    .clamp(0.0, 1.0)
}
