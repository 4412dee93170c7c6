//! Synthetic scenes with analytic geometry: depth rendering, ground-truth
//! point sampling, textured stereo pair rendering, and dataset generation
//! for end-to-end runs.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fusion::{CameraModel, DepthMap, FusionError, Pose};
use crate::io::{self, IoError};
use crate::stereo::GrayImage;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty scene")]
    EmptyScene,
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("unknown scene preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Finite rectangular patch spanned by two edge vectors.
#[derive(Clone, Copy, Debug)]
pub struct Quad {
    pub corner: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum Primitive {
    Quad(Quad),
    Sphere(Sphere),
}

impl Primitive {
    /// Smallest positive ray parameter hit by `origin + t * dir`, if any.
    /// `dir` need not be unit length; `t` is in units of `|dir|`.
    fn raycast(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Quad(q) => {
                let normal = q.edge_u.cross(&q.edge_v);
                let denom = dir.dot(&normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (q.corner - origin).dot(&normal) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let p = origin + dir * t - q.corner;
                let a = p.dot(&q.edge_u) / q.edge_u.norm_squared();
                let b = p.dot(&q.edge_v) / q.edge_v.norm_squared();
                ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
            }
            Primitive::Sphere(s) => {
                let oc = origin - s.center;
                let a = dir.norm_squared();
                let b = 2.0 * oc.dot(&dir);
                let c = oc.norm_squared() - s.radius * s.radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                [t0, t1].into_iter().find(|&t| t > 1e-9)
            }
        }
    }

    /// Roughly uniform surface samples at the given spacing.
    fn sample(&self, spacing: f64, out: &mut Vec<[f64; 3]>) {
        match *self {
            Primitive::Quad(q) => {
                let nu = (q.edge_u.norm() / spacing).ceil().max(1.0) as usize;
                let nv = (q.edge_v.norm() / spacing).ceil().max(1.0) as usize;
                for i in 0..=nu {
                    for j in 0..=nv {
                        let p = q.corner
                            + q.edge_u * (i as f64 / nu as f64)
                            + q.edge_v * (j as f64 / nv as f64);
                        out.push([p.x, p.y, p.z]);
                    }
                }
            }
            Primitive::Sphere(s) => {
                // Fibonacci spiral with ~spacing^2 area per sample.
                let n = ((4.0 * std::f64::consts::PI * s.radius * s.radius)
                    / (spacing * spacing))
                    .ceil()
                    .max(8.0) as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    let p = s.center
                        + Vector3::new(r * phi.cos(), r * phi.sin(), z) * s.radius;
                    out.push([p.x, p.y, p.z]);
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    /// Depth (camera-frame z) of the nearest surface along the pixel ray,
    /// or `None` for a miss.
    pub fn depth_at(&self, cam_pos: Vector3<f64>, ray_world: Vector3<f64>) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.raycast(cam_pos, ray_world))
            .min_by(f64::total_cmp)
    }

    pub fn sample_points(&self, spacing: f64) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for p in &self.primitives {
            p.sample(spacing, &mut out);
        }
        out
    }
}

/// Render the analytic depth map seen from `pose`. With `noise_sigma > 0`,
/// adds i.i.d. Gaussian depth noise from the given seeded stream.
pub fn render_depth(
    scene: &Scene,
    cam: &CameraModel,
    pose: &Pose,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> DepthMap {
    let mut depth = DepthMap::new(cam.width, cam.height);
    let normal = Normal::new(0.0, noise_sigma.max(1e-300)).unwrap();
    for y in 0..cam.height {
        for x in 0..cam.width {
            // Unit-z camera ray: the ray parameter equals camera depth.
            let dir_c = Vector3::new(
                (x as f64 - cam.cx) / cam.fx,
                (y as f64 - cam.cy) / cam.fy,
                1.0,
            );
            let dir_w = pose.rotation() * dir_c;
            if let Some(mut d) = scene.depth_at(pose.translation(), dir_w) {
                if noise_sigma > 0.0 {
                    d += normal.sample(rng);
                }
                if d > 0.0 {
                    depth.set(x, y, d as f32);
                }
            }
        }
    }
    depth
}

/// Procedural multi-octave texture for stereo rendering, evaluated on a
/// world-space surface parameterization.
fn hash01(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ seed.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 31;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 27;
    (h >> 40) as f64 / (1u64 << 24) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
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

pub fn surface_texture(u: f64, v: f64, seed: u64) -> f64 {
    (0.45 * value_noise(u / 0.9, v / 0.9, seed)
        + 0.35 * value_noise(u / 0.37, v / 0.41, seed ^ 0xABCD)
        + 0.20 * value_noise(u / 0.16, v / 0.18, seed ^ 0x1234))
    .clamp(0.0, 1.0)
}

/// Render a rectified stereo pair of the scene: the right camera at
/// `pose`, the left offset by `baseline` along the camera's negative x
/// axis, both textured by world position.
pub fn render_stereo_pair(
    scene: &Scene,
    cam: &CameraModel,
    pose: &Pose,
    seed: u64,
) -> (GrayImage, GrayImage) {
    let render = |cam_pos: Vector3<f64>| -> GrayImage {
        GrayImage::from_fn(cam.width, cam.height, |x, y| {
            let dir_c = Vector3::new(
                (x as f64 - cam.cx) / cam.fx,
                (y as f64 - cam.cy) / cam.fy,
                1.0,
            );
            let dir_w = pose.rotation() * dir_c;
            match scene.depth_at(cam_pos, dir_w) {
                Some(t) => {
                    let p = cam_pos + dir_w * t;
                    // Parameterize by two world coordinates mixed so that
                    // any plane orientation gets non-degenerate texture.
                    let u = p.x + 0.37 * p.z;
                    let v = p.y - 0.21 * p.z;
                    surface_texture(u, v, seed) as f32
                }
                None => 0.5,
            }
        })
    };
    // Left camera sits +baseline along camera -x? Convention: the left
    // camera is displaced by -baseline in camera x (so disparities are
    // positive in the right image).
    let left_pos = pose.translation() - pose.rotation() * Vector3::new(cam.baseline, 0.0, 0.0);
    let left = render(left_pos);
    let right = render(pose.translation());
    (left, right)
}

/// Orthonormal camera-to-world rotation: camera z along `forward`, camera
/// x to the right of the `up_hint` plane, camera y pointing image-down.
pub fn look_rotation(forward: Vector3<f64>, up_hint: Vector3<f64>) -> Matrix3<f64> {
    let f = forward.normalize();
    let mut r = f.cross(&up_hint);
    if r.norm() < 1e-9 {
        r = f.cross(&Vector3::y());
    }
    let right = r.normalize();
    let down = f.cross(&right);
    Matrix3::from_columns(&[right, down, f])
}

pub struct Dataset {
    pub scene: Scene,
    pub cam: CameraModel,
    pub poses: Vec<Pose>,
    /// Ground-truth surface sample spacing in meters.
    pub gt_spacing: f64,
}

/// Corridor preset: a four-sided tube (floor, ceiling, two walls) plus an
/// end cap, running diagonally and climbing, with the camera moving along
/// the centerline looking forward. The diagonal run keeps the allocated
/// tube small against its axis-aligned bounding box.
pub fn corridor_dataset(length: f64, frames: usize) -> Result<Dataset, SynthError> {
    if frames < 2 {
        return Err(SynthError::DegenerateTrajectory(format!(
            "corridor needs at least 2 frames, got {frames}"
        )));
    }
    let fwd = Vector3::new(1.0, 1.0, 0.18).normalize();
    let lat = fwd.cross(&Vector3::z()).normalize();
    let vup = lat.cross(&fwd).normalize();
    let (half_w, floor_off, ceil_off) = (4.0, -1.7, 2.3);
    let start = Vector3::new(0.0, 0.0, 1.7);

    let floor_corner = start + vup * floor_off - lat * half_w;
    let ceil_corner = start + vup * ceil_off - lat * half_w;
    let wall_l = start - lat * half_w + vup * floor_off;
    let wall_r = start + lat * half_w + vup * floor_off;
    let cap_corner = start + fwd * length + vup * floor_off - lat * half_w;
    let scene = Scene {
        primitives: vec![
            Primitive::Quad(Quad {
                corner: floor_corner,
                edge_u: fwd * length,
                edge_v: lat * (2.0 * half_w),
            }),
            Primitive::Quad(Quad {
                corner: ceil_corner,
                edge_u: fwd * length,
                edge_v: lat * (2.0 * half_w),
            }),
            Primitive::Quad(Quad {
                corner: wall_l,
                edge_u: fwd * length,
                edge_v: vup * (ceil_off - floor_off),
            }),
            Primitive::Quad(Quad {
                corner: wall_r,
                edge_u: fwd * length,
                edge_v: vup * (ceil_off - floor_off),
            }),
            Primitive::Quad(Quad {
                corner: cap_corner,
                edge_u: lat * (2.0 * half_w),
                edge_v: vup * (ceil_off - floor_off),
            }),
        ],
    };

    let rotation = look_rotation(fwd, Vector3::z());
    let poses = (0..frames)
        .map(|i| {
            let s = length * 0.95 * i as f64 / (frames - 1) as f64;
            Pose::new(rotation, start + fwd * s).expect("rigid by construction")
        })
        .collect::<Vec<_>>();

    let cam = CameraModel::new(103.9, 103.9, 59.5, 44.5, 120, 90, 0.54)?;
    Ok(Dataset {
        scene,
        cam,
        poses,
        gt_spacing: 0.015,
    })
}

/// Single fronto-parallel plane in front of a static camera.
pub fn plane_dataset(distance: f64, frames: usize) -> Result<Dataset, SynthError> {
    if frames == 0 {
        return Err(SynthError::DegenerateTrajectory("no frames".into()));
    }
    let scene = Scene {
        primitives: vec![Primitive::Quad(Quad {
            corner: Vector3::new(-8.0, -8.0, distance),
            edge_u: Vector3::new(16.0, 0.0, 0.0),
            edge_v: Vector3::new(0.0, 16.0, 0.0),
        })],
    };
    let cam = CameraModel::new(277.0, 277.0, 159.5, 119.5, 320, 240, 0.54)?;
    let poses = (0..frames)
        .map(|i| {
            Pose::new(
                Matrix3::identity(),
                Vector3::new(0.02 * i as f64, 0.015 * i as f64, 0.0),
            )
            .expect("rigid")
        })
        .collect();
    Ok(Dataset {
        scene,
        cam,
        poses,
        gt_spacing: 0.03,
    })
}

/// Sphere orbited by the camera at a fixed radius.
pub fn sphere_dataset(radius: f64, frames: usize) -> Result<Dataset, SynthError> {
    if frames == 0 {
        return Err(SynthError::DegenerateTrajectory("no frames".into()));
    }
    let center = Vector3::new(0.0, 0.0, 0.0);
    let scene = Scene {
        primitives: vec![Primitive::Sphere(Sphere { center, radius })],
    };
    let cam = CameraModel::new(277.0, 277.0, 159.5, 119.5, 320, 240, 0.54)?;
    let orbit = radius + 3.0;
    let poses = (0..frames)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / frames as f64;
            let pos = center + Vector3::new(orbit * a.cos(), orbit * a.sin(), 0.0);
            Pose::new(look_rotation(center - pos, Vector3::z()), pos).expect("rigid")
        })
        .collect();
    Ok(Dataset {
        scene,
        cam,
        poses,
        gt_spacing: 0.02,
    })
}

pub fn dataset_by_name(name: &str, frames: usize) -> Result<Dataset, SynthError> {
    match name {
        "corridor" => corridor_dataset(100.0, frames),
        "plane" => plane_dataset(5.0, frames),
        "sphere" => sphere_dataset(1.0, frames),
        "" => Err(SynthError::EmptyScene),
        other => Err(SynthError::UnknownPreset(other.to_string())),
    }
}

/// Write depth maps (PFM), poses, and the ground-truth cloud under `dir`.
/// Optionally also rectified stereo pairs (PNG). Layout:
/// `depth/NNNNNN.pfm`, `image_l/NNNNNN.png`, `image_r/NNNNNN.png`,
/// `poses.txt`, `gt_cloud.xyz`.
pub fn write_dataset(
    dataset: &Dataset,
    dir: &Path,
    noise_sigma: f64,
    seed: u64,
    with_stereo: bool,
) -> Result<(), SynthError> {
    let depth_dir = dir.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(IoError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, pose) in dataset.poses.iter().enumerate() {
        let depth = render_depth(&dataset.scene, &dataset.cam, pose, noise_sigma, &mut rng);
        io::write_pfm_file(&depth, depth_dir.join(format!("{i:06}.pfm")))?;
        if with_stereo {
            let (l, r) = render_stereo_pair(&dataset.scene, &dataset.cam, pose, seed);
            let (dl, dr) = (dir.join("image_l"), dir.join("image_r"));
            std::fs::create_dir_all(&dl).map_err(IoError::from)?;
            std::fs::create_dir_all(&dr).map_err(IoError::from)?;
            l.save_png(dl.join(format!("{i:06}.png")))
                .map_err(|e| SynthError::Io(IoError::Parse(e.to_string())))?;
            r.save_png(dr.join(format!("{i:06}.png")))
                .map_err(|e| SynthError::Io(IoError::Parse(e.to_string())))?;
        }
    }
    io::write_poses_file(&dataset.poses, dir.join("poses.txt"))?;
    io::write_xyz_points_file(&dataset.scene.sample_points(dataset.gt_spacing), dir.join("gt_cloud.xyz"))?;
    Ok(())
}
