//! Sub-pixel disparity estimation from rectified stereo pairs.
//!
//! The data term matches census signatures by Hamming distance (invariant
//! to monotone illumination changes); the smoothness term is a
//! second-order regularizer steered by an anisotropic image-gradient
//! tensor, solved in [`solver`].

mod solver;

pub use solver::{tgv_disparity, tgv_energy};

use std::path::Path;

use thiserror::Error;

use crate::fusion::{CameraModel, DepthMap};
use crate::io::IoError;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("stereo pair dimensions differ: {0}x{1} vs {2}x{3}")]
    PairMismatch(usize, usize, usize, usize),
    #[error("census window must be odd and in 3..=7, got {0}")]
    BadWindow(usize),
    #[error("empty disparity range: d_min {0} > d_max {1}")]
    EmptyRange(i32, i32),
    #[error("invalid stereo parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Load an 8-bit grayscale or RGB PNG/PGM; RGB converts by luma.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, StereoError> {
        let img = image::open(path)
            .map_err(|e| StereoError::Io(IoError::Parse(format!("image: {e}"))))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(GrayImage {
            width: w,
            height: h,
            data: img.into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn save_png<P: AsRef<Path>>(&self, path: P) -> Result<(), StereoError> {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            px.0[0] = (self.data[i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        img.save(path)
            .map_err(|e| StereoError::Io(IoError::Parse(format!("image: {e}"))))
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
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Clamp-to-edge sampling for border handling.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StereoParams {
    /// Data-term weight.
    pub lambda_2d: f64,
    /// First-order term weight (gradient minus auxiliary field).
    pub alpha1: f64,
    /// Second-order term weight (auxiliary field smoothness).
    pub alpha2: f64,
    /// Tensor edge-response exponent.
    pub beta: f64,
    /// Tensor edge-response scale.
    pub gamma: f64,
    /// Census window side length (odd, 3..=7).
    pub census_window: usize,
    pub d_min: i32,
    pub d_max: i32,
    /// Outer iterations; each anneals the data coupling one step and runs
    /// `pd_steps` primal-dual sweeps.
    pub iterations: usize,
    pub pd_steps: usize,
    /// Quadratic-coupling schedule, geometric from start to end.
    pub coupling_start: f64,
    pub coupling_end: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        StereoParams {
            lambda_2d: 0.5,
            alpha1: 1.0,
            alpha2: 5.0,
            beta: 1.0,
            gamma: 4.0,
            census_window: 5,
            d_min: 0,
            d_max: 128,
            iterations: 80,
            pd_steps: 5,
            coupling_start: 1.0,
            coupling_end: 0.001,
        }
    }
}

impl StereoParams {
    pub fn validate(&self) -> Result<(), StereoError> {
        if self.census_window % 2 == 0 || !(3..=7).contains(&self.census_window) {
            return Err(StereoError::BadWindow(self.census_window));
        }
        if self.d_min > self.d_max {
            return Err(StereoError::EmptyRange(self.d_min, self.d_max));
        }
        for (name, v) in [
            ("lambda_2d", self.lambda_2d),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma", self.gamma),
            ("coupling_start", self.coupling_start),
            ("coupling_end", self.coupling_end),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(StereoError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn disparity_count(&self) -> usize {
        (self.d_max - self.d_min + 1) as usize
    }
}

/// Census signature: one bit per window neighbor (row-major, center
/// excluded, first neighbor in the top bit of the used range), set when
/// the neighbor is darker than the center. Border pixels clamp to the
/// edge.
pub fn census_signature(img: &GrayImage, x: usize, y: usize, window: usize) -> u64 {
    debug_assert!(window % 2 == 1 && window <= 7);
    let r = (window / 2) as i64;
    let center = img.get(x, y);
    let mut sig = 0u64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx == 0 && dy == 0 {
                continue;
            }
            let neighbor = img.get_clamped(x as i64 + dx, y as i64 + dy);
            sig = (sig << 1) | u64::from(neighbor < center);
        }
    }
    sig
}

/// Matching costs for every pixel and candidate disparity.
#[derive(Clone, Debug)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub d_min: i32,
    pub d_max: i32,
    /// Layout `[y][x][d]`, disparity fastest.
    pub costs: Vec<f32>,
}

impl CostVolume {
    #[inline]
    pub fn cost(&self, x: usize, y: usize, d_index: usize) -> f32 {
        self.costs[(y * self.width + x) * self.layers() + d_index]
    }

    #[inline]
    pub fn layers(&self) -> usize {
        (self.d_max - self.d_min + 1) as usize
    }
}

/// Census cost volume: Hamming distance between the reference (right)
/// signature at `(x, y)` and the left signature at `(x + d, y)`.
/// Candidates that sample outside the left image get the maximal cost.
pub fn cost_volume(
    left: &GrayImage,
    right: &GrayImage,
    params: &StereoParams,
) -> Result<CostVolume, StereoError> {
    params.validate()?;
    if left.width != right.width || left.height != right.height {
        return Err(StereoError::PairMismatch(
            left.width,
            left.height,
            right.width,
            right.height,
        ));
    }
    let (w, h) = (right.width, right.height);
    let window = params.census_window;
    let max_cost = (window * window - 1) as f32;

    let census_of = |img: &GrayImage| -> Vec<u64> {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(census_signature(img, x, y, window));
            }
        }
        out
    };
    let census_l = census_of(left);
    let census_r = census_of(right);

    let layers = params.disparity_count();
    let mut costs = vec![0.0f32; w * h * layers];
    use rayon::prelude::*;
    costs
        .par_chunks_mut(w * layers)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                for (di, slot) in row[x * layers..(x + 1) * layers].iter_mut().enumerate() {
                    let d = params.d_min + di as i32;
                    let xl = x as i64 + d as i64;
                    *slot = if (0..w as i64).contains(&xl) {
                        let a = census_r[y * w + x];
                        let b = census_l[y * w + xl as usize];
                        (a ^ b).count_ones() as f32
                    } else {
                        max_cost
                    };
                }
            }
        });

    Ok(CostVolume {
        width: w,
        height: h,
        d_min: params.d_min,
        d_max: params.d_max,
        costs,
    })
}

/// Per-pixel symmetric 2x2 tensor, stored as `(t11, t12, t22)`.
#[derive(Clone, Debug)]
pub struct TensorField {
    pub width: usize,
    pub height: usize,
    pub t: Vec<[f64; 3]>,
}

impl TensorField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.t[y * self.width + x]
    }

    /// Apply the tensor to a 2-vector.
    #[inline]
    pub fn mul(&self, x: usize, y: usize, v: [f64; 2]) -> [f64; 2] {
        let [t11, t12, t22] = self.at(x, y);
        [t11 * v[0] + t12 * v[1], t12 * v[0] + t22 * v[1]]
    }
}

const TENSOR_GRAD_EPS: f64 = 1e-6;

/// Anisotropic diffusion tensor `exp(-gamma |g|^beta) n n^T + n_perp
/// n_perp^T` with `g` the central-difference image gradient and `n` its
/// direction. Degenerate gradients fall back to the identity, so
/// smoothing is attenuated only across actual image edges.
pub fn diffusion_tensor(img: &GrayImage, beta: f64, gamma: f64) -> TensorField {
    let (w, h) = (img.width, img.height);
    let mut t = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = 0.5
                * (img.get_clamped(x as i64 + 1, y as i64) as f64
                    - img.get_clamped(x as i64 - 1, y as i64) as f64);
            let gy = 0.5
                * (img.get_clamped(x as i64, y as i64 + 1) as f64
                    - img.get_clamped(x as i64, y as i64 - 1) as f64);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag < TENSOR_GRAD_EPS {
                t.push([1.0, 0.0, 1.0]);
                continue;
            }
            let (nx, ny) = (gx / mag, gy / mag);
            let a = (-gamma * mag.powf(beta)).exp();
            // a * n n^T + n_perp n_perp^T with n_perp = (-ny, nx).
            t.push([
                a * nx * nx + ny * ny,
                a * nx * ny - nx * ny,
                a * ny * ny + nx * nx,
            ]);
        }
    }
    TensorField {
        width: w,
        height: h,
        t,
    }
}

/// Sub-pixel disparities plus the auxiliary slope field.
#[derive(Clone, Debug)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub d: Vec<f32>,
    /// Auxiliary 2-vector field of the second-order regularizer.
    pub w_field: Vec<[f32; 2]>,
    pub d_min: i32,
    pub d_max: i32,
}

impl DisparityMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.d[y * self.width + x]
    }
}

/// Disparities below this are treated as "at infinity" and invalid.
pub const MIN_DISPARITY: f64 = 1e-3;

/// Triangulate depth = fx * baseline / d; non-positive or tiny
/// disparities become invalid pixels.
pub fn disparity_to_depth(disp: &DisparityMap, cam: &CameraModel) -> DepthMap {
    let mut depth = DepthMap::new(disp.width, disp.height);
    for y in 0..disp.height {
        for x in 0..disp.width {
            let d = disp.get(x, y) as f64;
            if d > MIN_DISPARITY {
                depth.set(x, y, (cam.fx * cam.baseline / d) as f32);
            }
        }
    }
    depth
}

/// Three-stop false-color rendering of a disparity map for quick visual
/// checks.
pub fn disparity_false_color<P: AsRef<Path>>(
    disp: &DisparityMap,
    path: P,
) -> Result<(), StereoError> {
    let mut img = image::RgbImage::new(disp.width as u32, disp.height as u32);
    let range = (disp.d_max - disp.d_min).max(1) as f32;
    for y in 0..disp.height {
        for x in 0..disp.width {
            let t = ((disp.get(x, y) - disp.d_min as f32) / range).clamp(0.0, 1.0);
            let rgb = if t < 0.5 {
                let s = t * 2.0;
                [(s * 255.0) as u8, (s * 128.0) as u8, ((1.0 - s) * 255.0) as u8]
            } else {
                let s = (t - 0.5) * 2.0;
                [255, (128.0 + s * 127.0) as u8, 0]
            };
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
    img.save(path)
        .map_err(|e| StereoError::Io(IoError::Parse(format!("image: {e}"))))
}
