//! Reconstruction quality metrics: point-to-reference error statistics,
//! surface area, and storage accounting.

mod kdtree;

pub use kdtree::{dist_sq, KdTree};

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::TriangleMesh;
use crate::voxel::{BlockMap, BLOCK_SNAPSHOT_BYTES, HEADER_SNAPSHOT_BYTES, VOXELS_PER_BLOCK};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    EmptyInput(&'static str),
}

/// Number of regular 1 cm histogram bins (centers 0..=100 cm); everything
/// past the last bin edge lands in the overflow bin.
pub const HISTOGRAM_BINS: usize = 101;

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub mode_cm: f64,
    pub median_cm: f64,
    pub p75_cm: f64,
    /// Counts for bins centered at 0, 1, ..., 100 cm (width 1 cm), plus a
    /// trailing overflow bin.
    pub histogram: Vec<u64>,
    pub sample_count: usize,
}

/// Euclidean distance (meters) from every mesh vertex to its nearest
/// reference point.
pub fn point_errors(mesh: &TriangleMesh, reference: &[[f64; 3]]) -> Result<Vec<f64>, EvalError> {
    if mesh.vertices.is_empty() {
        return Err(EvalError::EmptyInput("mesh"));
    }
    if reference.is_empty() {
        return Err(EvalError::EmptyInput("reference cloud"));
    }
    let tree = KdTree::build(reference.to_vec());
    Ok(mesh
        .vertices
        .par_iter()
        .map(|&v| tree.nearest_sq(v).expect("non-empty tree").sqrt())
        .collect())
}

/// Linearly interpolated order statistic; `q` in [0, 1] over the sorted
/// samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Summarize point errors (meters in, centimeters out): interpolated
/// median and 75th percentile, and the mode as the center of the fullest
/// 1 cm histogram bin (ties resolve to the smallest bin).
pub fn error_stats(distances_m: &[f64]) -> Result<ErrorStats, EvalError> {
    if distances_m.is_empty() {
        return Err(EvalError::EmptyInput("distance list"));
    }
    let mut cm: Vec<f64> = distances_m.iter().map(|d| d * 100.0).collect();
    cm.sort_by(f64::total_cmp);

    let mut histogram = vec![0u64; HISTOGRAM_BINS + 1];
    for &d in &cm {
        // Bin k spans [k - 0.5, k + 0.5) cm.
        let bin = (d + 0.5).floor();
        if bin < HISTOGRAM_BINS as f64 {
            histogram[bin.max(0.0) as usize] += 1;
        } else {
            histogram[HISTOGRAM_BINS] += 1;
        }
    }
    let mode_bin = histogram[..HISTOGRAM_BINS]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mode_cm = if histogram[HISTOGRAM_BINS] > histogram[mode_bin] {
        HISTOGRAM_BINS as f64
    } else {
        mode_bin as f64
    };

    Ok(ErrorStats {
        mode_cm,
        median_cm: quantile(&cm, 0.5),
        p75_cm: quantile(&cm, 0.75),
        histogram,
        sample_count: cm.len(),
    })
}

/// Total mesh area from the triangle cross products.
pub fn surface_area(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .par_iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let n = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageReport {
    pub block_count: usize,
    /// Always exactly `512 * block_count`.
    pub voxel_count: usize,
    /// Exact snapshot-format size.
    pub snapshot_bytes: u64,
    /// Snapshot size of a dense grid covering the allocated bounding box.
    pub dense_bounding_bytes: u64,
    /// `dense_bounding_bytes / snapshot_bytes`.
    pub compression_ratio: f64,
}

pub fn storage_report(map: &BlockMap) -> StorageReport {
    let block_count = map.block_count();
    let snapshot_bytes = map.estimated_bytes();
    let dense_blocks = map
        .block_bounds()
        .map(|(lo, hi)| {
            (0..3)
                .map(|a| (hi.0[a] - lo.0[a] + 1) as u64)
                .product::<u64>()
        })
        .unwrap_or(0);
    let dense_bounding_bytes = HEADER_SNAPSHOT_BYTES + dense_blocks * BLOCK_SNAPSHOT_BYTES;
    StorageReport {
        block_count,
        voxel_count: block_count * VOXELS_PER_BLOCK,
        snapshot_bytes,
        dense_bounding_bytes,
        compression_ratio: dense_bounding_bytes as f64 / snapshot_bytes as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::BlockCoord;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mesh_of(vertices: Vec<[f64; 3]>) -> TriangleMesh {
        TriangleMesh {
            vertices,
            triangles: Vec::new(),
            colors: None,
        }
    }

    #[test]
    fn vertices_on_reference_have_zero_error() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let errs = point_errors(&mesh_of(pts.clone()), &pts).unwrap();
        assert!(errs.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn nearest_of_two_references() {
        let errs = point_errors(
            &mesh_of(vec![[0.0, 0.0, 1.0]]),
            &[[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]],
        )
        .unwrap();
        assert_relative_eq!(errs[0], 1.0);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(point_errors(&mesh_of(vec![]), &[[0.0; 3]]).is_err());
        assert!(point_errors(&mesh_of(vec![[0.0; 3]]), &[]).is_err());
        assert!(error_stats(&[]).is_err());
    }

    #[test]
    fn matches_brute_force_oracle_exactly_on_10k() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut random_pts = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                    ]
                })
                .collect()
        };
        let vertices = random_pts(10_000);
        let reference = random_pts(10_000);
        let fast = point_errors(&mesh_of(vertices.clone()), &reference).unwrap();
        let brute: Vec<f64> = vertices
            .par_iter()
            .map(|&v| {
                reference
                    .iter()
                    .map(|&r| dist_sq(v, r))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        assert_eq!(fast, brute, "kd-tree must reproduce the oracle exactly");
    }

    #[test]
    fn rigid_transform_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let verts: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let refs: Vec<[f64; 3]> = (0..300)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let (yaw, pitch) = (0.7f64, -0.2f64);
        let rot = Matrix3::new(
            yaw.cos(), -yaw.sin(), 0.0,
            yaw.sin(), yaw.cos(), 0.0,
            0.0, 0.0, 1.0,
        ) * Matrix3::new(
            pitch.cos(), 0.0, pitch.sin(),
            0.0, 1.0, 0.0,
            -pitch.sin(), 0.0, pitch.cos(),
        );
        let t = Vector3::new(4.0, -2.0, 11.0);
        let xf = |p: &[f64; 3]| {
            let v = rot * Vector3::new(p[0], p[1], p[2]) + t;
            [v.x, v.y, v.z]
        };
        let e1 = point_errors(&mesh_of(verts.clone()), &refs).unwrap();
        let e2 = point_errors(
            &mesh_of(verts.iter().map(xf).collect()),
            &refs.iter().map(xf).collect::<Vec<_>>(),
        )
        .unwrap();
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn interpolated_quantiles() {
        let stats = error_stats(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        assert_relative_eq!(stats.median_cm, 2.5);
        assert_relative_eq!(stats.p75_cm, 3.25);
        assert_eq!(stats.sample_count, 4);
        assert_eq!(stats.histogram.iter().sum::<u64>(), 4);
    }

    #[test]
    fn all_zero_distances() {
        let stats = error_stats(&[0.0; 5]).unwrap();
        assert_eq!(stats.mode_cm, 0.0);
        assert_eq!(stats.median_cm, 0.0);
        assert_eq!(stats.p75_cm, 0.0);
    }

    #[test]
    fn mode_is_fullest_bin_center() {
        // 3 samples near 2 cm, 2 near 7 cm, 1 overflow.
        let stats = error_stats(&[0.021, 0.019, 0.0202, 0.071, 0.0695, 3.0]).unwrap();
        assert_eq!(stats.mode_cm, 2.0);
        assert_eq!(stats.histogram[2], 3);
        assert_eq!(stats.histogram[7], 2);
        assert_eq!(stats.histogram[HISTOGRAM_BINS], 1);
    }

    #[test]
    fn unit_triangle_and_quad_area() {
        let tri = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            colors: None,
        };
        assert_relative_eq!(surface_area(&tri), 0.5);
        let quad = TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            colors: None,
        };
        assert_relative_eq!(surface_area(&quad), 1.0);
    }

    #[test]
    fn sphere_area_close_to_analytic() {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        for z in -16..16 {
            for y in -16..16 {
                for x in -16..16 {
                    let c = crate::voxel::VoxelCoord::new(x, y, z);
                    let f = (map.voxel_to_world(c).norm() - 1.0) / 0.3;
                    let v = map.voxel_mut(c, true).unwrap().unwrap();
                    v.f = f.clamp(-1.0, 1.0) as f32;
                    v.w = 1.0;
                    v.set_observed(true);
                }
            }
        }
        let mesh = crate::mesh::extract_mesh(&map, 1.0);
        let area = surface_area(&mesh);
        let analytic = 4.0 * std::f64::consts::PI;
        assert!(
            (area - analytic).abs() / analytic < 0.05,
            "sphere area {area} vs {analytic}"
        );
    }

    #[test]
    fn storage_report_counts() {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let empty = storage_report(&map);
        assert_eq!(empty.block_count, 0);
        assert_eq!(empty.voxel_count, 0);
        assert_eq!(empty.snapshot_bytes, HEADER_SNAPSHOT_BYTES);

        map.alloc_block(BlockCoord::new(0, 0, 0)).unwrap();
        let one = storage_report(&map);
        assert_eq!(one.voxel_count, 512);
        assert_relative_eq!(one.compression_ratio, 1.0, epsilon = 0.01);

        // Two far-apart blocks: dense bounding box is much larger.
        map.alloc_block(BlockCoord::new(20, 0, 0)).unwrap();
        let two = storage_report(&map);
        assert_eq!(two.block_count, 2);
        assert!(two.compression_ratio > 10.0);
        assert_eq!(
            two.dense_bounding_bytes,
            HEADER_SNAPSHOT_BYTES + 21 * BLOCK_SNAPSHOT_BYTES
        );
    }

    proptest! {
        #[test]
        fn quantiles_permutation_invariant_and_monotone(
            mut xs in proptest::collection::vec(0.0f64..2.0, 1..60),
            seed in any::<u64>(),
        ) {
            let stats = error_stats(&xs).unwrap();
            // Shuffle.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in (1..xs.len()).rev() {
                xs.swap(i, rng.random_range(0..=i));
            }
            let shuffled = error_stats(&xs).unwrap();
            prop_assert_eq!(stats.clone(), shuffled);
            prop_assert!(stats.median_cm <= stats.p75_cm + 1e-12);

            // Adding a max element cannot lower the quantiles.
            let max = xs.iter().cloned().fold(0.0, f64::max);
            xs.push(max + 0.1);
            let bigger = error_stats(&xs).unwrap();
            prop_assert!(bigger.median_cm >= stats.median_cm - 1e-12);
            prop_assert!(bigger.p75_cm >= stats.p75_cm - 1e-12);
        }
    }
}
