//! Exact nearest-neighbor queries over a static 3D point set.
//!
//! Median-split kd-tree stored implicitly in the reordered point array.
//! Queries prune on the splitting plane and always return the true nearest
//! squared distance, computed with the same [`dist_sq`] used by any
//! brute-force check.

#[inline]
pub fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub struct KdTree {
    points: Vec<[f64; 3]>,
}

impl KdTree {
    pub fn build(mut points: Vec<[f64; 3]>) -> Self {
        build_recursive(&mut points, 0);
        KdTree { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Squared distance to the nearest stored point; `None` when empty.
    pub fn nearest_sq(&self, query: [f64; 3]) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        nearest_recursive(&self.points, query, 0, &mut best);
        Some(best)
    }
}

fn build_recursive(points: &mut [[f64; 3]], depth: usize) {
    if points.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (lo, rest) = points.split_at_mut(mid);
    build_recursive(lo, depth + 1);
    build_recursive(&mut rest[1..], depth + 1);
}

fn nearest_recursive(points: &[[f64; 3]], query: [f64; 3], depth: usize, best: &mut f64) {
    if points.is_empty() {
        return;
    }
    let axis = depth % 3;
    let mid = points.len() / 2;
    let node = points[mid];
    let d = dist_sq(node, query);
    if d < *best {
        *best = d;
    }
    let delta = query[axis] - node[axis];
    let (near, far) = if delta < 0.0 {
        (&points[..mid], &points[mid + 1..])
    } else {
        (&points[mid + 1..], &points[..mid])
    };
    nearest_recursive(near, query, depth + 1, best);
    if delta * delta < *best {
        nearest_recursive(far, query, depth + 1, best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_tree_has_no_neighbor() {
        assert_eq!(KdTree::build(Vec::new()).nearest_sq([0.0; 3]), None);
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<[f64; 3]> = (0..2000)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let tree = KdTree::build(pts.clone());
        for _ in 0..500 {
            let q = [
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
            ];
            let brute = pts.iter().map(|&p| dist_sq(p, q)).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_sq(q), Some(brute), "exact match required");
        }
    }

    #[test]
    fn handles_duplicates_and_collinear_points() {
        let pts = vec![[1.0, 0.0, 0.0]; 17]
            .into_iter()
            .chain((0..9).map(|i| [i as f64, 0.0, 0.0]))
            .collect::<Vec<_>>();
        let tree = KdTree::build(pts);
        assert_eq!(tree.nearest_sq([1.0, 0.0, 0.0]), Some(0.0));
        assert_eq!(tree.nearest_sq([8.5, 0.0, 0.0]), Some(0.25));
    }
}
