//! Observation-masked differential operators on the voxel lattice.
//!
//! Both operators see the field through an accessor returning `None` for
//! voxels outside the observed set. A lattice edge participates exactly
//! when both of its endpoints are observed; this one rule covers every
//! boundary case the sparse block structure can produce (unallocated
//! neighbors, block seams, and the frontier of the observed region) and
//! makes the divergence the negative adjoint of the gradient.

use crate::voxel::VoxelCoord;

/// Forward-difference gradient of a masked scalar field: per axis,
/// `u(c + e) - u(c)` when both endpoints are observed, otherwise zero.
pub fn masked_gradient<F>(field: F, coords: VoxelCoord) -> [f64; 3]
where
    F: Fn(VoxelCoord) -> Option<f64>,
{
    let Some(center) = field(coords) else {
        return [0.0; 3];
    };
    let mut g = [0.0; 3];
    for (a, slot) in g.iter_mut().enumerate() {
        let mut fwd = coords;
        fwd.0[a] += 1;
        if let Some(v) = field(fwd) {
            *slot = v - center;
        }
    }
    g
}

/// Negative-adjoint divergence of a masked vector field. The component
/// `p_a(c)` lives on the edge `c -> c + e_a` and contributes only while
/// that edge has both endpoints observed; voxels outside the observed set
/// yield zero.
pub fn masked_divergence<F>(field: F, coords: VoxelCoord) -> f64
where
    F: Fn(VoxelCoord) -> Option<[f64; 3]>,
{
    let Some(center) = field(coords) else {
        return 0.0;
    };
    let mut div = 0.0;
    for a in 0..3 {
        let mut fwd = coords;
        fwd.0[a] += 1;
        if field(fwd).is_some() {
            div += center[a];
        }
        let mut back = coords;
        back.0[a] -= 1;
        if let Some(p) = field(back) {
            div -= p[a];
        }
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    fn scalar(map: &HashMap<VoxelCoord, f64>) -> impl Fn(VoxelCoord) -> Option<f64> + '_ {
        move |c| map.get(&c).copied()
    }

    fn vector(map: &HashMap<VoxelCoord, [f64; 3]>) -> impl Fn(VoxelCoord) -> Option<[f64; 3]> + '_ {
        move |c| map.get(&c).copied()
    }

    #[test]
    fn gradient_forward_difference_inside_omega() {
        let mut u = HashMap::new();
        u.insert(VoxelCoord::new(0, 0, 0), 0.4);
        u.insert(VoxelCoord::new(1, 0, 0), 0.7);
        let g = masked_gradient(scalar(&u), VoxelCoord::new(0, 0, 0));
        assert_relative_eq!(g[0], 0.3);
        assert_relative_eq!(g[1], 0.0);
        assert_relative_eq!(g[2], 0.0);
    }

    #[test]
    fn gradient_zero_across_unobserved_neighbor_and_at_hull() {
        let mut u = HashMap::new();
        u.insert(VoxelCoord::new(0, 0, 0), 0.4);
        // +x neighbor unobserved, all other neighbors absent (lattice edge).
        assert_eq!(masked_gradient(scalar(&u), VoxelCoord::new(0, 0, 0)), [0.0; 3]);
        // Center itself unobserved.
        assert_eq!(masked_gradient(scalar(&u), VoxelCoord::new(5, 5, 5)), [0.0; 3]);
    }

    #[test]
    fn divergence_cases() {
        let c = VoxelCoord::new(1, 0, 0);
        let mut p = HashMap::new();
        p.insert(VoxelCoord::new(0, 0, 0), [0.5, 0.0, 0.0]);
        p.insert(c, [0.2, 0.0, 0.0]);
        p.insert(VoxelCoord::new(2, 0, 0), [0.0; 3]);
        // Both x-edges valid: p_x(c) - p_x(c - e_x) = 0.2 - 0.5.
        assert_relative_eq!(masked_divergence(vector(&p), c), -0.3);

        // Center unobserved: zero regardless of neighbors.
        assert_relative_eq!(masked_divergence(vector(&p), VoxelCoord::new(0, 1, 0)), 0.0);

        // Upstream neighbor unobserved keeps only the forward edge.
        let mut p2 = HashMap::new();
        p2.insert(c, [0.2, 0.0, 0.0]);
        p2.insert(VoxelCoord::new(2, 0, 0), [0.0; 3]);
        assert_relative_eq!(masked_divergence(vector(&p2), c), 0.2);

        // Downstream neighbor unobserved keeps only the backward edge.
        let mut p3 = HashMap::new();
        p3.insert(VoxelCoord::new(0, 0, 0), [0.5, 0.0, 0.0]);
        p3.insert(c, [0.2, 0.0, 0.0]);
        assert_relative_eq!(masked_divergence(vector(&p3), c), -0.5);
    }

    /// The pair must satisfy <grad u, p> + <u, div p> = 0 on any mask.
    #[test]
    fn adjointness_on_random_masked_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let density = 0.1 + 0.8 * (trial as f64 / 19.0);
            let mut u = HashMap::new();
            let mut p = HashMap::new();
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        if rng.random_bool(density) {
                            let c = VoxelCoord::new(x, y, z);
                            u.insert(c, rng.random_range(-1.0..1.0));
                            p.insert(
                                c,
                                [
                                    rng.random_range(-1.0..1.0),
                                    rng.random_range(-1.0..1.0),
                                    rng.random_range(-1.0..1.0),
                                ],
                            );
                        }
                    }
                }
            }
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for (&c, &uv) in &u {
                let g = masked_gradient(scalar(&u), c);
                let pv = p[&c];
                lhs += g[0] * pv[0] + g[1] * pv[1] + g[2] * pv[2];
                rhs += uv * masked_divergence(vector(&p), c);
            }
            let scale = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs + rhs) / scale).abs() < 1e-12,
                "adjointness violated: {lhs} vs {rhs}"
            );
        }
    }
}
