//! Primal-dual total-variation denoising of the fused distance field,
//! restricted to the observed voxel set.
//!
//! The solver minimizes `sum_omega |grad u| + lambda * sum_omega w (f - u)^2`
//! with the saddle-point iteration: dual ascent on `p` (projected onto the
//! unit ball), a proximal primal descent on `u`, and an over-relaxation
//! step producing `u_hat`. All differential operators are masked to the
//! observed set, so unobserved voxels are never read or written and
//! disjoint observed components cannot influence each other.
//!
//! Each phase reads a frozen copy of the fields it differentiates and
//! writes only per-voxel state, with a barrier between phases; results are
//! therefore bit-identical for a fixed iteration budget regardless of the
//! number of worker threads.

mod operators;

pub use operators::{masked_divergence, masked_gradient};

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::voxel::{BlockCoord, BlockMap, VoxelCoord, BLOCK_DIM, VOXELS_PER_BLOCK};

#[derive(Debug, Error)]
pub enum RegError {
    #[error("no observed voxels to regularize")]
    EmptyDomain,
    #[error("invalid regularizer parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug)]
pub struct RegParams {
    /// Data-term weight.
    pub lambda: f64,
    /// Dual ascent step size.
    pub sigma_p: f64,
    /// Primal descent step size.
    pub tau: f64,
    /// Over-relaxation weight.
    pub theta: f64,
    pub iterations: usize,
    /// Start the primal at zero instead of at the data. The minimizer is
    /// the same; the warm start just skips the transient.
    pub zero_init: bool,
    /// Extrapolate against the previous relaxed value instead of the
    /// previous primal iterate.
    pub literal_relaxation: bool,
}

impl Default for RegParams {
    fn default() -> Self {
        RegParams {
            lambda: 0.8,
            sigma_p: 0.5,
            tau: 1.0 / 6.0,
            theta: 1.0,
            iterations: 200,
            zero_init: false,
            literal_relaxation: false,
        }
    }
}

impl RegParams {
    fn validate(&self) -> Result<(), RegError> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("sigma_p", self.sigma_p),
            ("tau", self.tau),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RegError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return Err(RegError::InvalidParams(format!(
                "theta must be non-negative, got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegStats {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub observed_voxels: usize,
    /// Largest per-voxel dual norm seen after any dual step.
    pub max_dual_norm: f64,
}

const STRIDES: [usize; 3] = [1, BLOCK_DIM, BLOCK_DIM * BLOCK_DIM];

/// Per-voxel solver scratch aligned with a map's block arena: the primal
/// `u`, its previous iterate, the relaxed `u_hat`, and the dual 3-vector
/// `p`, plus copies of `f`, `w`, and the observation mask. Allocated per
/// solve and discarded; only `u` is written back.
pub struct RegState {
    index: HashMap<BlockCoord, u32>,
    /// Arena indices of the -x,+x,-y,+y,-z,+z neighbor blocks.
    neighbors: Vec<[Option<u32>; 6]>,
    omega: Vec<Box<[bool; VOXELS_PER_BLOCK]>>,
    f: Vec<Box<[f64; VOXELS_PER_BLOCK]>>,
    w: Vec<Box<[f64; VOXELS_PER_BLOCK]>>,
    u: Vec<Box<[f64; VOXELS_PER_BLOCK]>>,
    u_prev: Vec<Box<[f64; VOXELS_PER_BLOCK]>>,
    u_hat: Vec<Box<[f64; VOXELS_PER_BLOCK]>>,
    p: Vec<Box<[[f64; 3]; VOXELS_PER_BLOCK]>>,
    observed_voxels: usize,
    max_dual_norm: f64,
}

impl RegState {
    pub fn from_map(map: &BlockMap, zero_init: bool) -> Self {
        let n = map.block_count();
        let mut index = HashMap::with_capacity(n);
        for (i, b) in map.blocks().iter().enumerate() {
            index.insert(b.coords(), i as u32);
        }
        let mut neighbors = Vec::with_capacity(n);
        for b in map.blocks() {
            let c = b.coords();
            neighbors.push([
                index.get(&c.offset(-1, 0, 0)).copied(),
                index.get(&c.offset(1, 0, 0)).copied(),
                index.get(&c.offset(0, -1, 0)).copied(),
                index.get(&c.offset(0, 1, 0)).copied(),
                index.get(&c.offset(0, 0, -1)).copied(),
                index.get(&c.offset(0, 0, 1)).copied(),
            ]);
        }

        let mut omega = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut observed_voxels = 0usize;
        for b in map.blocks() {
            let mut ob = Box::new([false; VOXELS_PER_BLOCK]);
            let mut fb = Box::new([0.0; VOXELS_PER_BLOCK]);
            let mut wb = Box::new([0.0; VOXELS_PER_BLOCK]);
            for (i, v) in b.voxels().iter().enumerate() {
                ob[i] = v.observed();
                fb[i] = v.f as f64;
                wb[i] = v.w as f64;
                observed_voxels += ob[i] as usize;
            }
            u.push(if zero_init { Box::new([0.0; VOXELS_PER_BLOCK]) } else { fb.clone() });
            omega.push(ob);
            f.push(fb);
            w.push(wb);
        }

        RegState {
            index,
            neighbors,
            omega,
            u_prev: u.clone(),
            u_hat: u.clone(),
            u,
            f,
            w,
            p: (0..n).map(|_| Box::new([[0.0; 3]; VOXELS_PER_BLOCK])).collect(),
            observed_voxels,
            max_dual_norm: 0.0,
        }
    }

    pub fn observed_voxels(&self) -> usize {
        self.observed_voxels
    }

    pub fn max_dual_norm(&self) -> f64 {
        self.max_dual_norm
    }

    fn locate(&self, coords: VoxelCoord) -> Option<(usize, usize)> {
        let bi = *self.index.get(&coords.block())? as usize;
        Some((bi, coords.local_index()))
    }

    pub fn u(&self, coords: VoxelCoord) -> Option<f64> {
        let (bi, li) = self.locate(coords)?;
        self.omega[bi][li].then(|| self.u[bi][li])
    }

    pub fn u_hat(&self, coords: VoxelCoord) -> Option<f64> {
        let (bi, li) = self.locate(coords)?;
        self.omega[bi][li].then(|| self.u_hat[bi][li])
    }

    pub fn p(&self, coords: VoxelCoord) -> Option<[f64; 3]> {
        let (bi, li) = self.locate(coords)?;
        self.omega[bi][li].then(|| self.p[bi][li])
    }

    #[cfg(test)]
    fn set_u(&mut self, coords: VoxelCoord, value: f64) {
        let (bi, li) = self.locate(coords).expect("voxel exists");
        self.u[bi][li] = value;
        self.u_prev[bi][li] = value;
        self.u_hat[bi][li] = value;
    }

    #[cfg(test)]
    fn set_p(&mut self, coords: VoxelCoord, value: [f64; 3]) {
        let (bi, li) = self.locate(coords).expect("voxel exists");
        self.p[bi][li] = value;
    }

    /// Value of `field[block][voxel]` at the `dir`-step neighbor of local
    /// voxel `li` in block `bi`, or `None` when the neighbor is unobserved
    /// or unallocated. `axis` in 0..3, `dir` +-1.
    #[inline]
    fn neighbor(&self, bi: usize, li: usize, axis: usize, dir: i32) -> Option<(usize, usize)> {
        let l = (li / STRIDES[axis]) % BLOCK_DIM;
        let stride = STRIDES[axis];
        let (nbi, nli) = if dir > 0 {
            if l + 1 < BLOCK_DIM {
                (bi, li + stride)
            } else {
                let nb = self.neighbors[bi][2 * axis + 1]? as usize;
                (nb, li - (BLOCK_DIM - 1) * stride)
            }
        } else if l > 0 {
            (bi, li - stride)
        } else {
            let nb = self.neighbors[bi][2 * axis]? as usize;
            (nb, li + (BLOCK_DIM - 1) * stride)
        };
        self.omega[nbi][nli].then_some((nbi, nli))
    }

    /// Masked forward-difference gradient of `u_hat` at an observed voxel.
    #[cfg(test)]
    fn gradient_u_hat(&self, bi: usize, li: usize) -> [f64; 3] {
        let center = self.u_hat[bi][li];
        let mut g = [0.0; 3];
        for a in 0..3 {
            if let Some((nbi, nli)) = self.neighbor(bi, li, a, 1) {
                g[a] = self.u_hat[nbi][nli] - center;
            }
        }
        g
    }

    /// Masked divergence of `p` at an observed voxel.
    #[cfg(test)]
    fn divergence_p(&self, bi: usize, li: usize) -> f64 {
        let mut div = 0.0;
        for a in 0..3 {
            if self.neighbor(bi, li, a, 1).is_some() {
                div += self.p[bi][li][a];
            }
            if let Some((nbi, nli)) = self.neighbor(bi, li, a, -1) {
                div -= self.p[nbi][nli][a];
            }
        }
        div
    }

    /// Dual ascent: `p~ = p + sigma_p * grad(u_hat)`, then projection onto
    /// the unit ball, per observed voxel. Gradients read the frozen
    /// `u_hat`; only `p` is written.
    pub fn dual_step(&mut self, sigma_p: f64) {
        let omega = &self.omega;
        let u_hat = &self.u_hat;
        let neighbors = &self.neighbors;
        let max_norms: Vec<f64> = self
            .p
            .par_iter_mut()
            .enumerate()
            .map(|(bi, pb)| {
                let mut max_norm = 0.0f64;
                for li in 0..VOXELS_PER_BLOCK {
                    if !omega[bi][li] {
                        continue;
                    }
                    let center = u_hat[bi][li];
                    let mut pt = pb[li];
                    for a in 0..3 {
                        let l = (li / STRIDES[a]) % BLOCK_DIM;
                        let nv = if l + 1 < BLOCK_DIM {
                            let nli = li + STRIDES[a];
                            omega[bi][nli].then(|| u_hat[bi][nli])
                        } else {
                            neighbors[bi][2 * a + 1].and_then(|nb| {
                                let nli = li - (BLOCK_DIM - 1) * STRIDES[a];
                                omega[nb as usize][nli].then(|| u_hat[nb as usize][nli])
                            })
                        };
                        if let Some(v) = nv {
                            pt[a] += sigma_p * (v - center);
                        }
                    }
                    let norm = (pt[0] * pt[0] + pt[1] * pt[1] + pt[2] * pt[2]).sqrt();
                    let scale = 1.0 / norm.max(1.0);
                    pb[li] = [pt[0] * scale, pt[1] * scale, pt[2] * scale];
                    max_norm = max_norm.max(norm * scale);
                }
                max_norm
            })
            .collect();
        for m in max_norms {
            self.max_dual_norm = self.max_dual_norm.max(m);
        }
    }

    /// Proximal primal descent: `u~ = u + tau * div(p)` (the divergence is
    /// the negative adjoint of the gradient, so this steps against the TV
    /// subgradient), then the closed-form data-term prox
    /// `u = (u~ + tau lambda w f) / (1 + tau lambda w)`, per observed
    /// voxel. Stores the previous iterate for the relaxation step.
    pub fn primal_step(&mut self, tau: f64, lambda: f64) {
        let omega = &self.omega;
        let p = &self.p;
        let f = &self.f;
        let w = &self.w;
        let neighbors = &self.neighbors;
        self.u
            .par_iter_mut()
            .zip(self.u_prev.par_iter_mut())
            .enumerate()
            .for_each(|(bi, (ub, upb))| {
                for li in 0..VOXELS_PER_BLOCK {
                    if !omega[bi][li] {
                        continue;
                    }
                    let mut div = 0.0;
                    for a in 0..3 {
                        let stride = STRIDES[a];
                        let l = (li / stride) % BLOCK_DIM;
                        // Forward edge: contributes this voxel's own dual.
                        let fwd_in = if l + 1 < BLOCK_DIM {
                            omega[bi][li + stride]
                        } else {
                            neighbors[bi][2 * a + 1]
                                .is_some_and(|nb| omega[nb as usize][li - (BLOCK_DIM - 1) * stride])
                        };
                        if fwd_in {
                            div += p[bi][li][a];
                        }
                        // Backward edge: contributes the upstream dual.
                        if l > 0 {
                            if omega[bi][li - stride] {
                                div -= p[bi][li - stride][a];
                            }
                        } else if let Some(nb) = neighbors[bi][2 * a] {
                            let nli = li + (BLOCK_DIM - 1) * stride;
                            if omega[nb as usize][nli] {
                                div -= p[nb as usize][nli][a];
                            }
                        }
                    }
                    let u_tilde = ub[li] + tau * div;
                    let tlw = tau * lambda * w[bi][li];
                    upb[li] = ub[li];
                    ub[li] = (u_tilde + tlw * f[bi][li]) / (1.0 + tlw);
                }
            });
    }

    /// Over-relaxation: `u_hat = u + theta (u - u_prev)` (or against the
    /// previous `u_hat` in the literal variant).
    pub fn relax_step(&mut self, theta: f64, literal: bool) {
        let omega = &self.omega;
        let u = &self.u;
        let u_prev = &self.u_prev;
        self.u_hat
            .par_iter_mut()
            .enumerate()
            .for_each(|(bi, hb)| {
                for li in 0..VOXELS_PER_BLOCK {
                    if !omega[bi][li] {
                        continue;
                    }
                    let anchor = if literal { hb[li] } else { u_prev[bi][li] };
                    hb[li] = u[bi][li] + theta * (u[bi][li] - anchor);
                }
            });
    }

    /// Total energy of the current primal iterate:
    /// `sum_omega |grad u| + lambda * sum_omega w (f - u)^2`.
    pub fn energy(&self, lambda: f64) -> f64 {
        let partials: Vec<f64> = (0..self.u.len())
            .into_par_iter()
            .map(|bi| {
                let mut e = 0.0;
                for li in 0..VOXELS_PER_BLOCK {
                    if !self.omega[bi][li] {
                        continue;
                    }
                    let center = self.u[bi][li];
                    let mut sq = 0.0;
                    for a in 0..3 {
                        if let Some((nbi, nli)) = self.neighbor(bi, li, a, 1) {
                            let d = self.u[nbi][nli] - center;
                            sq += d * d;
                        }
                    }
                    let r = self.f[bi][li] - center;
                    e += sq.sqrt() + lambda * self.w[bi][li] * r * r;
                }
                e
            })
            .collect();
        partials.iter().sum()
    }

    /// Write the primal back into the map's TSDF values (observed voxels
    /// only), clamped to the valid range.
    pub fn write_back(&self, map: &mut BlockMap) {
        let omega = &self.omega;
        let u = &self.u;
        map.blocks_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(bi, block)| {
                for (li, v) in block.voxels_mut().iter_mut().enumerate() {
                    if omega[bi][li] {
                        v.f = u[bi][li].clamp(-1.0, 1.0) as f32;
                    }
                }
            });
    }

    /// Gradient of `u_hat` at arbitrary coordinates (unobserved or
    /// unallocated positions read as outside the domain).
    pub fn gradient_at(&self, coords: VoxelCoord) -> [f64; 3] {
        masked_gradient(|c| self.u_hat(c), coords)
    }

    /// Divergence of `p` at arbitrary coordinates.
    pub fn divergence_at(&self, coords: VoxelCoord) -> f64 {
        masked_divergence(|c| self.p(c), coords)
    }
}

/// Run the full primal-dual loop over the map's observed voxels and write
/// the denoised field back. Unobserved voxels and all weights are
/// untouched.
pub fn regularize(map: &mut BlockMap, params: &RegParams) -> Result<RegStats, RegError> {
    params.validate()?;
    let mut state = RegState::from_map(map, params.zero_init);
    if state.observed_voxels == 0 {
        return Err(RegError::EmptyDomain);
    }
    let initial_energy = state.energy(params.lambda);
    for _ in 0..params.iterations {
        state.dual_step(params.sigma_p);
        state.primal_step(params.tau, params.lambda);
        state.relax_step(params.theta, params.literal_relaxation);
    }
    let final_energy = state.energy(params.lambda);
    state.write_back(map);
    Ok(RegStats {
        initial_energy,
        final_energy,
        iterations: params.iterations,
        observed_voxels: state.observed_voxels,
        max_dual_norm: state.max_dual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::Voxel;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    /// Map with the given observed voxels as (coords, f, w).
    fn map_from(voxels: &[(VoxelCoord, f32, f32)]) -> BlockMap {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        for &(c, f, w) in voxels {
            let v = map.voxel_mut(c, true).unwrap().unwrap();
            *v = Voxel { f, w, ..Default::default() };
            v.set_observed(w > 0.0);
        }
        map
    }

    #[test]
    fn dual_step_follows_gradient() {
        // Two adjacent voxels with u_hat 0 and 1: gradient (1,0,0) at the
        // first, so its dual moves to (0.5,0,0) in one step.
        let map = map_from(&[
            (VoxelCoord::new(0, 0, 0), 0.0, 1.0),
            (VoxelCoord::new(1, 0, 0), 1.0, 1.0),
        ]);
        let mut state = RegState::from_map(&map, false);
        state.dual_step(0.5);
        let p = state.p(VoxelCoord::new(0, 0, 0)).unwrap();
        assert_relative_eq!(p[0], 0.5);
        assert_relative_eq!(p[1], 0.0);
        assert_relative_eq!(p[2], 0.0);
    }

    #[test]
    fn dual_step_projects_onto_unit_ball() {
        let map = map_from(&[(VoxelCoord::new(0, 0, 0), 0.0, 1.0)]);
        let mut state = RegState::from_map(&map, false);
        state.set_p(VoxelCoord::new(0, 0, 0), [3.0, 4.0, 0.0]);
        // No observed neighbors: gradient is zero, so only projection acts.
        state.dual_step(0.5);
        let p = state.p(VoxelCoord::new(0, 0, 0)).unwrap();
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.8, epsilon = 1e-12);
        assert_relative_eq!(p[2], 0.0);
        // Feasible duals with zero gradient stay put.
        state.dual_step(0.5);
        let p = state.p(VoxelCoord::new(0, 0, 0)).unwrap();
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn primal_step_closed_form() {
        let c = VoxelCoord::new(0, 0, 0);
        let map = map_from(&[(c, 0.2, 1.0)]);
        let mut state = RegState::from_map(&map, false);
        state.set_u(c, 0.5);
        // Isolated voxel: div p = 0. f carries f32 storage rounding.
        state.primal_step(1.0 / 6.0, 0.8);
        let expected = (0.5 + (0.8 / 6.0) * (0.2f32 as f64)) / (1.0 + 0.8 / 6.0);
        assert_relative_eq!(state.u(c).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(state.u(c).unwrap(), 0.464_705_88, epsilon = 1e-7);
    }

    #[test]
    fn primal_step_fixed_point() {
        let c = VoxelCoord::new(0, 0, 0);
        let map = map_from(&[(c, 0.37, 5.0)]);
        let mut state = RegState::from_map(&map, false);
        state.primal_step(1.0 / 6.0, 0.8);
        assert_relative_eq!(state.u(c).unwrap(), 0.37f32 as f64, epsilon = 1e-12);
    }

    #[test]
    fn unobserved_voxels_are_skipped() {
        // w = 0 voxel in an allocated block stays outside the domain.
        let c = VoxelCoord::new(0, 0, 0);
        let map = map_from(&[(c, 0.0, 0.0), (VoxelCoord::new(1, 0, 0), 0.5, 1.0)]);
        let mut state = RegState::from_map(&map, false);
        assert_eq!(state.observed_voxels(), 1);
        assert!(state.u(c).is_none());
        state.dual_step(0.5);
        state.primal_step(1.0 / 6.0, 0.8);
        state.relax_step(1.0, false);
        assert!(state.p(c).is_none());
    }

    #[test]
    fn relax_step_extrapolates() {
        let c = VoxelCoord::new(0, 0, 0);
        let map = map_from(&[(c, 0.25, 1.0)]);
        let mut state = RegState::from_map(&map, false);
        // Iterate went 0.4 -> 0.5.
        let (bi, li) = state.locate(c).unwrap();
        state.u_prev[bi][li] = 0.4;
        state.u[bi][li] = 0.5;
        state.relax_step(1.0, false);
        assert_relative_eq!(state.u_hat(c).unwrap(), 0.6, epsilon = 1e-12);
        // theta = 0 disables relaxation.
        state.relax_step(0.0, false);
        assert_relative_eq!(state.u_hat(c).unwrap(), 0.5, epsilon = 1e-12);
        // u_k == u_{k-1} is a fixed point; 0.25 is exact in f32.
        let mut state = RegState::from_map(&map, false);
        state.relax_step(1.0, false);
        assert_relative_eq!(state.u_hat(c).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn energy_of_two_voxel_step() {
        let map = map_from(&[
            (VoxelCoord::new(0, 0, 0), 0.0, 1.0),
            (VoxelCoord::new(1, 0, 0), 1.0, 1.0),
        ]);
        let state = RegState::from_map(&map, false);
        // u = f: data term zero, one gradient edge of magnitude 1.
        assert_relative_eq!(state.energy(0.8), 1.0, epsilon = 1e-12);
        assert_relative_eq!(state.energy(123.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_constant_field_is_zero() {
        let mut voxels = Vec::new();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    voxels.push((VoxelCoord::new(x, y, z), 0.25, 2.0));
                }
            }
        }
        let map = map_from(&voxels);
        let state = RegState::from_map(&map, false);
        assert_relative_eq!(state.energy(0.8), 0.0);
    }

    /// The optimized block-local operators must agree with the reference
    /// masked operators for arbitrary masks spanning block seams.
    #[test]
    fn fast_operators_match_reference_operators() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut voxels = Vec::new();
        for z in -3..11 {
            for y in -3..11 {
                for x in -3..11 {
                    if rng.random_bool(0.6) {
                        voxels.push((
                            VoxelCoord::new(x, y, z),
                            rng.random_range(-1.0f32..1.0),
                            rng.random_range(0.5f32..4.0),
                        ));
                    }
                }
            }
        }
        let map = map_from(&voxels);
        let mut state = RegState::from_map(&map, false);
        for &(c, ..) in &voxels {
            state.set_p(
                c,
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            );
        }
        for &(c, ..) in &voxels {
            let (bi, li) = state.locate(c).unwrap();
            assert!(state.omega[bi][li]);
            let fast_g = state.gradient_u_hat(bi, li);
            let ref_g = state.gradient_at(c);
            for a in 0..3 {
                assert_relative_eq!(fast_g[a], ref_g[a], epsilon = 1e-15);
            }
            assert_relative_eq!(state.divergence_p(bi, li), state.divergence_at(c), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_iterations_leaves_map_unchanged() {
        let mut voxels = Vec::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for i in 0..200 {
            voxels.push((
                VoxelCoord::new(i % 17, (i * 7) % 13, i % 5),
                rng.random_range(-1.0f32..1.0),
                rng.random_range(0.0f32..3.0),
            ));
        }
        let mut map = map_from(&voxels);
        let before = map.clone();
        regularize(&mut map, &RegParams { iterations: 0, ..Default::default() }).unwrap();
        for (a, b) in before.blocks().iter().zip(map.blocks().iter()) {
            for (va, vb) in a.voxels().iter().zip(b.voxels().iter()) {
                assert_eq!(va.f.to_bits(), vb.f.to_bits());
                assert_eq!(va.w.to_bits(), vb.w.to_bits());
                assert_eq!(va.flags, vb.flags);
            }
        }
    }

    #[test]
    fn empty_domain_is_an_error() {
        let mut map = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        map.alloc_block(BlockCoord::new(0, 0, 0)).unwrap();
        assert!(matches!(
            regularize(&mut map, &RegParams::default()),
            Err(RegError::EmptyDomain)
        ));
    }

    #[test]
    fn constant_field_is_preserved_exactly() {
        let mut voxels = Vec::new();
        for z in 0..6 {
            for y in 0..10 {
                for x in 0..10 {
                    voxels.push((VoxelCoord::new(x, y, z), -0.35, 1.0 + (x % 3) as f32));
                }
            }
        }
        let mut map = map_from(&voxels);
        let stats = regularize(&mut map, &RegParams::default()).unwrap();
        for &(c, ..) in &voxels {
            assert_relative_eq!(map.voxel(c).unwrap().f as f64, -0.35f32 as f64, epsilon = 1e-9);
        }
        assert!(stats.final_energy <= stats.initial_energy + 1e-12);
        assert!(stats.max_dual_norm <= 1.0 + 1e-9);
    }

    #[test]
    fn disjoint_components_do_not_interact() {
        let comp_a = |f: f32| {
            (0..27).map(move |i| {
                (VoxelCoord::new(i % 3, (i / 3) % 3, i / 9), f + 0.01 * i as f32, 1.0)
            })
        };
        // Component B far away (separated by unallocated space).
        let comp_b = (0..27).map(|i| {
            (
                VoxelCoord::new(40 + i % 3, (i / 3) % 3, i / 9),
                -0.3 + 0.02 * (i % 5) as f32,
                2.0,
            )
        });

        let run = |fa: f32| {
            let mut voxels: Vec<_> = comp_a(fa).collect();
            voxels.extend(comp_b.clone());
            let mut map = map_from(&voxels);
            regularize(&mut map, &RegParams { iterations: 50, ..Default::default() }).unwrap();
            map
        };
        let m1 = run(0.1);
        let m2 = run(0.9);
        for i in 0..27 {
            let c = VoxelCoord::new(40 + i % 3, (i / 3) % 3, i / 9);
            assert_eq!(
                m1.voxel(c).unwrap().f.to_bits(),
                m2.voxel(c).unwrap().f.to_bits(),
                "component B changed when A was perturbed"
            );
        }
    }

    #[test]
    fn noisy_field_energy_decreases_and_omega_bar_untouched() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let mut voxels = Vec::new();
        for z in 0..12 {
            for y in 0..12 {
                for x in 0..12 {
                    // Noisy smooth ramp on a partial mask.
                    if (x + y + z) % 7 != 0 {
                        let f = 0.1 * x as f32 - 0.5 + rng.random_range(-0.2..0.2f32);
                        voxels.push((VoxelCoord::new(x, y, z), f.clamp(-1.0, 1.0), 2.0));
                    }
                }
            }
        }
        let mut map = map_from(&voxels);
        let before = map.clone();
        let stats = regularize(&mut map, &RegParams { iterations: 100, ..Default::default() }).unwrap();
        assert!(
            stats.final_energy < stats.initial_energy,
            "energy should drop: {} -> {}",
            stats.initial_energy,
            stats.final_energy
        );
        assert!(stats.max_dual_norm <= 1.0 + 1e-9);

        // Unobserved voxels bitwise untouched, weights everywhere untouched.
        for (a, b) in before.blocks().iter().zip(map.blocks().iter()) {
            for (va, vb) in a.voxels().iter().zip(b.voxels().iter()) {
                assert_eq!(va.w.to_bits(), vb.w.to_bits());
                assert_eq!(va.flags, vb.flags);
                if !va.observed() {
                    assert_eq!(va.f.to_bits(), vb.f.to_bits());
                }
            }
        }
    }

    #[test]
    fn results_identical_across_thread_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut voxels = Vec::new();
        for z in 0..10 {
            for y in 0..10 {
                for x in 0..20 {
                    if rng.random_bool(0.8) {
                        voxels.push((
                            VoxelCoord::new(x, y, z),
                            rng.random_range(-1.0f32..1.0),
                            rng.random_range(0.5f32..5.0),
                        ));
                    }
                }
            }
        }
        let params = RegParams { iterations: 30, ..Default::default() };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let mut map = map_from(&voxels);
            pool.install(|| regularize(&mut map, &params)).unwrap();
            map
        };
        let m1 = run(1);
        let m2 = run(4);
        for (a, b) in m1.blocks().iter().zip(m2.blocks().iter()) {
            for (va, vb) in a.voxels().iter().zip(b.voxels().iter()) {
                assert_eq!(va.f.to_bits(), vb.f.to_bits());
            }
        }
    }
}
