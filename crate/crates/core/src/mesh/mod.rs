//! Isosurface extraction from the fused distance field.
//!
//! Marching cubes over the zero crossing of `f`, restricted to cells whose
//! eight corner voxels are all observed with sufficient weight. Cells that
//! touch unobserved or unallocated space emit no geometry, so the mesh
//! never extends past what a sensor actually saw; the surface ends in open
//! boundaries at the observation frontier instead.

mod tables;

use rayon::prelude::*;
use std::collections::HashMap;

use crate::voxel::{BlockMap, Voxel, VoxelCoord, BLOCK_DIM};
use tables::{CORNER_OFFSETS, EDGE_ENDPOINTS, EDGE_TABLE, TRI_TABLE};

/// Indexed triangle mesh in world coordinates (meters), with optional
/// per-vertex color. Vertices on block seams may be duplicated; consumers
/// must not assume vertex uniqueness.
#[derive(Clone, Debug, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// One RGB per vertex when the map carried color.
    pub colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Append another mesh, remapping its indices.
    fn append(&mut self, mut other: TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.append(&mut other.vertices);
        for t in &mut other.triangles {
            for i in t.iter_mut() {
                *i += offset;
            }
        }
        self.triangles.append(&mut other.triangles);
        if let (Some(a), Some(b)) = (self.colors.as_mut(), other.colors.as_mut()) {
            a.append(b);
        }
    }
}

/// Extract the `f = 0` isosurface as a triangle mesh. Only cells whose 8
/// corners are observed with `w >= min_weight` produce geometry; vertex
/// positions are linearly interpolated between voxel centers along sign
/// changes. Triangles are wound so normals point toward positive `f`
/// (free space).
pub fn extract_mesh(map: &BlockMap, min_weight: f32) -> TriangleMesh {
    let has_color = map
        .blocks()
        .iter()
        .any(|b| b.voxels().iter().any(|v| v.has_color()));

    // Deterministic output: process blocks in coordinate order, stitch in
    // that same order.
    let mut order: Vec<usize> = (0..map.block_count()).collect();
    order.sort_by_key(|&i| map.blocks()[i].coords());

    let parts: Vec<TriangleMesh> = order
        .par_iter()
        .map(|&i| extract_block(map, i, min_weight, has_color))
        .collect();

    let mut mesh = TriangleMesh {
        colors: has_color.then(Vec::new),
        ..Default::default()
    };
    for part in parts {
        mesh.append(part);
    }
    mesh
}

fn corner_voxel(map: &BlockMap, coords: VoxelCoord) -> Option<&Voxel> {
    map.voxel(coords)
}

fn extract_block(map: &BlockMap, block_index: usize, min_weight: f32, color: bool) -> TriangleMesh {
    let block = &map.blocks()[block_index];
    let base = block.coords().base_voxel();
    let mut mesh = TriangleMesh {
        colors: color.then(Vec::new),
        ..Default::default()
    };
    // Vertices shared between cells of this block, keyed by the edge's
    // lower corner and axis.
    let mut edge_cache: HashMap<(VoxelCoord, u8), u32> = HashMap::new();

    let mut corners: [&Voxel; 8] = [&DEFAULT_VOXEL; 8];
    for lz in 0..BLOCK_DIM {
        for ly in 0..BLOCK_DIM {
            for lx in 0..BLOCK_DIM {
                let cell = base.offset(lx as i32, ly as i32, lz as i32);
                let mut all_in = true;
                for (slot, off) in corners.iter_mut().zip(CORNER_OFFSETS.iter()) {
                    match corner_voxel(map, cell.offset(off[0], off[1], off[2])) {
                        Some(v) if v.observed() && v.w >= min_weight => *slot = v,
                        _ => {
                            all_in = false;
                            break;
                        }
                    }
                }
                if !all_in {
                    continue;
                }

                let mut case = 0usize;
                for (i, v) in corners.iter().enumerate() {
                    if v.f < 0.0 {
                        case |= 1 << i;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }

                let tri = &TRI_TABLE[case];
                let mut k = 0;
                while tri[k] >= 0 {
                    let mut ids = [0u32; 3];
                    for (j, id) in ids.iter_mut().enumerate() {
                        let edge = tri[k + j] as usize;
                        *id = emit_edge_vertex(
                            map,
                            cell,
                            &corners,
                            edge,
                            &mut edge_cache,
                            &mut mesh,
                        );
                    }
                    // Drop degenerate triangles (coincident interpolated
                    // vertices on touching edges).
                    if area_sq(&mesh.vertices, ids) > 0.0 {
                        // Table winding has normals toward negative f; the
                        // convention here is normals toward free space.
                        mesh.triangles.push([ids[0], ids[2], ids[1]]);
                    }
                    k += 3;
                }
            }
        }
    }
    mesh
}

static DEFAULT_VOXEL: Voxel = Voxel {
    f: 0.0,
    w: 0.0,
    flags: 0,
    rgb: [0, 0, 0],
};

fn area_sq(vertices: &[[f64; 3]], ids: [u32; 3]) -> f64 {
    let [a, b, c] = ids.map(|i| vertices[i as usize]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    n[0] * n[0] + n[1] * n[1] + n[2] * n[2]
}

fn emit_edge_vertex(
    map: &BlockMap,
    cell: VoxelCoord,
    corners: &[&Voxel; 8],
    edge: usize,
    cache: &mut HashMap<(VoxelCoord, u8), u32>,
    mesh: &mut TriangleMesh,
) -> u32 {
    let (a, b) = EDGE_ENDPOINTS[edge];
    let ca = CORNER_OFFSETS[a];
    let cb = CORNER_OFFSETS[b];
    // Canonical edge key: lower corner plus axis.
    let axis = (0..3).find(|&i| ca[i] != cb[i]).expect("edge spans one axis");
    let lower = VoxelCoord([
        cell.0[0] + ca[0].min(cb[0]),
        cell.0[1] + ca[1].min(cb[1]),
        cell.0[2] + ca[2].min(cb[2]),
    ]);
    if let Some(&id) = cache.get(&(lower, axis as u8)) {
        return id;
    }

    let va = corners[a];
    let vb = corners[b];
    let (fa, fb) = (va.f as f64, vb.f as f64);
    let t = if (fa - fb).abs() < 1e-12 {
        0.5
    } else {
        (fa / (fa - fb)).clamp(0.0, 1.0)
    };
    let pa = map.voxel_to_world(cell.offset(ca[0], ca[1], ca[2]));
    let pb = map.voxel_to_world(cell.offset(cb[0], cb[1], cb[2]));
    let id = mesh.vertices.len() as u32;
    mesh.vertices.push([
        pa.x + t * (pb.x - pa.x),
        pa.y + t * (pb.y - pa.y),
        pa.z + t * (pb.z - pa.z),
    ]);
    if let Some(colors) = mesh.colors.as_mut() {
        let mut rgb = [128u8; 3];
        if va.has_color() || vb.has_color() {
            for i in 0..3 {
                let (ra, rb) = (va.rgb[i] as f64, vb.rgb[i] as f64);
                rgb[i] = (ra + t * (rb - ra)).round().clamp(0.0, 255.0) as u8;
            }
        }
        colors.push(rgb);
    }
    cache.insert((lower, axis as u8), id);
    id
}
