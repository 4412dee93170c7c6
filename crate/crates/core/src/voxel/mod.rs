//! Sparse, block-hashed storage of truncated signed distance voxels.
//!
//! The world is an unbounded integer lattice of voxels, grouped into 8x8x8
//! blocks. Blocks are allocated lazily and indexed through a chained hash
//! table keyed by their integer block coordinates, so memory scales with the
//! observed surface rather than with the extent of the scene.
//!
//! Concurrency contract: shared reads are always safe; mutation requires
//! exclusive access to a block (e.g. `par_iter_mut` over [`BlockMap::blocks_mut`]),
//! and allocation of new blocks takes `&mut BlockMap` and is therefore
//! serialized.

mod snapshot;

pub use snapshot::{load_snapshot, load_snapshot_file, save_snapshot, save_snapshot_file,
                   SnapshotError, BLOCK_SNAPSHOT_BYTES, HEADER_SNAPSHOT_BYTES};

use nalgebra::Vector3;
use thiserror::Error;

/// Voxels per block edge.
pub const BLOCK_DIM: usize = 8;
/// Voxels per block (8^3).
pub const VOXELS_PER_BLOCK: usize = BLOCK_DIM * BLOCK_DIM * BLOCK_DIM;

const FLAG_OBSERVED: u8 = 0x01;
const FLAG_HAS_COLOR: u8 = 0x02;

/// Errors from block allocation and map construction.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxelSize(f64),
    #[error("memory budget of {budget} bytes exceeded; {dropped} allocation(s) dropped")]
    BudgetExceeded { budget: u64, dropped: u64 },
}

/// One cell of the truncated signed distance field.
///
/// `f` is the normalized TSDF value in `[-1, 1]` (positive toward free
/// space), `w` the non-negative fusion weight. A voxel is *observed* exactly
/// when `w > 0`; unobserved voxels stay at `f = 0, w = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Voxel {
    pub f: f32,
    pub w: f32,
    pub flags: u8,
    pub rgb: [u8; 3],
}

impl Voxel {
    #[inline]
    pub fn observed(&self) -> bool {
        self.flags & FLAG_OBSERVED != 0
    }

    #[inline]
    pub fn set_observed(&mut self, observed: bool) {
        if observed {
            self.flags |= FLAG_OBSERVED;
        } else {
            self.flags &= !FLAG_OBSERVED;
        }
    }

    #[inline]
    pub fn has_color(&self) -> bool {
        self.flags & FLAG_HAS_COLOR != 0
    }

    #[inline]
    pub fn set_color(&mut self, rgb: [u8; 3]) {
        self.rgb = rgb;
        self.flags |= FLAG_HAS_COLOR;
    }
}

/// Integer coordinates of a voxel on the global lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord(pub [i32; 3]);

/// Integer coordinates of an 8x8x8 block (voxel coordinates divided by 8,
/// rounded toward negative infinity).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockCoord(pub [i32; 3]);

impl VoxelCoord {
    #[inline]
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        VoxelCoord([x, y, z])
    }

    /// Block containing this voxel (floor division, correct for negatives).
    #[inline]
    pub fn block(self) -> BlockCoord {
        BlockCoord(self.0.map(|c| c.div_euclid(BLOCK_DIM as i32)))
    }

    /// Position within the block, x-fastest, in `[0, 512)`.
    #[inline]
    pub fn local_index(self) -> usize {
        let [x, y, z] = self.0.map(|c| c.rem_euclid(BLOCK_DIM as i32) as usize);
        x + BLOCK_DIM * (y + BLOCK_DIM * z)
    }

    #[inline]
    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        VoxelCoord([self.0[0] + dx, self.0[1] + dy, self.0[2] + dz])
    }
}

impl BlockCoord {
    #[inline]
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        BlockCoord([x, y, z])
    }

    /// Voxel coordinates of the block's minimum corner.
    #[inline]
    pub fn base_voxel(self) -> VoxelCoord {
        VoxelCoord(self.0.map(|c| c * BLOCK_DIM as i32))
    }

    #[inline]
    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        BlockCoord([self.0[0] + dx, self.0[1] + dy, self.0[2] + dz])
    }
}

/// Spatial hash of block coordinates onto `[0, table_size)`.
///
/// Total and deterministic; collisions are handled by the map's bucket
/// chains, never by the hash itself.
#[inline]
pub fn block_hash(coords: BlockCoord, table_size: usize) -> usize {
    debug_assert!(table_size > 0);
    let [x, y, z] = coords.0;
    let h = (x as i64) * 73_856_093 ^ (y as i64) * 19_349_669 ^ (z as i64) * 83_492_791;
    h.rem_euclid(table_size as i64) as usize
}

/// An allocated 8x8x8 tile of voxels.
#[derive(Clone, Debug)]
pub struct VoxelBlock {
    coords: BlockCoord,
    voxels: Box<[Voxel; VOXELS_PER_BLOCK]>,
}

impl VoxelBlock {
    fn zeroed(coords: BlockCoord) -> Self {
        VoxelBlock {
            coords,
            voxels: Box::new([Voxel::default(); VOXELS_PER_BLOCK]),
        }
    }

    #[inline]
    pub fn coords(&self) -> BlockCoord {
        self.coords
    }

    #[inline]
    pub fn voxels(&self) -> &[Voxel; VOXELS_PER_BLOCK] {
        &self.voxels
    }

    #[inline]
    pub fn voxels_mut(&mut self) -> &mut [Voxel; VOXELS_PER_BLOCK] {
        &mut self.voxels
    }

    /// Voxel at local offsets `(lx, ly, lz)`, each in `[0, 8)`.
    #[inline]
    pub fn voxel_at(&self, lx: usize, ly: usize, lz: usize) -> &Voxel {
        &self.voxels[lx + BLOCK_DIM * (ly + BLOCK_DIM * lz)]
    }

    #[inline]
    pub fn voxel_at_mut(&mut self, lx: usize, ly: usize, lz: usize) -> &mut Voxel {
        &mut self.voxels[lx + BLOCK_DIM * (ly + BLOCK_DIM * lz)]
    }
}

/// Default number of hash buckets; grows automatically past load factor 2.
pub const DEFAULT_TABLE_SIZE: usize = 1 << 16;

/// The hashing voxel grid: a chained hash table of voxel blocks over an
/// unbounded lattice, plus the lattice-to-world calibration.
#[derive(Clone, Debug)]
pub struct BlockMap {
    voxel_size: f64,
    origin: Vector3<f64>,
    buckets: Vec<Vec<u32>>,
    blocks: Vec<VoxelBlock>,
    fixed_table: bool,
    memory_budget: Option<u64>,
    dropped_allocations: u64,
}

impl BlockMap {
    /// `voxel_size` is the edge length of one voxel in meters; `origin` is
    /// the world position of the corner of voxel (0,0,0).
    pub fn new(voxel_size: f64, origin: Vector3<f64>) -> Result<Self, StoreError> {
        Self::with_table_size(voxel_size, origin, DEFAULT_TABLE_SIZE)
    }

    /// As [`BlockMap::new`] but with a fixed bucket count (no growth).
    pub fn with_table_size(
        voxel_size: f64,
        origin: Vector3<f64>,
        table_size: usize,
    ) -> Result<Self, StoreError> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(StoreError::InvalidVoxelSize(voxel_size));
        }
        let table_size = table_size.max(1);
        Ok(BlockMap {
            voxel_size,
            origin,
            buckets: vec![Vec::new(); table_size],
            blocks: Vec::new(),
            fixed_table: table_size != DEFAULT_TABLE_SIZE,
            memory_budget: None,
            dropped_allocations: 0,
        })
    }

    /// Cap the map at `bytes` (measured in snapshot-format bytes). Further
    /// allocations fail with [`StoreError::BudgetExceeded`].
    pub fn set_memory_budget(&mut self, bytes: Option<u64>) {
        self.memory_budget = bytes;
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    #[inline]
    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Total stored voxels; exactly `512 * block_count`.
    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.blocks.len() * VOXELS_PER_BLOCK
    }

    #[inline]
    pub fn table_size(&self) -> usize {
        self.buckets.len()
    }

    pub fn dropped_allocations(&self) -> u64 {
        self.dropped_allocations
    }

    /// Snapshot-format size of the map in bytes.
    pub fn estimated_bytes(&self) -> u64 {
        HEADER_SNAPSHOT_BYTES + self.blocks.len() as u64 * BLOCK_SNAPSHOT_BYTES
    }

    /// Allocated blocks in allocation order.
    #[inline]
    pub fn blocks(&self) -> &[VoxelBlock] {
        &self.blocks
    }

    #[inline]
    pub fn blocks_mut(&mut self) -> &mut [VoxelBlock] {
        &mut self.blocks
    }

    /// Arena index of the block at `coords`, if allocated.
    pub fn block_index(&self, coords: BlockCoord) -> Option<usize> {
        let bucket = &self.buckets[block_hash(coords, self.buckets.len())];
        bucket
            .iter()
            .find(|&&i| self.blocks[i as usize].coords == coords)
            .map(|&i| i as usize)
    }

    pub fn block(&self, coords: BlockCoord) -> Option<&VoxelBlock> {
        self.block_index(coords).map(|i| &self.blocks[i])
    }

    pub fn block_mut(&mut self, coords: BlockCoord) -> Option<&mut VoxelBlock> {
        self.block_index(coords).map(move |i| &mut self.blocks[i])
    }

    /// Allocate the block at `coords` (zero-initialized, all voxels
    /// unobserved) and return its arena index. Returns the existing index if
    /// already present.
    pub fn alloc_block(&mut self, coords: BlockCoord) -> Result<usize, StoreError> {
        if let Some(i) = self.block_index(coords) {
            return Ok(i);
        }
        if let Some(budget) = self.memory_budget {
            let after = HEADER_SNAPSHOT_BYTES + (self.blocks.len() as u64 + 1) * BLOCK_SNAPSHOT_BYTES;
            if after > budget {
                self.dropped_allocations += 1;
                return Err(StoreError::BudgetExceeded {
                    budget,
                    dropped: self.dropped_allocations,
                });
            }
        }
        if !self.fixed_table && self.blocks.len() + 1 > 2 * self.buckets.len() {
            self.grow_table();
        }
        let index = self.blocks.len();
        let bucket = block_hash(coords, self.buckets.len());
        self.blocks.push(VoxelBlock::zeroed(coords));
        self.buckets[bucket].push(index as u32);
        Ok(index)
    }

    fn grow_table(&mut self) {
        let new_size = self.buckets.len() * 4;
        let mut buckets = vec![Vec::new(); new_size];
        for (i, b) in self.blocks.iter().enumerate() {
            buckets[block_hash(b.coords, new_size)].push(i as u32);
        }
        self.buckets = buckets;
    }

    /// Shared access to the voxel at `coords`; `None` when the enclosing
    /// block is unallocated (all of unallocated space reads as unobserved).
    pub fn voxel(&self, coords: VoxelCoord) -> Option<&Voxel> {
        self.block(coords.block())
            .map(|b| &b.voxels[coords.local_index()])
    }

    /// Mutable access to the voxel at `coords`. With `allocate` the
    /// enclosing block is created on demand; without it, absent blocks
    /// yield `Ok(None)`.
    pub fn voxel_mut(
        &mut self,
        coords: VoxelCoord,
        allocate: bool,
    ) -> Result<Option<&mut Voxel>, StoreError> {
        let index = if allocate {
            Some(self.alloc_block(coords.block())?)
        } else {
            self.block_index(coords.block())
        };
        Ok(index.map(move |i| &mut self.blocks[i].voxels[coords.local_index()]))
    }

    /// World position of the voxel's center.
    #[inline]
    pub fn voxel_to_world(&self, coords: VoxelCoord) -> Vector3<f64> {
        Vector3::new(
            (coords.0[0] as f64 + 0.5) * self.voxel_size + self.origin.x,
            (coords.0[1] as f64 + 0.5) * self.voxel_size + self.origin.y,
            (coords.0[2] as f64 + 0.5) * self.voxel_size + self.origin.z,
        )
    }

    /// Voxel containing the world point (component-wise floor).
    #[inline]
    pub fn world_to_voxel(&self, point: Vector3<f64>) -> VoxelCoord {
        VoxelCoord([
            ((point.x - self.origin.x) / self.voxel_size).floor() as i32,
            ((point.y - self.origin.y) / self.voxel_size).floor() as i32,
            ((point.z - self.origin.z) / self.voxel_size).floor() as i32,
        ])
    }

    /// Block containing the world point.
    #[inline]
    pub fn world_to_block(&self, point: Vector3<f64>) -> BlockCoord {
        self.world_to_voxel(point).block()
    }

    /// Axis-aligned bounding box of allocated blocks, in block coordinates
    /// (inclusive min, inclusive max); `None` when empty.
    pub fn block_bounds(&self) -> Option<(BlockCoord, BlockCoord)> {
        let mut it = self.blocks.iter();
        let first = it.next()?.coords;
        let (mut lo, mut hi) = (first.0, first.0);
        for b in it {
            for a in 0..3 {
                lo[a] = lo[a].min(b.coords.0[a]);
                hi[a] = hi[a].max(b.coords.0[a]);
            }
        }
        Some((BlockCoord(lo), BlockCoord(hi)))
    }
}
