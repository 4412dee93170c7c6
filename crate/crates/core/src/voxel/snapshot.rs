//! Binary snapshot format for [`BlockMap`].
//!
//! Layout (little-endian):
//! header `{ magic "HVG1", voxel_size: f64, origin: 3 x f64, block_count: u64 }`,
//! then per block `{ block_coords: 3 x i32, 512 x (f: f32, w: f32, flags: u8, rgb: 3 x u8) }`.
//! Blocks are written sorted by coordinates so snapshots are canonical.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use thiserror::Error;

use super::{BlockMap, StoreError, Voxel, VoxelBlock, VOXELS_PER_BLOCK};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"HVG1";
/// Header size: magic + voxel_size + origin + block_count.
pub const HEADER_SNAPSHOT_BYTES: u64 = 4 + 8 + 3 * 8 + 8;
/// Per-block size: coords + 512 voxels of 12 bytes.
pub const BLOCK_SNAPSHOT_BYTES: u64 = 3 * 4 + VOXELS_PER_BLOCK as u64 * 12;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected \"HVG1\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Serialize the map; returns the number of bytes written.
pub fn save_snapshot<W: Write>(map: &BlockMap, writer: &mut W) -> io::Result<u64> {
    writer.write_all(SNAPSHOT_MAGIC)?;
    writer.write_f64::<LittleEndian>(map.voxel_size())?;
    let o = map.origin();
    writer.write_f64::<LittleEndian>(o.x)?;
    writer.write_f64::<LittleEndian>(o.y)?;
    writer.write_f64::<LittleEndian>(o.z)?;
    writer.write_u64::<LittleEndian>(map.block_count() as u64)?;

    let mut order: Vec<usize> = (0..map.block_count()).collect();
    order.sort_by_key(|&i| map.blocks()[i].coords());

    for &i in &order {
        let block: &VoxelBlock = &map.blocks()[i];
        let c = block.coords().0;
        writer.write_i32::<LittleEndian>(c[0])?;
        writer.write_i32::<LittleEndian>(c[1])?;
        writer.write_i32::<LittleEndian>(c[2])?;
        for v in block.voxels().iter() {
            writer.write_f32::<LittleEndian>(v.f)?;
            writer.write_f32::<LittleEndian>(v.w)?;
            writer.write_u8(v.flags)?;
            writer.write_all(&v.rgb)?;
        }
    }
    Ok(HEADER_SNAPSHOT_BYTES + map.block_count() as u64 * BLOCK_SNAPSHOT_BYTES)
}

pub fn load_snapshot<R: Read>(reader: &mut R) -> Result<BlockMap, SnapshotError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    let voxel_size = reader.read_f64::<LittleEndian>()?;
    let origin = Vector3::new(
        reader.read_f64::<LittleEndian>()?,
        reader.read_f64::<LittleEndian>()?,
        reader.read_f64::<LittleEndian>()?,
    );
    let block_count = reader.read_u64::<LittleEndian>()?;

    let mut map = BlockMap::new(voxel_size, origin)?;
    for n in 0..block_count {
        let coords = super::BlockCoord::new(
            reader.read_i32::<LittleEndian>()?,
            reader.read_i32::<LittleEndian>()?,
            reader.read_i32::<LittleEndian>()?,
        );
        if map.block_index(coords).is_some() {
            return Err(SnapshotError::Corrupt(format!(
                "duplicate block {coords:?} at record {n}"
            )));
        }
        let index = map.alloc_block(coords)?;
        let block = &mut map.blocks_mut()[index];
        for v in block.voxels_mut().iter_mut() {
            let f = reader.read_f32::<LittleEndian>()?;
            let w = reader.read_f32::<LittleEndian>()?;
            let flags = reader.read_u8()?;
            let mut rgb = [0u8; 3];
            reader.read_exact(&mut rgb)?;
            *v = Voxel { f, w, flags, rgb };
        }
    }
    Ok(map)
}

pub fn save_snapshot_file<P: AsRef<Path>>(map: &BlockMap, path: P) -> io::Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = save_snapshot(map, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn load_snapshot_file<P: AsRef<Path>>(path: P) -> Result<BlockMap, SnapshotError> {
    load_snapshot(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{BlockCoord, VoxelCoord};
    use rand::{Rng, SeedableRng};

    fn random_map(seed: u64, blocks: usize) -> BlockMap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut map = BlockMap::new(0.1, Vector3::new(0.5, -2.0, 1.25)).unwrap();
        for _ in 0..blocks {
            let c = BlockCoord::new(
                rng.random_range(-50..50),
                rng.random_range(-50..50),
                rng.random_range(-50..50),
            );
            let i = map.alloc_block(c).unwrap();
            for v in map.blocks_mut()[i].voxels_mut().iter_mut() {
                if rng.random_bool(0.3) {
                    v.f = rng.random_range(-1.0f32..1.0);
                    v.w = rng.random_range(0.0f32..10.0);
                    v.set_observed(v.w > 0.0);
                    if rng.random_bool(0.5) {
                        v.set_color([rng.random(), rng.random(), rng.random()]);
                    }
                }
            }
        }
        map
    }

    #[test]
    fn round_trip_preserves_every_voxel() {
        let map = random_map(7, 40);
        let mut bytes = Vec::new();
        let n = save_snapshot(&map, &mut bytes).unwrap();
        assert_eq!(n as usize, bytes.len());
        assert_eq!(n, map.estimated_bytes());

        let loaded = load_snapshot(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded.block_count(), map.block_count());
        assert_eq!(loaded.voxel_size(), map.voxel_size());
        assert_eq!(loaded.origin(), map.origin());
        for b in map.blocks() {
            let lb = loaded.block(b.coords()).expect("block survives round trip");
            assert_eq!(lb.voxels().as_slice(), b.voxels().as_slice());
        }
    }

    #[test]
    fn snapshots_are_canonical_under_allocation_order() {
        let mut a = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let mut b = BlockMap::new(0.1, Vector3::zeros()).unwrap();
        let coords = [
            BlockCoord::new(2, 0, -1),
            BlockCoord::new(-3, 1, 0),
            BlockCoord::new(0, 0, 0),
        ];
        for &c in &coords {
            a.alloc_block(c).unwrap();
        }
        for &c in coords.iter().rev() {
            b.alloc_block(c).unwrap();
        }
        a.voxel_mut(VoxelCoord::new(0, 0, 0), false).unwrap().unwrap().f = 0.25;
        b.voxel_mut(VoxelCoord::new(0, 0, 0), false).unwrap().unwrap().f = 0.25;

        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        save_snapshot(&a, &mut ba).unwrap();
        save_snapshot(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn empty_map_snapshot_is_header_only() {
        let map = BlockMap::new(0.2, Vector3::zeros()).unwrap();
        let mut bytes = Vec::new();
        let n = save_snapshot(&map, &mut bytes).unwrap();
        assert_eq!(n, HEADER_SNAPSHOT_BYTES);
        assert_eq!(&bytes[..4], b"HVG1");
        let loaded = load_snapshot(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded.block_count(), 0);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let map = random_map(3, 4);
        let mut bytes = Vec::new();
        save_snapshot(&map, &mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            load_snapshot(&mut bad.as_slice()),
            Err(SnapshotError::BadMagic(_))
        ));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(
            load_snapshot(&mut &truncated[..]),
            Err(SnapshotError::Io(_))
        ));
    }
}
