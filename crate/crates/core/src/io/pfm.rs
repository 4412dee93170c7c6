//! Portable float map (grayscale `Pf`) reading and writing.
//!
//! Values are meters; non-finite or non-positive entries are invalid
//! pixels. Scanlines are stored bottom-to-top, and a negative scale marks
//! little-endian data, as usual for the format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};

use super::IoError;
use crate::fusion::DepthMap;

pub fn write_pfm<W: Write>(depth: &DepthMap, writer: &mut W) -> Result<(), IoError> {
    write!(writer, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    for y in (0..depth.height()).rev() {
        for x in 0..depth.width() {
            let d = depth.get(x, y).unwrap_or(f32::NAN);
            writer.write_f32::<LittleEndian>(d)?;
        }
    }
    Ok(())
}

pub fn write_pfm_file<P: AsRef<Path>>(depth: &DepthMap, path: P) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(depth, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_token<R: Read>(reader: &mut R) -> Result<String, IoError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    // Skip leading whitespace, then read until the next whitespace byte.
    loop {
        reader.read_exact(&mut byte)?;
        if !byte[0].is_ascii_whitespace() {
            tok.push(byte[0] as char);
            break;
        }
    }
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            return Ok(tok);
        }
        tok.push(byte[0] as char);
    }
}

pub fn read_pfm<R: Read>(reader: &mut R) -> Result<DepthMap, IoError> {
    let magic = read_token(reader)?;
    if magic != "Pf" {
        return Err(IoError::Unsupported(format!(
            "expected grayscale PFM magic \"Pf\", got {magic:?}"
        )));
    }
    let width: usize = read_token(reader)?
        .parse()
        .map_err(|e| IoError::parse(format!("bad PFM width: {e}")))?;
    let height: usize = read_token(reader)?
        .parse()
        .map_err(|e| IoError::parse(format!("bad PFM height: {e}")))?;
    let scale: f32 = read_token(reader)?
        .parse()
        .map_err(|e| IoError::parse(format!("bad PFM scale: {e}")))?;
    if width == 0 || height == 0 {
        return Err(IoError::parse("PFM dimensions must be positive"));
    }

    let little_endian = scale < 0.0;
    let mut depth = DepthMap::new(width, height);
    for y in (0..height).rev() {
        for x in 0..width {
            let d = if little_endian {
                reader.read_f32::<LittleEndian>()?
            } else {
                reader.read_f32::<BigEndian>()?
            };
            if d.is_finite() && d > 0.0 {
                depth.set(x, y, d);
            }
        }
    }
    Ok(depth)
}

pub fn read_pfm_file<P: AsRef<Path>>(path: P) -> Result<DepthMap, IoError> {
    read_pfm(&mut BufReader::new(File::open(path)?))
}
