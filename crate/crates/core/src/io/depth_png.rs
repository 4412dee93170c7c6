//! 16-bit PNG depth maps in millimeters; zero means invalid.

use std::path::Path;

use super::IoError;
use crate::fusion::DepthMap;

pub fn read_depth_png<P: AsRef<Path>>(path: P) -> Result<DepthMap, IoError> {
    let img = image::open(&path).map_err(|e| IoError::parse(format!("png: {e}")))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(IoError::Unsupported(format!(
                "depth PNG must be 16-bit grayscale, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut depth = DepthMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mm = img.get_pixel(x as u32, y as u32).0[0];
            if mm > 0 {
                depth.set(x, y, mm as f32 / 1000.0);
            }
        }
    }
    Ok(depth)
}

/// Saturates at 65.535 m; invalid pixels are written as zero.
pub fn write_depth_png<P: AsRef<Path>>(depth: &DepthMap, path: P) -> Result<(), IoError> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        depth.width() as u32,
        depth.height() as u32,
    );
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let mm = depth
                .get(x, y)
                .map(|d| (d * 1000.0).round().clamp(0.0, u16::MAX as f32) as u16)
                .unwrap_or(0);
            img.put_pixel(x as u32, y as u32, image::Luma([mm]));
        }
    }
    img.save(&path).map_err(|e| IoError::parse(format!("png: {e}")))
}
