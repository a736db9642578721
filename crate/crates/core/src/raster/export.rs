//! PNG export of rendered images.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};

fn rgb_image(width: usize, height: usize, rgb: &[u8]) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    ImageBuffer::from_raw(width as u32, height as u32, rgb.to_vec()).ok_or(Error::Shape {
        what: "rgb image",
        expected: format!("{}", width * height * 3),
        actual: format!("{}", rgb.len()),
    })
}

pub fn write_rgb_png(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    rgb_image(width, height, rgb)?.save(path.as_ref())?;
    Ok(())
}

/// PNG file bytes of an 8-bit RGB image.
pub fn encode_rgb_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    rgb_image(width, height, rgb)?.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Depth scaled to 16 bits as `round(d / d_max * 65535)` over covered pixels
/// (`accum_alpha > 0`); uncovered pixels are 0. Returns the image and `d_max`
/// in meters (0 when nothing is covered).
pub fn depth_to_u16(depth: &[f32], accum_alpha: &[f32]) -> (Vec<u16>, f32) {
    let d_max = depth
        .iter()
        .zip(accum_alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|(&d, _)| d)
        .fold(0.0f32, f32::max);
    let scale = if d_max > 0.0 { 65535.0 / d_max as f64 } else { 0.0 };
    let px = depth
        .iter()
        .zip(accum_alpha)
        .map(|(&d, &a)| {
            if a > 0.0 {
                (d as f64 * scale).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    (px, d_max)
}

type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

fn depth_image(width: usize, height: usize, depth: &[f32], accum_alpha: &[f32]) -> Result<(DepthImage, f32)> {
    if depth.len() != width * height || accum_alpha.len() != depth.len() {
        return Err(Error::Shape {
            what: "depth image",
            expected: format!("{}", width * height),
            actual: format!("{}/{}", depth.len(), accum_alpha.len()),
        });
    }
    let (px, d_max) = depth_to_u16(depth, accum_alpha);
    let img = ImageBuffer::from_raw(width as u32, height as u32, px).expect("length checked above");
    Ok((img, d_max))
}

/// Writes normalized 16-bit grayscale depth; returns the metric depth of
/// value 65535.
pub fn write_depth_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    depth: &[f32],
    accum_alpha: &[f32],
) -> Result<f32> {
    let (img, d_max) = depth_image(width, height, depth, accum_alpha)?;
    img.save(path.as_ref())?;
    Ok(d_max)
}

/// In-memory [`write_depth_png`].
pub fn encode_depth_png(width: usize, height: usize, depth: &[f32], accum_alpha: &[f32]) -> Result<(Vec<u8>, f32)> {
    let (img, d_max) = depth_image(width, height, depth, accum_alpha)?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok((out.into_inner(), d_max))
}
