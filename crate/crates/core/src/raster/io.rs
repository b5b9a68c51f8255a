//! Image files: 8-bit PNG, 1-bit mask PNG and "QIMG" float dumps.
//!
//! QIMG layout (little-endian): magic `QIMG`, height `u32`, width `u32`,
//! channels `u32`, then `H·W·C` `f32` values in row-major HWC order.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};
use crate::Scalar;

pub const QIMG_MAGIC: [u8; 4] = *b"QIMG";

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_rgb8<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    img.data.iter().map(|&v| to_u8(v)).collect()
}

pub fn save_png<T: Scalar>(img: &Image<T>, path: &Path) -> Result<()> {
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
    };
    image::save_buffer(path, &image_to_rgb8(img), img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Image(e.to_string()))
}

/// Loads an 8-bit PNG as an RGB image with values in `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| T::lit(v as f64 / 255.0)).collect();
    Image::from_vec(w, h, 3, data)
}

/// Quantizes to 8 bits and back, matching a PNG round trip.
pub fn quantize_u8<T: Scalar>(img: &Image<T>) -> Image<T> {
    Image {
        width: img.width,
        height: img.height,
        channels: img.channels,
        data: img.data.iter().map(|&v| T::lit(to_u8(v) as f64 / 255.0)).collect(),
    }
}

pub fn save_mask_png(mask: &PixelMask, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, mask.width as u32, mask.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    let row_bytes = mask.width.div_ceil(8);
    let mut data = vec![0u8; row_bytes * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    writer.write_image_data(&data).map_err(|e| Error::Image(e.to_string()))?;
    Ok(())
}

pub fn qimg_to_bytes<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.data.len() * 4);
    out.extend_from_slice(&QIMG_MAGIC);
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for &v in &img.data {
        out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    out
}

pub fn qimg_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    if bytes.len() < 16 {
        return Err(Error::Decode("QIMG shorter than its header".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != QIMG_MAGIC {
        return Err(Error::BadMagic { expected: QIMG_MAGIC, found: magic });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(4), word(8), word(12));
    if bytes.len() != 16 + 4 * h * w * c {
        return Err(Error::Decode("QIMG payload size does not match its header".into()));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    Image::from_vec(w, h, c, data)
}
