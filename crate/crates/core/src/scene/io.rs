//! "QGSC" Gaussian cloud files.
//!
//! Layout (little-endian): magic `QGSC`, version `u16`, count `u32`, SH degree
//! `u8`, then positions (N×3), rotations (N×4), log-scales (N×3), opacity
//! logits (N) and SH coefficients (N×3×B) as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::{basis_count, GaussianCloud};
use crate::error::{Error, Result};
use crate::Scalar;

pub const CLOUD_MAGIC: [u8; 4] = *b"QGSC";
pub const CLOUD_VERSION: u16 = 1;

pub fn write_cloud<T: Scalar, W: Write>(cloud: &GaussianCloud<T>, mut w: W) -> Result<()> {
    w.write_all(&cloud_to_bytes(cloud)?)?;
    Ok(())
}

pub fn cloud_to_bytes<T: Scalar>(cloud: &GaussianCloud<T>) -> Result<Vec<u8>> {
    cloud.check()?;
    let mut buf = Vec::with_capacity(11 + cloud.len() * cloud.floats_per_gaussian() * 4);
    buf.extend_from_slice(&CLOUD_MAGIC);
    buf.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    buf.push(cloud.sh_degree as u8);
    let mut put = |v: T| buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    cloud.positions.iter().flatten().for_each(|&v| put(v));
    cloud.rotations.iter().flatten().for_each(|&v| put(v));
    cloud.log_scales.iter().flatten().for_each(|&v| put(v));
    cloud.opacity_logits.iter().for_each(|&v| put(v));
    cloud.sh_coeffs.iter().for_each(|&v| put(v));
    Ok(buf)
}

pub fn read_cloud<T: Scalar, R: Read>(mut r: R) -> Result<GaussianCloud<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    cloud_from_bytes(&bytes)
}

pub fn cloud_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<GaussianCloud<T>> {
    if bytes.len() < 11 {
        return Err(Error::Decode("cloud file shorter than its header".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CLOUD_MAGIC {
        return Err(Error::BadMagic { expected: CLOUD_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CLOUD_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: CLOUD_VERSION });
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let degree = bytes[10] as usize;
    if degree > 3 {
        return Err(Error::Decode(format!("SH degree {degree} exceeds 3")));
    }
    let b = basis_count(degree);
    let floats = n * (11 + 3 * b);
    if bytes.len() != 11 + 4 * floats {
        return Err(Error::Decode(format!(
            "expected {} payload bytes for {n} Gaussians, found {}",
            4 * floats,
            bytes.len() - 11
        )));
    }
    let mut vals = bytes[11..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64));
    let mut next = || vals.next().unwrap();
    let mut cloud = GaussianCloud::empty(degree);
    cloud.positions = (0..n).map(|_| [next(), next(), next()]).collect();
    cloud.rotations = (0..n).map(|_| [next(), next(), next(), next()]).collect();
    cloud.log_scales = (0..n).map(|_| [next(), next(), next()]).collect();
    cloud.opacity_logits = (0..n).map(|_| next()).collect();
    cloud.sh_coeffs = (0..n * 3 * b).map(|_| next()).collect();
    Ok(cloud)
}

pub fn save_cloud<T: Scalar>(cloud: &GaussianCloud<T>, path: &Path) -> Result<()> {
    std::fs::write(path, cloud_to_bytes(cloud)?)?;
    Ok(())
}

pub fn load_cloud<T: Scalar>(path: &Path) -> Result<GaussianCloud<T>> {
    cloud_from_bytes(&std::fs::read(path)?)
}
