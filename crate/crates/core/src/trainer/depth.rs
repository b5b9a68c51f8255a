//! Depth-based point augmentation for sparse initial point sets.

use crate::error::{mismatch, Error, Result};
use crate::image::{Image, PixelMask};
use crate::scene::math::matvec3_t;
use crate::scene::Camera;
use crate::synth::InitPoint;
use crate::Scalar;

/// Least-squares `(a, b)` minimizing `Σ (a·pred + b − true)²`.
pub fn align_scale_shift<T: Scalar>(pred: &[T], truth: &[T]) -> Result<(T, T)> {
    if pred.len() != truth.len() {
        return Err(mismatch(format!("{} predicted vs {} reference depths", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Degenerate("scale-shift alignment needs at least two samples".into()));
    }
    let n = T::from_usize_lossy(pred.len());
    let mx = pred.iter().copied().sum::<T>() / n;
    let my = truth.iter().copied().sum::<T>() / n;
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for (&x, &y) in pred.iter().zip(truth) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= T::zero() {
        return Err(Error::Degenerate("predicted depths are all equal".into()));
    }
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

/// Unprojects every `stride`-th masked pixel (raster order) at its depth.
/// Colors are read from `frame`. Pixels with non-positive depth are skipped.
pub fn backproject_fill<T: Scalar>(
    depth: &[T],
    mask: &PixelMask,
    cam: &Camera<T>,
    stride: usize,
    frame: &Image<T>,
) -> Result<Vec<InitPoint>> {
    let (w, h) = (cam.width, cam.height);
    if depth.len() != w * h || mask.width != w || mask.height != h || frame.width != w || frame.height != h {
        return Err(mismatch("depth, mask, frame and camera sizes differ"));
    }
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut k = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let take = k.is_multiple_of(stride);
            k += 1;
            let z = depth[y * w + x];
            if !take || z <= T::zero() {
                continue;
            }
            let pc = [
                (T::from_usize_lossy(x) - cam.cx) / cam.fx * z - cam.translation[0],
                (T::from_usize_lossy(y) - cam.cy) / cam.fy * z - cam.translation[1],
                z - cam.translation[2],
            ];
            let p = matvec3_t(&cam.rotation, &pc);
            let color = std::array::from_fn(|c| frame.get(x, y, c.min(frame.channels - 1)).to_f64_lossy());
            out.push(InitPoint { position: p.map(|v| v.to_f64_lossy()), color });
        }
    }
    Ok(out)
}

/// Pixels whose accumulated alpha is below `t_z`.
pub fn low_alpha_mask<T: Scalar>(alpha: &[T], width: usize, height: usize, t_z: T) -> PixelMask {
    let mut m = PixelMask::new(width, height, false);
    for (flag, &a) in m.data.iter_mut().zip(alpha) {
        *flag = a < t_z;
    }
    m
}
