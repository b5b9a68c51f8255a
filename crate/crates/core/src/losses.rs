//! Reconstruction losses and image quality metrics.
//!
//! Every loss returns its value together with `dL/dpred`.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR reported when the MSE is below `1e-10`.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub gradient: Image<T>,
}

pub fn l1_loss<T: Scalar>(pred: &Image<T>, target: &Image<T>) -> Result<LossValue<T>> {
    pred.check_same_shape(target)?;
    let n = T::from_usize_lossy(pred.data.len());
    let mut value = T::zero();
    let mut gradient = Image::zeros(pred.width, pred.height, pred.channels);
    for ((g, &p), &t) in gradient.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        value += d.abs();
        *g = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok(LossValue { value: value / n, gradient })
}

pub fn mse_loss<T: Scalar>(pred: &Image<T>, target: &Image<T>) -> Result<LossValue<T>> {
    pred.check_same_shape(target)?;
    let n = T::from_usize_lossy(pred.data.len());
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut gradient = Image::zeros(pred.width, pred.height, pred.channels);
    for ((g, &p), &t) in gradient.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        value += d * d;
        *g = two * d / n;
    }
    Ok(LossValue { value: value / n, gradient })
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr<T: Scalar>(pred: &Image<T>, target: &Image<T>) -> Result<f64> {
    pred.check_same_shape(target)?;
    let mse = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = (p - t).to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / pred.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_window<T: Scalar>() -> [T; SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| T::lit(v / s))
}

/// Separable "valid" correlation of one plane with the window.
fn blur_valid<T: Scalar>(plane: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters an `(w-10)×(h-10)` map back to `w×h`.
fn blur_valid_adjoint<T: Scalar>(map: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (i, &kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, &kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions, with its gradient.
pub fn ssim<T: Scalar>(pred: &Image<T>, target: &Image<T>) -> Result<LossValue<T>> {
    pred.check_same_shape(target)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    let k = gaussian_window::<T>();
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let positions = (w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1);
    let norm = T::from_usize_lossy(positions * ch);
    let mut value = T::zero();
    let mut gradient = Image::zeros(w, h, ch);
    for c in 0..ch {
        let x: Vec<T> = (0..w * h).map(|p| pred.data[p * ch + c]).collect();
        let y: Vec<T> = (0..w * h).map(|p| target.data[p * ch + c]).collect();
        let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(&a, &b)| a * b).collect();
        let mx = blur_valid(&x, w, h, &k);
        let my = blur_valid(&y, w, h, &k);
        let exx = blur_valid(&xx, w, h, &k);
        let eyy = blur_valid(&yy, w, h, &k);
        let exy = blur_valid(&xy, w, h, &k);
        let mut d_mx = vec![T::zero(); positions];
        let mut d_exx = vec![T::zero(); positions];
        let mut d_exy = vec![T::zero(); positions];
        for p in 0..positions {
            let (ux, uy) = (mx[p], my[p]);
            let sxx = exx[p] - ux * ux;
            let syy = eyy[p] - uy * uy;
            let sxy = exy[p] - ux * uy;
            let a1 = two * ux * uy + c1;
            let a2 = two * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let s = (a1 * a2) / (b1 * b2);
            value += s;
            let den = b1 * b2;
            d_mx[p] = (two * uy * a2 - two * uy * a1) / den - s * (two * ux / b1 - two * ux / b2);
            d_exx[p] = -s / b2;
            d_exy[p] = two * a1 / den;
        }
        let g_mx = blur_valid_adjoint(&d_mx, w, h, &k);
        let g_exx = blur_valid_adjoint(&d_exx, w, h, &k);
        let g_exy = blur_valid_adjoint(&d_exy, w, h, &k);
        for p in 0..w * h {
            gradient.data[p * ch + c] = (g_mx[p] + two * x[p] * g_exx[p] + y[p] * g_exy[p]) / norm;
        }
    }
    Ok(LossValue { value: value / norm, gradient })
}

/// Structural dissimilarity `(1 − SSIM) / 2`.
pub fn dssim<T: Scalar>(pred: &Image<T>, target: &Image<T>) -> Result<LossValue<T>> {
    let s = ssim(pred, target)?;
    let half = T::lit(0.5);
    let mut gradient = s.gradient;
    gradient.data.iter_mut().for_each(|g| *g = -*g * half);
    Ok(LossValue { value: (T::one() - s.value) * half, gradient })
}

/// `λ·D-SSIM + (1 − λ)·L1`.
pub fn combined_loss<T: Scalar>(pred: &Image<T>, target: &Image<T>, lambda: T) -> Result<LossValue<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(invalid(format!("loss weight {lambda} outside [0, 1]")));
    }
    let l1 = l1_loss(pred, target)?;
    if lambda == T::zero() {
        return Ok(l1);
    }
    let ds = dssim(pred, target)?;
    let rest = T::one() - lambda;
    let mut gradient = l1.gradient;
    for (g, &d) in gradient.data.iter_mut().zip(&ds.gradient.data) {
        *g = lambda * d + rest * *g;
    }
    Ok(LossValue { value: lambda * ds.value + rest * l1.value, gradient })
}
