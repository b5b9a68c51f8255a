//! Per-Gaussian motion scores from viewspace gradient differences, gate
//! initialization probabilities, and the dynamic-region pixel masks.

use rayon::prelude::*;

use crate::error::{mismatch, Result};
use crate::image::{Image, PixelMask};
use crate::losses::mse_loss;
use crate::raster::{rasterize, rasterize_backward};
use crate::scene::{Camera, GaussianCloud};
use crate::Scalar;

/// Accumulated alpha above which a pixel belongs to a dynamic region.
pub const MASK_ALPHA_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    pub d: Vec<[T; 2]>,
    pub norms: Vec<T>,
}

impl<T: Scalar> ScoreVector<T> {
    pub fn from_rows(d: Vec<[T; 2]>) -> Self {
        let norms = d.iter().map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt()).collect();
        Self { d, norms }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Converts a pixel-space gradient into normalized device units.
#[inline]
pub fn ndc_gradient<T: Scalar>(g: [T; 2], cam: &Camera<T>) -> [T; 2] {
    let half = T::lit(0.5);
    [g[0] * half * T::from_usize_lossy(cam.width), g[1] * half * T::from_usize_lossy(cam.height)]
}

/// Averages, over views, the difference between the viewspace gradients of
/// the MSE against the next frame and against the previous frame. Gradients
/// are expressed in normalized device units.
pub fn score_vector<T: Scalar>(
    cloud_prev: &GaussianCloud<T>,
    cams: &[Camera<T>],
    frames_prev: &[Image<T>],
    frames_next: &[Image<T>],
) -> Result<ScoreVector<T>> {
    if cams.len() != frames_prev.len() || cams.len() != frames_next.len() {
        return Err(mismatch(format!(
            "{} cameras, {} previous frames, {} next frames",
            cams.len(),
            frames_prev.len(),
            frames_next.len()
        )));
    }
    let n = cloud_prev.len();
    if cams.is_empty() {
        return Ok(ScoreVector::from_rows(vec![[T::zero(); 2]; n]));
    }
    let per_view: Vec<Vec<[T; 2]>> = cams
        .par_iter()
        .zip(frames_prev.par_iter().zip(frames_next.par_iter()))
        .map(|(cam, (fp, fnx))| -> Result<Vec<[T; 2]>> {
            let out = rasterize(cloud_prev, cam, None)?;
            let lp = mse_loss(&out.image, fp)?;
            let ln = mse_loss(&out.image, fnx)?;
            let gp = rasterize_backward(&out, &lp.gradient, cloud_prev, cam)?;
            let gn = rasterize_backward(&out, &ln.gradient, cloud_prev, cam)?;
            Ok(gn
                .viewspace
                .iter()
                .zip(&gp.viewspace)
                .map(|(a, b)| ndc_gradient([a[0] - b[0], a[1] - b[1]], cam))
                .collect())
        })
        .collect::<Result<_>>()?;
    let v = T::from_usize_lossy(cams.len());
    let mut d = vec![[T::zero(); 2]; n];
    for view in &per_view {
        for (acc, g) in d.iter_mut().zip(view) {
            acc[0] += g[0];
            acc[1] += g[1];
        }
    }
    for r in &mut d {
        r[0] /= v;
        r[1] /= v;
    }
    Ok(ScoreVector::from_rows(d))
}

/// Lower median (element `⌊(n−1)/2⌋` of the sorted values).
pub fn lower_median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(*m)
}

/// `p_i = |d_i| / (|d_i| + median |d|)`.
pub fn gate_init_probs<T: Scalar>(scores: &ScoreVector<T>) -> Vec<T> {
    let Some(med) = lower_median(&scores.norms) else {
        return Vec::new();
    };
    scores
        .norms
        .iter()
        .map(|&s| {
            if med > T::zero() {
                s / (s + med)
            } else if s > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMasks {
    pub masks: Vec<PixelMask>,
    pub dynamic: Vec<usize>,
}

impl DynamicMasks {
    pub fn covered_pixels(&self) -> usize {
        self.masks.iter().map(PixelMask::count).sum()
    }
}

/// Renders only Gaussians with `|d_i| > t_d` and marks, per view, the pixels
/// they touch, dilated by a square of side `dilation`.
pub fn dynamic_masks<T: Scalar>(
    cloud_prev: &GaussianCloud<T>,
    scores: &ScoreVector<T>,
    t_d: T,
    cams: &[Camera<T>],
    dilation: usize,
) -> Result<DynamicMasks> {
    if scores.len() != cloud_prev.len() {
        return Err(mismatch(format!("{} scores for {} Gaussians", scores.len(), cloud_prev.len())));
    }
    let dynamic: Vec<usize> = (0..scores.len()).filter(|&i| scores.norms[i] > t_d).collect();
    if dynamic.is_empty() {
        let masks = cams.iter().map(|c| PixelMask::new(c.width, c.height, false)).collect();
        return Ok(DynamicMasks { masks, dynamic });
    }
    let sub = cloud_prev.subset(&dynamic);
    let thr = T::lit(MASK_ALPHA_THRESHOLD);
    let masks = cams
        .par_iter()
        .map(|cam| -> Result<PixelMask> {
            let out = rasterize(&sub, cam, None)?;
            let mut m = PixelMask::new(cam.width, cam.height, false);
            for (flag, &a) in m.data.iter_mut().zip(&out.alpha) {
                *flag = a > thr;
            }
            Ok(if dilation > 1 { m.dilate(dilation) } else { m })
        })
        .collect::<Result<_>>()?;
    Ok(DynamicMasks { masks, dynamic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianRecord;

    fn cam(size: usize) -> Camera<f64> {
        Camera::look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], size as f64, size as f64, size, size)
    }

    fn blob(x: f64, y: f64, log_scale: f64, dc: [f64; 3]) -> GaussianRecord<f64> {
        GaussianRecord {
            position: [x, y, 0.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [log_scale; 3],
            opacity_logit: 2.0,
            sh: dc.to_vec(),
        }
    }

    fn two_blobs() -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(0);
        c.push(&blob(-0.8, 0.0, -2.0, [0.5, -0.5, 0.2]));
        c.push(&blob(0.8, 0.0, -2.0, [-0.4, 0.6, 0.1]));
        c
    }

    #[test]
    fn identical_frames_give_zero_scores() {
        let c = two_blobs();
        let cams = vec![cam(32)];
        let img = rasterize(&c, &cams[0], None).unwrap().image;
        let f = vec![img.clone()];
        let s = score_vector(&c, &cams, &f, &f).unwrap();
        assert!(s.norms.iter().all(|&n| n < 1e-7));
        assert!(score_vector(&c, &cams, &f, &[]).is_err());
    }

    #[test]
    fn changed_gaussian_scores_highest_and_views_average() {
        let c = two_blobs();
        let mut moved = c.clone();
        moved.positions[1][1] += 0.15;
        let cams = vec![cam(32)];
        let prev = vec![rasterize(&c, &cams[0], None).unwrap().image];
        let next = vec![rasterize(&moved, &cams[0], None).unwrap().image];
        let s = score_vector(&c, &cams, &prev, &next).unwrap();
        assert!(s.norms[1] > 10.0 * s.norms[0].max(1e-12));

        // A second view whose frames do not change halves the average.
        let two = score_vector(
            &c,
            &[cams[0].clone(), cams[0].clone()],
            &[prev[0].clone(), prev[0].clone()],
            &[next[0].clone(), prev[0].clone()],
        )
        .unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert!((two.d[i][k] - 0.5 * s.d[i][k]).abs() <= 1e-12 * s.d[i][k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn gate_probabilities() {
        let s = ScoreVector::<f64>::from_rows(vec![[3.0, 4.0], [0.0, 0.0], [0.0, 1.0], [6.0, 8.0]]);
        // Norms 5, 0, 1, 10: lower median is 1.
        let p = gate_init_probs(&s);
        assert!((p[2] - 0.5).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 5.0 / 6.0).abs() < 1e-15);
        let z = ScoreVector::from_rows(vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(gate_init_probs(&z), vec![0.0, 0.0, 1.0]);
        assert!(gate_init_probs(&ScoreVector::<f64>::from_rows(vec![])).is_empty());
    }

    #[test]
    fn median_matches_full_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in 1..40 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(lower_median(&v), Some(s[(n - 1) / 2]));
        }
    }

    #[test]
    fn probabilities_are_scale_invariant() {
        let s = ScoreVector::<f64>::from_rows(vec![[0.1, 0.2], [0.0, 0.05], [0.3, 0.0], [0.0, 0.0], [0.01, 0.0]]);
        let scaled = ScoreVector::from_rows(s.d.iter().map(|r| [r[0] * 37.5, r[1] * 37.5]).collect());
        for (a, b) in gate_init_probs(&s).iter().zip(gate_init_probs(&scaled)) {
            assert!((a - b).abs() < 1e-12);
            assert!(*a >= 0.0 && *a < 1.0);
        }
    }

    #[test]
    fn masks_empty_below_threshold() {
        let c = two_blobs();
        let s = ScoreVector::from_rows(vec![[1e-4, 0.0], [0.0, 1e-4]]);
        let m = dynamic_masks(&c, &s, 0.001, &[cam(32)], 48).unwrap();
        assert!(m.dynamic.is_empty());
        assert_eq!(m.covered_pixels(), 0);
    }

    #[test]
    fn single_pixel_blob_dilates_to_square() {
        let mut c = GaussianCloud::empty(0);
        // Tiny and centered on pixel (63, 63) of a 128×128 view. The opacity is
        // low enough that neighbours fall under the 1/255 alpha floor.
        let mut g = blob(0.0, 0.0, -9.0, [0.0; 3]);
        g.opacity_logit = -4.0;
        c.push(&g);
        let mut cm = cam(128);
        cm.cx = 63.0;
        cm.cy = 63.0;
        let s = ScoreVector::from_rows(vec![[1.0, 0.0]]);
        let raw = dynamic_masks(&c, &s, 0.001, std::slice::from_ref(&cm), 1).unwrap();
        assert_eq!(raw.masks[0].count(), 1);
        assert!(raw.masks[0].get(63, 63));
        let m = dynamic_masks(&c, &s, 0.001, &[cm], 48).unwrap();
        assert_eq!(m.dynamic, vec![0]);
        assert_eq!(m.masks[0].count(), 48 * 48);
    }

    #[test]
    fn raising_threshold_never_adds_pixels() {
        let c = two_blobs();
        let s = ScoreVector::from_rows(vec![[0.002, 0.0], [0.02, 0.0]]);
        let cams = [cam(32)];
        let mut prev = usize::MAX;
        for t in [0.0, 0.001, 0.005, 0.05] {
            let m = dynamic_masks(&c, &s, t, &cams, 8).unwrap();
            assert!(m.covered_pixels() <= prev);
            prev = m.covered_pixels();
        }
        assert_eq!(prev, 0);
    }
}
