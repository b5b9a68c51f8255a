//! Clone/split/prune densification.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{mismatch, Result};
use crate::scene::math::{matvec3, normalize_quat, quat_to_mat};
use crate::scene::{Camera, GaussianCloud, GaussianRecord};
use crate::Scalar;

/// Scale reduction applied to both children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams<T> {
    /// Mean viewspace-gradient norm (NDC units) that triggers densification.
    pub grad_threshold: T,
    /// Gaussians with activated opacity below this are pruned.
    pub opacity_floor: T,
    /// Gaussians whose largest activated scale exceeds this are split,
    /// smaller ones are cloned.
    pub split_scale: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyResult<T> {
    /// Retained rows in their original order, then `added`.
    pub cloud: GaussianCloud<T>,
    pub added: Vec<GaussianRecord<T>>,
    /// Row of the input cloud each addition was derived from.
    pub sources: Vec<usize>,
    /// Removed input rows, ascending.
    pub removed: Vec<usize>,
    pub keep: Vec<bool>,
}

impl<T> DensifyResult<T> {
    pub fn is_noop(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Radius of the camera rig: distance from the mean camera center to the
/// farthest camera, times 1.1.
pub fn scene_extent<T: Scalar>(cams: &[Camera<T>]) -> T {
    if cams.is_empty() {
        return T::one();
    }
    let centers: Vec<[T; 3]> = cams.iter().map(Camera::center).collect();
    let n = T::from_usize_lossy(centers.len());
    let mut mean = [T::zero(); 3];
    for c in &centers {
        for k in 0..3 {
            mean[k] += c[k] / n;
        }
    }
    let far = centers
        .iter()
        .map(|c| ((c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2) + (c[2] - mean[2]).powi(2)).sqrt())
        .fold(T::zero(), T::max);
    let r = far * T::lit(1.1);
    if r > T::zero() {
        r
    } else {
        T::one()
    }
}

/// Clones small high-gradient Gaussians, splits large ones into two samples
/// drawn from the parent with scales divided by 1.6, and prunes everything
/// whose opacity falls below the floor.
pub fn densify_and_prune<T: Scalar, R: Rng>(
    cloud: &GaussianCloud<T>,
    grad_norms: &[T],
    params: &DensifyParams<T>,
    rng: &mut R,
) -> Result<DensifyResult<T>> {
    let n = cloud.len();
    if grad_norms.len() != n {
        return Err(mismatch(format!("{} gradient accumulators for {n} Gaussians", grad_norms.len())));
    }
    let shrink = T::lit(SPLIT_SCALE_DIVISOR).ln();
    let mut keep = vec![true; n];
    let mut added = Vec::new();
    let mut sources = Vec::new();
    for i in 0..n {
        if grad_norms[i] < params.grad_threshold {
            continue;
        }
        let s = cloud.scale(i);
        let max_s = s[0].max(s[1]).max(s[2]);
        let rec = cloud.record(i);
        if max_s > params.split_scale {
            let (q, _) = normalize_quat(&cloud.rotations[i]);
            let r = quat_to_mat(&q);
            for _ in 0..2 {
                let local: [T; 3] =
                    std::array::from_fn(|k| s[k] * T::lit(rng.sample::<f64, _>(StandardNormal)));
                let off = matvec3(&r, &local);
                let mut child = rec.clone();
                for k in 0..3 {
                    child.position[k] += off[k];
                    child.log_scale[k] -= shrink;
                }
                added.push(child);
                sources.push(i);
            }
            keep[i] = false;
        } else {
            added.push(rec);
            sources.push(i);
        }
    }
    for (i, k) in keep.iter_mut().enumerate() {
        if cloud.opacity(i) < params.opacity_floor {
            *k = false;
        }
    }
    let (added, sources): (Vec<_>, Vec<_>) = added
        .into_iter()
        .zip(sources)
        .filter(|(g, _)| g.opacity_logit.sigmoid() >= params.opacity_floor)
        .unzip();
    let removed: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let mut out = cloud.retain_mask(&keep);
    for g in &added {
        out.push(g);
    }
    Ok(DensifyResult { cloud: out, added, sources, removed, keep })
}
