//! Optimization loops: first-frame fitting and per-frame residual training.

mod adam;
mod config;
mod densify;
mod depth;
mod first_frame;
mod residual;

pub use adam::{adam_step, AdamState, Param, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{ResidualMode, TrainConfig};
pub use densify::{densify_and_prune, scene_extent, DensifyParams, DensifyResult, SPLIT_SCALE_DIVISOR};
pub use depth::{align_scale_shift, backproject_fill, low_alpha_mask};
pub use first_frame::{fill_from_depth, init_cloud, train_first_frame, FirstFrameOutput};
pub use residual::{train_residual_frame, FrameStats, ResidualContext, ResidualOutput};

use crate::error::{mismatch, Result};
use crate::image::{Image, PixelMask};
use crate::losses::{combined_loss, psnr_from_mse};
use crate::quantizer::AttributeKind;
use crate::raster::{rasterize, rasterize_backward, AttributeGrads};
use crate::scene::{Camera, GaussianCloud};
use crate::Scalar;

/// One progress row; `iter` counts optimizer steps within the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub frame: u32,
    pub iter: usize,
    pub loss: f64,
    pub psnr: f64,
    pub active_gates: usize,
    pub packet_bytes: usize,
    pub wall_ms: f64,
}

impl StatsRow {
    pub const CSV_HEADER: &'static str = "frame,iter,loss,psnr,active_gates,packet_bytes,wall_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.4},{},{},{:.1}",
            self.frame, self.iter, self.loss, self.psnr, self.active_gates, self.packet_bytes, self.wall_ms
        )
    }
}

pub(crate) fn check_views<T>(frames: &[Image<T>], cams: &[Camera<T>]) -> Result<()> {
    if frames.len() != cams.len() {
        return Err(mismatch(format!("{} frames for {} cameras", frames.len(), cams.len())));
    }
    for (f, c) in frames.iter().zip(cams) {
        if f.width != c.width || f.height != c.height || f.channels != 3 {
            return Err(mismatch(format!(
                "frame {}x{}x{} does not match camera {}x{}",
                f.width, f.height, f.channels, c.width, c.height
            )));
        }
    }
    Ok(())
}

/// Result of rendering one view and back-propagating the image loss.
pub(crate) struct ViewStep<T> {
    pub loss: T,
    pub mse: f64,
    pub grads: AttributeGrads<T>,
    pub rendered_pixels: usize,
    /// Gaussians that produced a splat in this view.
    pub visible: Vec<usize>,
}

pub(crate) fn view_step<T: Scalar>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    target: &Image<T>,
    mask: Option<&PixelMask>,
    lambda: T,
) -> Result<ViewStep<T>> {
    let out = rasterize(cloud, cam, mask)?;
    let masked;
    let target = match mask {
        Some(m) => {
            masked = target.masked(m);
            &masked
        }
        None => target,
    };
    let l = combined_loss(&out.image, target, lambda)?;
    let grads = rasterize_backward(&out, &l.gradient, cloud, cam)?;
    let mse = out
        .image
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| (p - t).to_f64_lossy().powi(2))
        .sum::<f64>()
        / out.image.data.len().max(1) as f64;
    let visible = out.aux.splats.iter().map(|s| s.gaussian).collect();
    Ok(ViewStep { loss: l.value, mse, grads, rendered_pixels: out.rendered_pixels, visible })
}

/// Mean full-frame training loss and PSNR (from the mean MSE) over all views.
pub fn evaluate<T: Scalar>(
    cloud: &GaussianCloud<T>,
    cams: &[Camera<T>],
    frames: &[Image<T>],
    lambda: f64,
) -> Result<(f64, f64)> {
    check_views(frames, cams)?;
    let mut loss = 0.0;
    let mut psnr = 0.0;
    for (cam, f) in cams.iter().zip(frames) {
        let out = rasterize(cloud, cam, None)?;
        loss += combined_loss(&out.image, f, T::lit(lambda))?.value.to_f64_lossy();
        psnr += crate::losses::psnr(&out.image, f)?;
    }
    let v = cams.len().max(1) as f64;
    Ok((loss / v, psnr / v))
}

pub(crate) fn mean_psnr(mse_sum: f64, count: usize) -> f64 {
    psnr_from_mse(mse_sum / count.max(1) as f64)
}

/// Adds the per-row residual `d` (rows × residual_dim) of `kind` into `cloud`.
pub(crate) fn add_kind<T: Scalar>(cloud: &mut GaussianCloud<T>, kind: AttributeKind, d: &[T]) {
    let basis = cloud.basis();
    let m = kind.residual_dim(basis);
    if m == 0 {
        return;
    }
    for (i, row) in d.chunks_exact(m).enumerate() {
        match kind {
            AttributeKind::Rotation => (0..4).for_each(|k| cloud.rotations[i][k] += row[k]),
            AttributeKind::Scale => (0..3).for_each(|k| cloud.log_scales[i][k] += row[k]),
            AttributeKind::Opacity => cloud.opacity_logits[i] += row[0],
            AttributeKind::ColorBase => {
                let sh = cloud.sh_mut(i);
                (0..3).for_each(|ch| sh[ch * basis] += row[ch]);
            }
            AttributeKind::ColorFreq => {
                let sh = cloud.sh_mut(i);
                let rest = basis - 1;
                for (k, &v) in row.iter().enumerate() {
                    sh[(k / rest) * basis + 1 + k % rest] += v;
                }
            }
        }
    }
}

/// Gradient rows (rows × residual_dim) for the attribute slots of `kind`.
pub(crate) fn kind_grads<T: Scalar>(g: &AttributeGrads<T>, kind: AttributeKind, basis: usize) -> Vec<T> {
    let n = g.len();
    let m = kind.residual_dim(basis);
    let stride = 3 * basis;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        match kind {
            AttributeKind::Rotation => out.extend_from_slice(&g.rotations[i]),
            AttributeKind::Scale => out.extend_from_slice(&g.log_scales[i]),
            AttributeKind::Opacity => out.push(g.opacity_logits[i]),
            AttributeKind::ColorBase => (0..3).for_each(|ch| out.push(g.sh_coeffs[i * stride + ch * basis])),
            AttributeKind::ColorFreq => {
                let rest = basis - 1;
                for k in 0..m {
                    out.push(g.sh_coeffs[i * stride + (k / rest) * basis + 1 + k % rest]);
                }
            }
        }
    }
    out
}

/// Reads the slots of `kind` out of `cloud` (rows × residual_dim).
#[cfg(test)]
pub(crate) fn kind_values<T: Scalar>(cloud: &GaussianCloud<T>, kind: AttributeKind) -> Vec<T> {
    let g = AttributeGrads {
        positions: cloud.positions.clone(),
        rotations: cloud.rotations.clone(),
        log_scales: cloud.log_scales.clone(),
        opacity_logits: cloud.opacity_logits.clone(),
        sh_coeffs: cloud.sh_coeffs.clone(),
        viewspace: Vec::new(),
    };
    kind_grads(&g, kind, cloud.basis())
}
