//! Tile-based CPU splatting with an analytic backward pass.
//!
//! Each visible Gaussian is projected to a screen-space splat, binned into
//! 16×16 tiles by its 3σ extent and alpha-composited front to back. The
//! forward pass keeps every pixel's contributor list so the backward pass can
//! replay compositing without dividing by `1 − α`.

pub mod io;

use rayon::prelude::*;

use crate::error::{mismatch, Result};
use crate::image::{Image, PixelMask};
use crate::scene::math::{
    matvec3_t, normalize_quat, normalize_quat_backward, quat_to_mat, quat_to_mat_backward,
    sub3, Mat3, Vec3,
};
use crate::scene::sh::{color_unclamped, sh_basis_with_grad};
use crate::scene::{
    build_covariance, project_covariance, projection_jacobian, Camera, GaussianCloud,
};
use crate::Scalar;

pub const TILE: usize = 16;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Per-pixel contributions with smaller alpha are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Screen-space extent, in standard deviations, used for binning and culling.
pub const EXTENT_SIGMAS: f64 = 3.0;

/// A Gaussian after projection into one view.
#[derive(Debug, Clone)]
pub struct Splat<T> {
    /// Index of the source Gaussian in the cloud.
    pub gaussian: usize,
    pub mean: [T; 2],
    /// Screen covariance `(a, b, c)` including the low-pass floor.
    pub cov: [T; 3],
    /// Inverse covariance `(A, B, C)`.
    pub conic: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    pub color_clamped: [bool; 3],
    pub opacity: T,
    /// Inclusive pixel rectangle `[x0, y0, x1, y1]` covered by the 3σ extent.
    pub rect: [usize; 4],
    pub cov_clamped: bool,
    p_cam: Vec3<T>,
    qn: [T; 4],
    qnorm: T,
    scale: Vec3<T>,
    rot: Mat3<T>,
    sigma: Mat3<T>,
    view_dir: Vec3<T>,
    view_dist: T,
}

impl<T: Scalar> Splat<T> {
    #[inline]
    pub fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.rect[0] && x <= self.rect[2] && y >= self.rect[1] && y <= self.rect[3]
    }

    /// Alpha of this splat at a pixel center, before the `MIN_ALPHA` test.
    #[inline]
    pub fn alpha_at(&self, x: usize, y: usize) -> (T, T) {
        let dx = self.mean[0] - T::from_usize_lossy(x);
        let dy = self.mean[1] - T::from_usize_lossy(y);
        let [ca, cb, cc] = self.conic;
        let power = -T::lit(0.5) * (ca * dx * dx + cc * dy * dy) - cb * dx * dy;
        let g = power.exp();
        (self.opacity * g, g)
    }

    /// Sort key: depth, then Gaussian index.
    pub fn order(&self, other: &Self) -> std::cmp::Ordering {
        self.depth
            .partial_cmp(&other.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.gaussian.cmp(&other.gaussian))
    }
}

/// Projects Gaussian `i`; `None` when culled.
pub fn project_gaussian<T: Scalar>(
    cloud: &GaussianCloud<T>,
    i: usize,
    cam: &Camera<T>,
) -> Option<Splat<T>> {
    let p = cloud.positions[i];
    let p_cam = cam.to_camera(&p);
    if !(p_cam[2] > cam.near) {
        return None;
    }
    let (qn, qnorm) = normalize_quat(&cloud.rotations[i]);
    let scale = cloud.scale(i);
    let sigma = build_covariance(&qn, &scale).ok()?;
    let cov2 = project_covariance(&sigma, &p_cam, cam);
    let det = cov2.a * cov2.c - cov2.b * cov2.b;
    if !(det > T::zero()) {
        return None;
    }
    let conic = [cov2.c / det, -cov2.b / det, cov2.a / det];
    let mean = [
        cam.fx * p_cam[0] / p_cam[2] + cam.cx,
        cam.fy * p_cam[1] / p_cam[2] + cam.cy,
    ];
    let (lmax, _) = crate::scene::math::sym2_eigenvalues(cov2.a, cov2.b, cov2.c);
    let radius = T::lit(EXTENT_SIGMAS) * lmax.sqrt();
    let x0 = (mean[0] - radius).ceil().to_f64_lossy();
    let x1 = (mean[0] + radius).floor().to_f64_lossy();
    let y0 = (mean[1] - radius).ceil().to_f64_lossy();
    let y1 = (mean[1] + radius).floor().to_f64_lossy();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        return None;
    }
    let (x0, y0) = (x0.max(0.0), y0.max(0.0));
    let (x1, y1) = (x1.min(w - 1.0), y1.min(h - 1.0));
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let center = cam.center();
    let v = sub3(&p, &center);
    let view_dist = crate::scene::math::norm3(&v);
    let view_dir = [v[0] / view_dist, v[1] / view_dist, v[2] / view_dist];
    let b = cloud.basis();
    let mut basis = [T::zero(); 16];
    let mut dbasis = [[T::zero(); 3]; 16];
    sh_basis_with_grad(&view_dir, &mut basis[..b], &mut dbasis[..b]);
    let raw = color_unclamped(cloud.sh(i), &basis[..b]);
    let color_clamped = raw.map(|c| c < T::zero());
    let color = raw.map(|c| c.max(T::zero()));
    Some(Splat {
        gaussian: i,
        mean,
        cov: [cov2.a, cov2.b, cov2.c],
        conic,
        depth: p_cam[2],
        color,
        color_clamped,
        opacity: cloud.opacity(i),
        rect: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
        cov_clamped: cov2.clamped,
        p_cam,
        qn,
        qnorm,
        scale,
        rot: quat_to_mat(&qn),
        sigma,
        view_dir,
        view_dist,
    })
}

/// One entry of a pixel's contributor list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor<T> {
    /// Index into [`RenderAux::splats`].
    pub splat: u32,
    pub alpha: T,
    /// Transmittance in front of this contributor.
    pub transmittance: T,
}

/// State kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct RenderAux<T> {
    pub gaussian_count: usize,
    pub splats: Vec<Splat<T>>,
    /// `offsets[p]..offsets[p + 1]` indexes `contributors` for pixel `p`.
    pub offsets: Vec<usize>,
    pub contributors: Vec<Contributor<T>>,
    pub clamped_covariances: usize,
}

impl<T> RenderAux<T> {
    pub fn pixel_contributors(&self, pixel: usize) -> &[Contributor<T>] {
        &self.contributors[self.offsets[pixel]..self.offsets[pixel + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput<T> {
    pub image: Image<T>,
    /// Accumulated opacity per pixel (`H × W`).
    pub alpha: Vec<T>,
    pub aux: RenderAux<T>,
    /// Number of pixels that went through compositing.
    pub rendered_pixels: usize,
}

struct TileResult<T> {
    pixels: Vec<(usize, [T; 3], T, Vec<Contributor<T>>)>,
}

/// Renders `cloud` from `cam`. Pixels outside `mask` are left black and
/// carry no contributors.
pub fn rasterize<T: Scalar>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    mask: Option<&PixelMask>,
) -> Result<RenderOutput<T>> {
    cloud.check()?;
    cam.check()?;
    let (w, h) = (cam.width, cam.height);
    if let Some(m) = mask {
        if m.width != w || m.height != h {
            return Err(mismatch("pixel mask does not match the camera size"));
        }
    }
    let splats: Vec<Splat<T>> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(cloud, i, cam))
        .collect();
    let clamped_covariances = splats.iter().filter(|s| s.cov_clamped).count();

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        for ty in s.rect[1] / TILE..=s.rect[3] / TILE {
            for tx in s.rect[0] / TILE..=s.rect[2] / TILE {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    for bin in bins.iter_mut() {
        bin.sort_by(|&a, &b| splats[a as usize].order(&splats[b as usize]));
    }

    let min_alpha = T::lit(MIN_ALPHA);
    let min_t = T::lit(MIN_TRANSMITTANCE);
    let tiles: Vec<TileResult<T>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let mut pixels = Vec::new();
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    if let Some(m) = mask {
                        if !m.get(x, y) {
                            continue;
                        }
                    }
                    let mut trans = T::one();
                    let mut rgb = [T::zero(); 3];
                    let mut list = Vec::new();
                    for &si in bin {
                        let s = &splats[si as usize];
                        if !s.covers(x, y) {
                            continue;
                        }
                        let (alpha, _) = s.alpha_at(x, y);
                        if alpha < min_alpha {
                            continue;
                        }
                        for c in 0..3 {
                            rgb[c] += s.color[c] * alpha * trans;
                        }
                        list.push(Contributor { splat: si, alpha, transmittance: trans });
                        trans *= T::one() - alpha;
                        if trans < min_t {
                            break;
                        }
                    }
                    pixels.push((y * w + x, rgb, T::one() - trans, list));
                }
            }
            TileResult { pixels }
        })
        .collect();

    let mut image = Image::zeros(w, h, 3);
    let mut alpha = vec![T::zero(); w * h];
    let mut lists: Vec<Vec<Contributor<T>>> = vec![Vec::new(); w * h];
    let mut rendered_pixels = 0;
    for tile in tiles {
        for (p, rgb, a, list) in tile.pixels {
            rendered_pixels += 1;
            image.data[3 * p..3 * p + 3].copy_from_slice(&rgb);
            alpha[p] = a;
            lists[p] = list;
        }
    }
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut contributors = Vec::new();
    offsets.push(0);
    for list in lists {
        contributors.extend(list);
        offsets.push(contributors.len());
    }
    Ok(RenderOutput {
        image,
        alpha,
        aux: RenderAux {
            gaussian_count: cloud.len(),
            splats,
            offsets,
            contributors,
            clamped_covariances,
        },
        rendered_pixels,
    })
}

/// Gradients of a scalar loss with respect to every Gaussian attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeGrads<T> {
    pub positions: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub sh_coeffs: Vec<T>,
    /// `∂L/∂p'` in pixel units, summed over the pixels of this view.
    pub viewspace: Vec<[T; 2]>,
}

impl<T: Scalar> AttributeGrads<T> {
    pub fn zeros(n: usize, sh_stride: usize) -> Self {
        Self {
            positions: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            sh_coeffs: vec![T::zero(); n * sh_stride],
            viewspace: vec![[T::zero(); 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Self) {
        fn add<T: Scalar, const K: usize>(a: &mut [[T; K]], b: &[[T; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..K {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.positions, &other.positions);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.viewspace, &other.viewspace);
        for (x, y) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *x += *y;
        }
        for (x, y) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            *x += *y;
        }
    }
}

/// Screen-space gradient accumulator for one splat.
#[derive(Debug, Clone, Copy)]
struct SplatGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
}

impl<T: Scalar> SplatGrad<T> {
    fn zero() -> Self {
        Self { mean: [T::zero(); 2], conic: [T::zero(); 3], opacity: T::zero(), color: [T::zero(); 3] }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Backward pass of [`rasterize`].
pub fn rasterize_backward<T: Scalar>(
    out: &RenderOutput<T>,
    dl_dimage: &Image<T>,
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
) -> Result<AttributeGrads<T>> {
    let aux = &out.aux;
    if aux.gaussian_count != cloud.len() || aux.splats.iter().any(|s| s.gaussian >= cloud.len()) {
        return Err(mismatch("render aux was produced for a different cloud"));
    }
    if !dl_dimage.same_shape(&out.image) || out.image.width != cam.width || out.image.height != cam.height {
        return Err(mismatch("image gradient does not match the rendered image"));
    }
    let (w, h) = (cam.width, cam.height);
    let n_splats = aux.splats.len();

    // Per-row partial sums, reduced in row order so results do not depend on
    // the worker count.
    let rows: Vec<Vec<(u32, SplatGrad<T>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut local: Vec<(u32, SplatGrad<T>)> = Vec::new();
            let mut slot: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
            for x in 0..w {
                let p = y * w + x;
                let list = aux.pixel_contributors(p);
                if list.is_empty() {
                    continue;
                }
                let g = [dl_dimage.data[3 * p], dl_dimage.data[3 * p + 1], dl_dimage.data[3 * p + 2]];
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                let mut behind = [T::zero(); 3];
                for c in list.iter().rev() {
                    let s = &aux.splats[c.splat as usize];
                    let k = *slot.entry(c.splat).or_insert_with(|| {
                        local.push((c.splat, SplatGrad::zero()));
                        local.len() - 1
                    });
                    let acc = &mut local[k].1;
                    let weight = c.alpha * c.transmittance;
                    let mut dl_dalpha = T::zero();
                    for ch in 0..3 {
                        acc.color[ch] += weight * g[ch];
                        dl_dalpha += c.transmittance * (s.color[ch] - behind[ch]) * g[ch];
                        behind[ch] = s.color[ch] * c.alpha + (T::one() - c.alpha) * behind[ch];
                    }
                    let gauss = c.alpha / s.opacity;
                    acc.opacity += dl_dalpha * gauss;
                    let dl_dpower = dl_dalpha * c.alpha;
                    let dx = s.mean[0] - T::from_usize_lossy(x);
                    let dy = s.mean[1] - T::from_usize_lossy(y);
                    let [ca, cb, cc] = s.conic;
                    let half = T::lit(0.5);
                    acc.conic[0] += -half * dx * dx * dl_dpower;
                    acc.conic[1] += -dx * dy * dl_dpower;
                    acc.conic[2] += -half * dy * dy * dl_dpower;
                    acc.mean[0] += (-ca * dx - cb * dy) * dl_dpower;
                    acc.mean[1] += (-cc * dy - cb * dx) * dl_dpower;
                }
            }
            local
        })
        .collect();

    let mut sg = vec![SplatGrad::zero(); n_splats];
    for row in &rows {
        for (si, g) in row {
            sg[*si as usize].add(g);
        }
    }

    let stride = cloud.sh_stride();
    let basis_n = cloud.basis();
    let per_splat: Vec<_> = aux
        .splats
        .par_iter()
        .zip(sg.par_iter())
        .map(|(s, g)| splat_backward(s, g, cloud, cam, basis_n))
        .collect();

    let mut grads = AttributeGrads::zeros(cloud.len(), stride);
    for (si, (s, pg)) in aux.splats.iter().zip(per_splat).enumerate() {
        let i = s.gaussian;
        grads.positions[i] = pg.position;
        grads.rotations[i] = pg.rotation;
        grads.log_scales[i] = pg.log_scale;
        grads.opacity_logits[i] = pg.opacity_logit;
        grads.sh_coeffs[i * stride..(i + 1) * stride].copy_from_slice(&pg.sh);
        grads.viewspace[i] = sg[si].mean;
    }
    Ok(grads)
}

struct GaussianGrad<T> {
    position: [T; 3],
    rotation: [T; 4],
    log_scale: [T; 3],
    opacity_logit: T,
    sh: Vec<T>,
}

fn splat_backward<T: Scalar>(
    s: &Splat<T>,
    g: &SplatGrad<T>,
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    basis_n: usize,
) -> GaussianGrad<T> {
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let i = s.gaussian;

    let opacity_logit = g.opacity * s.opacity * (one - s.opacity);

    // Color through SH, including the view direction.
    let mut basis = [zero; 16];
    let mut dbasis = [[zero; 3]; 16];
    sh_basis_with_grad(&s.view_dir, &mut basis[..basis_n], &mut dbasis[..basis_n]);
    let coeffs = cloud.sh(i);
    let mut sh = vec![zero; 3 * basis_n];
    let mut dl_ddir = [zero; 3];
    for ch in 0..3 {
        if s.color_clamped[ch] {
            continue;
        }
        let gc = g.color[ch];
        for b in 0..basis_n {
            sh[ch * basis_n + b] = gc * basis[b];
            let coef = coeffs[ch * basis_n + b];
            for k in 0..3 {
                dl_ddir[k] += gc * coef * dbasis[b][k];
            }
        }
    }
    let dd = crate::scene::math::dot3(&s.view_dir, &dl_ddir);
    let mut position = [zero; 3];
    for k in 0..3 {
        position[k] = (dl_ddir[k] - s.view_dir[k] * dd) / s.view_dist;
    }

    // Conic -> screen covariance: dΣ' = −Σ'⁻¹ G Σ'⁻¹.
    let [ca, cb, cc] = s.conic;
    let inv = [[ca, cb], [cb, cc]];
    let gi = [[g.conic[0], g.conic[1] * T::lit(0.5)], [g.conic[1] * T::lit(0.5), g.conic[2]]];
    let mut tmp = [[zero; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            tmp[r][c] = inv[r][0] * gi[0][c] + inv[r][1] * gi[1][c];
        }
    }
    let mut gcov = [[zero; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            gcov[r][c] = -(tmp[r][0] * inv[0][c] + tmp[r][1] * inv[1][c]);
        }
    }

    // Σ' = T Σ Tᵀ with T = J W.
    let j = projection_jacobian(&s.p_cam, cam);
    let wr = &cam.rotation;
    let mut t = [[zero; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = j[r][0] * wr[0][c] + j[r][1] * wr[1][c] + j[r][2] * wr[2][c];
        }
    }
    // dΣ = Tᵀ G T
    let mut gt = [[zero; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            gt[r][c] = gcov[r][0] * t[0][c] + gcov[r][1] * t[1][c];
        }
    }
    let mut dsigma = [[zero; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            dsigma[r][c] = t[0][r] * gt[0][c] + t[1][r] * gt[1][c];
        }
    }
    // dT = 2 G T Σ
    let mut dt = [[zero; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = zero;
            for k in 0..3 {
                acc += gt[r][k] * s.sigma[k][c];
            }
            dt[r][c] = two * acc;
        }
    }
    // dJ = dT Wᵀ
    let mut dj = [[zero; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            dj[r][c] = dt[r][0] * wr[c][0] + dt[r][1] * wr[c][1] + dt[r][2] * wr[c][2];
        }
    }
    let [px, py, pz] = s.p_cam;
    let iz = one / pz;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dpc = [zero; 3];
    dpc[0] += dj[0][2] * (-cam.fx * iz2);
    dpc[1] += dj[1][2] * (-cam.fy * iz2);
    dpc[2] += dj[0][0] * (-cam.fx * iz2)
        + dj[0][2] * (two * cam.fx * px * iz3)
        + dj[1][1] * (-cam.fy * iz2)
        + dj[1][2] * (two * cam.fy * py * iz3);
    // Projected mean.
    dpc[0] += g.mean[0] * cam.fx * iz;
    dpc[1] += g.mean[1] * cam.fy * iz;
    dpc[2] += -g.mean[0] * cam.fx * px * iz2 - g.mean[1] * cam.fy * py * iz2;
    let dpw = matvec3_t(wr, &dpc);
    for k in 0..3 {
        position[k] += dpw[k];
    }

    // Σ = M Mᵀ with M = R S.
    let mut m = s.rot;
    for row in m.iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v *= s.scale[c];
        }
    }
    let mut dm = [[zero; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = zero;
            for k in 0..3 {
                acc += (dsigma[r][k] + dsigma[k][r]) * m[k][c];
            }
            dm[r][c] = acc;
        }
    }
    let mut log_scale = [zero; 3];
    let mut dr = [[zero; 3]; 3];
    for c in 0..3 {
        let mut ds = zero;
        for r in 0..3 {
            ds += dm[r][c] * s.rot[r][c];
            dr[r][c] = dm[r][c] * s.scale[c];
        }
        log_scale[c] = ds * s.scale[c];
    }
    let dqn = quat_to_mat_backward(&s.qn, &dr);
    let rotation = normalize_quat_backward(&s.qn, s.qnorm, &dqn);

    GaussianGrad { position, rotation, log_scale, opacity_logit, sh }
}

#[cfg(test)]
mod tests;
