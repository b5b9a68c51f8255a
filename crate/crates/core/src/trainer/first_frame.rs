use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Param;
use super::config::TrainConfig;
use super::densify::{densify_and_prune, scene_extent, DensifyParams};
use super::depth::{align_scale_shift, backproject_fill, low_alpha_mask};
use super::{check_views, kind_grads, mean_psnr, view_step, StatsRow};
use crate::dynamics::ndc_gradient;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::quantizer::{decode_residuals, quantize_round, ste_grads, AttributeKind, LinearDecoder};
use crate::raster::rasterize;
use crate::scene::sh::SH_C0;
use crate::scene::{basis_count, project_point, Camera, GaussianCloud, GaussianRecord, Projection};
use crate::synth::InitPoint;
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct FirstFrameOutput<T> {
    /// The trained cloud with high-frequency SH already decoded.
    pub cloud: GaussianCloud<T>,
    /// Integer latents and decoder of the high-frequency SH, when quantized.
    pub sh_latents: Option<(Vec<i32>, LinearDecoder<T>)>,
    /// One row per epoch.
    pub rows: Vec<StatsRow>,
    pub wall_ms: f64,
}

fn knn_mean_sq_dist(points: &[InitPoint], i: usize) -> f64 {
    let mut best = [f64::INFINITY; 3];
    let p = points[i].position;
    for (j, q) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = (0..3).map(|k| (p[k] - q.position[k]).powi(2)).sum::<f64>();
        if d < best[2] {
            best[2] = d;
            best.sort_by(f64::total_cmp);
        }
    }
    let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
    if found.is_empty() {
        1e-4
    } else {
        (found.iter().sum::<f64>() / found.len() as f64).max(1e-7)
    }
}

/// Isotropic Gaussians at the given points: scale from the mean squared
/// distance to the three nearest neighbours, DC color from the point color,
/// higher SH bands zero.
pub fn init_cloud<T: Scalar>(points: &[InitPoint], cfg: &TrainConfig) -> Result<GaussianCloud<T>> {
    if points.is_empty() {
        return Err(invalid(
            "no initial points: generate a scene with `synth` or add points by depth backprojection",
        ));
    }
    let b = basis_count(cfg.sh_degree);
    let opacity = T::lit(cfg.init_opacity).logit();
    let mut c = GaussianCloud::empty(cfg.sh_degree);
    for i in 0..points.len() {
        let ls = T::lit(knn_mean_sq_dist(points, i).sqrt().ln());
        let mut sh = vec![T::zero(); 3 * b];
        for ch in 0..3 {
            sh[ch * b] = T::lit((points[i].color[ch] - 0.5) / SH_C0);
        }
        c.push(&GaussianRecord {
            position: points[i].position.map(T::lit),
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [ls; 3],
            opacity_logit: opacity,
            sh,
        });
    }
    Ok(c)
}

/// Adds backprojected points where the initial cloud leaves views nearly
/// empty. `depths[v]` is an unaligned depth map for view `v`; it is aligned
/// per view against the camera depths of the initial points it sees.
pub fn fill_from_depth<T: Scalar>(
    points: &[InitPoint],
    cams: &[Camera<T>],
    frames: &[Image<T>],
    depths: &[Vec<T>],
    stride: usize,
    cfg: &TrainConfig,
) -> Result<Vec<InitPoint>> {
    check_views(frames, cams)?;
    if depths.len() != cams.len() {
        return Err(invalid(format!("{} depth maps for {} views", depths.len(), cams.len())));
    }
    let cloud: GaussianCloud<T> = init_cloud(points, cfg)?;
    let mut out = points.to_vec();
    for ((cam, frame), depth) in cams.iter().zip(frames).zip(depths) {
        let (w, h) = (cam.width, cam.height);
        if depth.len() != w * h {
            return Err(invalid("depth map size does not match its camera"));
        }
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for p in points {
            if let Projection::Visible { pixel, depth: z } = project_point(&p.position.map(T::lit), cam) {
                let (x, y) = (pixel[0].round(), pixel[1].round());
                if x >= T::zero() && y >= T::zero() {
                    let (x, y) = (x.to_f64_lossy() as usize, y.to_f64_lossy() as usize);
                    if x < w && y < h {
                        pred.push(depth[y * w + x]);
                        truth.push(z);
                    }
                }
            }
        }
        let (a, b) = align_scale_shift(&pred, &truth)?;
        let aligned: Vec<T> = depth.iter().map(|&d| a * d + b).collect();
        let alpha = rasterize(&cloud, cam, None)?.alpha;
        let mask = low_alpha_mask(&alpha, w, h, T::lit(cfg.depth_alpha_threshold));
        out.extend(backproject_fill(&aligned, &mask, cam, stride, frame)?);
    }
    Ok(out)
}

struct Model<T> {
    pos: Param<T>,
    rot: Param<T>,
    scale: Param<T>,
    opac: Param<T>,
    dc: Param<T>,
    /// Raw high-frequency SH, or latents when `decoder` is set.
    rest: Param<T>,
    decoder: Option<Param<T>>,
    sh_degree: usize,
}

impl<T: Scalar> Model<T> {
    fn decoder(&self) -> Option<LinearDecoder<T>> {
        self.decoder.as_ref().map(|d| LinearDecoder {
            out_dim: d.width,
            in_dim: self.rest.width,
            weights: d.values.clone(),
        })
    }

    /// Returns the cloud and, when quantized, the rounded latents.
    fn assemble(&self) -> Result<(GaussianCloud<T>, Vec<i32>)> {
        let b = basis_count(self.sh_degree);
        let m = 3 * (b - 1);
        let n = self.pos.rows();
        let (rest, q) = match self.decoder() {
            Some(dec) => {
                let q = quantize_round(&self.rest.values);
                (decode_residuals(&q, &dec)?, q)
            }
            None => (self.rest.values.clone(), Vec::new()),
        };
        let mut c = GaussianCloud::empty(self.sh_degree);
        c.positions = self.pos.values.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect();
        c.rotations = self.rot.values.chunks_exact(4).map(|r| [r[0], r[1], r[2], r[3]]).collect();
        c.log_scales = self.scale.values.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect();
        c.opacity_logits = self.opac.values.clone();
        c.sh_coeffs = vec![T::zero(); n * 3 * b];
        for i in 0..n {
            let sh = &mut c.sh_coeffs[i * 3 * b..(i + 1) * 3 * b];
            for ch in 0..3 {
                sh[ch * b] = self.dc.values[3 * i + ch];
            }
            for k in 0..m {
                sh[(k / (b - 1)) * b + 1 + k % (b - 1)] = rest[i * m + k];
            }
        }
        Ok((c, q))
    }
}

/// Fits the first frame: L1/D-SSIM training of every attribute with periodic
/// densification. High-frequency SH go through latents and a decoder when
/// `quantize_first_frame_sh` is set.
pub fn train_first_frame<T: Scalar>(
    frames: &[Image<T>],
    cams: &[Camera<T>],
    init_points: &[InitPoint],
    cfg: &TrainConfig,
) -> Result<FirstFrameOutput<T>> {
    let start = Instant::now();
    cfg.check()?;
    check_views(frames, cams)?;
    if cams.is_empty() {
        return Err(invalid("first-frame training needs at least one view"));
    }
    let init: GaussianCloud<T> = init_cloud(init_points, cfg)?;
    let n = init.len();
    let b = init.basis();
    let m = 3 * (b - 1);
    let extent = scene_extent(cams);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let flat3 = |v: &[[T; 3]]| v.iter().flatten().copied().collect::<Vec<T>>();
    let dc: Vec<T> = (0..n).flat_map(|i| (0..3).map(move |ch| (i, ch))).map(|(i, ch)| init.sh(i)[ch * b]).collect();
    let quantize = cfg.quantize_first_frame_sh && m > 0;
    let kind = AttributeKind::ColorFreq;
    let (rest, decoder) = if quantize {
        let l = cfg.latent_dim(kind);
        let dec = LinearDecoder::<T>::random(m, l, &mut rng);
        (
            Param::new(vec![T::zero(); n * l], l, T::lit(cfg.latent_lr(kind))),
            Some(Param::new(dec.weights, m, T::lit(cfg.decoder_lr(kind)))),
        )
    } else {
        (Param::new(vec![T::zero(); n * m], m, T::lit(cfg.lr_sh_rest)), None)
    };
    let pos_lr0 = cfg.lr_position * extent.to_f64_lossy();
    let pos_lr1 = cfg.lr_position_final * extent.to_f64_lossy();
    let mut model = Model {
        pos: Param::new(flat3(&init.positions), 3, T::lit(pos_lr0)),
        rot: Param::new(init.rotations.iter().flatten().copied().collect(), 4, T::lit(cfg.lr_rotation)),
        scale: Param::new(flat3(&init.log_scales), 3, T::lit(cfg.lr_scale)),
        opac: Param::new(init.opacity_logits.clone(), 1, T::lit(cfg.lr_opacity)),
        dc: Param::new(dc, 3, T::lit(cfg.lr_sh_dc)),
        rest,
        decoder,
        sh_degree: cfg.sh_degree,
    };

    let v = cams.len();
    let total = cfg.first_frame_epochs * v;
    let lambda = T::lit(cfg.lambda_dssim);
    let mut acc = vec![T::zero(); n];
    let mut seen = vec![0usize; n];
    let mut rows = Vec::new();
    let mut it = 0usize;
    for epoch in 1..=cfg.first_frame_epochs {
        let mut order: Vec<usize> = (0..v).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for &vi in &order {
            let frac = it as f64 / total.max(1) as f64;
            model.pos.lr = T::lit(pos_lr0 * (pos_lr1 / pos_lr0).powf(frac));
            it += 1;
            let (cloud, q) = model.assemble()?;
            let s = view_step(&cloud, &cams[vi], &frames[vi], None, lambda)?;
            loss_sum += s.loss.to_f64_lossy();
            mse_sum += s.mse;
            let g = &s.grads;
            let stride = 3 * b;
            model.pos.step(&g.positions.iter().flatten().copied().collect::<Vec<_>>())?;
            model.rot.step(&g.rotations.iter().flatten().copied().collect::<Vec<_>>())?;
            model.scale.step(&g.log_scales.iter().flatten().copied().collect::<Vec<_>>())?;
            model.opac.step(&g.opacity_logits)?;
            let gdc: Vec<T> = (0..cloud.len())
                .flat_map(|i| (0..3).map(move |ch| i * stride + ch * b))
                .map(|k| g.sh_coeffs[k])
                .collect();
            model.dc.step(&gdc)?;
            if m > 0 {
                let grest = kind_grads(g, kind, b);
                match model.decoder() {
                    Some(dec) => {
                        let (dl, dd) = ste_grads(&grest, &dec, &q)?;
                        model.rest.step(&dl)?;
                        model.decoder.as_mut().expect("quantized").step(&dd)?;
                    }
                    None => model.rest.step(&grest)?,
                }
            }
            for &gi in &s.visible {
                let d = ndc_gradient(g.viewspace[gi], &cams[vi]);
                acc[gi] += (d[0] * d[0] + d[1] * d[1]).sqrt();
                seen[gi] += 1;
            }
        }
        rows.push(StatsRow {
            frame: 0,
            iter: it,
            loss: loss_sum / v as f64,
            psnr: mean_psnr(mse_sum, v),
            active_gates: 0,
            packet_bytes: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if cfg.ff_densify_after_epoch(epoch) && epoch < cfg.first_frame_epochs {
            let (cloud, _) = model.assemble()?;
            let avg: Vec<T> = acc
                .iter()
                .zip(&seen)
                .map(|(&a, &c)| if c > 0 { a / T::from_usize_lossy(c) } else { T::zero() })
                .collect();
            let params = DensifyParams {
                grad_threshold: T::lit(cfg.ff_densify_threshold),
                opacity_floor: T::lit(cfg.prune_opacity),
                split_scale: T::lit(cfg.percent_dense) * extent,
            };
            let r = densify_and_prune(&cloud, &avg, &params, &mut rng)?;
            if !r.is_noop() {
                for p in [&mut model.pos, &mut model.rot, &mut model.scale, &mut model.opac, &mut model.dc] {
                    p.retain_rows(&r.keep);
                }
                let old_rest = model.rest.clone();
                model.rest.retain_rows(&r.keep);
                for (g, &src) in r.added.iter().zip(&r.sources) {
                    model.pos.append_rows(&g.position);
                    model.rot.append_rows(&g.rotation);
                    model.scale.append_rows(&g.log_scale);
                    model.opac.append_rows(&[g.opacity_logit]);
                    model.dc.append_rows(&[g.sh[0], g.sh[b], g.sh[2 * b]]);
                    // Children inherit the parent's latents (or raw bands).
                    model.rest.append_rows(old_rest.row(src));
                }
            }
            acc = vec![T::zero(); r.cloud.len()];
            seen = vec![0; r.cloud.len()];
        }
    }
    let (cloud, q) = model.assemble()?;
    let sh_latents = model.decoder().map(|d| (q, d));
    Ok(FirstFrameOutput { cloud, sh_latents, rows, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}
