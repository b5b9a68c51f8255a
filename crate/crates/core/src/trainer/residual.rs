use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Param;
use super::config::{ResidualMode, TrainConfig};
use super::densify::{densify_and_prune, scene_extent, DensifyParams};
use super::{add_kind, check_views, evaluate, kind_grads, mean_psnr, view_step, StatsRow};
use crate::codec::{apply_residuals, coo_encode, record_to_f16, AttributeResidual, ResidualSet};
use crate::dynamics::{dynamic_masks, gate_init_probs, ndc_gradient, score_vector};
use crate::error::{mismatch, Result};
use crate::gating::{
    gate_backward, gate_backward_noisy, gate_l0_loss, gate_value, gate_value_noisy, gates_from_probs,
    logistic_noise, GateHyper,
};
use crate::image::Image;
use crate::quantizer::{decode_residuals, latent_std_penalty, quantize_round, ste_grads, AttributeKind, LinearDecoder};
use crate::scene::{Camera, GaussianCloud};
use crate::Scalar;

/// Gate probability given to Gaussians created by densification mid-frame.
const ADDED_GATE_PROB: f64 = 0.99;

/// Decoder weights carried from frame to frame as a warm start.
#[derive(Debug, Clone)]
pub struct ResidualContext<T> {
    pub decoders: Vec<LinearDecoder<T>>,
}

impl<T: Scalar> ResidualContext<T> {
    /// Random decoders for every attribute, seeded from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Self {
        let basis = crate::scene::basis_count(cfg.sh_degree);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdec0_de00);
        let decoders = AttributeKind::ALL
            .into_iter()
            .map(|k| {
                LinearDecoder::random_scaled(k.residual_dim(basis), cfg.latent_dim(k), cfg.decoder_init_scale, &mut rng)
            })
            .collect();
        Self { decoders }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStats {
    pub frame: u32,
    pub iterations: usize,
    /// Mean full-frame loss of the previous cloud against this frame.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean train-view PSNR of the returned cloud.
    pub psnr_db: f64,
    pub active_gates: usize,
    pub dynamic_count: usize,
    pub masked_pixels: usize,
    pub rendered_pixels: usize,
    /// Pixels an unmasked schedule would have rendered.
    pub full_pixels: usize,
    pub added: usize,
    pub removed: usize,
    pub wall_ms: f64,
    pub rows: Vec<StatsRow>,
}

#[derive(Debug, Clone)]
pub struct ResidualOutput<T> {
    pub cloud: GaussianCloud<T>,
    pub residuals: ResidualSet,
    pub stats: FrameStats,
    /// Final gate value of every row of the previous cloud, 0 for removed rows.
    pub gates: Vec<T>,
}

struct Work<T> {
    mode: ResidualMode,
    base: GaussianCloud<T>,
    /// Row index in the previous cloud; `None` for rows added this frame.
    origin: Vec<Option<usize>>,
    /// Latents (quantized) or raw residuals, per attribute kind.
    res: Vec<Option<Param<T>>>,
    dec: Vec<Option<Param<T>>>,
    log_alpha: Param<T>,
    pre_gated: Param<T>,
}

struct Effective<T> {
    cloud: GaussianCloud<T>,
    gates: Vec<T>,
    latents: Vec<Vec<i32>>,
}

impl<T: Scalar> Work<T> {
    fn decoder(&self, k: usize) -> Option<LinearDecoder<T>> {
        let (d, r) = (self.dec[k].as_ref()?, self.res[k].as_ref()?);
        Some(LinearDecoder { out_dim: d.width, in_dim: r.width, weights: d.values.clone() })
    }

    fn effective(&self, hyp: &GateHyper<T>, noise: Option<&[T]>) -> Result<Effective<T>> {
        let mut cloud = self.base.clone();
        let mut latents = vec![Vec::new(); 5];
        for kind in AttributeKind::ALL {
            let k = kind.code() as usize;
            let Some(r) = &self.res[k] else { continue };
            let d = match self.decoder(k) {
                Some(dec) => {
                    latents[k] = quantize_round(&r.values);
                    decode_residuals(&latents[k], &dec)?
                }
                None => r.values.clone(),
            };
            add_kind(&mut cloud, kind, &d);
        }
        let gates: Vec<T> = match self.mode {
            ResidualMode::Raw => vec![T::one(); cloud.len()],
            ResidualMode::Quantized => match noise {
                Some(u) => self.log_alpha.values.iter().zip(u).map(|(&la, &e)| gate_value_noisy(la, e, hyp)).collect(),
                None => self.log_alpha.values.iter().map(|&la| gate_value(la, hyp)).collect(),
            },
        };
        for (i, &g) in gates.iter().enumerate() {
            for k in 0..3 {
                cloud.positions[i][k] += g * self.pre_gated.values[3 * i + k];
            }
        }
        Ok(Effective { cloud, gates, latents })
    }

    fn retain(&mut self, keep: &[bool]) {
        self.base = self.base.retain_mask(keep);
        let mut it = keep.iter();
        self.origin.retain(|_| *it.next().unwrap());
        for p in self.res.iter_mut().flatten() {
            p.retain_rows(keep);
        }
        self.log_alpha.retain_rows(keep);
        self.pre_gated.retain_rows(keep);
    }

    fn active_original_gates(&self, hyp: &GateHyper<T>) -> usize {
        match self.mode {
            ResidualMode::Raw => self.origin.iter().filter(|o| o.is_some()).count(),
            ResidualMode::Quantized => self
                .log_alpha
                .values
                .iter()
                .zip(&self.origin)
                .filter(|(&la, o)| o.is_some() && gate_value(la, hyp) > T::zero())
                .count(),
        }
    }
}

/// Trains the residuals taking `prev` (fitted to `frames_prev`) to
/// `frames_t`, then returns the serializable residual set together with the
/// cloud obtained by applying it to `prev`.
#[allow(clippy::too_many_arguments)]
pub fn train_residual_frame<T: Scalar>(
    prev: &GaussianCloud<T>,
    frames_prev: &[Image<T>],
    frames_t: &[Image<T>],
    cams: &[Camera<T>],
    cfg: &TrainConfig,
    frame_index: u32,
    ctx: &mut ResidualContext<T>,
) -> Result<ResidualOutput<T>> {
    let start = Instant::now();
    cfg.check()?;
    check_views(frames_prev, cams)?;
    check_views(frames_t, cams)?;
    prev.check()?;
    if prev.sh_degree != cfg.sh_degree {
        return Err(mismatch(format!("cloud SH degree {} vs config {}", prev.sh_degree, cfg.sh_degree)));
    }
    if ctx.decoders.len() != 5 {
        return Err(mismatch("residual context must hold one decoder per attribute"));
    }
    let n0 = prev.len();
    let basis = prev.basis();
    let v = cams.len();
    let hyp = GateHyper { tau: T::lit(cfg.gate_tau), gamma0: T::lit(cfg.gate_gamma0), gamma1: T::lit(cfg.gate_gamma1) };
    let extent = scene_extent(cams);
    let lambda = T::lit(cfg.lambda_dssim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (frame_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));

    let scores = score_vector(prev, cams, frames_prev, frames_t)?;
    let masks = dynamic_masks(prev, &scores, T::lit(cfg.score_threshold), cams, cfg.mask_dilation)?;
    let log_alpha = match cfg.residual_mode {
        ResidualMode::Quantized => gates_from_probs(&gate_init_probs(&scores), &hyp),
        ResidualMode::Raw => vec![T::zero(); n0],
    };

    let mut work = Work {
        mode: cfg.residual_mode,
        base: prev.clone(),
        origin: (0..n0).map(Some).collect(),
        res: Vec::new(),
        dec: Vec::new(),
        log_alpha: Param::new(log_alpha, 1, T::lit(cfg.gate_lr)),
        pre_gated: Param::new(vec![T::zero(); 3 * n0], 3, T::lit(cfg.position_residual_lr) * extent),
    };
    for kind in AttributeKind::ALL {
        let m = kind.residual_dim(basis);
        let k = kind.code() as usize;
        if m == 0 {
            work.res.push(None);
            work.dec.push(None);
            continue;
        }
        match cfg.residual_mode {
            ResidualMode::Quantized => {
                let l = cfg.latent_dim(kind);
                let dec = &ctx.decoders[k];
                if dec.out_dim != m || dec.in_dim != l {
                    return Err(mismatch(format!("{} decoder is {}x{}, expected {m}x{l}", kind.name(), dec.out_dim, dec.in_dim)));
                }
                work.res.push(Some(Param::new(vec![T::zero(); n0 * l], l, T::lit(cfg.latent_lr(kind)))));
                work.dec.push(Some(Param::new(dec.weights.clone(), m, T::lit(cfg.decoder_lr(kind)))));
            }
            ResidualMode::Raw => {
                work.res.push(Some(Param::new(vec![T::zero(); n0 * m], m, T::lit(cfg.raw_lr(kind)))));
                work.dec.push(None);
            }
        }
    }

    let (initial_loss, _) = evaluate(prev, cams, frames_t, cfg.lambda_dssim)?;
    let total = cfg.residual_epochs * v;
    let masked_iters = (cfg.masked_fraction * total as f64).round() as usize;
    let quantized = cfg.residual_mode == ResidualMode::Quantized;
    let mut acc = vec![T::zero(); n0];
    let mut seen = vec![0usize; n0];
    let mut rows = Vec::new();
    let mut it = 0usize;
    let (mut rendered_pixels, mut full_pixels) = (0usize, 0usize);
    for epoch in 1..=cfg.residual_epochs {
        let mut order: Vec<usize> = (0..v).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for &vi in &order {
            let mask = (it < masked_iters).then(|| &masks.masks[vi]);
            it += 1;
            let noise: Option<Vec<T>> = (quantized && cfg.gate_stochastic)
                .then(|| (0..work.base.len()).map(|_| logistic_noise(&mut rng)).collect());
            let eff = work.effective(&hyp, noise.as_deref())?;
            let s = view_step(&eff.cloud, &cams[vi], &frames_t[vi], mask, lambda)?;
            rendered_pixels += s.rendered_pixels;
            full_pixels += cams[vi].width * cams[vi].height;
            let mut total_loss = s.loss;
            let g = &s.grads;

            for kind in AttributeKind::ALL {
                let k = kind.code() as usize;
                if work.res[k].is_none() {
                    continue;
                }
                let dl_dr = kind_grads(g, kind, basis);
                match work.decoder(k) {
                    Some(dec) => {
                        let (mut dl, dd) = ste_grads(&dl_dr, &dec, &eff.latents[k])?;
                        if cfg.lambda_std > 0.0 {
                            let r = work.res[k].as_ref().expect("latents");
                            let (pen, gs) = latent_std_penalty(&r.values, r.width)?;
                            total_loss += T::lit(cfg.lambda_std) * pen;
                            for (a, b) in dl.iter_mut().zip(gs) {
                                *a += T::lit(cfg.lambda_std) * b;
                            }
                        }
                        work.res[k].as_mut().expect("latents").step(&dl)?;
                        work.dec[k].as_mut().expect("decoder").step(&dd)?;
                    }
                    None => work.res[k].as_mut().expect("raw residual").step(&dl_dr)?,
                }
            }

            let rows_n = work.base.len();
            let mut d_pre = vec![T::zero(); 3 * rows_n];
            let mut d_gate = vec![T::zero(); rows_n];
            for i in 0..rows_n {
                let gp = g.positions[i];
                let lp = &work.pre_gated.values[3 * i..3 * i + 3];
                for k in 0..3 {
                    d_pre[3 * i + k] = eff.gates[i] * gp[k];
                    d_gate[i] += gp[k] * lp[k];
                }
            }
            work.pre_gated.step(&d_pre)?;
            if quantized {
                // The L0 term covers rows of the previous cloud only.
                let (_, l0_grad) = gate_l0_loss(&work.log_alpha.values, &hyp);
                let reg = T::lit(cfg.lambda_reg);
                let mut d_la = Vec::with_capacity(rows_n);
                let mut l0_orig = T::zero();
                for i in 0..rows_n {
                    let la = work.log_alpha.values[i];
                    let mut d = match &noise {
                        Some(u) => gate_backward_noisy(la, u[i], &hyp, d_gate[i]),
                        None => gate_backward(la, &hyp, d_gate[i]),
                    };
                    if work.origin[i].is_some() {
                        d += reg * l0_grad[i];
                        l0_orig += (la - hyp.l0_shift()).sigmoid();
                    }
                    d_la.push(d);
                }
                total_loss += reg * l0_orig;
                work.log_alpha.step(&d_la)?;
            }
            loss_sum += total_loss.to_f64_lossy();
            mse_sum += s.mse;
            for &gi in &s.visible {
                let d = ndc_gradient(g.viewspace[gi], &cams[vi]);
                acc[gi] += (d[0] * d[0] + d[1] * d[1]).sqrt();
                seen[gi] += 1;
            }
        }
        rows.push(StatsRow {
            frame: frame_index,
            iter: it,
            loss: loss_sum / v as f64,
            psnr: mean_psnr(mse_sum, v),
            active_gates: work.active_original_gates(&hyp),
            packet_bytes: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if cfg.densify_after_epoch(epoch) && epoch < cfg.residual_epochs {
            let eff = work.effective(&hyp, None)?;
            let avg: Vec<T> = acc
                .iter()
                .zip(&seen)
                .map(|(&a, &c)| if c > 0 { a / T::from_usize_lossy(c) } else { T::zero() })
                .collect();
            let params = DensifyParams {
                grad_threshold: T::lit(cfg.densify_threshold),
                opacity_floor: T::lit(cfg.prune_opacity),
                split_scale: T::lit(cfg.percent_dense) * extent,
            };
            let r = densify_and_prune(&eff.cloud, &avg, &params, &mut rng)?;
            if !r.is_noop() {
                work.retain(&r.keep);
                let la_new = match cfg.residual_mode {
                    ResidualMode::Quantized => gates_from_probs(&[T::lit(ADDED_GATE_PROB)], &hyp)[0],
                    ResidualMode::Raw => T::zero(),
                };
                for g in &r.added {
                    work.base.push(g);
                    work.origin.push(None);
                    for p in work.res.iter_mut().flatten() {
                        let w = p.width;
                        p.append_rows(&vec![T::zero(); w]);
                    }
                    work.log_alpha.append_rows(&[la_new]);
                    work.pre_gated.append_rows(&[T::zero(); 3]);
                }
            }
            acc = vec![T::zero(); work.base.len()];
            seen = vec![0; work.base.len()];
        }
    }

    // Serialize: per-original-row residuals, removals, then f16 additions.
    let eff = work.effective(&hyp, None)?;
    let mut row_of = vec![None; n0];
    for (r, o) in work.origin.iter().enumerate() {
        if let Some(i) = o {
            row_of[*i] = Some(r);
        }
    }
    let mut set = ResidualSet::empty(frame_index, prev.sh_degree, n0);
    for kind in AttributeKind::ALL {
        let k = kind.code() as usize;
        let Some(p) = &work.res[k] else { continue };
        let w = p.width;
        let gather = |src: &dyn Fn(usize) -> Vec<f64>| -> Vec<f64> {
            row_of.iter().flat_map(|r| r.map_or_else(|| vec![0.0; w], src)).collect()
        };
        match work.decoder(k) {
            Some(dec) => {
                let q = &eff.latents[k];
                let latents = row_of
                    .iter()
                    .flat_map(|r| r.map_or_else(|| vec![0; w], |r| q[r * w..(r + 1) * w].to_vec()))
                    .collect();
                let weights: Vec<f32> = dec.weights.iter().map(|x| x.to_f32_lossy()).collect();
                // The next frame starts from exactly what the decoder side sees.
                let stored = weights.iter().map(|&x| T::lit(x as f64)).collect();
                ctx.decoders[k] = LinearDecoder::new(dec.out_dim, dec.in_dim, stored)?;
                set.attributes.push(AttributeResidual::Quantized {
                    kind,
                    dim: w,
                    latents,
                    decoder: LinearDecoder::new(dec.out_dim, dec.in_dim, weights)?,
                });
            }
            None => {
                let vals = gather(&|r| p.row(r).iter().map(|x| x.to_f64_lossy()).collect());
                set.attributes.push(AttributeResidual::Raw { kind, values: vals.iter().map(|&x| x as f32).collect() });
            }
        }
    }
    let dense: Vec<[T; 3]> = row_of
        .iter()
        .map(|r| match r {
            Some(r) => std::array::from_fn(|k| eff.gates[*r] * work.pre_gated.values[3 * r + k]),
            None => [T::zero(); 3],
        })
        .collect();
    set.positions = coo_encode(&dense);
    set.removals = (0..n0).filter(|&i| row_of[i].is_none()).map(|i| i as u32).collect();
    set.additions = (0..work.base.len())
        .filter(|&r| work.origin[r].is_none())
        .map(|r| record_to_f16(&eff.cloud.record(r)))
        .collect();

    let cloud = apply_residuals(prev, &set)?;
    let (final_loss, psnr_db) = evaluate(&cloud, cams, frames_t, cfg.lambda_dssim)?;
    let active_gates = set.positions.len();
    let stats = FrameStats {
        frame: frame_index,
        iterations: it,
        initial_loss,
        final_loss,
        psnr_db,
        active_gates: if quantized { work.active_original_gates(&hyp) } else { active_gates },
        dynamic_count: masks.dynamic.len(),
        masked_pixels: masks.covered_pixels(),
        rendered_pixels,
        full_pixels,
        added: set.additions.len(),
        removed: set.removals.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        rows,
    };
    let gates = row_of.iter().map(|r| r.map_or(T::zero(), |r| eff.gates[r])).collect();
    Ok(ResidualOutput { cloud, residuals: set, stats, gates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::pack_frame;
    use crate::synth::{generate, SynthConfig, SynthScene};

    fn scene(seed: u64) -> SynthScene {
        generate(&SynthConfig {
            n_gaussians: 40,
            amplitude: 0.075,
            n_views: 4,
            image_size: 32,
            n_frames: 2,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            sh_degree: 1,
            residual_epochs: epochs,
            score_threshold: 5e-5,
            mask_dilation: 2,
            lambda_reg: 1e-5,
            densify_threshold: 0.02,
            ..TrainConfig::preset_a()
        }
    }

    fn run(s: &SynthScene, cfg: &TrainConfig, t: usize) -> ResidualOutput<f64> {
        let mut ctx = ResidualContext::new(cfg);
        train_residual_frame(&s.clouds[0], &s.frames[0], &s.frames[t], &s.cameras, cfg, t as u32, &mut ctx).unwrap()
    }

    #[test]
    fn zero_epochs_reproduce_the_previous_cloud() {
        let s = scene(1);
        let out = run(&s, &cfg(0), 1);
        assert_eq!(out.cloud, s.clouds[0]);
        assert!(out.residuals.positions.is_empty());
        assert!(out.residuals.additions.is_empty() && out.residuals.removals.is_empty());
        for a in &out.residuals.attributes {
            if let AttributeResidual::Quantized { latents, .. } = a {
                assert!(latents.iter().all(|&l| l == 0));
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let s = scene(2);
        let a = run(&s, &cfg(3), 1);
        let b = run(&s, &cfg(3), 1);
        assert_eq!(pack_frame(&a.residuals).unwrap(), pack_frame(&b.residuals).unwrap());
        assert_eq!(a.cloud, b.cloud);
    }

    #[test]
    fn final_loss_does_not_exceed_initial() {
        for seed in [3, 4] {
            let s = scene(seed);
            let out = run(&s, &cfg(6), 1);
            assert!(out.stats.final_loss <= out.stats.initial_loss, "seed {seed}: {:?}", out.stats);
        }
    }

    #[test]
    fn identical_frames_close_every_gate() {
        let s = scene(5);
        let mut ctx = ResidualContext::new(&cfg(6));
        let out =
            train_residual_frame(&s.clouds[0], &s.frames[0], &s.frames[0], &s.cameras, &cfg(6), 1, &mut ctx).unwrap();
        assert_eq!(out.stats.active_gates, 0);
        assert!(out.residuals.positions.is_empty());
        let (_, before) = evaluate(&s.clouds[0], &s.cameras, &s.frames[0], 0.2).unwrap();
        assert!((out.stats.psnr_db - before).abs() < 0.05, "{} vs {before}", out.stats.psnr_db);
    }

    #[test]
    fn raw_mode_stores_raw_sections() {
        let s = scene(6);
        let c = TrainConfig { residual_mode: ResidualMode::Raw, ..cfg(2) };
        let out = run(&s, &c, 1);
        assert!(out.residuals.attributes.iter().all(|a| matches!(a, AttributeResidual::Raw { .. })));
        assert_eq!(apply_residuals(&s.clouds[0], &out.residuals).unwrap(), out.cloud);
    }

    #[test]
    fn mismatched_views_are_rejected() {
        let s = scene(7);
        let c = cfg(1);
        let mut ctx = ResidualContext::new(&c);
        let e = train_residual_frame(&s.clouds[0], &s.frames[0], &s.frames[1][..2], &s.cameras, &c, 1, &mut ctx);
        assert!(e.is_err());
        let mut ctx = ResidualContext::<f64>::new(&TrainConfig { sh_degree: 2, ..c.clone() });
        let e = train_residual_frame(&s.clouds[0], &s.frames[0], &s.frames[1], &s.cameras, &c, 1, &mut ctx);
        assert!(e.is_err());
    }
}
