#![allow(dead_code)]

use fvv_core::image::Image;
use fvv_core::raster::{rasterize, rasterize_backward, AttributeGrads};
use fvv_core::scene::{Camera, GaussianCloud, GaussianRecord};
use fvv_core::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_scene(seed: u64, n: usize, degree: usize, size: usize) -> (GaussianCloud<f64>, Camera<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 1.25 * size as f64;
    let cam = Camera::look_at([0.3, -0.2, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], f, f, size, size);
    let mut cloud = GaussianCloud::empty(degree);
    let b = (degree + 1) * (degree + 1);
    for _ in 0..n {
        let mut sh: Vec<f64> = (0..3 * b).map(|_| rng.random_range(-0.3..0.3)).collect();
        for ch in 0..3 {
            sh[ch * b] = rng.random_range(-1.0..1.2);
        }
        cloud.push(&GaussianRecord {
            position: [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.5)],
            rotation: [
                rng.random_range(0.2..1.0),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
            ],
            log_scale: [
                rng.random_range(-2.8..-1.8),
                rng.random_range(-2.8..-1.8),
                rng.random_range(-2.8..-1.8),
            ],
            opacity_logit: rng.random_range(-1.5..2.5),
            sh,
        });
    }
    (cloud, cam)
}

pub fn random_image(seed: u64, w: usize, h: usize, lo: f64, hi: f64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Identifies the smooth piece of the renderer: which Gaussians composite at
/// each pixel, in which order, and which color channels are clamped.
fn piece_signature(cloud: &GaussianCloud<f64>, cam: &Camera<f64>) -> Vec<u64> {
    let out = rasterize(cloud, cam, None).unwrap();
    let mut sig = Vec::new();
    for p in 0..cam.width * cam.height {
        for c in out.aux.pixel_contributors(p) {
            sig.push(out.aux.splats[c.splat as usize].gaussian as u64);
        }
        sig.push(u64::MAX);
    }
    for s in &out.aux.splats {
        sig.push(s.color_clamped.iter().fold(0u64, |acc, &b| acc * 2 + b as u64));
    }
    sig
}

fn weighted_sum(img: &Image<f64>, weights: &Image<f64>) -> f64 {
    img.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
}

pub fn param_count(cloud: &GaussianCloud<f64>) -> usize {
    cloud.len() * 11 + cloud.sh_coeffs.len()
}

/// Mutable access to the k-th scalar parameter in a fixed enumeration.
pub fn param_mut(cloud: &mut GaussianCloud<f64>, k: usize) -> (&mut f64, &'static str) {
    let n = cloud.len();
    let mut k = k;
    if k < 3 * n {
        return (&mut cloud.positions[k / 3][k % 3], "position");
    }
    k -= 3 * n;
    if k < 4 * n {
        return (&mut cloud.rotations[k / 4][k % 4], "rotation");
    }
    k -= 4 * n;
    if k < 3 * n {
        return (&mut cloud.log_scales[k / 3][k % 3], "log_scale");
    }
    k -= 3 * n;
    if k < n {
        return (&mut cloud.opacity_logits[k], "opacity");
    }
    k -= n;
    (&mut cloud.sh_coeffs[k], "sh")
}

pub fn grad_entry(g: &AttributeGrads<f64>, k: usize) -> f64 {
    let n = g.len();
    let mut k = k;
    if k < 3 * n {
        return g.positions[k / 3][k % 3];
    }
    k -= 3 * n;
    if k < 4 * n {
        return g.rotations[k / 4][k % 4];
    }
    k -= 4 * n;
    if k < 3 * n {
        return g.log_scales[k / 3][k % 3];
    }
    k -= 3 * n;
    if k < n {
        return g.opacity_logits[k];
    }
    k -= n;
    g.sh_coeffs[k]
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Parameters sitting on a piece boundary at every tried step.
    pub non_smooth: usize,
    pub worst_rel: f64,
}

/// Central finite differences of `Σ w ⊙ render(cloud)` against the analytic
/// backward pass. The step starts at `h` and shrinks while the two probes land
/// on different smooth pieces of the renderer.
pub fn check_render_gradients(
    cloud: &GaussianCloud<f64>,
    cam: &Camera<f64>,
    weights: &Image<f64>,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheck {
    let out = rasterize(cloud, cam, None).unwrap();
    let grads = rasterize_backward(&out, weights, cloud, cam).unwrap();
    let mut report = GradCheck::default();
    for k in 0..param_count(cloud) {
        let mut step = h;
        let mut fd = None;
        while step >= 1e-8 {
            let mut plus = cloud.clone();
            let mut minus = cloud.clone();
            *param_mut(&mut plus, k).0 += step;
            *param_mut(&mut minus, k).0 -= step;
            if piece_signature(&plus, cam) == piece_signature(&minus, cam) {
                let fp = weighted_sum(&rasterize(&plus, cam, None).unwrap().image, weights);
                let fm = weighted_sum(&rasterize(&minus, cam, None).unwrap().image, weights);
                fd = Some((fp - fm) / (2.0 * step));
                break;
            }
            step /= 10.0;
        }
        let Some(fd) = fd else {
            report.non_smooth += 1;
            continue;
        };
        let an = grad_entry(&grads, k);
        let err = (an - fd).abs();
        report.checked += 1;
        let scale = an.abs().max(fd.abs());
        if err > abs_tol {
            report.worst_rel = report.worst_rel.max(err / scale);
        }
        if !(err <= abs_tol || err <= rel_tol * scale) {
            let mut c = cloud.clone();
            let name = param_mut(&mut c, k).1;
            report.failures.push(format!("param {k} ({name}): analytic {an:e} fd {fd:e}"));
        }
    }
    report
}

pub fn psnr_f64(a: &Image<f64>, b: &Image<f64>) -> f64 {
    fvv_core::losses::psnr(a, b).unwrap()
}

pub fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}
