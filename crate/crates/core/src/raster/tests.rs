use super::*;
use crate::scene::{math, GaussianRecord, SH_C0};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn axis_camera(size: usize, f: f64) -> Camera<f64> {
    let c = (size / 2) as f64;
    Camera {
        fx: f,
        fy: f,
        cx: c,
        cy: c,
        rotation: math::identity3(),
        translation: [0.0; 3],
        width: size,
        height: size,
        near: 0.01,
    }
}

fn dc_for(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}

fn flat_gaussian(pos: [f64; 3], log_scale: f64, opacity: f64, color: [f64; 3]) -> GaussianRecord<f64> {
    GaussianRecord {
        position: pos,
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: [log_scale; 3],
        opacity_logit: opacity.logit(),
        sh: color.iter().map(|&c| dc_for(c)).collect(),
    }
}

pub(crate) fn random_scene(seed: u64, n: usize, degree: usize) -> (GaussianCloud<f64>, Camera<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at([0.3, -0.2, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 40.0, 40.0, 32, 32);
    let mut cloud = GaussianCloud::empty(degree);
    let b = crate::scene::basis_count(degree);
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

#[test]
fn single_gaussian_on_pixel_center() {
    let cam = axis_camera(32, 40.0);
    let mut cloud = GaussianCloud::empty(0);
    let o = 0.7;
    let c = [0.9, 0.4, 0.2];
    cloud.push(&flat_gaussian([0.0, 0.0, 4.0], -2.0, o, c));
    let out = rasterize(&cloud, &cam, None).unwrap();
    for ch in 0..3 {
        assert!((out.image.get(16, 16, ch) - c[ch] * o).abs() < 1e-12);
    }
    assert!((out.alpha[16 * 32 + 16] - o).abs() < 1e-12);
}

#[test]
fn two_coincident_gaussians_composite_in_index_order() {
    let cam = axis_camera(32, 40.0);
    let mut cloud = GaussianCloud::empty(0);
    let (o1, o2) = (0.6, 0.5);
    let (c1, c2) = ([1.0, 0.0, 0.25], [0.0, 1.0, 0.75]);
    cloud.push(&flat_gaussian([0.0, 0.0, 4.0], -2.0, o1, c1));
    cloud.push(&flat_gaussian([0.0, 0.0, 4.0], -2.0, o2, c2));
    let out = rasterize(&cloud, &cam, None).unwrap();
    for ch in 0..3 {
        let expect = c1[ch] * o1 + c2[ch] * o2 * (1.0 - o1);
        assert!((out.image.get(16, 16, ch) - expect).abs() < 1e-12);
    }
    let list = out.aux.pixel_contributors(16 * 32 + 16);
    assert_eq!(list.len(), 2);
    assert_eq!(out.aux.splats[list[0].splat as usize].gaussian, 0);
}

#[test]
fn empty_cloud_renders_black() {
    let cam = axis_camera(16, 20.0);
    let out = rasterize(&GaussianCloud::<f64>::empty(2), &cam, None).unwrap();
    assert!(out.image.data.iter().all(|&v| v == 0.0));
    assert!(out.alpha.iter().all(|&v| v == 0.0));
}

#[test]
fn culled_gaussians_are_skipped() {
    let cam = axis_camera(32, 40.0);
    let mut cloud = GaussianCloud::empty(0);
    cloud.push(&flat_gaussian([0.0, 0.0, -4.0], -2.0, 0.9, [1.0; 3]));
    cloud.push(&flat_gaussian([50.0, 0.0, 4.0], -2.0, 0.9, [1.0; 3]));
    let out = rasterize(&cloud, &cam, None).unwrap();
    assert!(out.aux.splats.is_empty());
    let g = rasterize_backward(&out, &Image::filled(32, 32, 3, 1.0), &cloud, &cam).unwrap();
    assert!(g.positions.iter().flatten().all(|&v| v == 0.0));
    assert!(g.opacity_logits.iter().all(|&v| v == 0.0));
}

/// Per pixel: project everything, keep Gaussians covering the pixel, sort the
/// whole list by (depth, index) and composite.
fn naive_render(cloud: &GaussianCloud<f64>, cam: &Camera<f64>) -> (Image<f64>, Vec<Vec<usize>>) {
    let splats: Vec<_> = (0..cloud.len()).filter_map(|i| project_gaussian(cloud, i, cam)).collect();
    let mut img = Image::zeros(cam.width, cam.height, 3);
    let mut orders = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut here: Vec<&Splat<f64>> = splats.iter().filter(|s| s.covers(x, y)).collect();
            here.sort_by(|a, b| a.order(b));
            let mut t = 1.0;
            let mut order = Vec::new();
            for s in here {
                let (a, _) = s.alpha_at(x, y);
                if a < MIN_ALPHA {
                    continue;
                }
                for c in 0..3 {
                    let v = img.get(x, y, c) + s.color[c] * a * t;
                    img.set(x, y, c, v);
                }
                order.push(s.gaussian);
                t *= 1.0 - a;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            orders.push(order);
        }
    }
    (img, orders)
}

#[test]
fn tiled_renderer_matches_naive_full_sort() {
    for seed in 0..5 {
        let (cloud, cam) = random_scene(100 + seed, 20, 2);
        let out = rasterize(&cloud, &cam, None).unwrap();
        let (img, orders) = naive_render(&cloud, &cam);
        for (p, order) in orders.iter().enumerate() {
            let got: Vec<usize> = out
                .aux
                .pixel_contributors(p)
                .iter()
                .map(|c| out.aux.splats[c.splat as usize].gaussian)
                .collect();
            assert_eq!(&got, order, "pixel {p}");
        }
        for (a, b) in out.image.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn masked_render_is_restriction_of_full_render() {
    let (cloud, cam) = random_scene(7, 20, 2);
    let full = rasterize(&cloud, &cam, None).unwrap();
    let mut mask = PixelMask::new(32, 32, false);
    for y in 5..20 {
        for x in 8..27 {
            mask.set(x, y, true);
        }
    }
    let part = rasterize(&cloud, &cam, Some(&mask)).unwrap();
    assert_eq!(part.rendered_pixels, mask.count());
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                let expect = if mask.get(x, y) { full.image.get(x, y, c) } else { 0.0 };
                assert_eq!(part.image.get(x, y, c).to_bits(), expect.to_bits());
            }
            if !mask.get(x, y) {
                assert!(part.aux.pixel_contributors(y * 32 + x).is_empty());
            }
        }
    }
}

#[test]
fn alpha_never_exceeds_one() {
    for seed in 0..4 {
        let (mut cloud, cam) = random_scene(seed, 25, 1);
        for l in cloud.opacity_logits.iter_mut() {
            *l = 8.0;
        }
        let out = rasterize(&cloud, &cam, None).unwrap();
        assert!(out.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn zero_image_gradient_gives_zero_attribute_gradients() {
    let (cloud, cam) = random_scene(3, 12, 2);
    let out = rasterize(&cloud, &cam, None).unwrap();
    let g = rasterize_backward(&out, &Image::zeros(32, 32, 3), &cloud, &cam).unwrap();
    assert!(g.positions.iter().flatten().all(|&v| v == 0.0));
    assert!(g.rotations.iter().flatten().all(|&v| v == 0.0));
    assert!(g.log_scales.iter().flatten().all(|&v| v == 0.0));
    assert!(g.sh_coeffs.iter().all(|&v| v == 0.0));
    assert!(g.viewspace.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn backward_rejects_mismatched_aux() {
    let (cloud, cam) = random_scene(3, 12, 2);
    let out = rasterize(&cloud, &cam, None).unwrap();
    let smaller = cloud.subset(&[0, 1]);
    assert!(rasterize_backward(&out, &Image::zeros(32, 32, 3), &smaller, &cam).is_err());
    assert!(rasterize_backward(&out, &Image::zeros(16, 32, 3), &cloud, &cam).is_err());
}

#[test]
fn f32_renderer_tracks_f64() {
    let (cloud, cam) = random_scene(11, 15, 2);
    let a = rasterize(&cloud, &cam, None).unwrap();
    let b = rasterize(&cloud.cast::<f32>(), &cam.cast::<f32>(), None).unwrap();
    let mut worst = 0.0f64;
    for (x, y) in a.image.data.iter().zip(&b.image.data) {
        worst = worst.max((x - *y as f64).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}
