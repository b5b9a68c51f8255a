//! Seeded synthetic dynamic scenes with ground-truth motion labels.

mod bundle;

pub use bundle::{
    cameras_from_text, cameras_to_text, load_bundle, save_bundle, InitPoint, SceneBundle,
};

use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kv::{parse_kv, parse_value};
use crate::raster::rasterize;
use crate::scene::sh::SH_C0;
use crate::scene::{basis_count, Camera, GaussianCloud, GaussianRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Translate,
    Orbit,
    ColorShift,
    OpacityPulse,
    Mixed,
}

impl MotionKind {
    pub const NAMES: [&'static str; 5] = ["translate", "orbit", "color_shift", "opacity_pulse", "mixed"];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Translate => "translate",
            MotionKind::Orbit => "orbit",
            MotionKind::ColorShift => "color_shift",
            MotionKind::OpacityPulse => "opacity_pulse",
            MotionKind::Mixed => "mixed",
        }
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "translate" => MotionKind::Translate,
            "orbit" => MotionKind::Orbit,
            "color_shift" => MotionKind::ColorShift,
            "opacity_pulse" => MotionKind::OpacityPulse,
            "mixed" => MotionKind::Mixed,
            _ => {
                return Err(Error::Config(format!(
                    "unknown motion kind {s:?}; valid kinds: {}",
                    MotionKind::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_gaussians: usize,
    pub dynamic_fraction: f64,
    pub motion: MotionKind,
    pub amplitude: f64,
    /// Pick the dynamic Gaussians as one spatial cluster instead of at random.
    pub localized: bool,
    pub n_views: usize,
    pub image_size: usize,
    pub n_frames: usize,
    pub sh_degree: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 300,
            dynamic_fraction: 0.1,
            motion: MotionKind::Translate,
            amplitude: 0.15,
            localized: false,
            n_views: 4,
            image_size: 64,
            n_frames: 3,
            sh_degree: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub const KEYS: [&'static str; 10] = [
        "n_gaussians",
        "dynamic_fraction",
        "motion",
        "amplitude",
        "localized",
        "n_views",
        "image_size",
        "n_frames",
        "sh_degree",
        "seed",
    ];

    pub fn dynamic_count(&self) -> usize {
        (self.dynamic_fraction * self.n_gaussians as f64).round() as usize
    }

    pub fn check(&self) -> Result<()> {
        if self.n_views == 0 || self.n_frames == 0 {
            return Err(Error::InvalidInput("synthetic scenes need at least one view and one frame".into()));
        }
        if !(0.0..=1.0).contains(&self.dynamic_fraction) {
            return Err(Error::InvalidInput("dynamic_fraction must lie in [0, 1]".into()));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidInput("image_size must be at least 16".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::InvalidInput("sh_degree must be at most 3".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidInput("amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "n_gaussians" => self.n_gaussians = parse_value(key, v)?,
            "dynamic_fraction" => self.dynamic_fraction = parse_value(key, v)?,
            "motion" => self.motion = v.parse()?,
            "amplitude" => self.amplitude = parse_value(key, v)?,
            "localized" => self.localized = crate::kv::parse_bool(key, v)?,
            "n_views" => self.n_views = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "n_frames" => self.n_frames = parse_value(key, v)?,
            "sh_degree" => self.sh_degree = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown synth key {key:?}; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut bad = Vec::new();
        for (k, v) in parse_kv(text)? {
            if !Self::KEYS.contains(&k.as_str()) {
                bad.push(k);
                continue;
            }
            cfg.set(&k, &v)?;
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("unknown synth keys: {}", bad.join(", "))));
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "n_gaussians = {}\ndynamic_fraction = {}\nmotion = {}\namplitude = {}\nlocalized = {}\n\
             n_views = {}\nimage_size = {}\nn_frames = {}\nsh_degree = {}\nseed = {}\n",
            self.n_gaussians,
            self.dynamic_fraction,
            self.motion.name(),
            self.amplitude,
            self.localized,
            self.n_views,
            self.image_size,
            self.n_frames,
            self.sh_degree,
            self.seed
        )
    }
}

/// Ground truth and observations of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub clouds: Vec<GaussianCloud<f64>>,
    pub cameras: Vec<Camera<f64>>,
    /// Held-out viewpoint between the first two training cameras.
    pub test_camera: Camera<f64>,
    /// `frames[t][v]`.
    pub frames: Vec<Vec<Image<f64>>>,
    pub test_frames: Vec<Image<f64>>,
    pub labels: Vec<bool>,
    pub init_points: Vec<InitPoint>,
}

/// Camera on a ring of radius 3 around the origin, at azimuth `angle`.
pub fn ring_camera(angle: f64, size: usize) -> Camera<f64> {
    let eye = [3.0 * angle.sin(), -0.6, -3.0 * angle.cos()];
    let f = 1.2 * size as f64;
    Camera::look_at(eye, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], f, f, size, size)
}

pub fn ring_angle(v: usize, n_views: usize) -> f64 {
    // Spread over a 120° arc so every view sees the front of the scene.
    if n_views == 1 {
        0.0
    } else {
        -PI / 3.0 + 2.0 * PI / 3.0 * v as f64 / (n_views - 1) as f64
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

/// Normalized time `t / (F − 1)`, zero for single-frame scenes.
pub fn phase(t: usize, n_frames: usize) -> f64 {
    if n_frames <= 1 {
        0.0
    } else {
        t as f64 / (n_frames - 1) as f64
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_gaussians;
    let b = basis_count(cfg.sh_degree);
    let mut base = GaussianCloud::empty(cfg.sh_degree);
    for _ in 0..n {
        let q = unit_vector(&mut rng);
        let w: f64 = rng.random_range(0.3..1.0);
        let norm = (w * w + 1.0).sqrt();
        let mut sh = vec![0.0; 3 * b];
        for ch in 0..3 {
            let color: f64 = rng.random_range(0.15..0.85);
            sh[ch * b] = (color - 0.5) / SH_C0;
            for k in 1..b {
                sh[ch * b + k] = rng.random_range(-0.04..0.04);
            }
        }
        base.push(&GaussianRecord {
            position: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            rotation: [w / norm, q[0] / norm, q[1] / norm, q[2] / norm],
            log_scale: [
                rng.random_range(-3.2f64..-2.4),
                rng.random_range(-3.2f64..-2.4),
                rng.random_range(-3.2f64..-2.4),
            ],
            opacity_logit: rng.random_range(0.5..3.0),
            sh,
        });
    }

    let k = cfg.dynamic_count();
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.localized && n > 0 {
        let c = base.positions[rng.random_range(0..n)];
        let d2 = |p: &[f64; 3]| (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>();
        order.sort_by(|&a, &b| d2(&base.positions[a]).total_cmp(&d2(&base.positions[b])).then(a.cmp(&b)));
    } else {
        order.shuffle(&mut rng);
    }
    let mut labels = vec![false; n];
    for &i in &order[..k] {
        labels[i] = true;
    }
    let dirs: Vec<[f64; 3]> = (0..n).map(|_| unit_vector(&mut rng)).collect();

    let clouds: Vec<GaussianCloud<f64>> = (0..cfg.n_frames)
        .map(|t| {
            let s = phase(t, cfg.n_frames);
            let mut c = base.clone();
            for i in (0..n).filter(|&i| labels[i]) {
                let kind = match cfg.motion {
                    MotionKind::Mixed => [
                        MotionKind::Translate,
                        MotionKind::Orbit,
                        MotionKind::ColorShift,
                        MotionKind::OpacityPulse,
                    ][i % 4],
                    m => m,
                };
                apply_motion(&mut c, i, kind, cfg.amplitude, s, dirs[i]);
            }
            c
        })
        .collect();

    let cameras: Vec<Camera<f64>> =
        (0..cfg.n_views).map(|v| ring_camera(ring_angle(v, cfg.n_views), cfg.image_size)).collect();
    let test_angle = if cfg.n_views > 1 {
        0.5 * (ring_angle(0, cfg.n_views) + ring_angle(1, cfg.n_views))
    } else {
        0.2
    };
    let test_camera = ring_camera(test_angle, cfg.image_size);
    let frames = clouds
        .par_iter()
        .map(|c| cameras.iter().map(|cam| Ok(rasterize(c, cam, None)?.image)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let test_frames = clouds
        .par_iter()
        .map(|c| Ok(rasterize(c, &test_camera, None)?.image))
        .collect::<Result<Vec<_>>>()?;

    let init_points = (0..n)
        .map(|i| {
            let p = base.positions[i];
            let sh = base.sh(i);
            InitPoint {
                position: [
                    p[0] + rng.random_range(-0.02..0.02),
                    p[1] + rng.random_range(-0.02..0.02),
                    p[2] + rng.random_range(-0.02..0.02),
                ],
                color: [0, 1, 2].map(|ch| (SH_C0 * sh[ch * b] + 0.5).clamp(0.0, 1.0)),
            }
        })
        .collect();

    Ok(SynthScene { config: cfg.clone(), clouds, cameras, test_camera, frames, test_frames, labels, init_points })
}

fn apply_motion(c: &mut GaussianCloud<f64>, i: usize, kind: MotionKind, a: f64, s: f64, dir: [f64; 3]) {
    match kind {
        MotionKind::Translate => {
            for k in 0..3 {
                c.positions[i][k] += a * s * dir[k];
            }
        }
        MotionKind::Orbit => {
            let th = 2.0 * PI * s;
            c.positions[i][0] += a * (th.cos() - 1.0);
            c.positions[i][2] += a * th.sin();
        }
        MotionKind::ColorShift => {
            let b = c.basis();
            let sh = c.sh_mut(i);
            for ch in 0..3 {
                sh[ch * b] += a * s * dir[ch] / SH_C0;
            }
        }
        MotionKind::OpacityPulse | MotionKind::Mixed => c.opacity_logits[i] += a * (PI * s).sin() * 10.0,
    }
}
