//! Scene bundle directories.
//!
//! ```text
//! scene.txt            generator config (key = value)
//! cameras.txt          one camera per line, `train` views then one `test` view
//! gt/cloud_TTTT.qgsc   ground-truth cloud per frame
//! frames/tTTTT_vVV.png training views; tTTTT_test.png for the held-out view
//! labels.u8            one byte per Gaussian, 1 = dynamic
//! init_points.txt      `x y z r g b` per line
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{SynthConfig, SynthScene};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::io::{load_png, save_png};
use crate::scene::io::{load_cloud, save_cloud};
use crate::scene::{Camera, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

/// A scene as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub config: SynthConfig,
    pub cameras: Vec<Camera<f64>>,
    pub test_camera: Option<Camera<f64>>,
    /// `frames[t][v]`, 8-bit quantized.
    pub frames: Vec<Vec<Image<f64>>>,
    pub test_frames: Vec<Image<f64>>,
    pub labels: Vec<bool>,
    pub init_points: Vec<InitPoint>,
    pub gt_clouds: Vec<GaussianCloud<f64>>,
}

impl SceneBundle {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

fn camera_line(tag: &str, c: &Camera<f64>) -> String {
    let r = c.rotation;
    let vals: Vec<String> = [c.fx, c.fy, c.cx, c.cy, c.near]
        .into_iter()
        .chain(r.iter().flatten().copied())
        .chain(c.translation)
        .map(|v| v.to_string())
        .collect();
    format!("{tag} {} {} {}", c.width, c.height, vals.join(" "))
}

pub fn cameras_to_text(train: &[Camera<f64>], test: Option<&Camera<f64>>) -> String {
    let mut s = String::from("# tag width height fx fy cx cy near r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for c in train {
        s += &camera_line("train", c);
        s.push('\n');
    }
    if let Some(c) = test {
        s += &camera_line("test", c);
        s.push('\n');
    }
    s
}

/// Parses [`cameras_to_text`] output into `(train, test)`.
pub fn cameras_from_text(text: &str) -> Result<(Vec<Camera<f64>>, Option<Camera<f64>>)> {
    let mut train = Vec::new();
    let mut test = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Decode(format!("cameras line {}: malformed", n + 1));
        if f.len() != 20 {
            return Err(bad());
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let mut rotation = [[0.0; 3]; 3];
        for (k, v) in rotation.iter_mut().flatten().enumerate() {
            *v = num(8 + k)?;
        }
        let cam = Camera {
            width: int(1)?,
            height: int(2)?,
            fx: num(3)?,
            fy: num(4)?,
            cx: num(5)?,
            cy: num(6)?,
            near: num(7)?,
            rotation,
            translation: [num(17)?, num(18)?, num(19)?],
        };
        cam.check()?;
        match f[0] {
            "train" => train.push(cam),
            "test" => test = Some(cam),
            _ => return Err(bad()),
        }
    }
    Ok((train, test))
}

fn frame_path(dir: &Path, t: usize, v: Option<usize>) -> PathBuf {
    match v {
        Some(v) => dir.join("frames").join(format!("t{t:04}_v{v:02}.png")),
        None => dir.join("frames").join(format!("t{t:04}_test.png")),
    }
}

fn cloud_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("gt").join(format!("cloud_{t:04}.qgsc"))
}

pub fn save_bundle(scene: &SynthScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("gt"))?;
    fs::write(dir.join("scene.txt"), scene.config.to_text())?;
    fs::write(dir.join("cameras.txt"), cameras_to_text(&scene.cameras, Some(&scene.test_camera)))?;
    for (t, views) in scene.frames.iter().enumerate() {
        for (v, img) in views.iter().enumerate() {
            save_png(img, &frame_path(dir, t, Some(v)))?;
        }
        save_png(&scene.test_frames[t], &frame_path(dir, t, None))?;
        save_cloud(&scene.clouds[t], &cloud_path(dir, t))?;
    }
    fs::write(dir.join("labels.u8"), scene.labels.iter().map(|&l| l as u8).collect::<Vec<_>>())?;
    let pts: String = scene
        .init_points
        .iter()
        .map(|p| {
            format!(
                "{} {} {} {} {} {}\n",
                p.position[0], p.position[1], p.position[2], p.color[0], p.color[1], p.color[2]
            )
        })
        .collect();
    fs::write(dir.join("init_points.txt"), pts)?;
    Ok(())
}

pub fn load_init_points(path: &Path) -> Result<Vec<InitPoint>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Decode(format!("init_points line {}: not a number", n + 1)))?;
            if v.len() != 6 {
                return Err(Error::Decode(format!("init_points line {}: expected 6 values", n + 1)));
            }
            Ok(InitPoint { position: [v[0], v[1], v[2]], color: [v[3], v[4], v[5]] })
        })
        .collect()
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name))
            .map_err(|e| Error::InvalidInput(format!("scene bundle {}: {name}: {e}", dir.display())))
    };
    let config = SynthConfig::from_text(&read("scene.txt")?)?;
    let (cameras, test_camera) = cameras_from_text(&read("cameras.txt")?)?;
    if cameras.is_empty() {
        return Err(Error::InvalidInput("scene bundle has no training cameras".into()));
    }
    let mut frames = Vec::new();
    let mut test_frames = Vec::new();
    let mut gt_clouds = Vec::new();
    for t in 0.. {
        if !frame_path(dir, t, Some(0)).exists() {
            break;
        }
        let views = (0..cameras.len()).map(|v| load_png(&frame_path(dir, t, Some(v)))).collect::<Result<Vec<_>>>()?;
        for (img, cam) in views.iter().zip(&cameras) {
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::InvalidInput(format!("frame {t} does not match its camera size")));
            }
        }
        frames.push(views);
        if test_camera.is_some() && frame_path(dir, t, None).exists() {
            test_frames.push(load_png(&frame_path(dir, t, None))?);
        }
        if cloud_path(dir, t).exists() {
            gt_clouds.push(load_cloud(&cloud_path(dir, t))?);
        }
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("scene bundle {} has no frames", dir.display())));
    }
    let labels = match fs::read(dir.join("labels.u8")) {
        Ok(b) => b.into_iter().map(|x| x != 0).collect(),
        Err(_) => Vec::new(),
    };
    let init_points = load_init_points(&dir.join("init_points.txt"))?;
    Ok(SceneBundle { config, cameras, test_camera, frames, test_frames, labels, init_points, gt_clouds })
}
