use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fvv_core::codec::{pack_frame, unpack_frame, AttributeResidual};
use fvv_core::image::Image;
use fvv_core::kv::parse_kv;
use fvv_core::losses::{psnr, ssim};
use fvv_core::quantizer::LinearDecoder;
use fvv_core::raster::io::save_png;
use fvv_core::raster::rasterize;
use fvv_core::scene::io::{cloud_to_bytes, save_cloud};
use fvv_core::scene::{Camera, GaussianCloud};
use fvv_core::synth::{cameras_from_text, load_bundle, save_bundle};
use fvv_core::synth::{generate, SynthConfig};
use fvv_core::trainer::{train_first_frame, train_residual_frame, ResidualContext, TrainConfig};

use crate::error::{usage, CliError, Result};
use crate::plot::line_chart;
use crate::stream::{config_hash, write_atomic, ManifestRow, StreamDir, MANIFEST_HEADER};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub plots: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn synth_config(common: &Common) -> Result<SynthConfig> {
    let mut cfg = match &common.config {
        Some(p) => SynthConfig::from_text(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(f) = common.frames {
        cfg.n_frames = f;
    }
    cfg.check()?;
    Ok(cfg)
}

/// Builds the training config: `--preset` over the config file's `preset`
/// key over preset A, then the file's keys, then `--seed`.
pub fn train_config(common: &Common) -> Result<TrainConfig> {
    let text = match &common.config {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let kv = parse_kv(&text)?;
    let file_preset = kv.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.clone());
    let preset = common.preset.clone().or(file_preset).unwrap_or_else(|| "a".into());
    let mut cfg = TrainConfig::preset(&preset)?;
    let rest: String = kv.iter().filter(|(k, _)| k != "preset").map(|(k, v)| format!("{k} = {v}\n")).collect();
    cfg.apply_text(&rest)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.check()?;
    Ok(cfg)
}

pub fn cmd_synth(common: &Common, out: &Path) -> Result<()> {
    let cfg = synth_config(common)?;
    let scene = generate(&cfg)?;
    save_bundle(&scene, out)?;
    eprintln!(
        "wrote {} frames x {} views ({} Gaussians, {} dynamic) to {}",
        cfg.n_frames,
        cfg.n_views,
        cfg.n_gaussians,
        cfg.dynamic_count(),
        out.display()
    );
    Ok(())
}

/// Mean PSNR and SSIM of `cloud` over the given views, and renders per second.
pub fn measure(cloud: &GaussianCloud<f64>, cams: &[Camera<f64>], frames: &[Image<f64>]) -> Result<(f64, f64, f64)> {
    let start = Instant::now();
    let renders = cams.iter().map(|c| rasterize(cloud, c, None).map(|o| o.image)).collect::<fvv_core::Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    let (mut p, mut s) = (0.0, 0.0);
    for (img, gt) in renders.iter().zip(frames) {
        p += psnr(img, gt)?;
        s += ssim(img, gt)?.value;
    }
    let n = renders.len().max(1) as f64;
    Ok((p / n, s / n, renders.len() as f64 / secs))
}

/// Decoder weights of a stored packet, falling back to `fresh` for
/// attributes the packet does not carry.
fn context_from_packet(bytes: &[u8], fresh: ResidualContext<f64>) -> Result<ResidualContext<f64>> {
    let set = unpack_frame(bytes)?;
    let mut ctx = fresh;
    for a in &set.attributes {
        if let AttributeResidual::Quantized { kind, decoder, .. } = a {
            let w = decoder.weights.iter().map(|&x| x as f64).collect();
            ctx.decoders[kind.code() as usize] = LinearDecoder::new(decoder.out_dim, decoder.in_dim, w)?;
        }
    }
    Ok(ctx)
}

pub fn cmd_encode(common: &Common, scene_dir: &Path, out: &Path) -> Result<()> {
    let cfg = train_config(common)?;
    let bundle = load_bundle(scene_dir)?;
    let n_frames = common.frames.map_or(bundle.n_frames(), |f| f.min(bundle.n_frames()));
    if n_frames == 0 {
        return Err(usage("--frames must be positive"));
    }
    let cfg_text = cfg.to_text();
    let cams_text = read_text(&scene_dir.join("cameras.txt"))?;
    let scene_text = read_text(&scene_dir.join("scene.txt"))?;
    let hash = config_hash(&[&cfg_text, &scene_text, &cams_text]);

    let stream = StreamDir::new(out);
    let finished = match stream.recorded_hash()? {
        Some(h) if h != hash => {
            return Err(CliError::Resume(format!(
                "{} was encoded with config hash {h}, this run has {hash}",
                out.display()
            )))
        }
        Some(_) => stream.finished_frames()?,
        None => {
            fs::create_dir_all(out.join("packets"))?;
            write_atomic(&stream.config_path(), cfg_text.as_bytes())?;
            write_atomic(&stream.cameras_path(), cams_text.as_bytes())?;
            write_atomic(&stream.run_path(), format!("seed = {}\nconfig_hash = {hash}\n", cfg.seed).as_bytes())?;
            fs::write(stream.manifest_path(), format!("{MANIFEST_HEADER}\n"))?;
            0
        }
    };
    // Drop anything past the last finished frame; it is retrained
    // deterministically.
    let rows = stream.read_manifest()?;
    stream.write_manifest(&rows[..finished.min(rows.len())])?;
    let mut t = finished.max(1);
    while stream.packet_path(t).exists() {
        fs::remove_file(stream.packet_path(t))?;
        t += 1;
    }
    if finished > 0 {
        eprintln!("resuming {} after frame {}", out.display(), finished - 1);
    }

    let cams = &bundle.cameras;
    let mut prev = if finished == 0 {
        let start = Instant::now();
        let ff = train_first_frame::<f64>(&bundle.frames[0], cams, &bundle.init_points, &cfg)?;
        let train_ms = start.elapsed().as_secs_f64() * 1e3;
        // The decoder reads f32 values, so the encoder continues from them too.
        let cloud = ff.cloud.round_to_f32();
        let bytes = cloud_to_bytes(&cloud)?;
        write_atomic(&stream.frame0_path(), &bytes)?;
        let (psnr_db, ssim, render_fps) = measure(&cloud, cams, &bundle.frames[0])?;
        let row = ManifestRow { frame: 0, psnr_db, ssim, bytes: bytes.len() as u64, active_gates: 0, train_ms, render_fps };
        stream.append_manifest(&row)?;
        eprintln!("frame 0: {} Gaussians, {psnr_db:.2} dB, {} bytes", cloud.len(), row.bytes);
        cloud
    } else {
        stream.decode(finished - 1)?
    };
    let mut ctx = ResidualContext::<f64>::new(&cfg);
    if finished >= 2 {
        ctx = context_from_packet(&fs::read(stream.packet_path(finished - 1))?, ctx)?;
    }

    for t in finished.max(1)..n_frames {
        let start = Instant::now();
        let res = train_residual_frame(&prev, &bundle.frames[t - 1], &bundle.frames[t], cams, &cfg, t as u32, &mut ctx)?;
        let train_ms = start.elapsed().as_secs_f64() * 1e3;
        let bytes = pack_frame(&res.residuals)?;
        write_atomic(&stream.packet_path(t), &bytes)?;
        // Continue from what the decoder will reconstruct.
        prev = fvv_core::codec::apply_residuals(&prev, &unpack_frame(&bytes)?)?;
        let (psnr_db, ssim, render_fps) = measure(&prev, cams, &bundle.frames[t])?;
        let row = ManifestRow {
            frame: t,
            psnr_db,
            ssim,
            bytes: bytes.len() as u64,
            active_gates: res.stats.active_gates,
            train_ms,
            render_fps,
        };
        stream.append_manifest(&row)?;
        eprintln!(
            "frame {t}: {psnr_db:.2} dB, {} bytes, {} active gates, +{} -{} Gaussians",
            row.bytes, row.active_gates, res.stats.added, res.stats.removed
        );
    }
    Ok(())
}

fn check_frame(stream: &StreamDir, t: usize) -> Result<()> {
    let n = stream.available_frames();
    if t >= n {
        return Err(CliError::MissingPacket(format!(
            "frame {t} requested but {} holds frames 0..{}",
            stream.root.display(),
            n as i64 - 1
        )));
    }
    Ok(())
}

pub fn cmd_decode(stream_dir: &Path, frame: usize, out: &Path) -> Result<()> {
    let stream = StreamDir::new(stream_dir);
    check_frame(&stream, frame)?;
    let cloud = stream.decode(frame)?;
    save_cloud(&cloud, out)?;
    eprintln!("frame {frame}: {} Gaussians written to {}", cloud.len(), out.display());
    Ok(())
}

/// Camera selector: a training view index or `test`.
pub fn pick_camera(stream: &StreamDir, which: Option<&str>) -> Result<Camera<f64>> {
    let (train, test) = cameras_from_text(&read_text(&stream.cameras_path())?)?;
    match which {
        None => test.or_else(|| train.first().cloned()).ok_or_else(|| usage("stream has no cameras")),
        Some("test") => test.ok_or_else(|| usage("stream has no test camera")),
        Some(s) => {
            let i: usize = s.parse().map_err(|_| usage(format!("camera must be an index or `test`, got {s:?}")))?;
            train.get(i).cloned().ok_or_else(|| usage(format!("camera {i} out of range (0..{})", train.len())))
        }
    }
}

pub fn cmd_render(stream_dir: &Path, frame: usize, camera: Option<&str>, out: &Path) -> Result<()> {
    let stream = StreamDir::new(stream_dir);
    check_frame(&stream, frame)?;
    let cam = pick_camera(&stream, camera)?;
    let cloud = stream.decode(frame)?;
    let img = rasterize(&cloud, &cam, None)?.image;
    save_png(&img, out)?;
    Ok(())
}

pub fn cmd_metrics(common: &Common, stream_dir: &Path, scene_dir: &Path, out: &Path) -> Result<Vec<ManifestRow>> {
    let stream = StreamDir::new(stream_dir);
    let bundle = load_bundle(scene_dir)?;
    let mut n = stream.available_frames();
    if n == 0 {
        return Err(CliError::MissingPacket(format!("{} holds no frames", stream_dir.display())));
    }
    if let Some(f) = common.frames {
        n = n.min(f);
    }
    if n > bundle.n_frames() {
        return Err(usage(format!("stream has {n} frames but the scene only {}", bundle.n_frames())));
    }
    let encoded = stream.read_manifest()?;
    // Held-out view when the scene has one, otherwise the training views.
    let (cams, targets): (Vec<Camera<f64>>, Vec<Vec<Image<f64>>>) = match &bundle.test_camera {
        Some(c) if bundle.test_frames.len() >= n => {
            (vec![c.clone()], bundle.test_frames.iter().map(|f| vec![f.clone()]).collect())
        }
        _ => (bundle.cameras.clone(), bundle.frames.clone()),
    };
    let mut rows = Vec::with_capacity(n);
    stream.decode_each(n - 1, |t, cloud| {
        let (psnr_db, ssim, render_fps) = measure(cloud, &cams, &targets[t])?;
        let (bytes, active_gates) = if t == 0 {
            (fs::metadata(stream.frame0_path())?.len(), 0)
        } else {
            let b = fs::read(stream.packet_path(t))?;
            (b.len() as u64, unpack_frame(&b)?.positions.len())
        };
        let train_ms = encoded.get(t).map_or(0.0, |r| r.train_ms);
        rows.push(ManifestRow { frame: t, psnr_db, ssim, bytes, active_gates, train_ms, render_fps });
        Ok(())
    })?;
    let mut csv = String::from(MANIFEST_HEADER);
    csv.push('\n');
    for r in &rows {
        csv += &r.to_csv();
        csv.push('\n');
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, csv)?;
    if common.plots {
        let stem = out.with_extension("");
        let name = |s: &str| PathBuf::from(format!("{}_{s}.png", stem.display()));
        line_chart(&name("psnr"), &rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>())?;
        line_chart(&name("rate"), &rows.iter().map(|r| r.bytes as f64).collect::<Vec<_>>())?;
    }
    Ok(rows)
}
