//! Stream directories written by `fvv encode`.
//!
//! ```text
//! config.txt            training config snapshot (key = value)
//! run.txt               seed and config hash
//! cameras.txt           camera rig copied from the scene bundle
//! frame_0000.qgsc       first-frame cloud
//! packets/frame_TTTT.qnfp
//! manifest.csv          one row per finished frame
//! ```
//!
//! A packet is renamed into place only after it is fully written and
//! synced, and its manifest row is appended afterwards. A frame counts as
//! finished once both exist.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use fvv_core::codec::{apply_residuals, unpack_frame};
use fvv_core::scene::io::load_cloud;
use fvv_core::scene::GaussianCloud;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_HEADER: &str = "frame,psnr_db,ssim,bytes,active_gates,train_ms,render_fps";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub frame: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bytes: u64,
    pub active_gates: usize,
    pub train_ms: f64,
    pub render_fps: f64,
}

impl ManifestRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.4},{:.6},{},{},{:.1},{:.2}",
            self.frame, self.psnr_db, self.ssim, self.bytes, self.active_gates, self.train_ms, self.render_fps
        )
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(Self {
            frame: f[0].parse().ok()?,
            psnr_db: f[1].parse().ok()?,
            ssim: f[2].parse().ok()?,
            bytes: f[3].parse().ok()?,
            active_gates: f[4].parse().ok()?,
            train_ms: f[5].parse().ok()?,
            render_fps: f[6].parse().ok()?,
        })
    }
}

pub fn config_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` through a synced temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Directory fsync is not supported everywhere.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StreamDir {
    pub root: PathBuf,
}

impl StreamDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn run_path(&self) -> PathBuf {
        self.root.join("run.txt")
    }

    pub fn cameras_path(&self) -> PathBuf {
        self.root.join("cameras.txt")
    }

    pub fn frame0_path(&self) -> PathBuf {
        self.root.join("frame_0000.qgsc")
    }

    pub fn packet_path(&self, t: usize) -> PathBuf {
        self.root.join("packets").join(format!("frame_{t:04}.qnfp"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    /// Hash recorded by a previous run, if any.
    pub fn recorded_hash(&self) -> Result<Option<String>> {
        let Ok(text) = fs::read_to_string(self.run_path()) else { return Ok(None) };
        Ok(text.lines().find_map(|l| l.strip_prefix("config_hash = ").map(|h| h.trim().to_string())))
    }

    pub fn read_manifest(&self) -> Result<Vec<ManifestRow>> {
        let Ok(text) = fs::read_to_string(self.manifest_path()) else { return Ok(Vec::new()) };
        let mut rows = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            // A torn final line from an interrupted append is dropped.
            match ManifestRow::from_csv(line) {
                Some(r) if r.frame == rows.len() => rows.push(r),
                _ => break,
            }
        }
        Ok(rows)
    }

    /// Rewrites the manifest with exactly `rows`.
    pub fn write_manifest(&self, rows: &[ManifestRow]) -> Result<()> {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in rows {
            s += &r.to_csv();
            s.push('\n');
        }
        write_atomic(&self.manifest_path(), s.as_bytes())
    }

    pub fn append_manifest(&self, row: &ManifestRow) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.manifest_path())?;
        writeln!(f, "{}", row.to_csv())?;
        f.sync_all()?;
        Ok(())
    }

    /// Number of frames whose packet and manifest row are both on disk.
    pub fn finished_frames(&self) -> Result<usize> {
        let rows = self.read_manifest()?;
        let mut n = 0;
        for r in &rows {
            let present = if r.frame == 0 { self.frame0_path().exists() } else { self.packet_path(r.frame).exists() };
            if !present {
                break;
            }
            n += 1;
        }
        Ok(n)
    }

    /// Number of decodable frames: frame 0 plus the contiguous packets after it.
    pub fn available_frames(&self) -> usize {
        if !self.frame0_path().exists() {
            return 0;
        }
        let mut t = 1;
        while self.packet_path(t).exists() {
            t += 1;
        }
        t
    }

    pub fn load_frame0(&self) -> Result<GaussianCloud<f64>> {
        if !self.frame0_path().exists() {
            return Err(CliError::MissingPacket(format!("{} has no frame 0 cloud", self.root.display())));
        }
        Ok(load_cloud(&self.frame0_path())?)
    }

    /// Reconstructs frame `t` by applying packets 1..=t in order, calling
    /// `visit` on every intermediate cloud.
    pub fn decode_each(&self, t: usize, mut visit: impl FnMut(usize, &GaussianCloud<f64>) -> Result<()>) -> Result<()> {
        let mut cloud = self.load_frame0()?;
        visit(0, &cloud)?;
        for k in 1..=t {
            let path = self.packet_path(k);
            let bytes = fs::read(&path).map_err(|_| {
                CliError::MissingPacket(format!("frame {k} packet {} is missing (stream has frames 0..{})", path.display(), self.available_frames()))
            })?;
            cloud = apply_residuals(&cloud, &unpack_frame(&bytes)?)?;
            visit(k, &cloud)?;
        }
        Ok(())
    }

    pub fn decode(&self, t: usize) -> Result<GaussianCloud<f64>> {
        let mut out = None;
        self.decode_each(t, |k, c| {
            if k == t {
                out = Some(c.clone());
            }
            Ok(())
        })?;
        Ok(out.expect("decode visits the final frame"))
    }
}
