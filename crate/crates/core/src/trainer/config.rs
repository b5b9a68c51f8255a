//! Training configuration, presets and the `key = value` file format.

use crate::error::{Error, Result};
use crate::gating::GateHyper;
use crate::kv::{parse_bool, parse_kv, parse_value};
use crate::quantizer::AttributeKind;

/// How per-frame attribute residuals are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualMode {
    /// Integer latents, linear decoders and gated position residuals.
    Quantized,
    /// Uncompressed `f32` residuals for every attribute, positions ungated.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub sh_degree: usize,
    pub first_frame_epochs: usize,
    pub residual_epochs: usize,
    pub masked_fraction: f64,
    pub lambda_dssim: f64,
    pub lambda_reg: f64,
    pub lambda_std: f64,

    // First frame.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub init_opacity: f64,
    pub quantize_first_frame_sh: bool,
    pub ff_densify_from_epoch: usize,
    pub ff_densify_until_epoch: usize,
    pub ff_densify_interval: usize,
    pub ff_densify_threshold: f64,

    // Residual frames.
    pub residual_mode: ResidualMode,
    pub latent_dims: [usize; 5],
    pub latent_lrs: [f64; 5],
    pub decoder_lrs: [f64; 5],
    /// Residual decoder entries start uniform in `±scale/√L`.
    pub decoder_init_scale: f64,
    pub gate_lr: f64,
    pub position_residual_lr: f64,
    pub gate_tau: f64,
    pub gate_gamma0: f64,
    pub gate_gamma1: f64,
    pub gate_stochastic: bool,
    pub score_threshold: f64,
    pub mask_dilation: usize,
    pub densify: bool,
    pub densify_from_epoch: usize,
    pub densify_until_fraction: f64,
    pub densify_interval: usize,
    pub densify_threshold: f64,

    // Shared.
    pub prune_opacity: f64,
    pub percent_dense: f64,
    pub depth_alpha_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset_a()
    }
}

fn kind_index(kind: AttributeKind) -> usize {
    kind.code() as usize
}

impl TrainConfig {
    /// Hyperparameters for short-baseline, mildly dynamic captures.
    pub fn preset_a() -> Self {
        Self {
            seed: 0,
            sh_degree: 2,
            first_frame_epochs: 500,
            residual_epochs: 10,
            masked_fraction: 0.3,
            lambda_dssim: 0.2,
            lambda_reg: 0.01,
            lambda_std: 0.0,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 0.0025,
            lr_sh_rest: 0.0025 / 20.0,
            lr_opacity: 0.05,
            lr_scale: 0.005,
            lr_rotation: 0.001,
            init_opacity: 0.1,
            quantize_first_frame_sh: true,
            ff_densify_from_epoch: 50,
            ff_densify_until_epoch: 250,
            ff_densify_interval: 25,
            ff_densify_threshold: 0.0002,
            residual_mode: ResidualMode::Quantized,
            latent_dims: [6, 8, 3, 8, 4],
            latent_lrs: [0.025, 0.01, 0.05, 0.0125, 0.000625],
            decoder_lrs: [0.001, 0.0001, 0.0001, 0.001, 0.001],
            decoder_init_scale: 0.05,
            gate_lr: 0.1,
            position_residual_lr: 1.6e-4,
            gate_tau: 0.3,
            gate_gamma0: -0.5,
            gate_gamma1: 1.01,
            gate_stochastic: false,
            score_threshold: 0.001,
            mask_dilation: 48,
            densify: true,
            densify_from_epoch: 6,
            densify_until_fraction: 0.8,
            densify_interval: 2,
            densify_threshold: 0.00125,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            depth_alpha_threshold: 0.10,
        }
    }

    /// Hyperparameters for wide-baseline captures with large motion.
    pub fn preset_b() -> Self {
        Self {
            sh_degree: 3,
            first_frame_epochs: 350,
            residual_epochs: 15,
            masked_fraction: 0.65,
            latent_dims: [6, 8, 3, 8, 12],
            latent_lrs: [0.015, 0.007, 0.05, 0.0125, 0.000375],
            position_residual_lr: 5e-4,
            gate_tau: 0.5,
            gate_gamma0: -0.1,
            gate_gamma1: 1.1,
            densify_from_epoch: 8,
            // A single densification pass on epoch 8 of 15.
            densify_until_fraction: 8.0 / 15.0,
            densify_interval: 1,
            depth_alpha_threshold: 0.03,
            ..Self::preset_a()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "a" | "A" => Ok(Self::preset_a()),
            "b" | "B" => Ok(Self::preset_b()),
            _ => Err(Error::Config(format!("unknown preset {name:?}; valid presets: a, b"))),
        }
    }

    pub fn gate_hyper(&self) -> GateHyper<f64> {
        GateHyper { tau: self.gate_tau, gamma0: self.gate_gamma0, gamma1: self.gate_gamma1 }
    }

    pub fn latent_dim(&self, kind: AttributeKind) -> usize {
        self.latent_dims[kind_index(kind)]
    }

    pub fn latent_lr(&self, kind: AttributeKind) -> f64 {
        self.latent_lrs[kind_index(kind)]
    }

    pub fn decoder_lr(&self, kind: AttributeKind) -> f64 {
        self.decoder_lrs[kind_index(kind)]
    }

    /// Learning rate used for an uncompressed residual of `kind`.
    pub fn raw_lr(&self, kind: AttributeKind) -> f64 {
        match kind {
            AttributeKind::Rotation => self.lr_rotation,
            AttributeKind::Scale => self.lr_scale,
            AttributeKind::Opacity => self.lr_opacity,
            AttributeKind::ColorBase => self.lr_sh_dc,
            AttributeKind::ColorFreq => self.lr_sh_rest,
        }
    }

    /// Last residual epoch (1-based) on which densification may run.
    pub fn densify_until_epoch(&self) -> usize {
        (self.densify_until_fraction * self.residual_epochs as f64).round() as usize
    }

    /// Whether residual densification runs after 1-based epoch `e`.
    pub fn densify_after_epoch(&self, e: usize) -> bool {
        self.densify
            && self.densify_interval > 0
            && e >= self.densify_from_epoch
            && e <= self.densify_until_epoch()
            && (e - self.densify_from_epoch).is_multiple_of(self.densify_interval)
    }

    pub fn ff_densify_after_epoch(&self, e: usize) -> bool {
        self.ff_densify_interval > 0
            && e >= self.ff_densify_from_epoch
            && e <= self.ff_densify_until_epoch
            && (e - self.ff_densify_from_epoch).is_multiple_of(self.ff_densify_interval)
    }

    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.first_frame_epochs == 0 && self.residual_epochs == 0 {
            errs.push("at least one of first_frame_epochs and residual_epochs must be positive".to_string());
        }
        for (name, v) in [
            ("masked_fraction", self.masked_fraction),
            ("lambda_dssim", self.lambda_dssim),
            ("densify_until_fraction", self.densify_until_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.sh_degree > 3 {
            errs.push("sh_degree must be at most 3".into());
        }
        if self.latent_dims.contains(&0) {
            errs.push("latent dimensions must be positive".into());
        }
        if self.gate_hyper().check().is_err() {
            errs.push("gates need gate_tau > 0, gate_gamma0 < 0 and gate_gamma1 > 1".into());
        }
        if self.lambda_reg < 0.0 || self.lambda_std < 0.0 {
            errs.push("loss weights must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Sets one key. `preset` is only meaningful as the first key of a file.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let kinds = |prefix: &str| {
            AttributeKind::ALL
                .into_iter()
                .find(|k| key.strip_prefix(prefix) == Some(k.name()))
                .map(kind_index)
        };
        if let Some(i) = kinds("latent_dim_") {
            self.latent_dims[i] = parse_value(key, v)?;
            return Ok(());
        }
        if let Some(i) = kinds("latent_lr_") {
            self.latent_lrs[i] = parse_value(key, v)?;
            return Ok(());
        }
        if let Some(i) = kinds("decoder_lr_") {
            self.decoder_lrs[i] = parse_value(key, v)?;
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "sh_degree" => self.sh_degree = parse_value(key, v)?,
            "first_frame_epochs" => self.first_frame_epochs = parse_value(key, v)?,
            "residual_epochs" => self.residual_epochs = parse_value(key, v)?,
            "masked_fraction" => self.masked_fraction = parse_value(key, v)?,
            "lambda_dssim" => self.lambda_dssim = parse_value(key, v)?,
            "lambda_reg" => self.lambda_reg = parse_value(key, v)?,
            "lambda_std" => self.lambda_std = parse_value(key, v)?,
            "lr_position" => self.lr_position = parse_value(key, v)?,
            "lr_position_final" => self.lr_position_final = parse_value(key, v)?,
            "lr_sh_dc" => self.lr_sh_dc = parse_value(key, v)?,
            "lr_sh_rest" => self.lr_sh_rest = parse_value(key, v)?,
            "lr_opacity" => self.lr_opacity = parse_value(key, v)?,
            "lr_scale" => self.lr_scale = parse_value(key, v)?,
            "lr_rotation" => self.lr_rotation = parse_value(key, v)?,
            "init_opacity" => self.init_opacity = parse_value(key, v)?,
            "quantize_first_frame_sh" => self.quantize_first_frame_sh = parse_bool(key, v)?,
            "ff_densify_from_epoch" => self.ff_densify_from_epoch = parse_value(key, v)?,
            "ff_densify_until_epoch" => self.ff_densify_until_epoch = parse_value(key, v)?,
            "ff_densify_interval" => self.ff_densify_interval = parse_value(key, v)?,
            "ff_densify_threshold" => self.ff_densify_threshold = parse_value(key, v)?,
            "residual_mode" => {
                self.residual_mode = match v {
                    "quantized" => ResidualMode::Quantized,
                    "raw" => ResidualMode::Raw,
                    _ => return Err(Error::Config(format!("residual_mode: expected quantized or raw, found {v:?}"))),
                }
            }
            "decoder_init_scale" => self.decoder_init_scale = parse_value(key, v)?,
            "gate_lr" => self.gate_lr = parse_value(key, v)?,
            "position_residual_lr" => self.position_residual_lr = parse_value(key, v)?,
            "gate_tau" => self.gate_tau = parse_value(key, v)?,
            "gate_gamma0" => self.gate_gamma0 = parse_value(key, v)?,
            "gate_gamma1" => self.gate_gamma1 = parse_value(key, v)?,
            "gate_stochastic" => self.gate_stochastic = parse_bool(key, v)?,
            "score_threshold" => self.score_threshold = parse_value(key, v)?,
            "mask_dilation" => self.mask_dilation = parse_value(key, v)?,
            "densify" => self.densify = parse_bool(key, v)?,
            "densify_from_epoch" => self.densify_from_epoch = parse_value(key, v)?,
            "densify_until_fraction" => self.densify_until_fraction = parse_value(key, v)?,
            "densify_interval" => self.densify_interval = parse_value(key, v)?,
            "densify_threshold" => self.densify_threshold = parse_value(key, v)?,
            "prune_opacity" => self.prune_opacity = parse_value(key, v)?,
            "percent_dense" => self.percent_dense = parse_value(key, v)?,
            "depth_alpha_threshold" => self.depth_alpha_threshold = parse_value(key, v)?,
            "preset" => {
                let seed = self.seed;
                *self = Self::preset(v)?;
                self.seed = seed;
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file over `self`. A `preset` key, if present, is
    /// applied before all other keys. Every unknown key is reported.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let kv = parse_kv(text)?;
        if let Some((_, p)) = kv.iter().find(|(k, _)| k == "preset") {
            self.set("preset", p)?;
        }
        let mut unknown = Vec::new();
        for (k, v) in &kv {
            if k == "preset" {
                continue;
            }
            match self.set(k, v) {
                Err(Error::Config(m)) if m.starts_with("unknown config key") => unknown.push(k.clone()),
                r => r?,
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        self.check()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::preset_a();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s += k;
            s += " = ";
            s += &v;
            s.push('\n');
        };
        put("seed", self.seed.to_string());
        put("sh_degree", self.sh_degree.to_string());
        put("first_frame_epochs", self.first_frame_epochs.to_string());
        put("residual_epochs", self.residual_epochs.to_string());
        put("masked_fraction", self.masked_fraction.to_string());
        put("lambda_dssim", self.lambda_dssim.to_string());
        put("lambda_reg", self.lambda_reg.to_string());
        put("lambda_std", self.lambda_std.to_string());
        put("lr_position", self.lr_position.to_string());
        put("lr_position_final", self.lr_position_final.to_string());
        put("lr_sh_dc", self.lr_sh_dc.to_string());
        put("lr_sh_rest", self.lr_sh_rest.to_string());
        put("lr_opacity", self.lr_opacity.to_string());
        put("lr_scale", self.lr_scale.to_string());
        put("lr_rotation", self.lr_rotation.to_string());
        put("init_opacity", self.init_opacity.to_string());
        put("quantize_first_frame_sh", self.quantize_first_frame_sh.to_string());
        put("ff_densify_from_epoch", self.ff_densify_from_epoch.to_string());
        put("ff_densify_until_epoch", self.ff_densify_until_epoch.to_string());
        put("ff_densify_interval", self.ff_densify_interval.to_string());
        put("ff_densify_threshold", self.ff_densify_threshold.to_string());
        put(
            "residual_mode",
            match self.residual_mode {
                ResidualMode::Quantized => "quantized".into(),
                ResidualMode::Raw => "raw".into(),
            },
        );
        for k in AttributeKind::ALL {
            put(&format!("latent_dim_{}", k.name()), self.latent_dim(k).to_string());
        }
        for k in AttributeKind::ALL {
            put(&format!("latent_lr_{}", k.name()), self.latent_lr(k).to_string());
        }
        for k in AttributeKind::ALL {
            put(&format!("decoder_lr_{}", k.name()), self.decoder_lr(k).to_string());
        }
        put("decoder_init_scale", self.decoder_init_scale.to_string());
        put("gate_lr", self.gate_lr.to_string());
        put("position_residual_lr", self.position_residual_lr.to_string());
        put("gate_tau", self.gate_tau.to_string());
        put("gate_gamma0", self.gate_gamma0.to_string());
        put("gate_gamma1", self.gate_gamma1.to_string());
        put("gate_stochastic", self.gate_stochastic.to_string());
        put("score_threshold", self.score_threshold.to_string());
        put("mask_dilation", self.mask_dilation.to_string());
        put("densify", self.densify.to_string());
        put("densify_from_epoch", self.densify_from_epoch.to_string());
        put("densify_until_fraction", self.densify_until_fraction.to_string());
        put("densify_interval", self.densify_interval.to_string());
        put("densify_threshold", self.densify_threshold.to_string());
        put("prune_opacity", self.prune_opacity.to_string());
        put("percent_dense", self.percent_dense.to_string());
        put("depth_alpha_threshold", self.depth_alpha_threshold.to_string());
        s
    }
}
