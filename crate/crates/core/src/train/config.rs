//! Flat `key = value` training configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, so
//! command-line overrides are applied after the file. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use crate::adaptive::{DensifyConfig, SamplingConfig};
use crate::deform::{FieldConfig, FusionMode, OpacityMode};
use crate::error::{Error, Result};
use crate::loss::LossConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    /// Iterations over which the position rate decays; 0 means `iterations`.
    pub position_decay_iters: u64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
    pub embedding: f64,
    pub mlp: f64,
    pub tables: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            position_decay_iters: 0,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            embedding: 1e-3,
            mlp: 1e-3,
            tables: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,
    /// 0 disables periodic evaluation (the final one always runs).
    pub eval_every: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub knn_rebuild_every: u64,
    pub opacity_mode: String,
    pub opacity_k: f64,
    pub init_opacity: f64,
    pub init_embedding_std: f64,
    pub lr: LearningRates,
    /// `fine_len = 0` picks lengths from the frame count.
    pub field: FieldConfig,
    pub loss: LossConfig,
    pub densify: DensifyConfig,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 7000,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            knn_rebuild_every: 1000,
            opacity_mode: "aggressive".into(),
            opacity_k: 10.0,
            init_opacity: 0.1,
            init_embedding_std: 0.1,
            lr: LearningRates::default(),
            field: FieldConfig { fine_len: 0, coarse_len: 0, ..FieldConfig::default() },
            loss: LossConfig::default(),
            densify: DensifyConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(f64, u64, usize, bool, String);

impl ConfigValue for FusionMode {
    fn parse_value(s: &str) -> Option<Self> {
        FusionMode::parse(s).ok()
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Assigns one key. Values are parsed with the field's type.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value)
                            .ok_or_else(|| Error::Config(format!("bad value `{value}` for `{key}`")))?;
                    })*
                    _ => return Err(Error::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.render()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "iterations" => iterations,
    "seed" => seed,
    "eval_every" => eval_every,
    "checkpoint_every" => checkpoint_every,
    "knn_rebuild_every" => knn_rebuild_every,
    "opacity_mode" => opacity_mode,
    "opacity_k" => opacity_k,
    "fusion" => field.fusion,
    "init.opacity" => init_opacity,
    "init.embedding_std" => init_embedding_std,
    "lr.position_init" => lr.position_init,
    "lr.position_final" => lr.position_final,
    "lr.position_decay_iters" => lr.position_decay_iters,
    "lr.scale" => lr.scale,
    "lr.rotation" => lr.rotation,
    "lr.opacity" => lr.opacity,
    "lr.sh" => lr.sh,
    "lr.embedding" => lr.embedding,
    "lr.mlp" => lr.mlp,
    "lr.tables" => lr.tables,
    "field.embed_dim" => field.embed_dim,
    "field.temporal_dim" => field.temporal_dim,
    "field.hidden_width" => field.hidden_width,
    "field.hidden_layers" => field.hidden_layers,
    "field.fine_len" => field.fine_len,
    "field.coarse_len" => field.coarse_len,
    "field.sh_degree" => field.sh_degree,
    "field.sh_dc_only" => field.sh_dc_only,
    "field.table_std" => field.table_std,
    "loss.lambda_emb" => loss.lambda_emb,
    "loss.lambda_w" => loss.lambda_w,
    "loss.k_neighbors" => loss.k_neighbors,
    "loss.dssim_start_iter" => loss.dssim_start_iter,
    "loss.dssim_period" => loss.dssim_period,
    "loss.dssim_active_span" => loss.dssim_active_span,
    "loss.lambda_dssim" => loss.lambda_dssim,
    "densify.enabled" => densify.enabled,
    "densify.grad_threshold" => densify.grad_threshold,
    "densify.split_scale_threshold" => densify.split_scale_threshold,
    "densify.prune_opacity" => densify.prune_opacity,
    "densify.interval" => densify.interval,
    "densify.start_iter" => densify.start_iter,
    "densify.stop_iter" => densify.stop_iter,
    "densify.max_gaussians" => densify.max_gaussians,
    "sampling.enabled" => sampling.enabled,
    "sampling.start_iter" => sampling.start_iter,
    "sampling.stop_iter" => sampling.stop_iter,
    "sampling.interval" => sampling.interval,
    "sampling.error_threshold" => sampling.error_threshold,
    "sampling.top_fraction" => sampling.top_fraction,
    "sampling.max_new_per_pass" => sampling.max_new_per_pass,
    "sampling.anchor_opacity" => sampling.anchor_opacity,
    "sampling.neighbor_pool" => sampling.neighbor_pool,
}

/// Splits `key=value`, as given to `--set`.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim(), v.trim()))
}

impl TrainConfig {
    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|_| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value, one per line; `parse` reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap());
        }
        s
    }

    pub fn opacity(&self) -> Result<OpacityMode> {
        OpacityMode::parse(&self.opacity_mode, self.opacity_k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let lr = &self.lr;
        let rates = [
            ("lr.position_init", lr.position_init),
            ("lr.position_final", lr.position_final),
            ("lr.scale", lr.scale),
            ("lr.rotation", lr.rotation),
            ("lr.opacity", lr.opacity),
            ("lr.sh", lr.sh),
            ("lr.embedding", lr.embedding),
            ("lr.mlp", lr.mlp),
            ("lr.tables", lr.tables),
        ];
        for (k, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) || !(self.init_embedding_std >= 0.0) {
            return Err(Error::Config("init.opacity must be in (0, 1) and init.embedding_std non-negative".into()));
        }
        if !(self.opacity_k >= 0.0) {
            return Err(Error::Config("opacity_k must be non-negative".into()));
        }
        let f = &self.field;
        if f.embed_dim == 0 || f.temporal_dim == 0 || f.hidden_width == 0 || f.sh_degree > 3 {
            return Err(Error::Config("field dimensions must be positive and sh_degree at most 3".into()));
        }
        if f.fine_len != 0 && (f.fine_len < 2 || f.coarse_len < 2 || f.coarse_len > f.fine_len) {
            return Err(Error::Config("explicit table lengths need 2 <= coarse_len <= fine_len".into()));
        }
        self.opacity()?;
        self.loss.validate()?;
        if self.densify.enabled {
            self.densify.validate()?;
        }
        if self.sampling.enabled {
            self.sampling.validate()?;
        }
        Ok(())
    }

    /// Position learning rate at `iter`: log-linear from init to final.
    pub fn position_lr(&self, iter: u64) -> f64 {
        let span = if self.lr.position_decay_iters == 0 { self.iterations } else { self.lr.position_decay_iters };
        let u = (iter as f64 / span.max(1) as f64).clamp(0.0, 1.0);
        (self.lr.position_init.ln() * (1.0 - u) + self.lr.position_final.ln() * u).exp()
    }
}
