//! Run configuration: every tunable as a `section.key` with a documented
//! default, loadable from a plain-text key=value file and overridable from
//! the command line. Unknown keys are rejected by name.

use std::fmt::Write as _;
use std::path::Path;

use snakeseg_core::fusion::FusionEvalMode;
use snakeseg_core::network::{LossMode, NetworkConfig, TrainConfig};
use snakeseg_core::synth::SceneTemplate;

use crate::CliError;

#[derive(Clone, Debug)]
pub struct RunConfig {
    // data.*
    pub data_dir: String,
    pub data_n: usize,
    pub data_seed: u64,
    pub data_h: usize,
    pub data_w: usize,
    pub data_curves_min: usize,
    pub data_curves_max: usize,
    pub data_width_min: f64,
    pub data_width_max: f64,
    pub data_branch_prob: f64,
    pub data_noise_sigma: f64,
    pub data_bg_intensity: f64,
    pub data_fg_intensity: f64,
    // model.*
    pub model_levels: usize,
    pub model_base_channels: usize,
    pub model_use_dsconv: bool,
    pub model_seed: u64,
    // fusion.*
    pub fusion_m: usize,
    pub fusion_p: f64,
    // train.*
    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_momentum: f64,
    pub train_offset_lr_scale: f64,
    pub train_seed: u64,
    // loss.*
    pub loss_mode: LossMode,
    pub loss_topo_weight: f64,
    pub loss_warmup_epochs: usize,
    pub loss_topo_patch: usize,
    // eval.*
    pub eval_mode: FusionEvalMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = SceneTemplate::default();
        RunConfig {
            data_dir: "data".into(),
            data_n: 200,
            data_seed: 42,
            data_h: t.h,
            data_w: t.w,
            data_curves_min: t.curves_min,
            data_curves_max: t.curves_max,
            data_width_min: t.width_min,
            data_width_max: t.width_max,
            data_branch_prob: t.branch_prob,
            data_noise_sigma: t.noise_sigma,
            data_bg_intensity: t.bg_intensity,
            data_fg_intensity: t.fg_intensity,
            model_levels: 2,
            model_base_channels: 8,
            model_use_dsconv: true,
            model_seed: 0,
            fusion_m: 3,
            fusion_p: 0.67,
            train_epochs: 20,
            train_lr: 0.05,
            train_momentum: 0.9,
            train_offset_lr_scale: 1.0,
            train_seed: 0,
            loss_mode: LossMode::Ce,
            loss_topo_weight: 1.0,
            loss_warmup_epochs: 5,
            loss_topo_patch: 0,
            eval_mode: FusionEvalMode::Expectation,
        }
    }
}

/// Key table: (key, default, description). Single source for help text and
/// the unknown-key check.
pub const KEY_DOCS: &[(&str, &str, &str)] = &[
    ("data.dir", "data", "dataset directory used by train"),
    ("data.n", "200", "number of generated image/mask pairs"),
    ("data.seed", "42", "base generation seed; item i uses seed+i"),
    ("data.h", "64", "image height in pixels"),
    ("data.w", "64", "image width in pixels"),
    ("data.curves_min", "2", "minimum curves per scene"),
    ("data.curves_max", "4", "maximum curves per scene"),
    ("data.width_min", "1.0", "minimum curve width in pixels (>= 1)"),
    ("data.width_max", "2.0", "maximum curve width in pixels (<= 4)"),
    ("data.branch_prob", "0.4", "per-curve branch probability"),
    ("data.noise_sigma", "0.25", "additive Gaussian noise sigma"),
    ("data.bg_intensity", "0.25", "background gray level in [0, 1]"),
    ("data.fg_intensity", "0.75", "foreground gray level in [0, 1]"),
    ("model.levels", "2", "encoder/decoder pyramid levels"),
    ("model.base_channels", "8", "channels at the first level"),
    ("model.use_dsconv", "true", "false = plain-conv baseline"),
    ("model.seed", "0", "weight initialization seed"),
    ("fusion.m", "3", "template branches per block (1..=3)"),
    ("fusion.p", "0.67", "per-view keep probability in (0, 1]"),
    ("train.epochs", "20", "training epochs"),
    ("train.lr", "0.05", "SGD learning rate"),
    ("train.momentum", "0.9", "SGD momentum in [0, 1)"),
    ("train.offset_lr_scale", "1.0", "lr multiplier for deformation-offset heads"),
    ("train.seed", "0", "shuffling/drop-mask seed"),
    ("loss.mode", "ce", "ce | tc"),
    ("loss.topo_weight", "1.0", "weight of the topology term"),
    ("loss.warmup_epochs", "5", "plain-CE epochs before the topology term"),
    ("loss.topo_patch", "0", "patch side for diagrams; 0 = whole image"),
    ("eval.mode", "expectation", "expectation | saved_mask"),
];

pub fn config_help() -> String {
    let mut s = String::from("Config keys (key = value per line, # comments):\n");
    for (key, default, doc) in KEY_DOCS {
        let _ = writeln!(s, "  {key:<22} default {default:<12} {doc}");
    }
    s
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| usage(format!("config key {key}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(usage(format!("config key {key}: expected true/false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Applies one `section.key = value` assignment; unknown keys fail by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data.dir" => self.data_dir = value.to_string(),
            "data.n" => self.data_n = parse(key, value)?,
            "data.seed" => self.data_seed = parse(key, value)?,
            "data.h" => self.data_h = parse(key, value)?,
            "data.w" => self.data_w = parse(key, value)?,
            "data.curves_min" => self.data_curves_min = parse(key, value)?,
            "data.curves_max" => self.data_curves_max = parse(key, value)?,
            "data.width_min" => self.data_width_min = parse(key, value)?,
            "data.width_max" => self.data_width_max = parse(key, value)?,
            "data.branch_prob" => self.data_branch_prob = parse(key, value)?,
            "data.noise_sigma" => self.data_noise_sigma = parse(key, value)?,
            "data.bg_intensity" => self.data_bg_intensity = parse(key, value)?,
            "data.fg_intensity" => self.data_fg_intensity = parse(key, value)?,
            "model.levels" => self.model_levels = parse(key, value)?,
            "model.base_channels" => self.model_base_channels = parse(key, value)?,
            "model.use_dsconv" => self.model_use_dsconv = parse_bool(key, value)?,
            "model.seed" => self.model_seed = parse(key, value)?,
            "fusion.m" => self.fusion_m = parse(key, value)?,
            "fusion.p" => self.fusion_p = parse(key, value)?,
            "train.epochs" => self.train_epochs = parse(key, value)?,
            "train.lr" => self.train_lr = parse(key, value)?,
            "train.momentum" => self.train_momentum = parse(key, value)?,
            "train.offset_lr_scale" => self.train_offset_lr_scale = parse(key, value)?,
            "train.seed" => self.train_seed = parse(key, value)?,
            "loss.mode" => {
                self.loss_mode = LossMode::parse(value)
                    .map_err(|_| usage(format!("config key loss.mode: {value:?} is not ce|tc")))?;
            }
            "loss.topo_weight" => self.loss_topo_weight = parse(key, value)?,
            "loss.warmup_epochs" => self.loss_warmup_epochs = parse(key, value)?,
            "loss.topo_patch" => self.loss_topo_patch = parse(key, value)?,
            "eval.mode" => {
                self.eval_mode = FusionEvalMode::parse(value).map_err(|_| {
                    usage(format!("config key eval.mode: {value:?} is not expectation|saved_mask"))
                })?;
            }
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `--set key=value` overrides in order.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("--set {s:?}: expected key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn template(&self) -> SceneTemplate {
        SceneTemplate {
            h: self.data_h,
            w: self.data_w,
            curves_min: self.data_curves_min,
            curves_max: self.data_curves_max,
            width_min: self.data_width_min,
            width_max: self.data_width_max,
            branch_prob: self.data_branch_prob,
            noise_sigma: self.data_noise_sigma,
            bg_intensity: self.data_bg_intensity,
            fg_intensity: self.data_fg_intensity,
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            levels: self.model_levels,
            base_channels: self.model_base_channels,
            fusion_m: self.fusion_m,
            fusion_p: self.fusion_p,
            use_dsconv: self.model_use_dsconv,
            eval_mode: self.eval_mode,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            lr: self.train_lr,
            momentum: self.train_momentum,
            loss: self.loss_mode,
            topo_weight: self.loss_topo_weight,
            warmup_epochs: self.loss_warmup_epochs,
            topo_patch: if self.loss_topo_patch == 0 { None } else { Some(self.loss_topo_patch) },
            offset_lr_scale: self.train_offset_lr_scale,
            seed: self.train_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("train.lrr", "0.1").unwrap_err();
        match err {
            CliError::Usage(msg) => assert!(msg.contains("train.lrr"), "{msg}"),
            CliError::Runtime(msg) => panic!("usage error expected, got runtime: {msg}"),
        }
    }

    #[test]
    fn every_documented_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (key, default, _) in KEY_DOCS {
            cfg.set(key, default).unwrap_or_else(|_| panic!("key {key} rejected its default"));
        }
    }

    #[test]
    fn file_overrides_then_flags_win() {
        let dir = std::env::temp_dir().join(format!("snakeseg-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\ntrain.lr = 0.2\nmodel.levels = 3 # inline\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.train_lr, 0.2);
        assert_eq!(cfg.model_levels, 3);
        cfg.apply_overrides(&["train.lr=0.3".into()]).unwrap();
        assert_eq!(cfg.train_lr, 0.3);
        std::fs::remove_dir_all(&dir).ok();
    }
}
