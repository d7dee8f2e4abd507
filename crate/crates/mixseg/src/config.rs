//! Experiment configuration: JSON schemas for the `gen-data`, `train`, and
//! `sweep` commands, with explicit field validation.
//!
//! Unknown or missing fields are reported by name. All hyperparameter
//! defaults follow the reference training recipe (SGD momentum 0.9, weight
//! decay 5e-4, initial learning rate 2.5e-4 with polynomial decay).

use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::data::{default_class_colors, ShapesSceneSpec};
use crate::error::{Error, Result};
use crate::losses::UnsupNorm;
use crate::maskgen::{ClassSampling, ComplexMixSpec};

/// Mask strategy for the unsupervised branch. `None` disables the branch
/// entirely (supervised-only baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cutmix,
    Classmix,
    Complexmix,
    None,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Cutmix => "cutmix",
            Strategy::Classmix => "classmix",
            Strategy::Complexmix => "complexmix",
            Strategy::None => "none",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cutmix" => Ok(Strategy::Cutmix),
            "classmix" => Ok(Strategy::Classmix),
            "complexmix" => Ok(Strategy::Complexmix),
            "none" => Ok(Strategy::None),
            other => Err(Error::config(format!(
                "unknown strategy `{other}`, expected cutmix|classmix|complexmix|none"
            ))),
        }
    }
}

/// All hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "d_labeled_fraction")]
    pub labeled_fraction: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_total_iters")]
    pub total_iters: usize,
    /// Supervised warmup length; defaults to 10% of `total_iters`.
    #[serde(default)]
    pub warmup_iters: Option<usize>,
    /// Validation evaluation period; defaults to `total_iters / 10`.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_poly_power")]
    pub poly_power: f64,
    #[serde(default = "d_ema_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// Linear ramp of lambda over this many iterations after warmup
    /// (0 = constant lambda).
    #[serde(default)]
    pub lambda_ramp_iters: usize,
    #[serde(default = "d_p_choices")]
    pub p_choices: Vec<usize>,
    /// ComplexMix per-block sampling domain (ablation toggle).
    #[serde(default)]
    pub complexmix_sampling: ClassSampling,
    /// Unsupervised loss normalization.
    #[serde(default)]
    pub unsup_norm: UnsupNorm,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
}

fn d_labeled_fraction() -> f64 {
    0.125
}
fn d_batch_size() -> usize {
    2
}
fn d_total_iters() -> usize {
    600
}
fn d_lr0() -> f64 {
    2.5e-4
}
fn d_momentum() -> f64 {
    0.9
}
fn d_weight_decay() -> f64 {
    5e-4
}
fn d_poly_power() -> f64 {
    0.9
}
fn d_ema_alpha() -> f64 {
    0.99
}
fn d_tau() -> f64 {
    0.95
}
fn d_lambda() -> f64 {
    1.0
}
fn d_p_choices() -> Vec<usize> {
    vec![4, 16, 64, 128]
}
fn d_strategy() -> Strategy {
    Strategy::Complexmix
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn resolved_warmup(&self) -> usize {
        self.warmup_iters.unwrap_or(self.total_iters / 10)
    }

    pub fn resolved_eval_every(&self) -> usize {
        self.eval_every.unwrap_or(self.total_iters / 10).max(1)
    }

    pub fn complexmix_spec(&self) -> ComplexMixSpec {
        ComplexMixSpec {
            p_choices: self.p_choices.clone(),
            sampling: self.complexmix_sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::config(format!("field `{name}`: {msg}"));
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(field(
                "labeled_fraction",
                format!("{} outside (0, 1]", self.labeled_fraction),
            ));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be >= 1".into()));
        }
        if self.total_iters == 0 {
            return Err(field("total_iters", "must be >= 1".into()));
        }
        if self.resolved_warmup() > self.total_iters {
            return Err(field(
                "warmup_iters",
                format!("{} exceeds total_iters {}", self.resolved_warmup(), self.total_iters),
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(field("lr0", format!("{} not a positive real", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(field("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(field("weight_decay", format!("{} negative", self.weight_decay)));
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            return Err(field("poly_power", format!("{} negative", self.poly_power)));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(field("ema_alpha", format!("{} outside [0, 1]", self.ema_alpha)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(field("tau", format!("{} outside (0, 1]", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(field("lambda", format!("{} negative", self.lambda)));
        }
        if self.strategy == Strategy::Complexmix {
            self.complexmix_spec()
                .validate()
                .map_err(|e| field("p_choices", e.to_string()))?;
        }
        Ok(())
    }
}

/// File schema for `mixseg train`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub dataset_dir: PathBuf,
    #[serde(default = "d_run_dir")]
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

fn d_run_dir() -> PathBuf {
    PathBuf::from("run")
}

/// File schema for `mixseg gen-data`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenDataConfig {
    #[serde(default = "d_data_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "d_canvas")]
    pub canvas: [usize; 2],
    #[serde(default = "d_num_classes")]
    pub num_classes: usize,
    #[serde(default = "d_train_images")]
    pub train_images: usize,
    #[serde(default = "d_val_images")]
    pub val_images: usize,
    #[serde(default = "d_shapes_per_image")]
    pub shapes_per_image: [usize; 2],
    #[serde(default = "d_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "d_color_jitter")]
    pub color_jitter: f64,
    #[serde(default = "d_labeled_fraction")]
    pub labeled_fraction: f64,
    /// RGB mean per class; defaults to the built-in palette.
    #[serde(default)]
    pub class_colors: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub seed: u64,
}

fn d_data_dir() -> PathBuf {
    PathBuf::from("data")
}
fn d_canvas() -> [usize; 2] {
    [32, 32]
}
fn d_num_classes() -> usize {
    4
}
fn d_train_images() -> usize {
    240
}
fn d_val_images() -> usize {
    60
}
fn d_shapes_per_image() -> [usize; 2] {
    [1, 3]
}
fn d_noise_sigma() -> f64 {
    0.1
}
fn d_color_jitter() -> f64 {
    0.3
}

impl Default for GenDataConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are valid")
    }
}

impl GenDataConfig {
    pub fn scene_spec(&self) -> ShapesSceneSpec {
        ShapesSceneSpec {
            height: self.canvas[0],
            width: self.canvas[1],
            num_classes: self.num_classes,
            min_shapes: self.shapes_per_image[0],
            max_shapes: self.shapes_per_image[1],
            noise_sigma: self.noise_sigma,
            color_jitter: self.color_jitter,
            class_colors: self
                .class_colors
                .clone()
                .unwrap_or_else(|| default_class_colors(self.num_classes)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_spec()
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        if self.train_images == 0 || self.val_images == 0 {
            return Err(Error::config(
                "field `train_images`/`val_images`: must be positive",
            ));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::config(format!(
                "field `labeled_fraction`: {} outside (0, 1]",
                self.labeled_fraction
            )));
        }
        Ok(())
    }
}

/// File schema for `mixseg sweep`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepConfig {
    pub dataset_dir: PathBuf,
    #[serde(default = "d_sweep_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "d_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "d_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    /// Hyperparameters shared by every cell; `labeled_fraction`, `strategy`,
    /// and `seed` are overridden per cell.
    #[serde(default)]
    pub base: ExperimentConfig,
}

fn d_sweep_dir() -> PathBuf {
    PathBuf::from("sweep")
}
fn d_strategies() -> Vec<Strategy> {
    vec![Strategy::None, Strategy::Complexmix]
}
fn d_fractions() -> Vec<f64> {
    vec![0.125]
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(
                "fields `strategies`, `fractions`, `seeds` must be non-empty",
            ));
        }
        self.base.validate()
    }
}

const EXPERIMENT_KEYS: &[&str] = &[
    "labeled_fraction",
    "batch_size",
    "total_iters",
    "warmup_iters",
    "eval_every",
    "lr0",
    "momentum",
    "weight_decay",
    "poly_power",
    "ema_alpha",
    "tau",
    "lambda",
    "lambda_ramp_iters",
    "p_choices",
    "complexmix_sampling",
    "unsup_norm",
    "strategy",
    "seed",
];

const GEN_DATA_KEYS: &[&str] = &[
    "out_dir",
    "canvas",
    "num_classes",
    "train_images",
    "val_images",
    "shapes_per_image",
    "noise_sigma",
    "color_jitter",
    "labeled_fraction",
    "class_colors",
    "seed",
];

const SWEEP_KEYS: &[&str] = &[
    "dataset_dir",
    "out_dir",
    "strategies",
    "fractions",
    "seeds",
    "base",
];

fn json_object(text: &str, origin: &str) -> Result<serde_json::Map<String, Value>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("{origin}: invalid JSON: {e}")))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(Error::config(format!("{origin}: config must be a JSON object"))),
    }
}

fn read_json_object(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    json_object(&text, &path.display().to_string())
}

fn check_fields(
    map: &serde_json::Map<String, Value>,
    allowed: &[&str],
    required: &[&str],
    what: &str,
) -> Result<()> {
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "{what}: unknown field `{key}` (expected one of: {})",
                allowed.join(", ")
            )));
        }
    }
    for req in required {
        if !map.contains_key(*req) {
            return Err(Error::config(format!(
                "{what}: missing required field `{req}`"
            )));
        }
    }
    Ok(())
}

fn from_map<T: serde::de::DeserializeOwned>(
    map: serde_json::Map<String, Value>,
    what: &str,
) -> Result<T> {
    serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::config(format!("{what}: {e}")))
}

fn gen_data_from_map(map: serde_json::Map<String, Value>) -> Result<GenDataConfig> {
    check_fields(&map, GEN_DATA_KEYS, &["seed"], "gen-data config")?;
    let cfg: GenDataConfig = from_map(map, "gen-data config")?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_from_map(map: serde_json::Map<String, Value>) -> Result<TrainConfig> {
    let allowed: Vec<&str> = ["dataset_dir", "out_dir"]
        .into_iter()
        .chain(EXPERIMENT_KEYS.iter().copied())
        .collect();
    check_fields(&map, &allowed, &["dataset_dir", "seed"], "train config")?;
    let cfg: TrainConfig = from_map(map, "train config")?;
    cfg.experiment.validate()?;
    Ok(cfg)
}

pub fn load_gen_data_config(path: &Path) -> Result<GenDataConfig> {
    gen_data_from_map(read_json_object(path)?)
}

/// Parse a gen-data config from a JSON string (e.g. over the C ABI).
pub fn parse_gen_data_config(text: &str) -> Result<GenDataConfig> {
    gen_data_from_map(json_object(text, "gen-data config")?)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    train_from_map(read_json_object(path)?)
}

/// Parse a train config from a JSON string (e.g. over the C ABI).
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    train_from_map(json_object(text, "train config")?)
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let map = read_json_object(path)?;
    check_fields(&map, SWEEP_KEYS, &["dataset_dir"], "sweep config")?;
    if let Some(Value::Object(base)) = map.get("base") {
        check_fields(base, EXPERIMENT_KEYS, &[], "sweep config `base`")?;
    }
    let cfg: SweepConfig = from_map(map, "sweep config")?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn defaults_match_training_recipe() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lr0, 2.5e-4);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(cfg.poly_power, 0.9);
        assert_eq!(cfg.ema_alpha, 0.99);
        assert_eq!(cfg.tau, 0.95);
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.p_choices, vec![4, 16, 64, 128]);
        assert_eq!(cfg.strategy, Strategy::Complexmix);
        assert_eq!(cfg.resolved_warmup(), 60);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_required_field_is_named() {
        let (_d, path) = write_tmp(r#"{"dataset_dir": "data"}"#);
        let err = load_train_config(&path).unwrap_err();
        assert!(err.to_string().contains("`seed`"), "{err}");
    }

    #[test]
    fn unknown_field_is_named() {
        let (_d, path) = write_tmp(r#"{"dataset_dir": "data", "seed": 1, "lr00": 0.1}"#);
        let err = load_train_config(&path).unwrap_err();
        assert!(err.to_string().contains("`lr00`"), "{err}");
    }

    #[test]
    fn range_violations_name_the_field() {
        let (_d, path) =
            write_tmp(r#"{"dataset_dir": "data", "seed": 1, "labeled_fraction": 1.5}"#);
        let err = load_train_config(&path).unwrap_err();
        assert!(err.to_string().contains("labeled_fraction"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn strategy_round_trips_through_strings() {
        for s in [Strategy::Cutmix, Strategy::Classmix, Strategy::Complexmix, Strategy::None] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("covermix".parse::<Strategy>().is_err());
    }

    #[test]
    fn gen_data_defaults_and_validation() {
        let (_d, path) = write_tmp(r#"{"seed": 7}"#);
        let cfg = load_gen_data_config(&path).unwrap();
        assert_eq!(cfg.train_images, 240);
        assert_eq!(cfg.val_images, 60);
        assert_eq!(cfg.canvas, [32, 32]);
        assert_eq!(cfg.num_classes, 4);
        let spec = cfg.scene_spec();
        spec.validate().unwrap();

        let (_d2, bad) = write_tmp(r#"{"seed": 7, "num_classes": 1}"#);
        assert!(load_gen_data_config(&bad).is_err());
    }

    #[test]
    fn sweep_config_parses_with_base_overrides() {
        let (_d, path) = write_tmp(
            r#"{
                "dataset_dir": "data",
                "strategies": ["none", "complexmix"],
                "fractions": [0.125, 0.25],
                "seeds": [0, 1],
                "base": {"total_iters": 50, "tau": 0.9}
            }"#,
        );
        let cfg = load_sweep_config(&path).unwrap();
        assert_eq!(cfg.base.total_iters, 50);
        assert_eq!(cfg.base.tau, 0.9);
        assert_eq!(cfg.strategies.len(), 2);

        let (_d2, bad) = write_tmp(r#"{"dataset_dir": "d", "base": {"taus": 0.9}}"#);
        let err = load_sweep_config(&bad).unwrap_err();
        assert!(err.to_string().contains("`taus`"), "{err}");
    }

    #[test]
    fn warmup_validation() {
        let mut cfg = ExperimentConfig {
            total_iters: 10,
            warmup_iters: Some(11),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.warmup_iters = Some(10);
        cfg.validate().unwrap();
    }
}
