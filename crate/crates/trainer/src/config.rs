//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Every key of
//! [`TrainConfig`] is accepted and nothing else. Paths may be set to `none` to clear them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use losses::LossWeights;
use phantom::{DatasetSpec, PhantomSpec, SplitSizes};
use sha2::{Digest, Sha256};
use tensorgrad::Precision;

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Dataset directory written by `gen-data`; when unset the dataset is generated in memory.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Stage I checkpoint used to initialize Stage II; when unset encoders start from scratch.
    pub pretrained: Option<PathBuf>,

    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub organs: usize,
    pub phantom_noise: f64,
    pub phantom_distractors: usize,
    pub phantom_bias_field: f64,
    pub volumes: usize,
    pub labeled_volumes: usize,
    pub unlabeled_volumes: usize,
    pub val_volumes: usize,
    pub test_volumes: usize,
    pub data_seed: u64,

    pub stage1_epochs: usize,
    pub stage1_batch: usize,
    pub stage1_lr: f64,
    pub stage1_momentum: f64,
    pub threshold: f64,

    pub stage2_epochs: usize,
    pub stage2_batch: usize,
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    pub stage2_lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3_peak: f64,
    /// 1-based epoch from which the local contrastive term is used.
    pub lcl_start_epoch: usize,
    pub lcl_enabled: bool,
    pub use_unlabeled: bool,
    pub bank_capacity: usize,
    pub ema_alpha: f64,
    pub tau: f64,
    pub input_noise: f64,
    /// Stop Stage II after this many optimizer steps (0 = run every epoch in full).
    pub max_steps: usize,

    pub seed: u64,
    pub precision: Precision,
    pub eval_teacher: bool,
    /// Keep the Stage II pair from the epoch with the best validation Dice
    /// instead of the last one. Ignored when there is no validation split.
    pub select_best_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: None,
            out_dir: PathBuf::from("runs/default"),
            pretrained: None,
            height: 32,
            width: 32,
            depth: 16,
            organs: 3,
            phantom_noise: 0.05,
            phantom_distractors: 0,
            phantom_bias_field: 0.0,
            volumes: 40,
            labeled_volumes: 4,
            unlabeled_volumes: 28,
            val_volumes: 2,
            test_volumes: 6,
            data_seed: 0,
            stage1_epochs: 40,
            stage1_batch: 32,
            stage1_lr: 5e-4,
            stage1_momentum: 0.9,
            threshold: 0.65,
            stage2_epochs: 30,
            stage2_batch: 8,
            labeled_per_batch: 4,
            unlabeled_per_batch: 4,
            stage2_lr: 5e-4,
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3_peak: 0.1,
            lcl_start_epoch: 9,
            lcl_enabled: true,
            use_unlabeled: true,
            bank_capacity: losses::DEFAULT_BANK_CAPACITY,
            ema_alpha: nets::DEFAULT_EMA_DECAY,
            tau: 0.1,
            input_noise: 0.1,
            max_steps: 0,
            seed: 0,
            precision: Precision::Single,
            eval_teacher: false,
            select_best_val: true,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value.parse().map_err(|e: V::Err| TrainError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        detail: e.to_string(),
    })
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (value != "none" && !value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_owned(), |p| p.display().to_string())
}

fn parse_precision(key: &str, value: &str) -> Result<Precision> {
    match value {
        "single" | "f32" => Ok(Precision::Single),
        "double" | "f64" => Ok(Precision::Double),
        _ => Err(TrainError::BadValue {
            key: key.to_owned(),
            value: value.to_owned(),
            detail: "expected single or double".into(),
        }),
    }
}

impl TrainConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data_dir", show_path(&self.data_dir)),
            ("out_dir", self.out_dir.display().to_string()),
            ("pretrained", show_path(&self.pretrained)),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("depth", self.depth.to_string()),
            ("organs", self.organs.to_string()),
            ("phantom_noise", self.phantom_noise.to_string()),
            ("phantom_distractors", self.phantom_distractors.to_string()),
            ("phantom_bias_field", self.phantom_bias_field.to_string()),
            ("volumes", self.volumes.to_string()),
            ("labeled_volumes", self.labeled_volumes.to_string()),
            ("unlabeled_volumes", self.unlabeled_volumes.to_string()),
            ("val_volumes", self.val_volumes.to_string()),
            ("test_volumes", self.test_volumes.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("stage1_epochs", self.stage1_epochs.to_string()),
            ("stage1_batch", self.stage1_batch.to_string()),
            ("stage1_lr", self.stage1_lr.to_string()),
            ("stage1_momentum", self.stage1_momentum.to_string()),
            ("threshold", self.threshold.to_string()),
            ("stage2_epochs", self.stage2_epochs.to_string()),
            ("stage2_batch", self.stage2_batch.to_string()),
            ("labeled_per_batch", self.labeled_per_batch.to_string()),
            ("unlabeled_per_batch", self.unlabeled_per_batch.to_string()),
            ("stage2_lr", self.stage2_lr.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lambda3_peak", self.lambda3_peak.to_string()),
            ("lcl_start_epoch", self.lcl_start_epoch.to_string()),
            ("lcl_enabled", self.lcl_enabled.to_string()),
            ("use_unlabeled", self.use_unlabeled.to_string()),
            ("bank_capacity", self.bank_capacity.to_string()),
            ("ema_alpha", self.ema_alpha.to_string()),
            ("tau", self.tau.to_string()),
            ("input_noise", self.input_noise.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.as_str().to_owned()),
            ("eval_teacher", self.eval_teacher.to_string()),
            ("select_best_val", self.select_best_val.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data_dir" => self.data_dir = parse_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "pretrained" => self.pretrained = parse_path(v),
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "organs" => self.organs = parse(key, v)?,
            "phantom_noise" => self.phantom_noise = parse(key, v)?,
            "phantom_distractors" => self.phantom_distractors = parse(key, v)?,
            "phantom_bias_field" => self.phantom_bias_field = parse(key, v)?,
            "volumes" => self.volumes = parse(key, v)?,
            "labeled_volumes" => self.labeled_volumes = parse(key, v)?,
            "unlabeled_volumes" => self.unlabeled_volumes = parse(key, v)?,
            "val_volumes" => self.val_volumes = parse(key, v)?,
            "test_volumes" => self.test_volumes = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, v)?,
            "stage1_batch" => self.stage1_batch = parse(key, v)?,
            "stage1_lr" => self.stage1_lr = parse(key, v)?,
            "stage1_momentum" => self.stage1_momentum = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "stage2_epochs" => self.stage2_epochs = parse(key, v)?,
            "stage2_batch" => self.stage2_batch = parse(key, v)?,
            "labeled_per_batch" => self.labeled_per_batch = parse(key, v)?,
            "unlabeled_per_batch" => self.unlabeled_per_batch = parse(key, v)?,
            "stage2_lr" => self.stage2_lr = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "lambda3_peak" => self.lambda3_peak = parse(key, v)?,
            "lcl_start_epoch" => self.lcl_start_epoch = parse(key, v)?,
            "lcl_enabled" => self.lcl_enabled = parse(key, v)?,
            "use_unlabeled" => self.use_unlabeled = parse(key, v)?,
            "bank_capacity" => self.bank_capacity = parse(key, v)?,
            "ema_alpha" => self.ema_alpha = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "input_noise" => self.input_noise = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "precision" => self.precision = parse_precision(key, v)?,
            "eval_teacher" => self.eval_teacher = parse(key, v)?,
            "select_best_val" => self.select_best_val = parse(key, v)?,
            _ => return Err(TrainError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::ConfigSyntax {
                line: i + 1,
                detail: format!("expected `key = value`, got {line:?}"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Applies `--key value` pairs (the leading dashes are optional).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(flag) = it.next() {
            let key = flag.trim_start_matches("--");
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v.to_owned()),
                None => {
                    let v = it.next().ok_or_else(|| TrainError::Invalid(format!("flag {flag} needs a value")))?;
                    (key, v.to_owned())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an identical config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Invalid(msg));
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("depth", self.depth),
            ("organs", self.organs),
            ("volumes", self.volumes),
            ("labeled_volumes", self.labeled_volumes),
            ("val_volumes", self.val_volumes),
            ("test_volumes", self.test_volumes),
            ("stage1_epochs", self.stage1_epochs),
            ("stage1_batch", self.stage1_batch),
            ("stage2_epochs", self.stage2_epochs),
            ("stage2_batch", self.stage2_batch),
            ("labeled_per_batch", self.labeled_per_batch),
            ("bank_capacity", self.bank_capacity),
            ("lcl_start_epoch", self.lcl_start_epoch),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.height % 8 != 0 || self.width % 8 != 0 {
            return bad(format!("height and width must be multiples of 8, got {}×{}", self.height, self.width));
        }
        if self.labeled_per_batch + self.unlabeled_per_batch != self.stage2_batch {
            return bad(format!(
                "labeled_per_batch ({}) + unlabeled_per_batch ({}) must equal stage2_batch ({})",
                self.labeled_per_batch, self.unlabeled_per_batch, self.stage2_batch
            ));
        }
        if self.use_unlabeled && (self.unlabeled_per_batch == 0 || self.unlabeled_volumes == 0) {
            return bad("use_unlabeled needs unlabeled_per_batch > 0 and unlabeled_volumes > 0".into());
        }
        let split = self.labeled_volumes + self.unlabeled_volumes + self.val_volumes + self.test_volumes;
        if split > self.volumes {
            return bad(format!("splits use {split} volumes but only {} exist", self.volumes));
        }
        for (name, lr) in [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.stage1_momentum) {
            return bad(format!("stage1_momentum must lie in [0, 1), got {}", self.stage1_momentum));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            return bad(format!("ema_alpha must lie in (0, 1), got {}", self.ema_alpha));
        }
        if !(self.input_noise >= 0.0 && self.phantom_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        self.loss_weights().validate()?;
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3_peak: self.lambda3_peak,
            threshold: self.threshold,
            tau: self.tau,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            phantom: PhantomSpec {
                depth: self.depth,
                height: self.height,
                width: self.width,
                organs: self.organs,
                noise_sigma: self.phantom_noise,
                distractors: self.phantom_distractors,
                bias_field: self.phantom_bias_field,
                ..PhantomSpec::default()
            },
            volumes: self.volumes,
            sizes: SplitSizes {
                labeled: self.labeled_volumes,
                unlabeled: self.unlabeled_volumes,
                val: self.val_volumes,
                test: self.test_volumes,
            },
            seed: self.data_seed,
        }
    }
}
