use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::losses::{LossConfig, LossKind};
use crate::metrics::THRESHOLD;
use crate::model::ModelConfig;

/// Everything a training run needs besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the split and the per-epoch shuffles.
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint period in epochs; 0 writes only the final one.
    pub eval_every: usize,
    /// Share of samples used for training; the rest is held out.
    pub train_fraction: f64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 50,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            data: None,
            checkpoint: None,
            eval_every: 0,
            train_fraction: 0.8,
            threshold: THRESHOLD,
        }
    }
}

const TRAIN_KEYS: [&str; 16] = [
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "loss",
    "focal_alpha",
    "focal_gamma",
    "w_background",
    "w_crack",
    "cwdl_alpha",
    "smooth",
    "data",
    "checkpoint",
    "eval_every",
    "train_fraction",
    "threshold",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid(format!("train_fraction {} outside (0, 1]", self.train_fraction)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let known: Vec<&str> = TRAIN_KEYS.iter().chain(ModelConfig::KEYS.iter()).copied().collect();
        m.check_known(&known)?;
        let mut c = Self {
            model: ModelConfig::from_kv(m)?,
            ..Self::default()
        };
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = m.parsed($key)? {
                    $field = v;
                }
            };
        }
        take!("lr", c.lr);
        take!("epochs", c.epochs);
        take!("batch_size", c.batch_size);
        take!("seed", c.seed);
        if let Some(k) = m.parsed::<LossKind>("loss")? {
            c.loss = LossConfig::new(k);
        }
        take!("focal_alpha", c.loss.focal_alpha);
        take!("focal_gamma", c.loss.focal_gamma);
        take!("w_background", c.loss.class_weights.0);
        take!("w_crack", c.loss.class_weights.1);
        take!("cwdl_alpha", c.loss.cwdl_alpha);
        take!("smooth", c.loss.smooth);
        c.data = m.get("data").map(PathBuf::from);
        c.checkpoint = m.get("checkpoint").map(PathBuf::from);
        take!("eval_every", c.eval_every);
        take!("train_fraction", c.train_fraction);
        take!("threshold", c.threshold);
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = self.model.to_kv();
        m.set("lr", self.lr);
        m.set("epochs", self.epochs);
        m.set("batch_size", self.batch_size);
        m.set("seed", self.seed);
        m.set("loss", self.loss.kind);
        m.set("focal_alpha", self.loss.focal_alpha);
        m.set("focal_gamma", self.loss.focal_gamma);
        m.set("w_background", self.loss.class_weights.0);
        m.set("w_crack", self.loss.class_weights.1);
        m.set("cwdl_alpha", self.loss.cwdl_alpha);
        m.set("smooth", self.loss.smooth);
        if let Some(d) = &self.data {
            m.set("data", d.display());
        }
        if let Some(c) = &self.checkpoint {
            m.set("checkpoint", c.display());
        }
        m.set("eval_every", self.eval_every);
        m.set("train_fraction", self.train_fraction);
        m.set("threshold", self.threshold);
        m
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&KvMap::parse(&text)?)
    }

    /// One-line echo used in error messages.
    pub fn summary(&self) -> String {
        self.to_kv().to_text().trim_end().replace('\n', ", ")
    }
}
