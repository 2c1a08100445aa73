use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diffusion::{
    AdamWConfig, CommitRule, LrSchedule, NoiseSchedule, SamplerConfig, ScheduleKind,
};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::tokenizer::TokenVocabulary;
use crate::transformer::ModelConfig;

/// Every pipeline knob, serializable as flat `section.key=value` lines.
///
/// `model.vocab_size` and `model.block_len` are derived from the tokenizer
/// settings and cannot be set directly.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub resolution: u32,
    pub vocab_block: u32,
    pub block_len: usize,
    pub len_min: usize,

    pub face_cap: usize,
    pub cluster_cap: usize,
    pub use_gt_labels: bool,
    pub segment_seed: u64,

    pub points: usize,
    pub points_min_per_part: usize,

    pub model: ModelConfig,
    pub schedule: ScheduleKind,
    pub t_eps: f64,

    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub train_seed: u64,
    pub checkpoint_every: usize,
    pub val_every: usize,
    /// Stop once an epoch's mean train cross-entropy per masked token falls
    /// below this; 0 disables.
    pub target_nats: f64,

    pub k: usize,
    pub temperature: f64,
    pub sample_seed: u64,

    pub metric_points: usize,
    pub emd_points: usize,
    pub emd_exact: usize,
    pub tau: f64,

    pub augment: bool,
    pub split_seed: u64,
    pub run_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            resolution: 128,
            vocab_block: 8,
            block_len: 256,
            len_min: 16,
            face_cap: 4000,
            cluster_cap: 16,
            use_gt_labels: true,
            segment_seed: 0,
            points: 4096,
            points_min_per_part: 8,
            model: ModelConfig::default(),
            schedule: ScheduleKind::Linear,
            t_eps: 1e-3,
            peak_lr: 3e-4,
            floor_lr: 1e-5,
            warmup: 0,
            weight_decay: 0.01,
            clip_norm: 1.0,
            epochs: 10,
            batch_size: 4,
            train_seed: 0,
            checkpoint_every: 5,
            val_every: 1,
            target_nats: 0.0,
            k: 1,
            temperature: 0.0,
            sample_seed: 0,
            metric_points: 8192,
            emd_points: 1024,
            emd_exact: 256,
            tau: 0.02,
            augment: true,
            split_seed: 0,
            run_dir: PathBuf::from("runs/default"),
        };
        cfg.sync_model();
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl PipelineConfig {
    /// Small settings for quick end-to-end runs on a CPU.
    pub fn toy() -> Self {
        let mut c = Self {
            resolution: 32,
            vocab_block: 4,
            block_len: 64,
            points: 1024,
            metric_points: 2048,
            emd_points: 256,
            ..Self::default()
        };
        c.model.hidden = 64;
        c.model.layers = 2;
        c.model.heads = 4;
        c.model.cond_dim = 64;
        c.model.encoder_hidden = 64;
        c.model.time_dim = 32;
        c.sync_model();
        c
    }

    pub fn vocab(&self) -> Result<TokenVocabulary> {
        TokenVocabulary::new(self.resolution, self.vocab_block)
    }

    fn sync_model(&mut self) {
        if let Ok(v) = TokenVocabulary::new(self.resolution, self.vocab_block) {
            self.model.vocab_size = v.size();
        }
        self.model.block_len = self.block_len;
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        if self.model.vocab_size != vocab.size() || self.model.block_len != self.block_len {
            return Err(Error::invalid("model settings disagree with tokenizer settings"));
        }
        self.model.validate()?;
        if self.len_min == 0 || self.len_min > self.block_len {
            return Err(Error::invalid("need 0 < len_min <= block_len"));
        }
        if self.k == 0 || self.block_len % self.k != 0 {
            return Err(Error::invalid(format!(
                "sampler.k = {} must divide block_len {}",
                self.k, self.block_len
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("metric.tau must be positive"));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(Error::invalid("diffusion.t_eps must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = key.trim();
        let v = v.trim();
        if let Some(rest) = key.strip_prefix("model.") {
            if rest == "vocab_size" || rest == "block_len" {
                return Err(Error::invalid(format!(
                    "{key} is derived from the tokenizer settings"
                )));
            }
            return self.model.set(rest, v);
        }
        match key {
            "quant.resolution" => self.resolution = parse(key, v)?,
            "tokenizer.block" => self.vocab_block = parse(key, v)?,
            "tokenizer.block_len" => self.block_len = parse(key, v)?,
            "tokenizer.len_min" => self.len_min = parse(key, v)?,
            "data.face_cap" => self.face_cap = parse(key, v)?,
            "data.augment" => self.augment = parse_bool(key, v)?,
            "data.split_seed" => self.split_seed = parse(key, v)?,
            "segment.cap" => self.cluster_cap = parse(key, v)?,
            "segment.use_gt" => self.use_gt_labels = parse_bool(key, v)?,
            "segment.seed" => self.segment_seed = parse(key, v)?,
            "points.count" => self.points = parse(key, v)?,
            "points.min_per_part" => self.points_min_per_part = parse(key, v)?,
            "diffusion.schedule" => self.schedule = v.parse()?,
            "diffusion.t_eps" => self.t_eps = parse(key, v)?,
            "optim.peak_lr" => self.peak_lr = parse(key, v)?,
            "optim.floor_lr" => self.floor_lr = parse(key, v)?,
            "optim.warmup" => self.warmup = parse(key, v)?,
            "optim.weight_decay" => self.weight_decay = parse(key, v)?,
            "optim.clip_norm" => self.clip_norm = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.seed" => self.train_seed = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.val_every" => self.val_every = parse(key, v)?,
            "train.target_nats" => self.target_nats = parse(key, v)?,
            "sampler.k" => self.k = parse(key, v)?,
            "sampler.temperature" => self.temperature = parse(key, v)?,
            "sampler.seed" => self.sample_seed = parse(key, v)?,
            "metric.n_points" => self.metric_points = parse(key, v)?,
            "metric.emd_points" => self.emd_points = parse(key, v)?,
            "metric.emd_exact" => self.emd_exact = parse(key, v)?,
            "metric.tau" => self.tau = parse(key, v)?,
            "run.dir" => self.run_dir = PathBuf::from(v),
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        self.sync_model();
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        self.sync_model();
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("quant.resolution", self.resolution.to_string());
        kv("tokenizer.block", self.vocab_block.to_string());
        kv("tokenizer.block_len", self.block_len.to_string());
        kv("tokenizer.len_min", self.len_min.to_string());
        kv("data.face_cap", self.face_cap.to_string());
        kv("data.augment", self.augment.to_string());
        kv("data.split_seed", self.split_seed.to_string());
        kv("segment.cap", self.cluster_cap.to_string());
        kv("segment.use_gt", self.use_gt_labels.to_string());
        kv("segment.seed", self.segment_seed.to_string());
        kv("points.count", self.points.to_string());
        kv("points.min_per_part", self.points_min_per_part.to_string());
        for line in self.model.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("model kv line");
            if k != "vocab_size" && k != "block_len" {
                kv(&format!("model.{k}"), v.to_string());
            }
        }
        kv("diffusion.schedule", self.schedule.to_string());
        kv("diffusion.t_eps", self.t_eps.to_string());
        kv("optim.peak_lr", self.peak_lr.to_string());
        kv("optim.floor_lr", self.floor_lr.to_string());
        kv("optim.warmup", self.warmup.to_string());
        kv("optim.weight_decay", self.weight_decay.to_string());
        kv("optim.clip_norm", self.clip_norm.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.seed", self.train_seed.to_string());
        kv("train.checkpoint_every", self.checkpoint_every.to_string());
        kv("train.val_every", self.val_every.to_string());
        kv("train.target_nats", self.target_nats.to_string());
        kv("sampler.k", self.k.to_string());
        kv("sampler.temperature", self.temperature.to_string());
        kv("sampler.seed", self.sample_seed.to_string());
        kv("metric.n_points", self.metric_points.to_string());
        kv("metric.emd_points", self.emd_points.to_string());
        kv("metric.emd_exact", self.emd_exact.to_string());
        kv("metric.tau", self.tau.to_string());
        kv("run.dir", self.run_dir.display().to_string());
        s
    }

    /// Writes the resolved settings to `dir/config.txt`.
    pub fn freeze(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn noise_schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            kind: self.schedule,
            t_eps: self.t_eps,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamWConfig::default()
        }
    }

    pub fn lr_schedule(&self, total_steps: u64) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            floor: self.floor_lr,
            warmup: self.warmup,
            total: total_steps,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.k,
            commit: if self.temperature > 0.0 {
                CommitRule::Temperature(self.temperature)
            } else {
                CommitRule::Argmax
            },
            seed: self.sample_seed,
        }
    }

    pub fn metric(&self) -> MetricConfig {
        MetricConfig {
            n_points: self.metric_points,
            emd_points: self.emd_points,
            n_exact: self.emd_exact,
            tau: self.tau,
            normalize: true,
        }
    }
}
