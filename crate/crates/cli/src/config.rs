//! Plain-text `key = value` run configuration. `#` starts a comment; unknown
//! or repeated keys are errors reported with their line number.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use autosnap::autoencoder::AeConfig;
use autosnap::net::MacroConfig;
use autosnap::pose::{EnvConfig, PatchSpec, TrainConfig};
use autosnap::search::SearchConfig;
use autosnap::tensor::OptimizerKind;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub env: EnvConfig,
    pub macro_cfg: MacroConfig,
    pub candidate_epochs: usize,
    pub candidate_batch: usize,
    pub candidate_lr: f64,
    pub train_seed: u64,
    pub ae: AeConfig,
    pub ae_seed: u64,
    /// Loaded if present; otherwise the pretrained model is written here.
    pub ae_checkpoint: Option<PathBuf>,
    pub ae_pretrain_epochs: usize,
    pub ae_pretrain_corpus: usize,
    pub full_epochs: usize,
    pub full_batch: usize,
    pub full_lr: f64,
    pub full_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    /// Desk scale: 300 evaluations of 5-epoch candidates on 2,000 base poses.
    fn default() -> Self {
        Self {
            search: SearchConfig {
                budget_total: 300,
                ..SearchConfig::default()
            },
            env: EnvConfig::micro(),
            macro_cfg: MacroConfig::search(),
            candidate_epochs: 5,
            candidate_batch: 32,
            candidate_lr: 3e-3,
            train_seed: 0,
            ae: AeConfig::default(),
            ae_seed: 0,
            ae_checkpoint: None,
            ae_pretrain_epochs: 200,
            ae_pretrain_corpus: 5000,
            full_epochs: 80,
            full_batch: 32,
            full_lr: 1e-3,
            full_seed: 0,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?} as {what}"))
}

fn patch_spec(size: usize) -> Result<PatchSpec, String> {
    match size {
        32 => Ok(PatchSpec::full()),
        16 => Ok(PatchSpec::half()),
        _ => Err(format!("patch_size must be 16 or 32, got {size}")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("{key} is set twice")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.check().map_err(|msg| ConfigError { line: 0, msg })?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let int = "a non-negative integer";
        let real = "a number";
        match key {
            "n_initial" => self.search.n_initial = parse(key, v, int)?,
            "n_per_iteration" => self.search.n_per_iteration = parse(key, v, int)?,
            "budget_total" => self.search.budget_total = parse(key, v, int)?,
            "ascent_step" => self.search.ascent_step = parse(key, v, real)?,
            "ascent_limit" => self.search.ascent_limit = parse(key, v, int)?,
            "elite_batch" => self.search.elite_batch = parse(key, v, int)?,
            "retrain_epochs" => self.search.retrain_epochs = parse(key, v, int)?,
            "seed" => self.search.seed = parse(key, v, int)?,
            "worker_count" => self.search.worker_count = parse(key, v, int)?,
            "record_wall_time" => self.search.record_wall_time = parse(key, v, "true or false")?,
            "n_train" => self.env.n_train = parse(key, v, int)?,
            "n_eval" => self.env.n_eval = parse(key, v, int)?,
            "augment_fold" => self.env.augment_fold = parse(key, v, int)?,
            "env_seed" => self.env.seed = parse(key, v, int)?,
            "patch_size" => self.env.patch = patch_spec(parse(key, v, int)?)?,
            "blocks_total" => self.macro_cfg.blocks_total = parse(key, v, int)?,
            "width_pre" => self.macro_cfg.width_pre = parse(key, v, int)?,
            "width_post" => self.macro_cfg.width_post = parse(key, v, int)?,
            "candidate_epochs" => self.candidate_epochs = parse(key, v, int)?,
            "candidate_batch" => self.candidate_batch = parse(key, v, int)?,
            "candidate_lr" => self.candidate_lr = parse(key, v, real)?,
            "train_seed" => self.train_seed = parse(key, v, int)?,
            "ae_hidden" => self.ae.hidden = parse(key, v, int)?,
            "ae_dense" => self.ae.dense = parse(key, v, int)?,
            "ae_latent" => self.ae.latent = parse(key, v, int)?,
            "ae_batch" => self.ae.batch_size = parse(key, v, int)?,
            "ae_lr" => self.ae.lr = parse(key, v, real)?,
            "ae_seed" => self.ae_seed = parse(key, v, int)?,
            "ae_checkpoint" => self.ae_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "ae_pretrain_epochs" => self.ae_pretrain_epochs = parse(key, v, int)?,
            "ae_pretrain_corpus" => self.ae_pretrain_corpus = parse(key, v, int)?,
            "full_epochs" => self.full_epochs = parse(key, v, int)?,
            "full_batch" => self.full_batch = parse(key, v, int)?,
            "full_lr" => self.full_lr = parse(key, v, real)?,
            "full_seed" => self.full_seed = parse(key, v, int)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), String> {
        self.search.check().map_err(|e| e.to_string())?;
        self.macro_cfg.check().map_err(|e| e.to_string())?;
        let positive = [
            ("candidate_epochs", self.candidate_epochs),
            ("candidate_batch", self.candidate_batch),
            ("ae_hidden", self.ae.hidden),
            ("ae_dense", self.ae.dense),
            ("ae_latent", self.ae.latent),
            ("ae_batch", self.ae.batch_size),
            ("full_batch", self.full_batch),
            ("n_eval", self.env.n_eval),
            ("augment_fold", self.env.augment_fold),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(format!("{k} must be positive"));
            }
        }
        if self.env.n_train < 10 {
            return Err("n_train must be at least 10".into());
        }
        for (k, v) in [("candidate_lr", self.candidate_lr), ("ae_lr", self.ae.lr), ("full_lr", self.full_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{k} must be a positive number"));
            }
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order; parsing the
    /// result gives back the same config.
    pub fn to_text(&self) -> String {
        let s = &self.search;
        let mut out = String::new();
        let entries: Vec<(&str, String)> = vec![
            ("n_initial", s.n_initial.to_string()),
            ("n_per_iteration", s.n_per_iteration.to_string()),
            ("budget_total", s.budget_total.to_string()),
            ("ascent_step", s.ascent_step.to_string()),
            ("ascent_limit", s.ascent_limit.to_string()),
            ("elite_batch", s.elite_batch.to_string()),
            ("retrain_epochs", s.retrain_epochs.to_string()),
            ("seed", s.seed.to_string()),
            ("worker_count", s.worker_count.to_string()),
            ("record_wall_time", s.record_wall_time.to_string()),
            ("n_train", self.env.n_train.to_string()),
            ("n_eval", self.env.n_eval.to_string()),
            ("augment_fold", self.env.augment_fold.to_string()),
            ("env_seed", self.env.seed.to_string()),
            ("patch_size", self.env.patch.size.to_string()),
            ("blocks_total", self.macro_cfg.blocks_total.to_string()),
            ("width_pre", self.macro_cfg.width_pre.to_string()),
            ("width_post", self.macro_cfg.width_post.to_string()),
            ("candidate_epochs", self.candidate_epochs.to_string()),
            ("candidate_batch", self.candidate_batch.to_string()),
            ("candidate_lr", self.candidate_lr.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("ae_hidden", self.ae.hidden.to_string()),
            ("ae_dense", self.ae.dense.to_string()),
            ("ae_latent", self.ae.latent.to_string()),
            ("ae_batch", self.ae.batch_size.to_string()),
            ("ae_lr", self.ae.lr.to_string()),
            ("ae_seed", self.ae_seed.to_string()),
            (
                "ae_checkpoint",
                self.ae_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("ae_pretrain_epochs", self.ae_pretrain_epochs.to_string()),
            ("ae_pretrain_corpus", self.ae_pretrain_corpus.to_string()),
            ("full_epochs", self.full_epochs.to_string()),
            ("full_batch", self.full_batch.to_string()),
            ("full_lr", self.full_lr.to_string()),
            ("full_seed", self.full_seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        for (k, v) in entries {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// Hash of everything that influences results (worker count and output
    /// location excluded).
    pub fn content_hash(&self) -> String {
        let normalized = RunConfig {
            search: SearchConfig {
                worker_count: 1,
                ..self.search
            },
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(normalized.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn candidate_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.candidate_batch,
            optimizer: OptimizerKind::adam(self.candidate_lr),
            ..TrainConfig::candidate(self.candidate_epochs, self.train_seed)
        }
    }

    pub fn full_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.full_batch,
            optimizer: OptimizerKind::rmsprop(self.full_lr),
            ..TrainConfig::full(self.full_epochs, self.full_seed)
        }
    }
}
