//! Run configuration: defaults, then a `key = value` file, then an
//! optional `EPICA_SEED` override, then command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Setting, SyntheticWorldConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "EPICA_SEED";

/// Which training phases `train` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSel {
    Inductive,
    All,
}

impl FromStr for PhaseSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(PhaseSel::Inductive),
            "all" => Ok(PhaseSel::All),
            other => Err(Error::Config(format!("unknown phase `{other}` (expected inductive or all)"))),
        }
    }
}

impl std::fmt::Display for PhaseSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhaseSel::Inductive => "inductive",
            PhaseSel::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub setting: Setting,
    pub phase: PhaseSel,
    /// 0 keeps the worker pool's default size.
    pub threads: usize,
    /// Fraction of each seen pair's images held out in the generalized split.
    pub holdout: f64,

    pub features: PathBuf,
    pub split: PathBuf,
    pub vocab: PathBuf,
    /// Word vectors; random rows of `embed_dim` are used when unset.
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub scores: PathBuf,

    pub model: ModelConfig,
    pub embed_dim: usize,
    pub freeze_embeddings: bool,
    pub train: TrainConfig,
    pub world: SyntheticWorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            setting: Setting::Conventional,
            phase: PhaseSel::All,
            threads: 0,
            holdout: 0.2,
            features: "data/features.bin".into(),
            split: "data/split.txt".into(),
            vocab: "data/vocab.txt".into(),
            embeddings: None,
            out_dir: "runs".into(),
            checkpoint: "runs/final.ckpt".into(),
            report: "runs/report.json".into(),
            scores: "runs/scores.csv".into(),
            model: ModelConfig::default(),
            embed_dim: 300,
            freeze_embeddings: false,
            train: TrainConfig::default(),
            world: SyntheticWorldConfig::default(),
        }
    }
}

/// Every configurable key, in file order.
pub const KEYS: &[&str] = &[
    "seed",
    "setting",
    "phase",
    "threads",
    "holdout",
    "features",
    "split",
    "vocab",
    "embeddings",
    "out_dir",
    "checkpoint",
    "report",
    "scores",
    "joint_dim",
    "hidden",
    "lambda",
    "variant",
    "embed_dim",
    "freeze_embeddings",
    "n_t",
    "batch_size",
    "lr",
    "lr_decay",
    "decay_every",
    "epochs_inductive",
    "epochs_transductive",
    "sample_interval",
    "gamma",
    "q",
    "n_attrs",
    "n_objs",
    "blocks",
    "feature_dim",
    "attr_blocks",
    "obj_blocks",
    "noise_sigma",
    "signature_norm",
    "images_per_pair",
    "seen_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "setting" => self.setting = v.parse()?,
            "phase" => self.phase = v.parse()?,
            "threads" => self.threads = parse(key, v)?,
            "holdout" => self.holdout = parse(key, v)?,
            "features" => self.features = v.into(),
            "split" => self.split = v.into(),
            "vocab" => self.vocab = v.into(),
            "embeddings" => self.embeddings = (!v.is_empty()).then(|| v.into()),
            "out_dir" => self.out_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "report" => self.report = v.into(),
            "scores" => self.scores = v.into(),
            "joint_dim" => self.model.joint_dim = parse(key, v)?,
            "hidden" => self.model.hidden = parse(key, v)?,
            "lambda" => self.model.lambda = parse(key, v)?,
            "variant" => self.model.variant = v.parse::<Variant>()?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "freeze_embeddings" => self.freeze_embeddings = parse(key, v)?,
            "n_t" => self.train.n_t = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "decay_every" => self.train.decay_every = parse(key, v)?,
            "epochs_inductive" => self.train.epochs_inductive = parse(key, v)?,
            "epochs_transductive" => self.train.epochs_transductive = parse(key, v)?,
            "sample_interval" => self.train.sample_interval = parse(key, v)?,
            "gamma" => self.train.gamma = parse(key, v)?,
            "q" => self.train.q = parse(key, v)?,
            "n_attrs" => self.world.n_attrs = parse(key, v)?,
            "n_objs" => self.world.n_objs = parse(key, v)?,
            "blocks" => self.world.blocks = parse(key, v)?,
            "feature_dim" => self.world.feature_dim = parse(key, v)?,
            "attr_blocks" => self.world.attr_blocks = parse_list(key, v)?,
            "obj_blocks" => self.world.obj_blocks = parse_list(key, v)?,
            "noise_sigma" => self.world.noise_sigma = parse(key, v)?,
            "signature_norm" => self.world.signature_norm = parse(key, v)?,
            "images_per_pair" => self.world.images_per_pair = parse(key, v)?,
            "seen_fraction" => self.world.seen_fraction = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax `set` accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Path| p.display().to_string();
        Ok(match key {
            "seed" => self.seed.to_string(),
            "setting" => self.setting.to_string(),
            "phase" => self.phase.to_string(),
            "threads" => self.threads.to_string(),
            "holdout" => self.holdout.to_string(),
            "features" => path(&self.features),
            "split" => path(&self.split),
            "vocab" => path(&self.vocab),
            "embeddings" => self.embeddings.as_deref().map(path).unwrap_or_default(),
            "out_dir" => path(&self.out_dir),
            "checkpoint" => path(&self.checkpoint),
            "report" => path(&self.report),
            "scores" => path(&self.scores),
            "joint_dim" => self.model.joint_dim.to_string(),
            "hidden" => self.model.hidden.to_string(),
            "lambda" => self.model.lambda.to_string(),
            "variant" => self.model.variant.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "freeze_embeddings" => self.freeze_embeddings.to_string(),
            "n_t" => self.train.n_t.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "lr" => self.train.lr.to_string(),
            "lr_decay" => self.train.lr_decay.to_string(),
            "decay_every" => self.train.decay_every.to_string(),
            "epochs_inductive" => self.train.epochs_inductive.to_string(),
            "epochs_transductive" => self.train.epochs_transductive.to_string(),
            "sample_interval" => self.train.sample_interval.to_string(),
            "gamma" => self.train.gamma.to_string(),
            "q" => self.train.q.to_string(),
            "n_attrs" => self.world.n_attrs.to_string(),
            "n_objs" => self.world.n_objs.to_string(),
            "blocks" => self.world.blocks.to_string(),
            "feature_dim" => self.world.feature_dim.to_string(),
            "attr_blocks" => join(&self.world.attr_blocks),
            "obj_blocks" => join(&self.world.obj_blocks),
            "noise_sigma" => self.world.noise_sigma.to_string(),
            "signature_norm" => self.world.signature_norm.to_string(),
            "images_per_pair" => self.world.images_per_pair.to_string(),
            "seen_fraction" => self.world.seen_fraction.to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Builds the configuration from its layers, lowest precedence first.
    pub fn resolve(file: Option<&str>, seed_env: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            cfg.apply_text(text)?;
        }
        if let Some(s) = seed_env {
            cfg.set("seed", s).map_err(|e| Error::Config(format!("{SEED_ENV}: {e}")))?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.train.seed = cfg.seed;
        cfg.world.seed = cfg.seed;
        Ok(cfg)
    }

    /// The whole configuration as `key = value` lines.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.world.validate()?;
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("holdout {} outside [0, 1)", self.holdout)));
        }
        Ok(())
    }
}
