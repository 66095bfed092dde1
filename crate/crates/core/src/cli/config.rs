use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{DecodeMode, ModelConfig};
use crate::training::TrainConfig;

/// Every knob of a run. Precedence: command-line override, then config
/// file, then the defaults below.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub triples: Option<PathBuf>,
    pub conversations: Option<PathBuf>,
    /// Pretrained concept and relation embeddings; TransE runs when absent.
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pruned: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,

    pub word_dim: usize,
    pub concept_dim: usize,
    pub hidden_dim: usize,
    pub select_hidden_dim: usize,
    pub layers: usize,
    pub k: usize,
    pub select_fraction: f64,
    pub select_epochs: usize,

    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub transe_epochs: usize,

    pub decode: String,
    pub top_k: usize,
    pub max_len: usize,
    pub trace: bool,
    pub max_depth: usize,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            triples: None,
            conversations: None,
            embeddings: None,
            checkpoint: None,
            pruned: None,
            input: None,
            output: None,
            word_dim: 32,
            concept_dim: 32,
            hidden_dim: 32,
            select_hidden_dim: 16,
            layers: 2,
            k: 10,
            select_fraction: 0.1,
            select_epochs: 20,
            lr: 1e-4,
            epochs: 10,
            batch_size: 1,
            clip_norm: None,
            seed: 7,
            transe_epochs: 100,
            decode: "greedy".into(),
            top_k: DecodeMode::DEFAULT_K,
            max_len: 30,
            trace: false,
            max_depth: 3,
            workers: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "triples" => self.triples = path(),
            "conversations" => self.conversations = path(),
            "embeddings" => self.embeddings = path(),
            "checkpoint" => self.checkpoint = path(),
            "pruned" => self.pruned = path(),
            "input" => self.input = path(),
            "output" => self.output = path(),
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "concept_dim" => self.concept_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "select_hidden_dim" => self.select_hidden_dim = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "select_fraction" => self.select_fraction = parse_value(key, value)?,
            "select_epochs" => self.select_epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "transe_epochs" => self.transe_epochs = parse_value(key, value)?,
            "decode" => self.decode = value.to_string(),
            "top_k" => self.top_k = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "trace" => self.trace = parse_bool(key, value)?,
            "max_depth" => self.max_depth = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not `key=value`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("concept_dim", self.concept_dim),
            ("hidden_dim", self.hidden_dim),
            ("select_hidden_dim", self.select_hidden_dim),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        if self.word_dim != self.concept_dim {
            return Err(Error::Config(format!(
                "word_dim ({}) and concept_dim ({}) must be equal: decoder inputs mix both tables",
                self.word_dim, self.concept_dim
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        self.decode_mode()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.concept_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
        }
    }

    pub fn select_model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.select_hidden_dim,
            ..self.model_config()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }

    pub fn decode_mode(&self) -> Result<DecodeMode> {
        match self.decode.as_str() {
            "greedy" => Ok(DecodeMode::Greedy),
            "topk" | "top-k" => Ok(DecodeMode::TopK {
                k: self.top_k,
                seed: self.seed,
            }),
            other => Err(Error::Config(format!("unknown decode mode `{other}`"))),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }
}
