//! Flat `key = value` run configuration and named presets.

use std::fmt::Write as _;

use crate::corpus::BatchMode;
use crate::error::{Error, Result};
use crate::lm::{LmConfig, TokenKind};
use crate::nn::AdamConfig;
use crate::sslm::SslmConfig;
use crate::train::TrainOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Sslm,
    CharLm,
    BpeLm,
    UlmLm,
}

impl ModelKind {
    pub fn token_kind(self) -> Option<TokenKind> {
        match self {
            ModelKind::Sslm => None,
            ModelKind::CharLm => Some(TokenKind::Char),
            ModelKind::BpeLm => Some(TokenKind::Bpe),
            ModelKind::UlmLm => Some(TokenKind::Ulm),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sslm" => Ok(ModelKind::Sslm),
            "char-lm" => Ok(ModelKind::CharLm),
            "bpe-lm" => Ok(ModelKind::BpeLm),
            "ulm-lm" => Ok(ModelKind::UlmLm),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Sslm => "sslm",
            ModelKind::CharLm => "char-lm",
            ModelKind::BpeLm => "bpe-lm",
            ModelKind::UlmLm => "ulm-lm",
        })
    }
}

/// Segment length cap of the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegCap {
    /// Same as the longest lexicon entry.
    Lexicon,
    /// Whole words.
    None,
    Fixed(usize),
}

impl std::str::FromStr for SegCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexicon" => Ok(SegCap::Lexicon),
            "none" => Ok(SegCap::None),
            n => n
                .parse()
                .map(SegCap::Fixed)
                .map_err(|_| Error::InvalidArgument(format!("dp_max_seg must be lexicon, none or a number, got {n:?}"))),
        }
    }
}

impl std::fmt::Display for SegCap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegCap::Lexicon => f.write_str("lexicon"),
            SegCap::None => f.write_str("none"),
            SegCap::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: BatchMode,
    pub model: ModelKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub lexicon_size: usize,
    pub max_seg_len: usize,
    pub dp_max_seg: SegCap,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub dropout: f64,
    pub halve_after: usize,
    pub stop_after: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub min_char_count: usize,
    pub bpe_merges: usize,
    pub ulm_vocab: usize,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    /// Desk-scale word-level SSLM.
    fn default() -> Self {
        RunConfig {
            mode: BatchMode::WordLevel,
            model: ModelKind::Sslm,
            embed_dim: 64,
            hidden_dim: 128,
            num_layers: 1,
            lexicon_size: 1000,
            max_seg_len: 8,
            dp_max_seg: SegCap::Lexicon,
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip: 1.0,
            dropout: 0.2,
            halve_after: 3,
            stop_after: 6,
            max_epochs: 50,
            batch_size: 16,
            seq_len: 120,
            seed: 1,
            min_char_count: 1,
            bpe_merges: 1000,
            ulm_vocab: 1000,
            eval_batch: 64,
        }
    }
}

const LANGUAGES: [&str; 4] = ["xh", "zu", "nr", "ss"];

/// Lexicon size and longest entry per language, long-range then word-level.
fn lexicon_settings(lang: &str) -> Option<((usize, usize), (usize, usize))> {
    match lang {
        "xh" => Some(((10_000, 5), (10_000, 10))),
        "zu" => Some(((10_000, 5), (5_000, 20))),
        "nr" => Some(((5_000, 10), (10_000, 10))),
        "ss" => Some(((10_000, 20), (5_000, 20))),
        _ => None,
    }
}

impl RunConfig {
    pub fn preset_names() -> Vec<String> {
        let mut out = vec!["desk".to_string()];
        for lang in LANGUAGES {
            out.push(format!("paper-{lang}-longrange"));
            out.push(format!("paper-{lang}-wordlevel"));
            out.push(format!("paper-lstm-{lang}"));
        }
        out
    }

    pub fn preset(name: &str) -> Option<Self> {
        if name == "desk" {
            return Some(Self::default());
        }
        let rest = name.strip_prefix("paper-")?;
        let full = RunConfig {
            embed_dim: 512,
            hidden_dim: 1024,
            max_epochs: 100,
            ..Self::default()
        };
        if let Some(lang) = rest.strip_prefix("lstm-") {
            lexicon_settings(lang)?;
            return Some(RunConfig {
                mode: BatchMode::LongRange,
                model: ModelKind::CharLm,
                embed_dim: if lang == "xh" || lang == "ss" { 128 } else { 512 },
                num_layers: 3,
                lr: 0.001,
                dropout: 0.2,
                batch_size: 64,
                seq_len: 120,
                ..full
            });
        }
        let (lang, mode) = rest.split_once('-')?;
        let (long, word) = lexicon_settings(lang)?;
        match mode {
            "longrange" => Some(RunConfig {
                mode: BatchMode::LongRange,
                num_layers: 3,
                lexicon_size: long.0,
                max_seg_len: long.1,
                lr: 0.001,
                dropout: 0.5,
                batch_size: 64,
                seq_len: 120,
                ..full
            }),
            "wordlevel" => Some(RunConfig {
                mode: BatchMode::WordLevel,
                num_layers: 1,
                lexicon_size: word.0,
                max_seg_len: word.1,
                lr: 0.005,
                dropout: 0.2,
                batch_size: 16,
                ..full
            }),
            _ => None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "model" => self.model = value.parse()?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "num_layers" => self.num_layers = num(key, value)?,
            "lexicon_size" => self.lexicon_size = num(key, value)?,
            "max_seg_len" => self.max_seg_len = num(key, value)?,
            "dp_max_seg" => self.dp_max_seg = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "halve_after" => self.halve_after = num(key, value)?,
            "stop_after" => self.stop_after = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "min_char_count" => self.min_char_count = num(key, value)?,
            "bpe_merges" => self.bpe_merges = num(key, value)?,
            "ulm_vocab" => self.ulm_vocab = num(key, value)?,
            "eval_batch" => self.eval_batch = num(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file on top of `self`. A `preset` key, if present,
    /// must come first and replaces every value.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen_value = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format("config", format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if seen_value {
                    return Err(Error::format("config", format!("line {}: preset must come first", n + 1)));
                }
                *self = Self::preset(value)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {value:?}")))?;
            } else {
                self.set(key, value)?;
            }
            seen_value = true;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every field as `key=value` lines, readable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("mode", &self.mode);
        put("model", &self.model);
        put("embed_dim", &self.embed_dim);
        put("hidden_dim", &self.hidden_dim);
        put("num_layers", &self.num_layers);
        put("lexicon_size", &self.lexicon_size);
        put("max_seg_len", &self.max_seg_len);
        put("dp_max_seg", &self.dp_max_seg);
        put("lr", &self.lr);
        put("beta1", &self.beta1);
        put("beta2", &self.beta2);
        put("eps", &self.eps);
        put("weight_decay", &self.weight_decay);
        put("clip", &self.clip);
        put("dropout", &self.dropout);
        put("halve_after", &self.halve_after);
        put("stop_after", &self.stop_after);
        put("max_epochs", &self.max_epochs);
        put("batch_size", &self.batch_size);
        put("seq_len", &self.seq_len);
        put("seed", &self.seed);
        put("min_char_count", &self.min_char_count);
        put("bpe_merges", &self.bpe_merges);
        put("ulm_vocab", &self.ulm_vocab);
        put("eval_batch", &self.eval_batch);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("embed_dim, hidden_dim and num_layers must be positive");
        }
        if self.max_seg_len == 0 || self.dp_max_seg == SegCap::Fixed(0) {
            return bad("segment lengths must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("beta1 and beta2 must lie in [0, 1) and eps must be positive");
        }
        if self.weight_decay < 0.0 || self.clip < 0.0 {
            return bad("weight_decay and clip must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return bad("max_epochs, batch_size and eval_batch must be positive");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if self.min_char_count == 0 {
            return bad("min_char_count must be positive");
        }
        Ok(())
    }

    pub fn sslm_config(&self) -> SslmConfig {
        SslmConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            dp_max_seg: match self.dp_max_seg {
                SegCap::Lexicon => Some(self.max_seg_len),
                SegCap::None => None,
                SegCap::Fixed(n) => Some(n),
            },
        }
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            mode: self.mode,
            batch_size: self.batch_size,
            seq_len: self.seq_len,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            clip: self.clip,
            dropout: self.dropout,
            halve_after: self.halve_after,
            stop_after: self.stop_after,
            max_epochs: self.max_epochs,
            seed: self.seed,
            eval_batch: self.eval_batch,
        }
    }
}
