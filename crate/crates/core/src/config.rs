//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::embeddings::{EmbeddingSource, DEFAULT_CHAR_RADIUS};
use crate::error::{Error, Result};
use crate::model::{Architecture, FusionMode};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "CODEMIX_CONFIG";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub patience: usize,
    pub seed: u64,
    pub mode: FusionMode,
    /// Word-vector files in collision precedence order.
    pub embeddings: Vec<EmbeddingSource>,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub sent_hidden: usize,
    pub char_init_radius: f64,
    /// Run the tweet normaliser over tokens before training/prediction.
    pub normalize: bool,
    pub slang: Option<PathBuf>,
    pub emoji: Option<PathBuf>,
    pub contractions: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        TrainConfig {
            epochs: 7,
            batch_size: 128,
            dropout: 0.25,
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            patience: 3,
            seed: 1,
            mode: FusionMode::Gated,
            embeddings: Vec::new(),
            char_dim: arch.char_dim,
            char_hidden: arch.char_hidden,
            word_dim: arch.word_dim,
            sent_hidden: arch.sent_hidden,
            char_init_radius: DEFAULT_CHAR_RADIUS,
            normalize: true,
            slang: None,
            emoji: None,
            contractions: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            word_dim: self.word_dim,
            sent_hidden: self.sent_hidden,
            mode: self.mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("lr must be positive and betas in [0, 1)".into()));
        }
        self.architecture().validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "embeddings" => {
                self.embeddings = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "char_dim" => self.char_dim = parse_num(key, value)?,
            "char_hidden" => self.char_hidden = parse_num(key, value)?,
            "word_dim" => self.word_dim = parse_num(key, value)?,
            "sent_hidden" => self.sent_hidden = parse_num(key, value)?,
            "char_init_radius" => self.char_init_radius = parse_num(key, value)?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "slang" => self.slang = opt_path(value),
            "emoji" => self.emoji = opt_path(value),
            "contractions" => self.contractions = opt_path(value),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let embeddings: Vec<String> = self.embeddings.iter().map(ToString::to_string).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("dropout", self.dropout.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.to_string());
        kv("embeddings", embeddings.join(", "));
        kv("char_dim", self.char_dim.to_string());
        kv("char_hidden", self.char_hidden.to_string());
        kv("word_dim", self.word_dim.to_string());
        kv("sent_hidden", self.sent_hidden.to_string());
        kv("char_init_radius", self.char_init_radius.to_string());
        kv("normalize", self.normalize.to_string());
        kv("slang", path(&self.slang));
        kv("emoji", path(&self.emoji));
        kv("contractions", path(&self.contractions));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.patience), (7, 128, 3));
        assert_eq!(c.dropout, 0.25);
        assert_eq!(c.lr, 0.002);
        assert_eq!((c.char_dim, c.char_hidden, c.word_dim, c.sent_hidden), (150, 150, 300, 150));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parse_file_text() {
        let c = TrainConfig::parse(
            "# toy run\nepochs = 20\nmode=char_only\nembeddings = glove_text:en.txt, fasttext_vec:es.vec\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 20);
        assert_eq!(c.mode, FusionMode::CharOnly);
        assert_eq!(c.embeddings.len(), 2);
        assert_eq!(c.batch_size, 128);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("nonsense").is_err());
        assert!(TrainConfig::parse("colour = blue").is_err());
        assert!(TrainConfig::parse("epochs = many").is_err());
        let c = TrainConfig::parse("dropout = 1.0").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::parse("patience = 0").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::parse("batch_size = 0").unwrap();
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            epochs in 1usize..500,
            dropout in 0.0f64..0.99,
            lr in 1e-5f64..1.0,
            seed in any::<u64>(),
            mode in prop_oneof![Just(FusionMode::Gated), Just(FusionMode::WordOnly), Just(FusionMode::CharOnly)],
        ) {
            let mut c = TrainConfig { epochs, dropout, lr, seed, mode, ..TrainConfig::default() };
            c.embeddings = vec!["glove_text:a b/en.txt".parse().unwrap()];
            c.slang = Some(PathBuf::from("dicts/slang.tsv"));
            prop_assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
