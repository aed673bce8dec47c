//! Pipeline configuration.
//!
//! Configs are flat `key = value` files; lists are comma-separated. Every
//! field has a default, overrides win over file values, unknown keys and
//! type mismatches are errors naming the key, and the fully resolved config
//! can be rendered back in canonical form (which is also what the config
//! hash commits to).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::thresholding::DEFAULT_GRID;

/// How the confidence threshold is chosen each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaPolicy {
    /// Re-select α every round at the accuracy curve's maximum curvature.
    Auto,
    /// Keep a fixed threshold for every round.
    Fixed(f64),
}

/// Which samples survive source-consistency filtering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyRule {
    /// Unanimous, above-threshold, and correct (the default reading).
    Thresholded,
    /// Correct under the plain ensemble argmax, ignoring confidence.
    Argmax,
}

/// What the student's voters are distilled toward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftTarget {
    /// Student voter i matches teacher voter i.
    Paired,
    /// Every student voter matches the teacher's voter-mean distribution.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    // Data
    pub train_source: Option<String>,
    pub unlabeled_target: Option<String>,
    pub test_target: Option<String>,
    pub btf_corpus: Option<String>,
    pub base_checkpoint: Option<String>,
    pub source_lang: String,
    pub target_lang: String,
    pub n_classes: usize,
    // Model
    pub embed_dim: usize,
    pub voters: usize,
    pub voter_hidden: usize,
    pub voter_hidden_step: usize,
    // Schedule
    pub rounds: f64,
    pub btf_enabled: bool,
    pub btf_epochs: usize,
    pub btf_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub soft_epochs: usize,
    pub soft_lr: f64,
    pub hard_epochs: usize,
    pub hard_lr: f64,
    pub batch_size: usize,
    pub mask_rate: f64,
    pub weight_decay: f64,
    /// Linear learning-rate ramp over this fraction of a phase's steps;
    /// 0 disables warm-up.
    pub warmup: f64,
    /// Freeze the embedding table during task training (never during the
    /// task-fitting MLM phase, which exists to train it).
    pub freeze_embeddings: bool,
    pub alpha: AlphaPolicy,
    pub grid: Vec<f64>,
    /// Floor on recalled counts during α selection; `None` means
    /// max(10, 1% of records).
    pub min_recalled: Option<usize>,
    pub consistency: ConsistencyRule,
    pub soft_target: SoftTarget,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_source: None,
            unlabeled_target: None,
            test_target: None,
            btf_corpus: None,
            base_checkpoint: None,
            source_lang: "src".into(),
            target_lang: "tgt".into(),
            n_classes: 2,
            embed_dim: 16,
            voters: 3,
            voter_hidden: 32,
            voter_hidden_step: 4,
            rounds: 1.5,
            btf_enabled: true,
            btf_epochs: 5,
            btf_lr: 0.02,
            finetune_epochs: 6,
            finetune_lr: 0.01,
            soft_epochs: 8,
            soft_lr: 0.02,
            hard_epochs: 6,
            hard_lr: 0.005,
            batch_size: 32,
            mask_rate: 0.15,
            weight_decay: 0.0,
            warmup: 0.0,
            freeze_embeddings: true,
            alpha: AlphaPolicy::Auto,
            grid: DEFAULT_GRID.to_vec(),
            min_recalled: None,
            consistency: ConsistencyRule::Thresholded,
            soft_target: SoftTarget::Paired,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn dims(&self, vocab_len: usize) -> ModelDims {
        ModelDims {
            vocab: vocab_len,
            embed: self.embed_dim,
            classes: self.n_classes,
            voters: self.voters,
            voter_hidden: self.voter_hidden,
            voter_hidden_step: self.voter_hidden_step,
        }
    }

    /// Structural validation; data-file checks happen at load time.
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 0.5 || (self.rounds * 2.0).fract() != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "rounds must be a positive multiple of 0.5, got {}",
                self.rounds
            )));
        }
        for (key, lr) in [
            ("btf_lr", self.btf_lr),
            ("finetune_lr", self.finetune_lr),
            ("soft_lr", self.soft_lr),
            ("hard_lr", self.hard_lr),
        ] {
            if lr <= 0.0 {
                return Err(Error::InvalidConfig(format!("{key} must be > 0, got {lr}")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("n_classes must be at least 2".into()));
        }
        if self.voters == 0 || self.voter_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig(
                "voters, voter_hidden and embed_dim must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask_rate must lie in (0,1), got {}",
                self.mask_rate
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::InvalidConfig(format!(
                "warmup must lie in [0,1), got {}",
                self.warmup
            )));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!(
                    "alpha must lie in [0,1), got {a}"
                )));
            }
        }
        crate::thresholding::validate_grid(&self.grid)
            .map_err(|e| Error::InvalidConfig(format!("grid: {e}")))?;
        if self.source_lang.is_empty() || self.target_lang.is_empty() {
            return Err(Error::InvalidConfig("language tags must be non-empty".into()));
        }
        if self.source_lang == self.target_lang {
            return Err(Error::InvalidConfig(
                "source_lang and target_lang must differ".into(),
            ));
        }
        if self.btf_enabled && self.base_checkpoint.is_none() && self.btf_corpus.is_none() {
            return Err(Error::InvalidConfig(
                "btf_enabled requires btf_corpus (or a base_checkpoint)".into(),
            ));
        }
        Ok(())
    }

    /// Canonical flat rendering; fixed key order, one `key = value` per line.
    pub fn render_flat(&self) -> String {
        let mut out = String::new();
        let mut emit = |key: &str, value: String| {
            writeln!(out, "{key} = {value}").expect("string write");
        };
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        emit("train_source", opt(&self.train_source));
        emit("unlabeled_target", opt(&self.unlabeled_target));
        emit("test_target", opt(&self.test_target));
        emit("btf_corpus", opt(&self.btf_corpus));
        emit("base_checkpoint", opt(&self.base_checkpoint));
        emit("source_lang", self.source_lang.clone());
        emit("target_lang", self.target_lang.clone());
        emit("n_classes", self.n_classes.to_string());
        emit("embed_dim", self.embed_dim.to_string());
        emit("voters", self.voters.to_string());
        emit("voter_hidden", self.voter_hidden.to_string());
        emit("voter_hidden_step", self.voter_hidden_step.to_string());
        emit("rounds", self.rounds.to_string());
        emit("btf_enabled", self.btf_enabled.to_string());
        emit("btf_epochs", self.btf_epochs.to_string());
        emit("btf_lr", self.btf_lr.to_string());
        emit("finetune_epochs", self.finetune_epochs.to_string());
        emit("finetune_lr", self.finetune_lr.to_string());
        emit("soft_epochs", self.soft_epochs.to_string());
        emit("soft_lr", self.soft_lr.to_string());
        emit("hard_epochs", self.hard_epochs.to_string());
        emit("hard_lr", self.hard_lr.to_string());
        emit("batch_size", self.batch_size.to_string());
        emit("mask_rate", self.mask_rate.to_string());
        emit("weight_decay", self.weight_decay.to_string());
        emit("warmup", self.warmup.to_string());
        emit("freeze_embeddings", self.freeze_embeddings.to_string());
        emit(
            "alpha",
            match self.alpha {
                AlphaPolicy::Auto => "auto".to_string(),
                AlphaPolicy::Fixed(a) => a.to_string(),
            },
        );
        emit(
            "grid",
            self.grid
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        emit(
            "min_recalled",
            self.min_recalled
                .map(|m| m.to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        emit(
            "consistency",
            match self.consistency {
                ConsistencyRule::Thresholded => "thresholded",
                ConsistencyRule::Argmax => "argmax",
            }
            .to_string(),
        );
        emit(
            "soft_target",
            match self.soft_target {
                SoftTarget::Paired => "paired",
                SoftTarget::Mean => "mean",
            }
            .to_string(),
        );
        emit("seed", self.seed.to_string());
        out
    }

    /// Hex SHA-256 of the canonical flat rendering.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.render_flat().as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Applies one `key = value` assignment; errors name the key.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |key: &str, value: &str, expected: &str| {
            Error::InvalidConfig(format!("key {key}: expected {expected}, got {value:?}"))
        };
        macro_rules! parse {
            ($ty:ty, $expected:expr) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| bad(key, value, $expected))?
            };
        }
        let opt_string = |value: &str| {
            if value.is_empty() {
                None
            } else {
                Some(value.to_string())
            }
        };
        match key {
            "train_source" => self.train_source = opt_string(value),
            "unlabeled_target" => self.unlabeled_target = opt_string(value),
            "test_target" => self.test_target = opt_string(value),
            "btf_corpus" => self.btf_corpus = opt_string(value),
            "base_checkpoint" => self.base_checkpoint = opt_string(value),
            "source_lang" => self.source_lang = value.to_string(),
            "target_lang" => self.target_lang = value.to_string(),
            "n_classes" => self.n_classes = parse!(usize, "an integer"),
            "embed_dim" => self.embed_dim = parse!(usize, "an integer"),
            "voters" => self.voters = parse!(usize, "an integer"),
            "voter_hidden" => self.voter_hidden = parse!(usize, "an integer"),
            "voter_hidden_step" => self.voter_hidden_step = parse!(usize, "an integer"),
            "rounds" => self.rounds = parse!(f64, "a number"),
            "btf_enabled" => self.btf_enabled = parse!(bool, "true or false"),
            "btf_epochs" => self.btf_epochs = parse!(usize, "an integer"),
            "btf_lr" => self.btf_lr = parse!(f64, "a number"),
            "finetune_epochs" => self.finetune_epochs = parse!(usize, "an integer"),
            "finetune_lr" => self.finetune_lr = parse!(f64, "a number"),
            "soft_epochs" => self.soft_epochs = parse!(usize, "an integer"),
            "soft_lr" => self.soft_lr = parse!(f64, "a number"),
            "hard_epochs" => self.hard_epochs = parse!(usize, "an integer"),
            "hard_lr" => self.hard_lr = parse!(f64, "a number"),
            "batch_size" => self.batch_size = parse!(usize, "an integer"),
            "mask_rate" => self.mask_rate = parse!(f64, "a number"),
            "weight_decay" => self.weight_decay = parse!(f64, "a number"),
            "warmup" => self.warmup = parse!(f64, "a number"),
            "freeze_embeddings" => self.freeze_embeddings = parse!(bool, "true or false"),
            "alpha" => {
                self.alpha = if value == "auto" {
                    AlphaPolicy::Auto
                } else {
                    AlphaPolicy::Fixed(parse!(f64, "\"auto\" or a number"))
                }
            }
            "grid" => {
                self.grid = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(key, value, "comma-separated numbers"))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            "min_recalled" => {
                self.min_recalled = if value == "auto" {
                    None
                } else {
                    Some(parse!(usize, "\"auto\" or an integer"))
                }
            }
            "consistency" => {
                self.consistency = match value {
                    "thresholded" => ConsistencyRule::Thresholded,
                    "argmax" => ConsistencyRule::Argmax,
                    _ => return Err(bad(key, value, "\"thresholded\" or \"argmax\"")),
                }
            }
            "soft_target" => {
                self.soft_target = match value {
                    "paired" => SoftTarget::Paired,
                    "mean" => SoftTarget::Mean,
                    _ => return Err(bad(key, value, "\"paired\" or \"mean\"")),
                }
            }
            "seed" => self.seed = parse!(u64, "an integer"),
            _ => {
                return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }
}

/// Parses a flat config file's text into assignments, preserving order.
/// `#` starts a comment; blank lines are skipped.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected key = value, got {raw:?}",
                idx + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Builds a config from file text plus `key=value` overrides (overrides win).
pub fn resolve_config(file_text: &str, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    for (key, value) in parse_flat(file_text)? {
        cfg.apply_kv(&key, &value)?;
    }
    for (key, value) in overrides {
        cfg.apply_kv(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Re-exported map form used by tooling that inspects configs.
pub fn flat_map(cfg: &PipelineConfig) -> BTreeMap<String, String> {
    parse_flat(&cfg.render_flat())
        .expect("canonical rendering parses")
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_flat_form() {
        let cfg = PipelineConfig::default();
        let rendered = cfg.render_flat();
        let reparsed = resolve_config(&rendered, &[]);
        // Defaults alone fail validation (btf requires a corpus), so disable it.
        let mut cfg2 = cfg.clone();
        cfg2.btf_enabled = false;
        let rendered = cfg2.render_flat();
        let reparsed2 = resolve_config(&rendered, &[]).unwrap();
        assert_eq!(cfg2, reparsed2);
        assert!(reparsed.is_err());
    }

    #[test]
    fn file_values_win_over_defaults_and_overrides_win_over_file() {
        let text = "rounds = 2\nseed = 7\nbtf_enabled = false\n";
        let cfg = resolve_config(text, &[]).unwrap();
        assert_eq!(cfg.rounds, 2.0);
        assert_eq!(cfg.seed, 7);
        let over = vec![("rounds".to_string(), "1.5".to_string())];
        let cfg = resolve_config(text, &over).unwrap();
        assert_eq!(cfg.rounds, 1.5);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn fractional_rounds_must_be_multiples_of_half() {
        let text = "btf_enabled = false\nrounds = 1.3\n";
        let err = resolve_config(text, &[]).unwrap_err();
        assert!(err.to_string().contains("multiple of 0.5"), "{err}");
        assert!(resolve_config("btf_enabled = false\nrounds = 0.5\n", &[]).is_ok());
        assert!(resolve_config("btf_enabled = false\nrounds = 0\n", &[]).is_err());
    }

    #[test]
    fn unknown_keys_and_type_mismatches_name_the_key() {
        let err = resolve_config("no_such_key = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("no_such_key"), "{err}");
        let err = resolve_config("batch_size = soon\n", &[]).unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn alpha_and_grid_parse_both_forms() {
        let cfg =
            resolve_config("btf_enabled = false\nalpha = 0.9\ngrid = 0.0,0.5,0.9\n", &[]).unwrap();
        assert_eq!(cfg.alpha, AlphaPolicy::Fixed(0.9));
        assert_eq!(cfg.grid, vec![0.0, 0.5, 0.9]);
        let cfg = resolve_config("btf_enabled = false\nalpha = auto\n", &[]).unwrap();
        assert_eq!(cfg.alpha, AlphaPolicy::Auto);
        assert!(resolve_config("btf_enabled = false\ngrid = 0.9,0.5\n", &[]).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# a comment\n\nseed = 9 # trailing\nbtf_enabled = false\n";
        let cfg = resolve_config(text, &[]).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn hash_tracks_content() {
        let mut a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
        a.seed = 43;
        assert_eq!(a.hash(), b.hash());
    }
}
