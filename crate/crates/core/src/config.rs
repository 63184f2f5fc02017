//! Flat `key = value` training configuration files.
//!
//! The hyperparameter table's symbols are the canonical keys (`d`, `H`,
//! `alpha`, `mu`, `lambda`, `p`, `w`); longer aliases are accepted. Blank
//! lines and `#` comments are ignored.

use std::path::{Path, PathBuf};

use crate::corpus::NormalizeMode;
use crate::error::{Error, Result};
use crate::gcnn::Composition;
use crate::scorer::ScoreParts;
use crate::trainer::TrainConfig;

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for {key}")),
    }
}

/// Applies one `key = value` setting.
pub fn apply(config: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "d" | "dim" | "embedding_size" => config.dim = parse_value(key, value)?,
        "H" | "hidden" | "hidden_units" => config.hidden = parse_value(key, value)?,
        "alpha" | "learning_rate" => config.alpha = parse_value(key, value)?,
        "mu" | "margin_discount" => config.mu = parse_value(key, value)?,
        "lambda" | "regularization" => config.lambda = parse_value(key, value)?,
        "p" | "dropout" => config.dropout = parse_value(key, value)?,
        "w" | "max_word_len" => config.max_word_len = parse_value(key, value)?,
        "k" | "beam" => config.beam = parse_value(key, value)?,
        "batch_size" => config.batch_size = parse_value(key, value)?,
        "epochs" => config.epochs = parse_value(key, value)?,
        "seed" => config.seed = parse_value(key, value)?,
        "skip_long_gold" => config.skip_long_gold = parse_bool(key, value)?,
        "dev_fraction" => config.dev_fraction = parse_value(key, value)?,
        "min_count" => config.min_count = parse_value(key, value)?,
        "stochastic_unk" => config.stochastic_unk = parse_bool(key, value)?,
        "freeze_embeddings" => config.freeze_embeddings = parse_bool(key, value)?,
        "pretrained_emb" => {
            config.pretrained_emb = if value.is_empty() {
                None
            } else {
                Some(PathBuf::from(value))
            }
        }
        "composition" => {
            config.composition =
                Composition::from_name(value).ok_or_else(|| format!("unknown composition {value:?}"))?
        }
        "score_parts" => {
            config.score_parts =
                ScoreParts::from_name(value).ok_or_else(|| format!("unknown score parts {value:?}"))?
        }
        "normalize" => {
            config.normalize =
                NormalizeMode::from_name(value).ok_or_else(|| format!("unknown normalization {value:?}"))?
        }
        "threads" => config.threads = parse_value(key, value)?,
        "eval_train" => config.eval_train = parse_bool(key, value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

pub fn parse_config_str(text: &str, base: TrainConfig, path: &Path) -> Result<TrainConfig> {
    let mut config = base;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
        apply(&mut config, key.trim(), value.trim()).map_err(err)?;
    }
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>, base: TrainConfig) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, base, path)
}

/// Renders every setting in the format [`parse_config_str`] reads.
pub fn to_config_string(c: &TrainConfig) -> String {
    let pretrained = c
        .pretrained_emb
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    format!(
        "d = {}\nH = {}\nalpha = {}\nmu = {}\nlambda = {}\np = {}\nw = {}\n\
         k = {}\nbatch_size = {}\nepochs = {}\nseed = {}\nskip_long_gold = {}\n\
         dev_fraction = {}\nmin_count = {}\nstochastic_unk = {}\nfreeze_embeddings = {}\n\
         pretrained_emb = {}\ncomposition = {}\nscore_parts = {}\nnormalize = {}\n\
         threads = {}\neval_train = {}\n",
        c.dim,
        c.hidden,
        c.alpha,
        c.mu,
        c.lambda,
        c.dropout,
        c.max_word_len,
        c.beam,
        c.batch_size,
        c.epochs,
        c.seed,
        c.skip_long_gold,
        c.dev_fraction,
        c.min_count,
        c.stochastic_unk,
        c.freeze_embeddings,
        pretrained,
        c.composition.name(),
        c.score_parts.name(),
        c.normalize.name(),
        c.threads,
        c.eval_train,
    )
}
