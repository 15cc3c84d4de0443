//! Flat `key = value` configuration for `train-sweep`.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys and duplicates are errors.

use std::collections::HashSet;
use std::path::Path;

use ppa_core::mask::P_GRID;
use ppa_core::model::{ModelConfig, Optimizer, RecallFormat, RecallTask, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub model: ModelConfig,
    pub task: RecallTask,
    pub train: TrainConfig,
    pub window: usize,
    pub p_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepConfig {
    /// The far-recall setting: the answer sits 200 tokens back, far outside
    /// the 8-token window.
    fn default() -> Self {
        let length = 256;
        SweepConfig {
            model: ModelConfig {
                vocab: 64,
                d_model: 16,
                n_heads: 2,
                n_layers: 2,
                max_len: length,
                zero_unembedding: true,
            },
            task: RecallTask {
                vocab: 64,
                value_symbols: 16,
                key_symbols: 16,
                filler_symbols: 1,
                distance: 200,
                length,
                pairs: 1,
                format: RecallFormat::KeyFirst,
            },
            train: TrainConfig {
                steps: 1500,
                batch_size: 16,
                lr: 1e-2,
                warmup: 20,
                optimizer: Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.98,
                    eps: 1e-9,
                },
                grad_clip: Some(1.0),
                eval_examples: 400,
            },
            window: 8,
            p_grid: P_GRID.to_vec(),
            seed: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| CliError::Config {
        line,
        message: format!("invalid value {raw:?} for {key}"),
    })
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        let mut seen = HashSet::new();
        let mut optimizer = "adam".to_string();
        let mut momentum = 0.9;
        let (mut beta1, mut beta2, mut eps) = (0.9, 0.98, 1e-9);
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| CliError::Config {
                line,
                message: format!("expected `key = value`, got {trimmed:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config {
                    line,
                    message: format!("duplicate key {key}"),
                });
            }
            match key {
                "vocab" => {
                    cfg.model.vocab = parse_value(line, key, value)?;
                    cfg.task.vocab = cfg.model.vocab;
                }
                "d_model" => cfg.model.d_model = parse_value(line, key, value)?,
                "n_heads" => cfg.model.n_heads = parse_value(line, key, value)?,
                "n_layers" => cfg.model.n_layers = parse_value(line, key, value)?,
                "zero_unembedding" => cfg.model.zero_unembedding = parse_value(line, key, value)?,
                "length" => {
                    cfg.task.length = parse_value(line, key, value)?;
                    cfg.model.max_len = cfg.task.length;
                }
                "distance" => cfg.task.distance = parse_value(line, key, value)?,
                "pairs" => cfg.task.pairs = parse_value(line, key, value)?,
                "value_symbols" => cfg.task.value_symbols = parse_value(line, key, value)?,
                "key_symbols" => cfg.task.key_symbols = parse_value(line, key, value)?,
                "filler_symbols" => cfg.task.filler_symbols = parse_value(line, key, value)?,
                "format" => {
                    cfg.task.format = match value {
                        "key_first" => RecallFormat::KeyFirst,
                        "value_first" => RecallFormat::ValueFirst,
                        _ => {
                            return Err(CliError::Config {
                                line,
                                message: format!(
                                    "format must be key_first or value_first, got {value:?}"
                                ),
                            })
                        }
                    }
                }
                "window" => cfg.window = parse_value(line, key, value)?,
                "p_grid" => {
                    cfg.p_grid = crate::parse_list(value, "p").map_err(|e| CliError::Config {
                        line,
                        message: e.to_string(),
                    })?
                }
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "steps" => cfg.train.steps = parse_value(line, key, value)?,
                "batch_size" => cfg.train.batch_size = parse_value(line, key, value)?,
                "lr" => cfg.train.lr = parse_value(line, key, value)?,
                "warmup" => cfg.train.warmup = parse_value(line, key, value)?,
                "grad_clip" => {
                    cfg.train.grad_clip = match value {
                        "none" => None,
                        v => Some(parse_value(line, key, v)?),
                    }
                }
                "eval_examples" => cfg.train.eval_examples = parse_value(line, key, value)?,
                "optimizer" => optimizer = value.to_string(),
                "momentum" => momentum = parse_value(line, key, value)?,
                "beta1" => beta1 = parse_value(line, key, value)?,
                "beta2" => beta2 = parse_value(line, key, value)?,
                "eps" => eps = parse_value(line, key, value)?,
                _ => {
                    return Err(CliError::Config {
                        line,
                        message: format!("unknown key {key}"),
                    })
                }
            }
        }
        cfg.train.optimizer = match optimizer.as_str() {
            "adam" => Optimizer::Adam { beta1, beta2, eps },
            "sgd" => Optimizer::SgdMomentum { momentum },
            other => {
                return Err(CliError::Config {
                    line: 0,
                    message: format!("optimizer must be adam or sgd, got {other:?}"),
                })
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| CliError::Usage(m);
        self.model.validate().map_err(|e| bad(e.to_string()))?;
        self.task.validate().map_err(|e| bad(e.to_string()))?;
        if self.window == 0 {
            return Err(bad("window must be positive".into()));
        }
        if self.p_grid.is_empty() || self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("p grid must be non-empty with values in [0, 1]".into()));
        }
        if self.train.steps == 0 || self.train.batch_size == 0 || self.train.eval_examples == 0 {
            return Err(bad(
                "steps, batch_size and eval_examples must be positive".into()
            ));
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return Err(bad("lr must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            SweepConfig::parse("# nothing\n\n").unwrap(),
            SweepConfig::default()
        );
    }

    #[test]
    fn overrides_apply() {
        let cfg = SweepConfig::parse("length = 32\ndistance = 4 # not a comment\n");
        // trailing comments are not supported
        assert!(cfg.is_err());
        let cfg = SweepConfig::parse(
            "length = 32\ndistance = 4\noptimizer = sgd\nmomentum = 0.5\np_grid = 0, 1\n",
        )
        .unwrap();
        assert_eq!(cfg.task.length, 32);
        assert_eq!(cfg.model.max_len, 32);
        assert_eq!(cfg.task.distance, 4);
        assert_eq!(
            cfg.train.optimizer,
            Optimizer::SgdMomentum { momentum: 0.5 }
        );
        assert_eq!(cfg.p_grid, vec![0.0, 1.0]);
    }

    #[test]
    fn errors_name_the_line() {
        match SweepConfig::parse("steps = 10\nbogus = 1\n") {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SweepConfig::parse("steps = ten\n").is_err());
        assert!(SweepConfig::parse("steps\n").is_err());
        assert!(SweepConfig::parse("steps = 1\nsteps = 2\n").is_err());
        assert!(SweepConfig::parse("distance = 300\n").is_err());
    }
}
