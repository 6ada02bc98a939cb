//! Run configuration: a line-oriented `section.key = value` file with
//! sections `model`, `rope`, `scaling`, and `profiler`. `#` starts a comment.
//!
//! Cross-field constraints (even head dimension, context-window ratio,
//! policy parameters) are re-validated after parsing.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::ModelSpec;
use crate::profiler::default_positions;
use crate::rope::{NtkConvention, RopeConfig, RopeMethod};
use crate::scaling::ScalingPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

/// Everything a profiling run needs, with defaults for absent keys.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub rope: RopeConfig<f64>,
    pub scaling: ScalingPolicy<f64>,
    pub positions: Vec<usize>,
    pub documents: Option<PathBuf>,
    pub limit: usize,
    pub output: Option<PathBuf>,
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelSpec::default();
        let rope = RopeConfig::new(RopeMethod::Rope, model.d_head, 4096, 4096);
        let positions = default_positions(model.max_positions);
        RunConfig {
            model,
            rope,
            scaling: ScalingPolicy::None,
            positions,
            documents: None,
            limit: 128,
            output: None,
            verbose: false,
        }
    }
}

struct ScalingDraft {
    kind: Option<String>,
    constant: Option<f64>,
    c: Option<usize>,
    s: Option<f64>,
    n_train: Option<usize>,
    exempt_layers: Option<BTreeSet<usize>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut explicit_d: Option<usize> = None;
        let mut positions_set = false;
        let mut scaling = ScalingDraft {
            kind: None,
            constant: None,
            c: None,
            s: None,
            n_train: None,
            exempt_layers: None,
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                message: format!("expected `section.key = value`, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let err = |message: String| ConfigError::Parse {
                line: line_no,
                message,
            };
            let parse_usize =
                |v: &str| v.parse::<usize>().map_err(|e| err(format!("{v:?}: {e}")));
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{v:?}: {e}")));
            let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| err(format!("{v:?}: {e}")));
            let parse_bool = |v: &str| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(err(format!("{v:?}: expected true/false"))),
            };
            let parse_list = |v: &str| -> Result<Vec<usize>, ConfigError> {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse::<usize>()
                            .map_err(|e| err(format!("{item:?}: {e}")))
                    })
                    .collect()
            };

            match key {
                "model.n_layers" => cfg.model.n_layers = parse_usize(value)?,
                "model.n_heads" => cfg.model.n_heads = parse_usize(value)?,
                "model.d_head" => cfg.model.d_head = parse_usize(value)?,
                "model.vocab_size" => cfg.model.vocab_size = parse_usize(value)?,
                "model.max_positions" => cfg.model.max_positions = parse_usize(value)?,
                "model.seed" => cfg.model.seed = parse_u64(value)?,
                "model.init_range" => cfg.model.init_range = parse_f64(value)?,
                "rope.method" => {
                    cfg.rope.method = RopeMethod::parse(value)
                        .ok_or_else(|| err(format!("unknown rope method {value:?}")))?
                }
                "rope.d" => explicit_d = Some(parse_usize(value)?),
                "rope.b" | "rope.base" => cfg.rope.b = parse_f64(value)?,
                "rope.c" => cfg.rope.c = parse_usize(value)?,
                "rope.c_target" => cfg.rope.c_target = parse_usize(value)?,
                "rope.ntk_alpha" => cfg.rope.ntk_alpha = parse_f64(value)?,
                "rope.ntk_beta" => cfg.rope.ntk_beta = parse_f64(value)?,
                "rope.ntk_convention" => {
                    cfg.rope.ntk_convention = NtkConvention::parse(value)
                        .ok_or_else(|| err(format!("unknown ntk convention {value:?}")))?
                }
                "rope.abf_base" => cfg.rope.abf_base = parse_f64(value)?,
                "scaling.kind" => scaling.kind = Some(value.to_string()),
                "scaling.constant" => scaling.constant = Some(parse_f64(value)?),
                "scaling.c" => scaling.c = Some(parse_usize(value)?),
                "scaling.s" => scaling.s = Some(parse_f64(value)?),
                "scaling.n_train" => scaling.n_train = Some(parse_usize(value)?),
                "scaling.exempt_layers" => {
                    scaling.exempt_layers = Some(parse_list(value)?.into_iter().collect())
                }
                "profiler.positions" => {
                    cfg.positions = parse_list(value)?;
                    positions_set = true;
                }
                "profiler.documents" => cfg.documents = Some(PathBuf::from(value)),
                "profiler.limit" => cfg.limit = parse_usize(value)?,
                "profiler.output" => cfg.output = Some(PathBuf::from(value)),
                "profiler.verbose" => cfg.verbose = parse_bool(value)?,
                other => {
                    return Err(err(format!("unknown key {other:?}")));
                }
            }
        }

        cfg.rope.d = explicit_d.unwrap_or(cfg.model.d_head);
        if !positions_set {
            cfg.positions = default_positions(cfg.model.max_positions);
        }

        cfg.scaling = build_policy(&scaling, &cfg.rope)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        self.rope
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        self.scaling
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        if self.rope.d != self.model.d_head {
            return Err(ConfigError::Validation(format!(
                "rope.d = {} must equal model.d_head = {}",
                self.rope.d, self.model.d_head
            )));
        }
        Ok(())
    }
}

fn build_policy(
    draft: &ScalingDraft,
    rope: &RopeConfig<f64>,
) -> Result<ScalingPolicy<f64>, ConfigError> {
    let kind = draft.kind.as_deref().unwrap_or("none");
    let policy = match kind.to_ascii_lowercase().as_str() {
        "none" => ScalingPolicy::None,
        "constant" => {
            let v = draft.constant.ok_or_else(|| {
                ConfigError::Validation("scaling.kind = constant requires scaling.constant".into())
            })?;
            ScalingPolicy::Constant(v)
        }
        "yarn" => ScalingPolicy::Yarn {
            s: draft.s.unwrap_or_else(|| rope.scale()),
        },
        "chiang-log-n" | "chiang_log_n" | "chianglogn" => {
            let n_train = draft.n_train.ok_or_else(|| {
                ConfigError::Validation(
                    "scaling.kind = chiang-log-n requires scaling.n_train".into(),
                )
            })?;
            ScalingPolicy::ChiangLogN { n_train }
        }
        "rerope" => ScalingPolicy::ReRope {
            c: draft.c.unwrap_or(rope.c),
        },
        "entropy-aware" | "entropy_aware" | "entropyaware" => ScalingPolicy::EntropyAware {
            c: draft.c.unwrap_or(rope.c),
            exempt_layers: draft
                .exempt_layers
                .clone()
                .unwrap_or_else(|| BTreeSet::from([0, 1])),
        },
        other => {
            return Err(ConfigError::Validation(format!(
                "unknown scaling kind {other:?}"
            )))
        }
    };
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.model.n_layers, 4);
        assert_eq!(cfg.rope.method, RopeMethod::Rope);
        assert_eq!(cfg.rope.d, 32);
        assert_eq!(cfg.scaling, ScalingPolicy::None);
        assert_eq!(
            cfg.positions,
            vec![15, 31, 63, 127, 255, 511, 1023, 2047, 4095]
        );
    }

    #[test]
    fn full_config_round() {
        let text = "\
# experiment
model.n_layers = 2
model.d_head = 8
model.seed = 123
rope.method = yarn          # method under test
rope.c = 2048
rope.c_target = 8192
scaling.kind = entropy-aware
scaling.c = 2048
scaling.exempt_layers = 0,1,2
profiler.positions = 7, 15, 31
profiler.limit = 16
profiler.verbose = true
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.n_layers, 2);
        assert_eq!(cfg.rope.method, RopeMethod::Yarn);
        assert_eq!(cfg.rope.d, 8);
        assert_eq!(cfg.rope.scale(), 4.0);
        assert_eq!(cfg.positions, vec![7, 15, 31]);
        assert!(cfg.verbose);
        match &cfg.scaling {
            ScalingPolicy::EntropyAware { c, exempt_layers } => {
                assert_eq!(*c, 2048);
                assert_eq!(exempt_layers.len(), 3);
            }
            other => panic!("unexpected policy {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_syntax() {
        assert!(matches!(
            RunConfig::parse("model.layers = 3"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("model.n_layers 3"),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            RunConfig::parse("model.n_layers = three"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn cross_field_validation() {
        assert!(matches!(
            RunConfig::parse("model.d_head = 7"),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(
            RunConfig::parse("model.d_head = 8\nrope.d = 32"),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(
            RunConfig::parse("scaling.kind = constant"),
            Err(ConfigError::Validation(_))
        ));
    }

    #[test]
    fn yarn_scaling_inherits_rope_ratio() {
        let cfg =
            RunConfig::parse("rope.c = 1024\nrope.c_target = 4096\nscaling.kind = yarn").unwrap();
        assert_eq!(cfg.scaling, ScalingPolicy::Yarn { s: 4.0 });
    }
}
