//! The unified run configuration.
//!
//! A JSON document with `model`, `training`, `dataset`, `masking` and
//! `service` sections. Every field is optional; the effective configuration
//! layers command-line flags over the file over the profile defaults, and
//! is validated as a whole before any subcommand runs. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use planmae_core::dataset::{LayoutConstraints, SplitCounts};
use planmae_core::{MaskSpec, Mode, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] planmae_core::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 64x64 images, patch 8, small encoder/decoder; trains on a laptop CPU.
    #[default]
    Desk,
    /// 256x256 images, patch 16, ViT-Tiny-sized encoder.
    Standard,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub image_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub channels: Option<usize>,
    pub enc_dim: Option<usize>,
    pub enc_depth: Option<usize>,
    pub enc_heads: Option<usize>,
    pub dec_dim: Option<usize>,
    pub dec_depth: Option<usize>,
    pub dec_heads: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: Option<usize>,
    pub steps: Option<u64>,
    pub learning_rate: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Use only the first `limit` training images.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub root: Option<PathBuf>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub resolution: Option<usize>,
    pub l_shape_prob: Option<f64>,
    pub min_rooms: Option<usize>,
    pub max_rooms: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingSection {
    /// Training strategy, `name[:ratio[:side|anchor]]`.
    pub train: Option<String>,
    /// Evaluation strategies in the same syntax.
    pub eval: Option<Vec<String>>,
    /// Base seed for evaluation plans.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSection {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub checkpoint: Option<PathBuf>,
    /// Allowed CORS origins; `["*"]` allows any.
    pub cors_origins: Option<Vec<String>>,
    pub max_body_bytes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Option<Profile>,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub dataset: DatasetSection,
    pub masking: MaskingSection,
    pub service: ServiceSection,
}

/// Overlays non-null leaves of `over` onto `base`.
fn merge_values(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_values(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) if !v.is_null() => *slot = v,
        _ => {}
    }
}

/// Everything a subcommand needs, fully resolved and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub effective: RunConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_out: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub data_root: Option<PathBuf>,
    pub counts: SplitCounts,
    pub dataset_seed: u64,
    pub mode: Mode,
    pub resolution: usize,
    pub constraints: LayoutConstraints,
    pub eval_specs: Vec<MaskSpec>,
    pub service: ServiceSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSettings {
    pub host: String,
    pub port: u16,
    pub checkpoint: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    pub max_body_bytes: usize,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fully populated defaults for a profile. Channels and resolution are
    /// left open; they follow the dataset mode and the image size.
    pub fn defaults(profile: Profile) -> Self {
        let m = match profile {
            Profile::Desk => ModelConfig::desk(1),
            Profile::Standard => ModelConfig::standard(1),
        };
        let t = TrainConfig::default();
        let c = LayoutConstraints::default();
        let counts = SplitCounts::default();
        RunConfig {
            profile: Some(profile),
            model: ModelSection {
                image_size: Some(m.image_size),
                patch_size: Some(m.patch_size),
                channels: None,
                enc_dim: Some(m.enc_dim),
                enc_depth: Some(m.enc_depth),
                enc_heads: Some(m.enc_heads),
                dec_dim: Some(m.dec_dim),
                dec_depth: Some(m.dec_depth),
                dec_heads: Some(m.dec_heads),
                mlp_ratio: Some(m.mlp_ratio),
                seed: Some(m.seed),
            },
            training: TrainingSection {
                batch_size: Some(t.batch_size),
                steps: Some(t.steps),
                learning_rate: Some(t.learning_rate),
                warmup_steps: None,
                beta1: Some(t.beta1),
                beta2: Some(t.beta2),
                eps: Some(t.eps),
                weight_decay: Some(t.weight_decay),
                seed: Some(t.seed),
                checkpoint_every: None,
                out_dir: None,
                limit: None,
            },
            dataset: DatasetSection {
                root: None,
                train: Some(counts.train),
                val: Some(counts.val),
                test: Some(counts.test),
                seed: Some(0),
                mode: Some(Mode::LineDrawing),
                resolution: None,
                l_shape_prob: Some(c.l_shape_prob),
                min_rooms: Some(c.min_rooms),
                max_rooms: Some(c.max_rooms),
            },
            masking: MaskingSection {
                train: Some(t.mask.to_string()),
                eval: Some(
                    MaskSpec::eval_presets()
                        .iter()
                        .map(ToString::to_string)
                        .collect(),
                ),
                seed: Some(0),
            },
            service: ServiceSection {
                host: Some("127.0.0.1".into()),
                port: Some(8080),
                checkpoint: None,
                cors_origins: Some(vec!["*".into()]),
                max_body_bytes: Some(8 * 1024 * 1024),
            },
        }
    }

    /// `self` with every non-null field of `over` taking precedence.
    pub fn merged(&self, over: &RunConfig) -> Self {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge_values(&mut base, serde_json::to_value(over).expect("config serializes"));
        serde_json::from_value(base).expect("merge of valid configs is valid")
    }

    /// Layers `flags` over `file` over the defaults of the chosen profile
    /// and validates the result.
    pub fn resolve(file: Option<&RunConfig>, flags: &RunConfig) -> Result<Resolved, ConfigError> {
        let profile = flags.profile.or(file.and_then(|f| f.profile)).unwrap_or_default();
        let mut eff = Self::defaults(profile);
        if let Some(f) = file {
            eff = eff.merged(f);
        }
        eff = eff.merged(flags);
        eff.profile = Some(profile);
        let mode = eff.dataset.mode.expect("defaulted");
        let channels = *eff.model.channels.get_or_insert(mode.channels());
        if channels != mode.channels() {
            return Err(ConfigError::Invalid(format!(
                "model.channels = {channels} does not match dataset mode {mode:?}"
            )));
        }
        let m = &eff.model;
        let model = ModelConfig {
            image_size: m.image_size.expect("defaulted"),
            patch_size: m.patch_size.expect("defaulted"),
            channels,
            enc_dim: m.enc_dim.expect("defaulted"),
            enc_depth: m.enc_depth.expect("defaulted"),
            enc_heads: m.enc_heads.expect("defaulted"),
            dec_dim: m.dec_dim.expect("defaulted"),
            dec_depth: m.dec_depth.expect("defaulted"),
            dec_heads: m.dec_heads.expect("defaulted"),
            mlp_ratio: m.mlp_ratio.expect("defaulted"),
            seed: m.seed.expect("defaulted"),
        };
        model.validate()?;
        let resolution = *eff.dataset.resolution.get_or_insert(model.image_size);

        let t = &eff.training;
        let mask: MaskSpec = eff.masking.train.as_deref().expect("defaulted").parse()?;
        let train = TrainConfig {
            batch_size: t.batch_size.expect("defaulted"),
            steps: t.steps.expect("defaulted"),
            learning_rate: t.learning_rate.expect("defaulted"),
            warmup_steps: t.warmup_steps,
            beta1: t.beta1.expect("defaulted"),
            beta2: t.beta2.expect("defaulted"),
            eps: t.eps.expect("defaulted"),
            weight_decay: t.weight_decay.expect("defaulted"),
            mask,
            seed: t.seed.expect("defaulted"),
            checkpoint_every: t.checkpoint_every,
        };
        train.validate()?;
        if let Some(w) = train.warmup_steps {
            if w > train.steps {
                return Err(ConfigError::Invalid(format!(
                    "warmup_steps {w} exceeds steps {}",
                    train.steps
                )));
            }
        }

        let d = &eff.dataset;
        let constraints = LayoutConstraints {
            min_rooms: d.min_rooms.expect("defaulted"),
            max_rooms: d.max_rooms.expect("defaulted"),
            l_shape_prob: d.l_shape_prob.expect("defaulted"),
            ..LayoutConstraints::default()
        };
        if constraints.min_rooms < 2 || constraints.min_rooms > constraints.max_rooms {
            return Err(ConfigError::Invalid("dataset room count range is empty".into()));
        }
        if !(0.0..=1.0).contains(&constraints.l_shape_prob) {
            return Err(ConfigError::Invalid("dataset.l_shape_prob outside [0, 1]".into()));
        }
        if resolution == 0 {
            return Err(ConfigError::Invalid("dataset.resolution must be positive".into()));
        }
        let counts = SplitCounts {
            train: d.train.expect("defaulted"),
            val: d.val.expect("defaulted"),
            test: d.test.expect("defaulted"),
        };

        let eval_seed = eff.masking.seed.expect("defaulted");
        let eval_specs = eff
            .masking
            .eval
            .as_ref()
            .expect("defaulted")
            .iter()
            .map(|s| s.parse::<MaskSpec>().map(|spec| spec.with_seed(eval_seed)))
            .collect::<Result<Vec<_>, _>>()?;
        if eval_specs.is_empty() {
            return Err(ConfigError::Invalid("masking.eval lists no strategies".into()));
        }

        let s = &eff.service;
        let service = ServiceSettings {
            host: s.host.clone().expect("defaulted"),
            port: s.port.expect("defaulted"),
            checkpoint: s.checkpoint.clone(),
            cors_origins: s.cors_origins.clone().expect("defaulted"),
            max_body_bytes: s.max_body_bytes.expect("defaulted"),
        };

        Ok(Resolved {
            model,
            train,
            train_out: eff.training.out_dir.clone(),
            train_limit: eff.training.limit,
            data_root: eff.dataset.root.clone(),
            counts,
            dataset_seed: eff.dataset.seed.expect("defaulted"),
            mode,
            resolution,
            constraints,
            eval_specs,
            service,
            effective: eff,
        })
    }
}

impl Resolved {
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(&self.effective).expect("config serializes")
    }
}
