//! Run configuration: a strict, line-based `key = value` format with dotted
//! section prefixes, full defaulting, and a canonical echo that round-trips.
//!
//! Every recognized key is listed in [`RunConfig::to_lines`]; parsing rejects
//! unknown keys, malformed values, and out-of-range values with the offending
//! line number. An empty file yields all defaults.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use convirt_core::augment::AugmentConfig;
use convirt_core::data::SyntheticSpec;
use convirt_core::eval::classify::{FineTuneConfig, ProbeConfig};
use convirt_core::model::{ModelConfig, ProjectionMode};
use convirt_core::objective::{BinaryHeadConfig, LossConfig, ObjectiveKind};
use convirt_core::train::{GradCheckConfig, TrainConfig};

/// Dataset splitting knobs shared by the probe and fine-tune commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSettings {
    /// Fraction of training examples whose labels are kept (stratified).
    pub label_fraction: f64,
    /// Validation fraction of the labeled three-way split.
    pub val_fraction: f64,
    /// Test fraction of the labeled three-way split.
    pub test_fraction: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            label_fraction: 1.0,
            val_fraction: 0.15,
            test_fraction: 0.2,
        }
    }
}

/// Retrieval evaluation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSettings {
    /// Queries sampled per category.
    pub n_query: usize,
    /// Candidates sampled per category.
    pub n_candidate: usize,
    /// Textual queries per category.
    pub queries_per_class: usize,
    /// Ranks at which precision is reported.
    pub k_values: Vec<usize>,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            n_query: 10,
            n_candidate: 200,
            queries_per_class: 5,
            k_values: vec![5, 10, 50],
        }
    }
}

/// Input artifact locations; empty strings mean "not set".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataSettings {
    /// Corpus directory (a `manifest.tsv` layout).
    pub corpus: String,
    /// Checkpoint file for evaluation commands.
    pub checkpoint: String,
}

/// The full effective configuration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Global seed; commands derive per-purpose streams from it.
    pub seed: u64,
    /// Input artifact locations.
    pub data: DataSettings,
    /// Synthetic corpus shape.
    pub synth: SyntheticSpec,
    /// View augmentation family.
    pub augment: AugmentConfig,
    /// Encoder and projection shapes (`vocab_size` always comes from the
    /// loaded corpus, never from the file).
    pub model: ModelConfig,
    /// Contrastive loss shape.
    pub loss: LossConfig,
    /// Pretraining loop.
    pub train: TrainConfig,
    /// Discriminator shape for the binary objective.
    pub binary: BinaryHeadConfig,
    /// Linear-probe head training.
    pub probe: ProbeConfig,
    /// Two-stage fine-tuning.
    pub finetune: FineTuneConfig,
    /// Labeled-split shape for probe/fine-tune.
    pub split: SplitSettings,
    /// Retrieval evaluation shape.
    pub retrieval: RetrievalSettings,
    /// Gradient checker shape.
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSettings::default(),
            synth: SyntheticSpec::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::with_vocab(1),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            binary: BinaryHeadConfig::default(),
            probe: ProbeConfig::default(),
            finetune: FineTuneConfig::default(),
            split: SplitSettings::default(),
            retrieval: RetrievalSettings::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

/// A configuration failure, attributed to a line when one is at fault.
#[derive(Debug)]
pub struct ConfigError {
    /// 1-based line number, when attributable.
    pub line: Option<usize>,
    /// What went wrong.
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        message: message.into(),
    }
}

fn parse_u64(v: &str, line: usize, key: &str) -> Result<u64, ConfigError> {
    v.parse()
        .map_err(|_| err_at(line, format!("{key}: expected a non-negative integer, got `{v}`")))
}

fn parse_usize(v: &str, line: usize, key: &str) -> Result<usize, ConfigError> {
    v.parse()
        .map_err(|_| err_at(line, format!("{key}: expected a non-negative integer, got `{v}`")))
}

fn parse_f64(v: &str, line: usize, key: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| err_at(line, format!("{key}: expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(err_at(line, format!("{key}: must be finite, got `{v}`")));
    }
    Ok(x)
}

fn parse_bool(v: &str, line: usize, key: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err_at(line, format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn parse_usize_list(v: &str, line: usize, key: &str) -> Result<Vec<usize>, ConfigError> {
    let items: Result<Vec<usize>, _> = v.split(',').map(|s| s.trim().parse()).collect();
    let items =
        items.map_err(|_| err_at(line, format!("{key}: expected comma-separated integers")))?;
    if items.is_empty() {
        return Err(err_at(line, format!("{key}: list must be non-empty")));
    }
    Ok(items)
}

fn positive_f64(x: f64, line: usize, key: &str) -> Result<f64, ConfigError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(err_at(line, format!("{key}: must be positive, got {x}")))
    }
}

fn non_negative_f64(x: f64, line: usize, key: &str) -> Result<f64, ConfigError> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(err_at(line, format!("{key}: must be non-negative, got {x}")))
    }
}

fn unit_open_f64(x: f64, line: usize, key: &str) -> Result<f64, ConfigError> {
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(err_at(line, format!("{key}: must be in (0, 1), got {x}")))
    }
}

fn positive_usize(x: usize, line: usize, key: &str) -> Result<usize, ConfigError> {
    if x > 0 {
        Ok(x)
    } else {
        Err(err_at(line, format!("{key}: must be positive")))
    }
}

fn fmt_f64(x: f64) -> String {
    // `{}` prints the shortest representation that parses back to the same
    // f64, which is what makes the echo round-trip bit-exact.
    format!("{x}")
}

fn fmt_usize_list(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    fn assign(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse_u64(value, line, key)?,

            "data.corpus" => self.data.corpus = value.to_string(),
            "data.checkpoint" => self.data.checkpoint = value.to_string(),

            "synth.n_classes" => self.synth.n_classes = parse_usize(value, line, key)?,
            "synth.n_pairs" => self.synth.n_pairs = parse_usize(value, line, key)?,
            "synth.image_size" => self.synth.image_size = parse_usize(value, line, key)?,
            "synth.noise_std" => {
                self.synth.noise_std = non_negative_f64(parse_f64(value, line, key)?, line, key)?
            }
            "synth.sentences_min" => {
                self.synth.sentences_per_report.0 = parse_usize(value, line, key)?
            }
            "synth.sentences_max" => {
                self.synth.sentences_per_report.1 = parse_usize(value, line, key)?
            }
            "synth.vocab_per_class" => self.synth.vocab_per_class = parse_usize(value, line, key)?,
            "synth.shared_vocab" => self.synth.shared_vocab = parse_usize(value, line, key)?,

            "augment.crop_area_min" => self.augment.crop_area.0 = parse_f64(value, line, key)?,
            "augment.crop_area_max" => self.augment.crop_area.1 = parse_f64(value, line, key)?,
            "augment.hflip_prob" => {
                let p = parse_f64(value, line, key)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err_at(line, format!("{key}: must be in [0, 1], got {p}")));
                }
                self.augment.hflip_prob = p;
            }
            "augment.rotation_min_deg" => self.augment.rotation_deg.0 = parse_f64(value, line, key)?,
            "augment.rotation_max_deg" => self.augment.rotation_deg.1 = parse_f64(value, line, key)?,
            "augment.max_translate" => {
                self.augment.max_translate = non_negative_f64(parse_f64(value, line, key)?, line, key)?
            }
            "augment.scale_min" => self.augment.scale.0 = parse_f64(value, line, key)?,
            "augment.scale_max" => self.augment.scale.1 = parse_f64(value, line, key)?,
            "augment.brightness_min" => self.augment.brightness.0 = parse_f64(value, line, key)?,
            "augment.brightness_max" => self.augment.brightness.1 = parse_f64(value, line, key)?,
            "augment.contrast_min" => self.augment.contrast.0 = parse_f64(value, line, key)?,
            "augment.contrast_max" => self.augment.contrast.1 = parse_f64(value, line, key)?,
            "augment.blur_sigma_min" => self.augment.blur_sigma.0 = parse_f64(value, line, key)?,
            "augment.blur_sigma_max" => self.augment.blur_sigma.1 = parse_f64(value, line, key)?,
            "augment.output_size" => {
                self.augment.output_size = positive_usize(parse_usize(value, line, key)?, line, key)?
            }

            "model.conv_channels" => self.model.conv_channels = parse_usize_list(value, line, key)?,
            "model.embed_dim" => {
                self.model.embed_dim = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "model.n_attention_layers" => {
                self.model.n_attention_layers = parse_usize(value, line, key)?
            }
            "model.n_heads" => {
                self.model.n_heads = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "model.ffn_dim" => {
                self.model.ffn_dim = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "model.projection_dim" => {
                self.model.projection_dim = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "model.projection_hidden" => {
                self.model.projection_hidden =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "model.projection" => {
                self.model.projection = match value {
                    "nonlinear" => ProjectionMode::NonLinear,
                    "linear" => ProjectionMode::Linear,
                    _ => {
                        return Err(err_at(
                            line,
                            format!("{key}: expected nonlinear or linear, got `{value}`"),
                        ))
                    }
                }
            }
            "model.position_encoding" => {
                self.model.position_encoding = parse_bool(value, line, key)?
            }

            "loss.temperature" => {
                self.loss.temperature = positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "loss.weight" => {
                let w = parse_f64(value, line, key)?;
                if !(0.0..=1.0).contains(&w) {
                    return Err(err_at(line, format!("{key}: must be in [0, 1], got {w}")));
                }
                self.loss.weight = w;
            }

            "train.learning_rate" => {
                self.train.learning_rate = positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "train.weight_decay" => {
                self.train.weight_decay = non_negative_f64(parse_f64(value, line, key)?, line, key)?
            }
            "train.batch_size" => {
                let b = parse_usize(value, line, key)?;
                if b < 2 {
                    return Err(err_at(line, format!("{key}: must be at least 2, got {b}")));
                }
                self.train.batch_size = b;
            }
            "train.eval_interval_steps" => {
                let n = parse_u64(value, line, key)?;
                if n == 0 {
                    return Err(err_at(line, format!("{key}: must be positive")));
                }
                self.train.eval_interval_steps = n;
            }
            "train.anneal_factor" => {
                let f = parse_f64(value, line, key)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(err_at(line, format!("{key}: must be in (0, 1], got {f}")));
                }
                self.train.anneal_factor = f;
            }
            "train.anneal_patience" => {
                self.train.anneal_patience =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "train.stop_after" => {
                self.train.stop_after = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "train.objective" => {
                self.train.objective = match value {
                    "contrastive" => ObjectiveKind::Contrastive,
                    "binary" => ObjectiveKind::Binary,
                    _ => {
                        return Err(err_at(
                            line,
                            format!("{key}: expected contrastive or binary, got `{value}`"),
                        ))
                    }
                }
            }
            "train.val_fraction" => {
                self.train.val_fraction = unit_open_f64(parse_f64(value, line, key)?, line, key)?
            }

            "binary.common_dim" => {
                self.binary.common_dim = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "binary.hidden_dim" => {
                self.binary.hidden_dim = positive_usize(parse_usize(value, line, key)?, line, key)?
            }

            "probe.learning_rate" => {
                self.probe.learning_rate = positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "probe.weight_decay" => {
                self.probe.weight_decay = non_negative_f64(parse_f64(value, line, key)?, line, key)?
            }
            "probe.batch_size" => {
                self.probe.batch_size = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "probe.max_epochs" => {
                self.probe.max_epochs = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "probe.anneal_factor" => {
                let f = parse_f64(value, line, key)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(err_at(line, format!("{key}: must be in (0, 1], got {f}")));
                }
                self.probe.anneal_factor = f;
            }
            "probe.anneal_patience" => {
                self.probe.anneal_patience =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "probe.dropout" => {
                let p = parse_f64(value, line, key)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(err_at(line, format!("{key}: must be in [0, 1), got {p}")));
                }
                self.probe.dropout = p;
            }

            "finetune.warmup_steps" => self.finetune.warmup_steps = parse_usize(value, line, key)?,
            "finetune.head_learning_rate" => {
                self.finetune.head_learning_rate =
                    positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "finetune.learning_rate" => {
                self.finetune.joint.learning_rate =
                    positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "finetune.weight_decay" => {
                self.finetune.joint.weight_decay =
                    non_negative_f64(parse_f64(value, line, key)?, line, key)?
            }
            "finetune.batch_size" => {
                self.finetune.joint.batch_size =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "finetune.max_epochs" => self.finetune.joint.max_epochs = parse_usize(value, line, key)?,
            "finetune.anneal_factor" => {
                let f = parse_f64(value, line, key)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(err_at(line, format!("{key}: must be in (0, 1], got {f}")));
                }
                self.finetune.joint.anneal_factor = f;
            }
            "finetune.anneal_patience" => {
                self.finetune.joint.anneal_patience =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "finetune.dropout" => {
                let p = parse_f64(value, line, key)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(err_at(line, format!("{key}: must be in [0, 1), got {p}")));
                }
                self.finetune.joint.dropout = p;
            }

            "split.label_fraction" => {
                let f = parse_f64(value, line, key)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(err_at(line, format!("{key}: must be in (0, 1], got {f}")));
                }
                self.split.label_fraction = f;
            }
            "split.val_fraction" => {
                self.split.val_fraction = unit_open_f64(parse_f64(value, line, key)?, line, key)?
            }
            "split.test_fraction" => {
                self.split.test_fraction = unit_open_f64(parse_f64(value, line, key)?, line, key)?
            }

            "retrieval.n_query" => {
                self.retrieval.n_query = positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "retrieval.n_candidate" => {
                self.retrieval.n_candidate =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "retrieval.queries_per_class" => {
                self.retrieval.queries_per_class =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }
            "retrieval.k_values" => {
                let ks = parse_usize_list(value, line, key)?;
                if ks.iter().any(|&k| k == 0) {
                    return Err(err_at(line, format!("{key}: ranks must be positive")));
                }
                self.retrieval.k_values = ks;
            }

            "gradcheck.epsilon" => {
                self.gradcheck.epsilon = positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "gradcheck.tolerance" => {
                self.gradcheck.tolerance = positive_f64(parse_f64(value, line, key)?, line, key)?
            }
            "gradcheck.min_coords" => {
                self.gradcheck.min_coords =
                    positive_usize(parse_usize(value, line, key)?, line, key)?
            }

            _ => return Err(err_at(line, format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses configuration text. Blank lines and `#` comments are allowed;
    /// every other line must be `key = value` with a known key.
    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err_at(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(err_at(line_no, format!("duplicate key `{key}`")));
            }
            cfg.assign(key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and parses a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse_str(&text)
    }

    /// Cross-field checks that no single assignment can decide.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let section = |name: &str, r: convirt_core::Result<()>| match r {
            Ok(()) => Ok(()),
            Err(e) => Err(err(format!("section `{name}`: {e}"))),
        };
        section("synth", convirt_core::data::validate_spec(&self.synth))?;
        section("augment", self.augment.validate())?;
        section("model", self.model.validate())?;
        section("loss", self.loss.validate())?;
        section("train", self.train.validate())?;
        section("probe", self.probe.validate())?;
        if self.split.val_fraction + self.split.test_fraction >= 1.0 {
            return Err(err(
                "section `split`: val_fraction + test_fraction must leave room for training",
            ));
        }
        Ok(())
    }

    /// Canonical serialization of the effective configuration: every key,
    /// one per line, grouped by section, in a fixed order. Parsing the output
    /// reproduces `self` exactly.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());

        kv("data.corpus", self.data.corpus.clone());
        kv("data.checkpoint", self.data.checkpoint.clone());

        kv("synth.n_classes", self.synth.n_classes.to_string());
        kv("synth.n_pairs", self.synth.n_pairs.to_string());
        kv("synth.image_size", self.synth.image_size.to_string());
        kv("synth.noise_std", fmt_f64(self.synth.noise_std));
        kv(
            "synth.sentences_min",
            self.synth.sentences_per_report.0.to_string(),
        );
        kv(
            "synth.sentences_max",
            self.synth.sentences_per_report.1.to_string(),
        );
        kv(
            "synth.vocab_per_class",
            self.synth.vocab_per_class.to_string(),
        );
        kv("synth.shared_vocab", self.synth.shared_vocab.to_string());

        kv("augment.crop_area_min", fmt_f64(self.augment.crop_area.0));
        kv("augment.crop_area_max", fmt_f64(self.augment.crop_area.1));
        kv("augment.hflip_prob", fmt_f64(self.augment.hflip_prob));
        kv(
            "augment.rotation_min_deg",
            fmt_f64(self.augment.rotation_deg.0),
        );
        kv(
            "augment.rotation_max_deg",
            fmt_f64(self.augment.rotation_deg.1),
        );
        kv("augment.max_translate", fmt_f64(self.augment.max_translate));
        kv("augment.scale_min", fmt_f64(self.augment.scale.0));
        kv("augment.scale_max", fmt_f64(self.augment.scale.1));
        kv("augment.brightness_min", fmt_f64(self.augment.brightness.0));
        kv("augment.brightness_max", fmt_f64(self.augment.brightness.1));
        kv("augment.contrast_min", fmt_f64(self.augment.contrast.0));
        kv("augment.contrast_max", fmt_f64(self.augment.contrast.1));
        kv("augment.blur_sigma_min", fmt_f64(self.augment.blur_sigma.0));
        kv("augment.blur_sigma_max", fmt_f64(self.augment.blur_sigma.1));
        kv("augment.output_size", self.augment.output_size.to_string());

        kv(
            "model.conv_channels",
            fmt_usize_list(&self.model.conv_channels),
        );
        kv("model.embed_dim", self.model.embed_dim.to_string());
        kv(
            "model.n_attention_layers",
            self.model.n_attention_layers.to_string(),
        );
        kv("model.n_heads", self.model.n_heads.to_string());
        kv("model.ffn_dim", self.model.ffn_dim.to_string());
        kv(
            "model.projection_dim",
            self.model.projection_dim.to_string(),
        );
        kv(
            "model.projection_hidden",
            self.model.projection_hidden.to_string(),
        );
        kv(
            "model.projection",
            match self.model.projection {
                ProjectionMode::NonLinear => "nonlinear".to_string(),
                ProjectionMode::Linear => "linear".to_string(),
            },
        );
        kv(
            "model.position_encoding",
            self.model.position_encoding.to_string(),
        );

        kv("loss.temperature", fmt_f64(self.loss.temperature));
        kv("loss.weight", fmt_f64(self.loss.weight));

        kv("train.learning_rate", fmt_f64(self.train.learning_rate));
        kv("train.weight_decay", fmt_f64(self.train.weight_decay));
        kv("train.batch_size", self.train.batch_size.to_string());
        kv(
            "train.eval_interval_steps",
            self.train.eval_interval_steps.to_string(),
        );
        kv("train.anneal_factor", fmt_f64(self.train.anneal_factor));
        kv(
            "train.anneal_patience",
            self.train.anneal_patience.to_string(),
        );
        kv("train.stop_after", self.train.stop_after.to_string());
        kv(
            "train.objective",
            match self.train.objective {
                ObjectiveKind::Contrastive => "contrastive".to_string(),
                ObjectiveKind::Binary => "binary".to_string(),
            },
        );
        kv("train.val_fraction", fmt_f64(self.train.val_fraction));

        kv("binary.common_dim", self.binary.common_dim.to_string());
        kv("binary.hidden_dim", self.binary.hidden_dim.to_string());

        kv("probe.learning_rate", fmt_f64(self.probe.learning_rate));
        kv("probe.weight_decay", fmt_f64(self.probe.weight_decay));
        kv("probe.batch_size", self.probe.batch_size.to_string());
        kv("probe.max_epochs", self.probe.max_epochs.to_string());
        kv("probe.anneal_factor", fmt_f64(self.probe.anneal_factor));
        kv(
            "probe.anneal_patience",
            self.probe.anneal_patience.to_string(),
        );
        kv("probe.dropout", fmt_f64(self.probe.dropout));

        kv(
            "finetune.warmup_steps",
            self.finetune.warmup_steps.to_string(),
        );
        kv(
            "finetune.head_learning_rate",
            fmt_f64(self.finetune.head_learning_rate),
        );
        kv(
            "finetune.learning_rate",
            fmt_f64(self.finetune.joint.learning_rate),
        );
        kv(
            "finetune.weight_decay",
            fmt_f64(self.finetune.joint.weight_decay),
        );
        kv(
            "finetune.batch_size",
            self.finetune.joint.batch_size.to_string(),
        );
        kv(
            "finetune.max_epochs",
            self.finetune.joint.max_epochs.to_string(),
        );
        kv(
            "finetune.anneal_factor",
            fmt_f64(self.finetune.joint.anneal_factor),
        );
        kv(
            "finetune.anneal_patience",
            self.finetune.joint.anneal_patience.to_string(),
        );
        kv("finetune.dropout", fmt_f64(self.finetune.joint.dropout));

        kv("split.label_fraction", fmt_f64(self.split.label_fraction));
        kv("split.val_fraction", fmt_f64(self.split.val_fraction));
        kv("split.test_fraction", fmt_f64(self.split.test_fraction));

        kv("retrieval.n_query", self.retrieval.n_query.to_string());
        kv(
            "retrieval.n_candidate",
            self.retrieval.n_candidate.to_string(),
        );
        kv(
            "retrieval.queries_per_class",
            self.retrieval.queries_per_class.to_string(),
        );
        kv("retrieval.k_values", fmt_usize_list(&self.retrieval.k_values));

        kv("gradcheck.epsilon", fmt_f64(self.gradcheck.epsilon));
        kv("gradcheck.tolerance", fmt_f64(self.gradcheck.tolerance));
        kv(
            "gradcheck.min_coords",
            self.gradcheck.min_coords.to_string(),
        );
        s
    }

    /// Writes the effective configuration beside a run's outputs.
    pub fn write_sidecar(&self, dir: &Path) -> std::io::Result<std::path::PathBuf> {
        let path = dir.join("effective-config.txt");
        fs::write(&path, self.to_lines())?;
        Ok(path)
    }
}
