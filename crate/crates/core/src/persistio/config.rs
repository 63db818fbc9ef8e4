//! Run configuration: one JSON document covering data, model, training,
//! encoding and metric logging. Validation reports every offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::DatasetSource;
use crate::error::{Error, Result};
use crate::model::{
    encode::validate_encode_config, train::validate_train_config, Discriminator, EncodeConfig, Generator, MlpSpec,
    TrainConfig,
};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{Precision, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_z: usize,
    pub hidden: Vec<usize>,
    pub num_biases: usize,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_bias_sd")]
    pub bias_sd: f64,
    pub critic_hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub critic_slope: f64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

fn default_slope() -> f64 {
    0.2
}

fn default_bias_sd() -> f64 {
    crate::layers::DEFAULT_BIAS_SD
}

fn default_precision() -> Precision {
    Precision::F64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Keep every n-th epoch record in the log (the first and last are always kept).
    pub every_epochs: u64,
    /// Emit alignment-curve charts.
    pub svg: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { every_epochs: 1, svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub encode: EncodeConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Clone, Copy)]
enum Kind {
    Float,
    UInt,
    Bool,
    Str,
    UIntList,
    Precision,
    Schedule,
    OptUInt,
    OptUIntList,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Float => "a number",
            Kind::UInt => "a nonnegative integer",
            Kind::Bool => "a boolean",
            Kind::Str => "a string",
            Kind::UIntList => "an array of nonnegative integers",
            Kind::Precision => "\"f32\" or \"f64\"",
            Kind::Schedule => "an array of {\"from_epoch\", \"lambda\"} objects",
            Kind::OptUInt => "a nonnegative integer or null",
            Kind::OptUIntList => "an array of nonnegative integers or null",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        let uint_list = |v: &Value| v.as_array().is_some_and(|a| a.iter().all(|x| x.as_u64().is_some()));
        match self {
            Kind::Float => v.is_number(),
            Kind::UInt => v.as_u64().is_some(),
            Kind::Bool => v.is_boolean(),
            Kind::Str => v.is_string(),
            Kind::UIntList => uint_list(v),
            Kind::Precision => matches!(v.as_str(), Some("f32" | "f64")),
            Kind::Schedule => v.as_array().is_some_and(|a| {
                a.iter().all(|s| {
                    s.as_object().is_some_and(|o| {
                        o.len() == 2
                            && o.get("from_epoch").is_some_and(|e| e.as_u64().is_some())
                            && o.get("lambda").is_some_and(Value::is_number)
                    })
                })
            }),
            Kind::OptUInt => v.is_null() || v.as_u64().is_some(),
            Kind::OptUIntList => v.is_null() || uint_list(v),
        }
    }
}

type Fields = &'static [(&'static str, Kind, bool)];

const MODEL: Fields = &[
    ("d_z", Kind::UInt, true),
    ("hidden", Kind::UIntList, true),
    ("num_biases", Kind::UInt, true),
    ("slope", Kind::Float, false),
    ("bias_sd", Kind::Float, false),
    ("critic_hidden", Kind::UIntList, true),
    ("critic_slope", Kind::Float, false),
    ("precision", Kind::Precision, false),
];

const TRAIN: Fields = &[
    ("lambda", Kind::Float, true),
    ("lambda_schedule", Kind::Schedule, false),
    ("lr", Kind::Float, true),
    ("beta1", Kind::Float, false),
    ("beta2", Kind::Float, false),
    ("n_critic", Kind::UInt, true),
    ("epochs", Kind::UInt, true),
    ("batch_size", Kind::UInt, true),
    ("seed", Kind::UInt, true),
];

const ENCODE: Fields = &[
    ("mu", Kind::Float, false),
    ("lr", Kind::Float, false),
    ("beta1", Kind::Float, false),
    ("beta2", Kind::Float, false),
    ("max_steps", Kind::UInt, false),
    ("tolerance", Kind::Float, false),
    ("window", Kind::UInt, false),
    ("restarts", Kind::UInt, false),
    ("seed", Kind::UInt, false),
    ("eps", Kind::Float, false),
    ("lr_decay", Kind::Float, false),
    ("patience", Kind::UInt, false),
];

const METRICS: Fields = &[("every_epochs", Kind::UInt, false), ("svg", Kind::Bool, false)];

const SEGMENTS: Fields = &[
    ("kind", Kind::Str, true),
    ("segments", Kind::UInt, true),
    ("n_per", Kind::UInt, true),
    ("d_x", Kind::UInt, true),
    ("separation", Kind::Float, true),
    ("noise_sd", Kind::Float, true),
];

const ARCS: Fields = &[
    ("kind", Kind::Str, true),
    ("arcs", Kind::UInt, true),
    ("n_per", Kind::UInt, true),
    ("radius_spread", Kind::Float, true),
    ("noise_sd", Kind::Float, true),
];

const IDX: Fields = &[
    ("kind", Kind::Str, true),
    ("images", Kind::Str, true),
    ("labels", Kind::Str, true),
    ("limit", Kind::OptUInt, false),
    ("downsample", Kind::Bool, false),
    ("classes", Kind::OptUIntList, false),
];

const NDJSON: Fields = &[("kind", Kind::Str, true), ("path", Kind::Str, true)];

fn check_section(prefix: &str, value: &Value, fields: Fields, problems: &mut Vec<String>) {
    let Some(obj) = value.as_object() else {
        problems.push(format!("{prefix}: expected an object"));
        return;
    };
    for key in obj.keys() {
        if !fields.iter().any(|(name, _, _)| name == key) {
            problems.push(format!("{prefix}.{key}: unknown key"));
        }
    }
    for &(name, kind, required) in fields {
        match obj.get(name) {
            None if required => problems.push(format!("{prefix}.{name}: missing required key")),
            None => {}
            Some(v) if !kind.accepts(v) => problems.push(format!("{prefix}.{name}: expected {}", kind.describe())),
            Some(_) => {}
        }
    }
}

fn check_dataset(value: &Value, problems: &mut Vec<String>) {
    let fields = match value.get("kind").and_then(Value::as_str) {
        Some("segments") => SEGMENTS,
        Some("arcs") => ARCS,
        Some("idx") => IDX,
        Some("ndjson") => NDJSON,
        Some(other) => {
            problems.push(format!(
                "dataset.kind: unknown dataset kind \"{other}\" (expected segments, arcs, idx or ndjson)"
            ));
            return;
        }
        None => {
            problems.push("dataset.kind: missing required key".into());
            return;
        }
    };
    check_section("dataset", value, fields, problems);
}

fn check_model(m: &ModelConfig, problems: &mut Vec<String>) {
    if m.d_z == 0 {
        problems.push("model.d_z must be positive".into());
    }
    if m.num_biases == 0 {
        problems.push("model.num_biases must be positive".into());
    }
    let mut prev = m.d_z;
    for &h in &m.hidden {
        if h <= prev {
            problems.push(format!(
                "model.hidden: widths must strictly grow from d_z (width {h} after {prev})"
            ));
            break;
        }
        prev = h;
    }
    if m.critic_hidden.contains(&0) {
        problems.push("model.critic_hidden: widths must be positive".into());
    }
    for (name, s) in [("slope", m.slope), ("critic_slope", m.critic_slope)] {
        if !(s > 0.0 && s < 1.0) {
            problems.push(format!("model.{name} must lie in (0, 1)"));
        }
    }
    if !(m.bias_sd >= 0.0) {
        problems.push("model.bias_sd must be nonnegative".into());
    }
}

fn collect(result: Result<()>, problems: &mut Vec<String>) {
    match result {
        Ok(()) => {}
        Err(Error::Config(p)) => problems.extend(p),
        Err(e) => problems.push(e.to_string()),
    }
}

impl RunConfig {
    /// Parses and validates, listing every problem found.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("not valid JSON: {e}")]))?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Config(vec!["config must be a JSON object".into()]));
        };
        let mut problems = Vec::new();
        let empty = Value::Object(Map::new());
        for key in obj.keys() {
            if !["dataset", "model", "train", "encode", "metrics"].contains(&key.as_str()) {
                problems.push(format!("{key}: unknown key"));
            }
        }
        for required in ["dataset", "model", "train"] {
            if !obj.contains_key(required) {
                problems.push(format!("{required}: missing required section"));
            }
        }
        if let Some(d) = obj.get("dataset") {
            check_dataset(d, &mut problems);
        }
        for (name, fields) in [("model", MODEL), ("train", TRAIN), ("encode", ENCODE), ("metrics", METRICS)] {
            if let Some(v) = obj.get(name) {
                check_section(name, v, fields, &mut problems);
            } else if !["model", "train"].contains(&name) {
                check_section(name, &empty, fields, &mut problems);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(vec![format!("config: {e}")]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Value-level checks, every problem listed.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        check_model(&self.model, &mut problems);
        collect(validate_train_config(&self.train, self.model.num_biases), &mut problems);
        collect(validate_encode_config(&self.encode), &mut problems);
        if self.metrics.every_epochs == 0 {
            problems.push("metrics.every_epochs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Canonical serialization used for hashing and echoing into manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// "wgan-equivalent" for a single-bias model without regularizer.
    pub fn label(&self) -> Option<&'static str> {
        let no_lambda = self.train.lambda == 0.0 && self.train.lambda_schedule.iter().all(|s| s.lambda == 0.0);
        (self.model.num_biases == 1 && no_lambda).then_some("wgan-equivalent")
    }

    pub fn mlp_spec(&self, d_x: usize) -> MlpSpec {
        MlpSpec {
            d_z: self.model.d_z,
            hidden: self.model.hidden.clone(),
            d_x,
            num_biases: self.model.num_biases,
            slope: self.model.slope,
            bias_sd: self.model.bias_sd,
        }
    }

    /// Freshly initialised networks for data of width `d_x`, seeded from the
    /// training seed.
    pub fn build_models<T: Scalar>(&self, d_x: usize) -> Result<(Generator<T>, Discriminator<T>)> {
        let last = self.model.hidden.last().copied().unwrap_or(self.model.d_z);
        if d_x <= last {
            return Err(Error::Config(vec![format!(
                "model.hidden: last width {last} must be below the data dimension {d_x}"
            )]));
        }
        let mut rng = stream_rng(self.train.seed, Stream::Init, 0);
        let gen = Generator::mlp(&self.mlp_spec(d_x), &mut rng)?;
        let disc = Discriminator::mlp(d_x, &self.model.critic_hidden, self.model.critic_slope, &mut rng)?;
        Ok((gen, disc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "dataset": {"kind": "segments", "segments": 2, "n_per": 100, "d_x": 2, "separation": 0.5, "noise_sd": 0.01},
        "model": {"d_z": 1, "hidden": [], "num_biases": 2, "critic_hidden": [16]},
        "train": {"lambda": 0.05, "lr": 0.0002, "n_critic": 5, "epochs": 3, "batch_size": 32, "seed": 1}
    }"#;

    #[test]
    fn accepts_minimal_config_with_defaults() {
        let c = RunConfig::from_json(GOOD).unwrap();
        assert_eq!(c.encode.mu, 0.1);
        assert_eq!(c.train.beta1, 0.5);
        assert_eq!(c.model.precision, Precision::F64);
        assert_eq!(c.label(), None);
        let again = RunConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn lists_every_offending_key() {
        let bad = r#"{
            "dataset": {"kind": "segments", "segments": 2, "n_per": 100, "d_x": 2, "separation": "far", "noise_sd": 0.01, "colour": 1},
            "model": {"d_z": 1, "hidden": [8], "num_biases": 2},
            "train": {"lambda": 0.05, "lr": -1, "n_critic": 5, "epochs": 3, "batch_size": 32, "seed": 1, "momentum": 0.9},
            "extra": {}
        }"#;
        let Err(Error::Config(p)) = RunConfig::from_json(bad) else { panic!() };
        for needle in ["extra: unknown key", "dataset.separation", "dataset.colour", "model.critic_hidden", "train.momentum"] {
            assert!(p.iter().any(|m| m.contains(needle)), "{needle} missing from {p:?}");
        }
        assert_eq!(p.len(), 5, "{p:?}");
    }

    #[test]
    fn value_errors_are_all_listed() {
        let bad = GOOD
            .replace("\"lr\": 0.0002", "\"lr\": 0")
            .replace("\"n_critic\": 5", "\"n_critic\": 0")
            .replace("\"d_z\": 1", "\"d_z\": 0");
        let Err(Error::Config(p)) = RunConfig::from_json(&bad) else { panic!() };
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn single_bias_without_lambda_is_labelled() {
        let c = GOOD.replace("\"num_biases\": 2", "\"num_biases\": 1").replace("\"lambda\": 0.05", "\"lambda\": 0");
        assert_eq!(RunConfig::from_json(&c).unwrap().label(), Some("wgan-equivalent"));
        let bad = GOOD.replace("\"num_biases\": 2", "\"num_biases\": 1");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn models_are_seeded() {
        let c = RunConfig::from_json(GOOD).unwrap();
        let (g1, d1) = c.build_models::<f64>(2).unwrap();
        let (g2, d2) = c.build_models::<f64>(2).unwrap();
        assert_eq!((g1, d1), (g2, d2));
    }
}
