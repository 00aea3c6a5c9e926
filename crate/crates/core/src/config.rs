//! Training configuration: a versioned JSON document merged over built-in
//! defaults. Unknown keys and type mismatches are all reported at once.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::World;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All losses, clustering weight ramped by the schedule.
    C2aFull,
    /// As `c2a_full` with the clustering weight pinned to zero.
    LambdaCZero,
    /// Supervised on labeled target data only, from a fresh model.
    TargetOnly,
    /// Source-only supervised run, then `target_only` from its weights.
    Finetune,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::C2aFull, Mode::LambdaCZero, Mode::TargetOnly, Mode::Finetune];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::C2aFull => "c2a_full",
            Mode::LambdaCZero => "lambda_c_zero",
            Mode::TargetOnly => "target_only",
            Mode::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }

    /// Modes that start from the cluster-initialization checkpoint.
    pub fn uses_clusters(self) -> bool {
        matches!(self, Mode::C2aFull | Mode::LambdaCZero)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Images drawn per domain per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSizes {
    pub source: usize,
    pub target_labeled: usize,
    pub bridge: usize,
    pub target_unlabeled: usize,
}

/// Architecture knobs; image size and class counts come from the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHyper {
    pub stride: usize,
    pub hidden: usize,
    pub f_d: usize,
    pub f_e: usize,
    pub k: usize,
    pub disc_channels: Vec<usize>,
    pub slope: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub max_iter: u64,
    /// Supervised steps before fitting the cluster centers.
    pub pretrain_iters: u64,
    pub eval_interval: u64,
    /// Intermediate checkpoints every this many steps; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub batch: BatchSizes,
    pub lr_backbone: f64,
    /// `None` means a tenth of `lr_backbone`.
    pub lr_centers: Option<f64>,
    pub lr_disc: f64,
    pub lr_power: f64,
    pub lambda_adv: f64,
    /// Self-training KL term; off only for the collapse ablation.
    pub kl_enabled: bool,
    pub model: ModelHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            schema_version: SCHEMA_VERSION,
            mode: Mode::C2aFull,
            seed: 0,
            max_iter: 2000,
            pretrain_iters: 500,
            eval_interval: 100,
            checkpoint_interval: 0,
            batch: BatchSizes {
                source: 4,
                target_labeled: 4,
                bridge: 4,
                target_unlabeled: 4,
            },
            lr_backbone: 0.05,
            lr_centers: None,
            lr_disc: 0.02,
            lr_power: 0.9,
            lambda_adv: crate::losses::DEFAULT_LAMBDA_ADV,
            kl_enabled: true,
            model: ModelHyper {
                stride: m.stride,
                hidden: m.hidden,
                f_d: m.f_d,
                f_e: m.f_e,
                k: m.k,
                disc_channels: m.disc_channels,
                slope: m.slope,
                temperature: m.temperature,
            },
        }
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Overlays `user` on `base`, collecting every unknown key and every
/// value whose JSON type differs from the default's.
fn merge(base: &mut Value, user: &Value, path: &str, problems: &mut Vec<String>) {
    let (Value::Object(b), Value::Object(u)) = (&mut *base, user) else {
        return;
    };
    for (key, uv) in u {
        let p = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match b.get_mut(key) {
            None => problems.push(format!("{p}: unknown key")),
            Some(bv @ Value::Object(_)) if uv.is_object() => merge(bv, uv, &p, problems),
            // optional fields default to null and accept a number
            Some(bv @ Value::Null) => *bv = uv.clone(),
            Some(bv) => {
                if kind(bv) == kind(uv) {
                    *bv = uv.clone();
                } else {
                    problems.push(format!("{p}: expected {}, found {}", kind(bv), kind(uv)));
                }
            }
        }
    }
}

/// Parses a possibly partial JSON document over `defaults`. Every unknown
/// key and every value whose JSON type differs from the default is
/// reported in one [`Error::Config`].
pub fn parse_over_defaults<T: Serialize + serde::de::DeserializeOwned>(defaults: &T, text: &str) -> Result<T> {
    let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("<root>: {e}")]))?;
    if !user.is_object() {
        return Err(Error::Config(vec![format!(
            "<root>: expected object, found {}",
            kind(&user)
        )]));
    }
    let mut merged = serde_json::to_value(defaults)?;
    let mut problems = Vec::new();
    merge(&mut merged, &user, "", &mut problems);
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(vec![e.to_string()]))
}

impl TrainConfig {
    /// Parses a (possibly partial) config document over the defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg = parse_over_defaults(&TrainConfig::default(), text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn lr_centers(&self) -> f64 {
        self.lr_centers.unwrap_or(self.lr_backbone / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            p.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        if self.eval_interval == 0 {
            p.push("eval_interval: must be at least 1".into());
        }
        let b = &self.batch;
        for (name, v) in [
            ("batch.source", b.source),
            ("batch.target_labeled", b.target_labeled),
            ("batch.bridge", b.bridge),
            ("batch.target_unlabeled", b.target_unlabeled),
        ] {
            if v == 0 {
                p.push(format!("{name}: must be at least 1"));
            }
        }
        for (name, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_centers", self.lr_centers()),
            ("lr_disc", self.lr_disc),
            ("lr_power", self.lr_power),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                p.push(format!("{name}: must be finite and non-negative"));
            }
        }
        let m = &self.model;
        for (name, v) in [
            ("model.stride", m.stride),
            ("model.hidden", m.hidden),
            ("model.f_d", m.f_d),
            ("model.f_e", m.f_e),
            ("model.k", m.k),
        ] {
            if v == 0 {
                p.push(format!("{name}: must be at least 1"));
            }
        }
        if m.f_e > m.f_d {
            p.push(format!("model.f_e: {} exceeds model.f_d {}", m.f_e, m.f_d));
        }
        if !(m.temperature > 0.0) {
            p.push("model.temperature: must be positive".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn model_config(&self, world: &World) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            height: world.spec.height,
            width: world.spec.width,
            in_channels: crate::synth::PIXEL_DIM,
            stride: m.stride,
            hidden: m.hidden,
            f_d: m.f_d,
            f_e: m.f_e,
            k: m.k,
            n_source_classes: world.source_space().len(),
            n_target_classes: world.target_space().len(),
            disc_channels: m.disc_channels.clone(),
            slope: m.slope,
            temperature: m.temperature,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = TrainConfig::default();
        assert_eq!(TrainConfig::from_json_str(&d.to_pretty_json()).unwrap(), d);
        assert_eq!(TrainConfig::from_json_str("{}").unwrap(), d);
        assert_eq!(d.lr_centers(), d.lr_backbone / 10.0);
    }

    #[test]
    fn partial_documents_override() {
        let c = TrainConfig::from_json_str(r#"{"mode":"target_only","batch":{"source":2},"lr_centers":0.5}"#).unwrap();
        assert_eq!(c.mode, Mode::TargetOnly);
        assert_eq!(c.batch.source, 2);
        assert_eq!(c.batch.bridge, 4);
        assert_eq!(c.lr_centers(), 0.5);
    }

    #[test]
    fn every_offending_key_is_listed() {
        let err =
            TrainConfig::from_json_str(r#"{"bogus":1,"seed":"x","batch":{"nope":2},"model":{"k":true}}"#).unwrap_err();
        let Error::Config(list) = err else { panic!("{err}") };
        assert_eq!(list.len(), 4, "{list:?}");
        for key in ["bogus", "seed", "batch.nope", "model.k"] {
            assert!(list.iter().any(|l| l.starts_with(key)), "{key} in {list:?}");
        }
    }

    #[test]
    fn semantic_violations_are_listed() {
        let err = TrainConfig::from_json_str(r#"{"schema_version":2,"eval_interval":0,"lr_disc":-1}"#).unwrap_err();
        let Error::Config(list) = err else { panic!() };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(TrainConfig::from_json_str(r#"{"mode":"sideways"}"#).is_err());
    }

    #[test]
    fn modes_parse() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.as_str()).unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), Value::String(m.as_str().into()));
        }
    }
}
