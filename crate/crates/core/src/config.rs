//! The run configuration: one TOML document with `seed` and the sections
//! `data`, `model`, `trainer`, `metrics` and `downstream`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::metrics::MetricsConfig;
use crate::synth::{DomainShiftSpec, SynthConfig};
use crate::trainer::{ModelConfig, TrainerConfig};

pub const ENV_PREFIX: &str = "VESSELSSL_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub labeled_dir: Option<PathBuf>,
    pub unlabeled_dir: Option<PathBuf>,
    /// Held-out labeled images for model selection; when absent a fraction
    /// of the labeled set is used.
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub shift: DomainShiftSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub downstream: FusionConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale values: 400px patches, 250 epochs, batches of 10.
    Full,
    /// One CPU core: 128px images, 60 epochs.
    Desk,
    /// Seconds-scale smoke runs: 64px images, shallow network.
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected full, desk or tiny)"))),
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let mut c = Self {
            seed,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            metrics: MetricsConfig::default(),
            downstream: FusionConfig::default(),
        };
        c.data.synth.seed = seed;
        match preset {
            Preset::Full => {
                c.data.synth.image_size = 400;
                c.trainer.patch_size = 400;
                c.trainer.patch_stride = 400;
                c.trainer.epochs = 250;
            }
            Preset::Desk => {}
            Preset::Tiny => {
                c.data.synth.image_size = 64;
                c.model.unet.depth = 3;
                c.model.unet.base_filters = 8;
                c.model.discriminator.base_filters = 16;
                c.trainer.patch_size = 64;
                c.trainer.patch_stride = 64;
                c.trainer.batch_labeled = 4;
                c.trainer.batch_unlabeled = 4;
                c.trainer.epochs = 10;
                c.trainer.ramp_epochs = 4.0;
                c.trainer.unveil.k = 4;
                c.trainer.lr = 1e-3;
                c.trainer.disc_lr = 1e-3;
                c.downstream.image_size = 64;
            }
        }
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serialises to JSON")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate(&self.model)?;
        self.data.synth.validate()?;
        self.data.shift.validate()?;
        if !(self.metrics.threshold > 0.0 && self.metrics.threshold < 1.0) {
            return Err(Error::Config("metrics.threshold must be in (0, 1)".into()));
        }
        self.downstream.validate()
    }

    /// Applies `VESSELSSL_<SECTION>_<KEY>=value` overrides from the process
    /// environment.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(std::env::vars())
    }

    /// Applies overrides such as `VESSELSSL_TRAINER_LR=0.001`. Keys are matched
    /// case-insensitively against the existing fields, so nested fields work
    /// too (`VESSELSSL_TRAINER_UNVEIL_K=4`). Values are parsed as TOML
    /// scalars or arrays, falling back to plain strings.
    pub fn apply_overrides<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut tree = self.to_json();
        let mut any = false;
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let tokens: Vec<String> = rest.split('_').map(str::to_ascii_lowercase).collect();
            let slot = resolve(&mut tree, &tokens).ok_or_else(|| Error::Config(format!("{name} does not name a config field")))?;
            *slot = parse_value(&raw);
            any = true;
        }
        if any {
            *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("environment override: {e}")))?;
        }
        Ok(())
    }
}

/// Finds the field named by underscore-separated tokens, trying longer
/// field names first since names contain underscores themselves.
fn resolve<'a>(node: &'a mut Value, tokens: &[String]) -> Option<&'a mut Value> {
    if tokens.is_empty() {
        return Some(node);
    }
    let obj = node.as_object_mut()?;
    let split = (1..=tokens.len()).rev().find(|&k| obj.contains_key(&tokens[..k].join("_")))?;
    let key = tokens[..split].join("_");
    resolve(obj.get_mut(&key)?, &tokens[split..])
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|t| t.get("v").cloned())
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::AblationLevel;

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for p in [Preset::Full, Preset::Desk, Preset::Tiny] {
            let c = RunConfig::preset(p, 7);
            c.validate().unwrap();
            let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("[trainer]\nlr = 0.1\n"), Err(Error::Config(_))));
        let c = RunConfig::from_toml_str("seed = 3\n[trainer]\nlr = 0.01\n").unwrap();
        assert_eq!((c.seed, c.trainer.lr), (3, 0.01));
        assert!(RunConfig::from_toml_str("seed = 3\n[trainer]\nlearning_rate = 0.01\n").is_err());
        assert!(RunConfig::from_toml_str("seed = 3\nextra = 1\n").is_err());
    }

    #[test]
    fn environment_overrides_reach_nested_fields() {
        let mut c = RunConfig::preset(Preset::Desk, 1);
        let vars = [
            ("VESSELSSL_TRAINER_LR", "0.005"),
            ("VESSELSSL_TRAINER_UNVEIL_K", "3"),
            ("VESSELSSL_TRAINER_ABLATION", "III"),
            ("VESSELSSL_MODEL_DROPOUT_GAMMA", "[0.5, 0.6]"),
            ("VESSELSSL_DATA_LABELED_DIR", "/tmp/x"),
            ("UNRELATED", "1"),
        ];
        c.apply_overrides(vars.iter().map(|(k, v)| (k.to_string(), v.to_string()))).unwrap();
        assert_eq!(c.trainer.lr, 0.005);
        assert_eq!(c.trainer.unveil.k, 3);
        assert_eq!(c.trainer.ablation, AblationLevel::III);
        assert_eq!(c.model.dropout_gamma, [0.5, 0.6]);
        assert_eq!(c.data.labeled_dir, Some(PathBuf::from("/tmp/x")));
        let bad = [("VESSELSSL_TRAINER_NOPE".to_string(), "1".to_string())];
        assert!(matches!(c.apply_overrides(bad), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset(Preset::Tiny, 1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.trainer.lr *= 2.0;
        assert_ne!(a.hash(), b.hash());
    }
}
