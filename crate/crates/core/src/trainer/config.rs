use serde::{Deserialize, Serialize};

use crate::data::AugmentationSpec;
use crate::error::{Error, Result};
use crate::losses::MseTarget;
use crate::networks::{DiscriminatorSpec, StudentSpec, TeacherSpec, UNetSpec};
use crate::unveiling::UnveilSpec;

/// Cumulative model ladder; each level adds or replaces one component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationLevel {
    /// Labeled data only: main decoder with BCE + Dice.
    #[serde(rename = "supervised")]
    SupervisedOnly,
    /// Student plus a mask discriminator: ground-truth masks are real,
    /// predictions on unlabeled patches are fake.
    I,
    /// Adds the noise and dropout decoders to the supervised loss.
    II,
    /// Adds the EMA teacher and MSE consistency on unlabeled patches.
    III,
    /// Replaces the mask discriminator with bottleneck feature alignment.
    IV,
    /// Adds Monte Carlo vessel unveiling to the consistency target.
    #[default]
    V,
}

/// What the discriminator looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscInput {
    Mask,
    Feature,
}

impl AblationLevel {
    pub const LADDER: [AblationLevel; 5] = [Self::I, Self::II, Self::III, Self::IV, Self::V];

    pub fn uses_unlabeled(self) -> bool {
        self != Self::SupervisedOnly
    }

    pub fn tri_decoder(self) -> bool {
        self >= Self::II
    }

    pub fn has_teacher(self) -> bool {
        self >= Self::III
    }

    pub fn unveiling(self) -> bool {
        self == Self::V
    }

    pub fn discriminator(self) -> Option<DiscInput> {
        match self {
            Self::SupervisedOnly => None,
            Self::I | Self::II | Self::III => Some(DiscInput::Mask),
            Self::IV | Self::V => Some(DiscInput::Feature),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SupervisedOnly => "supervised",
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
            Self::IV => "IV",
            Self::V => "V",
        }
    }
}

impl std::str::FromStr for AblationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [Self::SupervisedOnly, Self::I, Self::II, Self::III, Self::IV, Self::V];
        all.into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation level `{s}` (expected supervised, I, II, III, IV or V)")))
    }
}

/// Which network produces predictions for validation, evaluation and export.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceNet {
    /// The teacher when the level has one, otherwise the student.
    #[default]
    Auto,
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub unet: UNetSpec,
    pub noise_sigma: f32,
    pub dropout_gamma: [f32; 2],
    pub teacher: TeacherSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = StudentSpec::default();
        Self {
            unet: s.unet,
            noise_sigma: s.noise_sigma,
            dropout_gamma: s.dropout_gamma,
            teacher: TeacherSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn student_spec(&self) -> StudentSpec {
        StudentSpec { unet: self.unet.clone(), noise_sigma: self.noise_sigma, dropout_gamma: self.dropout_gamma }
    }

    pub fn validate(&self) -> Result<()> {
        self.student_spec().validate()?;
        self.teacher.validate()?;
        self.discriminator.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Learning rate of the discriminator's optimizer.
    pub disc_lr: f32,
    pub epochs: usize,
    /// Optional cap on the total number of optimisation steps.
    pub max_steps: Option<u64>,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub ema_cap: f64,
    /// Epochs over which the consistency weight ramps up to 1.
    pub ramp_epochs: f64,
    pub alpha_balance: f64,
    pub ablation: AblationLevel,
    /// Encode unlabeled patches with the student for the adversarial term.
    pub adv_unlabeled_via_student: bool,
    pub mse_target: MseTarget,
    pub unveil: UnveilSpec,
    pub augment: AugmentationSpec,
    /// Fraction of labeled images held out when no validation directory is given.
    pub val_fraction: f64,
    pub val_every: usize,
    pub threshold: f32,
    pub inference: InferenceNet,
    /// Hash parameters around every sub-step and fail if an update touches
    /// a network it does not own.
    pub verify_isolation: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            disc_lr: 1e-4,
            epochs: 60,
            max_steps: None,
            batch_labeled: 10,
            batch_unlabeled: 10,
            patch_size: 128,
            patch_stride: 128,
            ema_cap: 0.95,
            ramp_epochs: 30.0,
            alpha_balance: 0.5,
            ablation: AblationLevel::V,
            adv_unlabeled_via_student: true,
            mse_target: MseTarget::Teacher,
            unveil: UnveilSpec::default(),
            augment: AugmentationSpec::default(),
            val_fraction: 0.1,
            val_every: 1,
            threshold: 0.5,
            inference: InferenceNet::Auto,
            verify_isolation: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let positive = |v: f32| v > 0.0 && v.is_finite();
        if !positive(self.lr) || !positive(self.disc_lr) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.epochs == 0 || self.val_every == 0 {
            return Err(Error::Config("epochs and val_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_cap) {
            return Err(Error::Config(format!("ema_cap must be in [0, 1], got {}", self.ema_cap)));
        }
        if !(self.ramp_epochs >= 0.0) || !(self.alpha_balance >= 0.0) {
            return Err(Error::Config("ramp_epochs and alpha_balance must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return Err(Error::Config("need 0 < patch_stride <= patch_size".into()));
        }
        model.unet.check_input(self.patch_size, self.patch_size).map_err(|e| Error::Config(e.to_string()))?;
        if self.ablation.discriminator() == Some(DiscInput::Feature) && self.patch_size >> model.unet.depth < 8 {
            return Err(Error::Config(format!(
                "feature discriminator needs a bottleneck of at least 8x8; patch {} at depth {} gives {}",
                self.patch_size,
                model.unet.depth,
                self.patch_size >> model.unet.depth
            )));
        }
        if self.inference == InferenceNet::Teacher && !self.ablation.has_teacher() {
            return Err(Error::Config(format!("level {} has no teacher to infer with", self.ablation.name())));
        }
        self.unveil.validate()?;
        self.augment.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_cumulative() {
        let l = AblationLevel::LADDER;
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert!(!AblationLevel::I.tri_decoder() && AblationLevel::II.tri_decoder());
        assert!(!AblationLevel::II.has_teacher() && AblationLevel::III.has_teacher());
        assert_eq!(AblationLevel::III.discriminator(), Some(DiscInput::Mask));
        assert_eq!(AblationLevel::IV.discriminator(), Some(DiscInput::Feature));
        assert!(AblationLevel::V.unveiling() && !AblationLevel::IV.unveiling());
        assert_eq!(AblationLevel::SupervisedOnly.discriminator(), None);
    }

    #[test]
    fn levels_parse_by_name() {
        for l in [AblationLevel::SupervisedOnly, AblationLevel::I, AblationLevel::IV] {
            assert_eq!(l.name().parse::<AblationLevel>().unwrap(), l);
        }
        assert!("VI".parse::<AblationLevel>().is_err());
    }

    #[test]
    fn small_bottleneck_is_rejected_for_feature_alignment() {
        let model = ModelConfig::default();
        let cfg = TrainerConfig { patch_size: 64, patch_stride: 64, ..Default::default() };
        assert!(cfg.validate(&model).is_err());
        let cfg = TrainerConfig { ablation: AblationLevel::III, ..cfg };
        assert!(cfg.validate(&model).is_ok());
    }
}
