//! Student, teacher and discriminator networks and the latent perturbations.

mod discriminator;
mod student;
mod teacher;
mod unet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use vessel_nn::Tensor;

pub use discriminator::{DiscCache, Discriminator};
pub use student::{DropoutControl, Perturbation, Student, StudentCache, StudentGrads, StudentOutput, StudentPrediction};
pub use teacher::Teacher;
pub use unet::{Decoder, DecoderCache, Encoder, EncoderCache, McDropout};

use crate::error::{Error, Result};
use crate::types::DomainTag;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetSpec {
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self { depth: 4, base_filters: 16, in_channels: 3, out_channels: 1 }
    }
}

impl UNetSpec {
    /// Feature channels at encoder level `level`; `depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.depth > 8 {
            return Err(Error::Config(format!("unet depth must be in 2..=8, got {}", self.depth)));
        }
        if self.base_filters == 0 {
            return Err(Error::Config("unet base_filters must be positive".into()));
        }
        if !matches!(self.in_channels, 1 | 3) || self.out_channels != 1 {
            return Err(Error::Config("unet expects 1 or 3 input channels and 1 output channel".into()));
        }
        Ok(())
    }

    /// Inputs must be divisible by `2^depth` so every pooling stage is exact.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.depth;
        if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
            return Err(Error::BadInputDims(format!("{height}x{width} is not divisible by 2^{} = {f}", self.depth)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSpec {
    pub unet: UNetSpec,
    pub noise_sigma: f32,
    /// Range for the relative attention threshold of feature dropout.
    pub dropout_gamma: [f32; 2],
}

impl Default for StudentSpec {
    fn default() -> Self {
        Self { unet: UNetSpec::default(), noise_sigma: 0.3, dropout_gamma: [0.7, 0.9] }
    }
}

impl StudentSpec {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let [lo, hi] = self.dropout_gamma;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("dropout_gamma must satisfy 0 < lo <= hi <= 1, got {lo}..{hi}")));
        }
        Ok(())
    }
}

/// Where the teacher's Monte Carlo dropout layers sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    /// One layer after each decoder stage.
    PerDecoderStage,
    /// Four layers inside the last decoder stage: on the upsampled input, on
    /// the skip, between the two convolutions and on the stage output.
    FinalStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSpec {
    pub mc_dropout_rate: f32,
    pub placement: DropoutPlacement,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self { mc_dropout_rate: 0.5, placement: DropoutPlacement::PerDecoderStage }
    }
}

impl TeacherSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mc_dropout_rate) {
            return Err(Error::Config(format!("mc_dropout_rate must be in [0, 1), got {}", self.mc_dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    /// Filters of the first layer; later layers double it.
    pub base_filters: usize,
    pub slope: f32,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { base_filters: 64, slope: 0.2 }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config("discriminator needs base_filters > 0 and slope in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    StudentEncoder,
    TeacherEncoder,
}

/// A single image's bottleneck features, `[1, C, H', W']`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
    pub provenance: Provenance,
    pub domain: DomainTag,
}

impl FeatureMap {
    pub fn new(values: Tensor, provenance: Provenance, domain: DomainTag) -> Result<Self> {
        if values.n() != 1 {
            return Err(Error::shape("feature map batch", "1", values.n()));
        }
        if !values.all_finite() {
            return Err(Error::RangeViolation("feature map contains non-finite values".into()));
        }
        Ok(Self { values, provenance, domain })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// Adds i.i.d. noise drawn uniformly from `(-sigma, sigma)`.
pub fn feature_noise(z: &Tensor, sigma: f32, rng: &mut dyn RngCore) -> Tensor {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return z.clone();
    }
    let mut out = z.clone();
    for v in out.data_mut() {
        *v += unet::open_uniform(rng, sigma);
    }
    out
}

/// Channel mean of `z`, one `h * w` plane per sample.
pub fn attention_map(z: &Tensor) -> Vec<f32> {
    let [n, c, h, w] = z.shape();
    let hw = h * w;
    let mut out = vec![0.0f32; n * hw];
    for i in 0..n {
        let mut acc = vec![0.0f64; hw];
        for ch in 0..c {
            for (a, &v) in acc.iter_mut().zip(z.plane(i, ch)) {
                *a += v as f64;
            }
        }
        for (o, a) in out[i * hw..(i + 1) * hw].iter_mut().zip(acc) {
            *o = (a / c as f64) as f32;
        }
    }
    out
}

/// Spatial keep-mask `1(A < gamma * max A)`, computed per sample.
pub fn dropout_mask(z: &Tensor, gamma: f32) -> Vec<f32> {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    let hw = z.h() * z.w();
    let att = attention_map(z);
    let mut mask = vec![0.0f32; att.len()];
    for (a, m) in att.chunks(hw).zip(mask.chunks_mut(hw)) {
        let t = gamma * a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for (&v, mv) in a.iter().zip(m.iter_mut()) {
            *mv = if v < t { 1.0 } else { 0.0 };
        }
    }
    mask
}

/// Zeroes, across all channels, every pixel whose attention reaches the threshold.
pub fn feature_dropout(z: &Tensor, gamma: f32) -> (Tensor, Vec<f32>) {
    let mask = dropout_mask(z, gamma);
    (apply_spatial_mask(z, &mask), mask)
}

/// Multiplies every channel of sample `i` by plane `i` of `mask`.
pub(crate) fn apply_spatial_mask(z: &Tensor, mask: &[f32]) -> Tensor {
    let [n, c, h, w] = z.shape();
    let hw = h * w;
    assert_eq!(mask.len(), n * hw, "spatial mask size");
    let mut out = z.clone();
    for i in 0..n {
        let m = &mask[i * hw..(i + 1) * hw];
        for (k, v) in out.sample_mut(i).iter_mut().enumerate() {
            *v *= m[k % hw];
        }
    }
    let _ = c;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let z = random_tensor([2, 4, 3, 3], 0, -2.0, 2.0);
        assert_eq!(feature_noise(&z, 0.0, &mut ChaCha8Rng::seed_from_u64(1)), z);
    }

    #[test]
    fn noise_stays_inside_open_support() {
        let z = random_tensor([4, 8, 16, 16], 2, -1.0, 1.0);
        for sigma in [1e-3f32, 0.3, 2.0] {
            let out = feature_noise(&z, sigma, &mut ChaCha8Rng::seed_from_u64(3));
            for (a, b) in out.data().iter().zip(z.data()) {
                assert!((a - b).abs() < sigma);
            }
        }
    }

    #[test]
    fn noise_is_centred() {
        let z = Tensor::zeros([1, 1, 1000, 1000]);
        let out = feature_noise(&z, 0.3, &mut ChaCha8Rng::seed_from_u64(4));
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        // Standard error is 0.3 / sqrt(3e6), about 1.7e-4.
        assert!(mean.abs() < 1e-3, "mean {mean}");
    }

    #[test]
    fn attention_of_constant_channels() {
        let z = Tensor::full([1, 5, 3, 3], 0.7);
        assert!(attention_map(&z).iter().all(|&a| (a - 0.7).abs() < 1e-7));
        let z = Tensor::from_vec([1, 2, 1, 1], vec![0.0, 1.0]);
        assert_eq!(attention_map(&z), vec![0.5]);
    }

    #[test]
    fn attention_matches_brute_force() {
        let z = random_tensor([3, 7, 5, 4], 5, -3.0, 3.0);
        let att = attention_map(&z);
        for i in 0..3 {
            for p in 0..20 {
                let mut s = 0.0f64;
                for ch in 0..7 {
                    s += z.data()[((i * 7) + ch) * 20 + p] as f64;
                }
                assert!((att[i * 20 + p] as f64 - s / 7.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn constant_attention_with_unit_gamma_drops_everything() {
        let z = Tensor::full([1, 3, 4, 4], 0.4);
        let (out, mask) = feature_dropout(&z, 1.0);
        assert!(mask.iter().all(|&m| m == 0.0));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn near_unit_gamma_drops_only_the_peak() {
        let mut z = random_tensor([1, 4, 6, 6], 6, 0.0, 0.5);
        for ch in 0..4 {
            z.data_mut()[ch * 36 + 14] = 3.0;
        }
        let (out, mask) = feature_dropout(&z, 0.99);
        for p in 0..36 {
            assert_eq!(mask[p] == 0.0, p == 14);
            for ch in 0..4 {
                let v = out.data()[ch * 36 + p];
                if p == 14 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, z.data()[ch * 36 + p]);
                }
            }
        }
    }

    #[test]
    fn threshold_is_per_sample() {
        let mut data = vec![1.0f32; 4];
        data.extend([10.0, 10.0, 10.0, 20.0]);
        let z = Tensor::from_vec([2, 1, 2, 2], data);
        assert_eq!(dropout_mask(&z, 0.9), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn feature_map_rejects_non_finite() {
        let z = Tensor::from_vec([1, 1, 1, 2], vec![0.0, f32::NAN]);
        assert!(FeatureMap::new(z, Provenance::StudentEncoder, DomainTag::LabeledSource).is_err());
    }

    #[test]
    fn input_dims_must_divide() {
        let spec = UNetSpec::default();
        assert!(spec.check_input(128, 128).is_ok());
        assert!(matches!(spec.check_input(120, 128), Err(Error::BadInputDims(_))));
    }

    proptest! {
        #[test]
        fn dropout_zero_set_is_exact(seed in 0u64..500, gamma in 0.05f32..1.0) {
            let z = random_tensor([2, 3, 5, 5], seed, -1.0, 1.0);
            let (out, mask) = feature_dropout(&z, gamma);
            let att = attention_map(&z);
            for i in 0..2 {
                let a = &att[i * 25..(i + 1) * 25];
                let t = gamma * a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                for p in 0..25 {
                    let dropped = a[p] >= t;
                    prop_assert_eq!(mask[i * 25 + p] == 0.0, dropped);
                    for ch in 0..3 {
                        let k = (i * 3 + ch) * 25 + p;
                        prop_assert_eq!(out.data()[k], if dropped { 0.0 } else { z.data()[k] });
                    }
                }
            }
        }

        #[test]
        fn mask_is_binary(seed in 0u64..500, gamma in 0.05f32..1.0) {
            let mask = dropout_mask(&random_tensor([1, 2, 4, 4], seed, -1.0, 1.0), gamma);
            prop_assert!(mask.iter().all(|&m| m == 0.0 || m == 1.0));
        }
    }
}
