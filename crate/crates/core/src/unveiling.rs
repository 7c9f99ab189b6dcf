//! Monte Carlo teacher sampling, vessel entropy and the unveiled target.

use std::f64::consts::LN_2;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use vessel_nn::Tensor;

use crate::data::{augment_soft, images_to_tensor, SoftAug};
use crate::error::{Error, Result};
use crate::io::save_prob;
use crate::networks::Teacher;
use crate::types::{ProbMap, RasterImage};

/// Which per-pixel uncertainty the unveiling weight is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `H(p_bar) - mean_k H(p_k)`: disagreement between the samples only.
    #[default]
    MutualInformation,
    /// `H(p_bar)`: total predictive entropy of the mean.
    Predictive,
    /// `mean_k H(p_k)`.
    MeanOfSamples,
}

/// How entropy is turned into a weight in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnveilNorm {
    /// Per pixel, `H / ln 2`.
    #[default]
    Normalized,
    /// Softmax of `H` over all pixels of the image.
    SpatialSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnveilSpec {
    /// Number of stochastic teacher passes.
    pub k: usize,
    pub entropy: EntropyMode,
    pub norm: UnveilNorm,
}

impl Default for UnveilSpec {
    fn default() -> Self {
        Self { k: 8, entropy: EntropyMode::default(), norm: UnveilNorm::default() }
    }
}

impl UnveilSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("unveiling needs k >= 1".into()));
        }
        Ok(())
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// Per-pixel binary entropy of a probability map, in nats.
pub fn vessel_entropy(mean: &ProbMap) -> Vec<f64> {
    mean.probs().iter().map(|&p| binary_entropy(p as f64)).collect()
}

/// Turns an entropy map into `(I_vessel, y_w)` with `y_w = I_vessel * p_bar`.
pub fn unveil(mean: &ProbMap, entropy: &[f64], norm: UnveilNorm) -> Result<(Vec<f64>, ProbMap)> {
    let n = mean.probs().len();
    if entropy.len() != n {
        return Err(Error::shape("entropy map", n, entropy.len()));
    }
    let weight = weights(entropy, norm);
    let y_w = mean.probs().iter().zip(&weight).map(|(&p, &w)| (w * p as f64) as f32).collect();
    Ok((weight, ProbMap::from_clamped(mean.height(), mean.width(), y_w)))
}

fn weights(entropy: &[f64], norm: UnveilNorm) -> Vec<f64> {
    match norm {
        UnveilNorm::Normalized => entropy.iter().map(|&h| (h / LN_2).clamp(0.0, 1.0)).collect(),
        UnveilNorm::SpatialSoftmax => {
            let max = entropy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = entropy.iter().map(|&h| (h - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        }
    }
}

/// Everything derived from one set of stochastic teacher predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct UnveilBundle {
    pub samples: Vec<ProbMap>,
    pub mean: ProbMap,
    /// Per-pixel entropy in nats, within `[0, ln 2]`.
    pub entropy: Vec<f64>,
    pub i_vessel: Vec<f64>,
    pub y_w: ProbMap,
}

/// Reduces `K` sample maps of one image.
pub fn bundle(samples: Vec<ProbMap>, mode: EntropyMode, norm: UnveilNorm) -> Result<UnveilBundle> {
    let first = samples.first().ok_or_else(|| Error::Config("unveiling needs at least one sample".into()))?;
    let (h, w) = first.dims();
    if let Some(bad) = samples.iter().find(|s| s.dims() != (h, w)) {
        return Err(Error::shape("unveiling sample", format!("{h}x{w}"), format!("{:?}", bad.dims())));
    }
    let planes: Vec<&[f32]> = samples.iter().map(|s| s.probs()).collect();
    let (mean, entropy) = reduce(&planes, mode);
    let mean = ProbMap::from_clamped(h, w, mean.iter().map(|&m| m as f32).collect());
    let (i_vessel, y_w) = unveil(&mean, &entropy, norm)?;
    Ok(UnveilBundle { samples, mean, entropy, i_vessel, y_w })
}

/// Mean probability and entropy per pixel, accumulated in sample order.
fn reduce(planes: &[&[f32]], mode: EntropyMode) -> (Vec<f64>, Vec<f64>) {
    let k = planes.len() as f64;
    let n = planes[0].len();
    let mut mean = vec![0.0f64; n];
    for plane in planes {
        for (m, &p) in mean.iter_mut().zip(plane.iter()) {
            *m += p as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let entropy = (0..n)
        .map(|i| {
            let h = match mode {
                EntropyMode::Predictive => binary_entropy(mean[i]),
                // Summing per-sample differences keeps identical samples at exactly zero.
                EntropyMode::MutualInformation => {
                    let hm = binary_entropy(mean[i]);
                    planes.iter().map(|pl| hm - binary_entropy(pl[i] as f64)).sum::<f64>() / k
                }
                EntropyMode::MeanOfSamples => planes.iter().map(|pl| binary_entropy(pl[i] as f64)).sum::<f64>() / k,
            };
            h.clamp(0.0, LN_2)
        })
        .collect();
    (mean, entropy)
}

/// `K` stochastic teacher passes, each on an independently soft-augmented
/// copy of the batch. Returns one `[n, 1, h, w]` tensor per pass.
pub fn mc_sample(teacher: &Teacher, images: &[&RasterImage], k: usize, soft: &SoftAug, rng: &mut dyn RngCore) -> Vec<Tensor> {
    assert!(k >= 1, "k must be at least 1");
    (0..k)
        .map(|_| {
            let x = if soft.is_identity() {
                images_to_tensor(images)
            } else {
                let aug: Vec<RasterImage> = images.iter().map(|img| augment_soft(img, soft, &mut *rng)).collect();
                images_to_tensor(&aug.iter().collect::<Vec<_>>())
            };
            teacher.forward(&x, Some(&mut *rng)).0
        })
        .collect()
}

/// Batch-level unveiling targets as flat `[n, 1, h, w]` data.
pub struct BatchUnveil {
    pub mean: Tensor,
    pub i_vessel: Tensor,
    pub y_w: Tensor,
}

/// Per-image reduction of the sampled tensors returned by [`mc_sample`].
pub fn unveil_batch(samples: &[Tensor], mode: EntropyMode, norm: UnveilNorm) -> BatchUnveil {
    let shape = samples[0].shape();
    let mut mean = Tensor::zeros(shape);
    let mut i_vessel = Tensor::zeros(shape);
    let mut y_w = Tensor::zeros(shape);
    for i in 0..shape[0] {
        let planes: Vec<&[f32]> = samples.iter().map(|t| t.sample(i)).collect();
        let (m, h) = reduce(&planes, mode);
        let wts = weights(&h, norm);
        for (j, (&mv, &wv)) in m.iter().zip(&wts).enumerate() {
            mean.sample_mut(i)[j] = mv as f32;
            i_vessel.sample_mut(i)[j] = wv as f32;
            y_w.sample_mut(i)[j] = (wv * mv as f32 as f64) as f32;
        }
    }
    BatchUnveil { mean, i_vessel, y_w }
}

/// Writes the weight map and `y_w` as grayscale images for inspection.
pub fn dump_bundle(bundle: &UnveilBundle, dir: &Path, stem: &str) -> Result<()> {
    let (h, w) = bundle.mean.dims();
    let weight = ProbMap::from_clamped(h, w, bundle.i_vessel.iter().map(|&v| v as f32).collect());
    save_prob(&weight, &dir.join(format!("{stem}_entropy.png")))?;
    save_prob(&bundle.y_w, &dir.join(format!("{stem}_unveiled.png")))?;
    save_prob(&bundle.mean, &dir.join(format!("{stem}_mean.png")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{DropoutPlacement, Student, StudentSpec, TeacherSpec, UNetSpec};
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_landmarks() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - LN_2).abs() < 1e-12);
        let oracle = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((binary_entropy(0.25) - oracle).abs() < 1e-15);
        assert!((oracle - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn unveil_landmarks() {
        let (i, y) = unveil(&ProbMap::filled(4, 4, 0.3), &[0.0; 16], UnveilNorm::Normalized).unwrap();
        assert!(i.iter().all(|&v| v == 0.0) && y.probs().iter().all(|&v| v == 0.0));

        let half = ProbMap::filled(4, 4, 0.5);
        let (i, y) = unveil(&half, &vessel_entropy(&half), UnveilNorm::Normalized).unwrap();
        assert!(i.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(y.probs().iter().all(|&v| v == 0.5));

        let q = ProbMap::filled(1, 1, 0.25);
        let (i, y) = unveil(&q, &vessel_entropy(&q), UnveilNorm::Normalized).unwrap();
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln()) / LN_2;
        assert!((i[0] - expected).abs() < 1e-9 && (i[0] - 0.8113).abs() < 1e-4);
        assert!((y.probs()[0] as f64 - expected * 0.25).abs() < 1e-7);
        assert!((y.probs()[0] - 0.2028).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(matches!(unveil(&ProbMap::filled(2, 2, 0.5), &[0.1; 3], UnveilNorm::Normalized), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn identical_samples_unveil_nothing() {
        let p = ProbMap::new(2, 2, vec![0.1, 0.5, 0.77, 0.999]).unwrap();
        for k in [1, 3, 8] {
            let b = bundle(vec![p.clone(); k], EntropyMode::MutualInformation, UnveilNorm::Normalized).unwrap();
            assert_eq!(b.mean, p);
            assert!(b.i_vessel.iter().all(|&v| v == 0.0));
            assert!(b.y_w.probs().iter().all(|&v| v == 0.0));
        }
        let b = bundle(vec![p.clone(); 3], EntropyMode::Predictive, UnveilNorm::Normalized).unwrap();
        assert!(b.i_vessel[1] > 0.99);
    }

    #[test]
    fn spatial_softmax_sums_to_one() {
        let b = bundle(vec![ProbMap::filled(4, 4, 0.2), ProbMap::filled(4, 4, 0.6)], EntropyMode::Predictive, UnveilNorm::SpatialSoftmax)
            .unwrap();
        assert!((b.i_vessel.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.i_vessel.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-12));
    }

    fn teacher(rate: f32) -> Teacher {
        let spec = StudentSpec { unet: UNetSpec { depth: 2, base_filters: 4, ..Default::default() }, ..Default::default() };
        let s = Student::new(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        Teacher::from_student(&s, &TeacherSpec { mc_dropout_rate: rate, placement: DropoutPlacement::PerDecoderStage })
    }

    fn images(seed: u64) -> Vec<RasterImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2).map(|_| RasterImage::new(16, 16, 3, (0..768).map(|_| rng.gen()).collect()).unwrap()).collect()
    }

    #[test]
    fn sample_counts_and_determinism() {
        let t = teacher(0.5);
        let imgs = images(1);
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        assert_eq!(mc_sample(&t, &refs, 1, &SoftAug::default(), &mut ChaCha8Rng::seed_from_u64(2)).len(), 1);
        let a = mc_sample(&t, &refs, 8, &SoftAug::default(), &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a.len(), 8);
        assert_ne!(a[0], a[1]);
        assert_eq!(a, mc_sample(&t, &refs, 8, &SoftAug::default(), &mut ChaCha8Rng::seed_from_u64(2)));
    }

    #[test]
    fn no_stochastic_source_gives_identical_samples_and_zero_target() {
        let t = teacher(0.0);
        let imgs = images(3);
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let s = mc_sample(&t, &refs, 8, &SoftAug::none(), &mut ChaCha8Rng::seed_from_u64(4));
        assert!(s.windows(2).all(|w| w[0] == w[1]));
        let u = unveil_batch(&s, EntropyMode::MutualInformation, UnveilNorm::Normalized);
        assert!(u.i_vessel.data().iter().all(|&v| v == 0.0));
        assert!(u.y_w.data().iter().all(|&v| v == 0.0));
        assert_eq!(u.mean, s[0]);
    }

    #[test]
    fn batch_reduction_matches_bundle() {
        let t = teacher(0.5);
        let imgs = images(5);
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let s = mc_sample(&t, &refs, 4, &SoftAug::default(), &mut ChaCha8Rng::seed_from_u64(6));
        let u = unveil_batch(&s, EntropyMode::MutualInformation, UnveilNorm::Normalized);
        for i in 0..2 {
            let maps = s.iter().map(|t| ProbMap::new(16, 16, t.sample(i).to_vec()).unwrap()).collect();
            let b = bundle(maps, EntropyMode::MutualInformation, UnveilNorm::Normalized).unwrap();
            assert_eq!(b.y_w.probs(), u.y_w.sample(i));
            assert_eq!(b.mean.probs(), u.mean.sample(i));
        }
    }

    #[test]
    fn dump_writes_three_images() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(vec![ProbMap::filled(16, 16, 0.2), ProbMap::filled(16, 16, 0.7)], EntropyMode::default(), UnveilNorm::default()).unwrap();
        dump_bundle(&b, dir.path(), "x").unwrap();
        for suffix in ["entropy", "unveiled", "mean"] {
            assert!(dir.path().join(format!("x_{suffix}.png")).exists());
        }
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric(p in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(p) - binary_entropy(1.0 - p)).abs() < 1e-12);
        }

        #[test]
        fn target_is_bounded_by_mean(seed in 0u64..1000, k in 1usize..9, mode in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mode = [EntropyMode::MutualInformation, EntropyMode::Predictive, EntropyMode::MeanOfSamples][mode];
            let samples = (0..k).map(|_| ProbMap::new(4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap()).collect();
            let b = bundle(samples, mode, UnveilNorm::Normalized).unwrap();
            for ((&y, &m), (&h, &i)) in b.y_w.probs().iter().zip(b.mean.probs()).zip(b.entropy.iter().zip(&b.i_vessel)) {
                prop_assert!(0.0 <= y && y <= m && m <= 1.0);
                prop_assert!((0.0..=LN_2).contains(&h) && (0.0..=1.0).contains(&i));
            }
        }

        #[test]
        fn emphasis_grows_with_entropy(p in 0.01f32..1.0, h1 in 0.0f64..0.69, dh in 1e-3f64..0.1) {
            let mean = ProbMap::filled(1, 2, p);
            let h2 = (h1 + dh).min(LN_2);
            prop_assert!(h2 > h1);
            let (_, y) = unveil(&mean, &[h1, h2], UnveilNorm::Normalized).unwrap();
            prop_assert!(y.probs()[1] > y.probs()[0]);
        }
    }
}
