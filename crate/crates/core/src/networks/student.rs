use rand::{Rng, RngCore};
use vessel_nn::{join, Module, Param, Tensor};

use super::unet::{Decoder, DecoderCache, Encoder, EncoderCache};
use super::{apply_spatial_mask, dropout_mask, feature_noise, FeatureMap, Provenance, StudentSpec};
use crate::data::images_to_tensor;
use crate::error::Result;
use crate::types::{DomainTag, ProbMap, RasterImage};

/// How the dropout decoder's spatial mask is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DropoutControl {
    /// Attention threshold at `gamma * max(A)`.
    Gamma(f32),
    /// All-ones mask: the dropout decoder sees `z` unchanged.
    Disabled,
}

/// Perturbation settings for one student forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub sigma: f32,
    pub dropout: DropoutControl,
}

impl Perturbation {
    /// No perturbation at all: auxiliary decoders see the clean bottleneck.
    pub fn identity() -> Self {
        Self { sigma: 0.0, dropout: DropoutControl::Disabled }
    }
}

/// Encoder shared by a main decoder and two auxiliary decoders fed with
/// noisy and attention-dropped bottleneck features.
#[derive(Clone, Debug)]
pub struct Student {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub noise_decoder: Decoder,
    pub dropout_decoder: Decoder,
    spec: StudentSpec,
}

pub struct StudentOutput {
    /// Bottleneck features for the whole batch.
    pub z: Tensor,
    /// Main decoder probabilities for the whole batch.
    pub main: Tensor,
    /// Auxiliary predictions for the first `n_aux` samples.
    pub noise: Option<Tensor>,
    pub dropout: Option<Tensor>,
}

pub struct StudentCache {
    enc: EncoderCache,
    main: DecoderCache,
    noise: Option<DecoderCache>,
    dropout: Option<(DecoderCache, Vec<f32>)>,
    z_shape: [usize; 4],
    skip_shapes: Vec<[usize; 4]>,
}

/// Upstream gradients with respect to the student outputs. Missing entries
/// are treated as zero.
#[derive(Default)]
pub struct StudentGrads {
    pub main: Option<Tensor>,
    pub noise: Option<Tensor>,
    pub dropout: Option<Tensor>,
    /// Direct gradient on the bottleneck, e.g. from the discriminator.
    pub z: Option<Tensor>,
}

/// Single-image student outputs.
pub struct StudentPrediction {
    pub z: FeatureMap,
    pub main: ProbMap,
    pub noise: ProbMap,
    pub dropout: ProbMap,
}

/// Adds `part` into the leading samples of `full`.
fn add_prefix(full: &mut Tensor, part: &Tensor) {
    for (a, b) in full.data_mut().iter_mut().zip(part.data()) {
        *a += b;
    }
}

fn leading(skips: &[Tensor], n: usize) -> Vec<Tensor> {
    skips.iter().map(|s| s.slice_batch(0, n)).collect()
}

impl Student {
    /// The auxiliary decoders start as copies of the main decoder.
    pub fn new(spec: &StudentSpec, rng: &mut dyn RngCore) -> Self {
        let encoder = Encoder::new(&spec.unet, rng);
        let decoder = Decoder::new(&spec.unet, rng);
        Self {
            encoder,
            noise_decoder: decoder.clone(),
            dropout_decoder: decoder.clone(),
            decoder,
            spec: spec.clone(),
        }
    }

    pub fn spec(&self) -> &StudentSpec {
        &self.spec
    }

    /// Draws the configured noise level and a threshold `gamma` uniformly from its range.
    pub fn sample_perturbation(&self, rng: &mut dyn RngCore) -> Perturbation {
        let [lo, hi] = self.spec.dropout_gamma;
        let gamma = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        Perturbation { sigma: self.spec.noise_sigma, dropout: DropoutControl::Gamma(gamma) }
    }

    /// Runs the encoder and main decoder on the whole batch and both
    /// auxiliary decoders on the first `n_aux` samples.
    pub fn forward(
        &self,
        x: &Tensor,
        n_aux: usize,
        train: bool,
        pert: &Perturbation,
        rng: &mut dyn RngCore,
    ) -> (StudentOutput, StudentCache) {
        assert!(n_aux <= x.n(), "n_aux exceeds batch");
        let (z, skips, enc) = self.encoder.forward(x, train);
        let (main, main_cache) = self.decoder.forward(&z, &skips, train, None);
        let z_shape = z.shape();
        let skip_shapes = skips.iter().map(|s| s.shape()).collect();
        let (mut noise, mut dropout, mut noise_cache, mut dropout_cache) = (None, None, None, None);
        if n_aux > 0 {
            let z_aux = z.slice_batch(0, n_aux);
            let skips_aux = leading(&skips, n_aux);
            let z_noise = feature_noise(&z_aux, pert.sigma, rng);
            let (p, c) = self.noise_decoder.forward(&z_noise, &skips_aux, train, None);
            noise = Some(p);
            noise_cache = Some(c);
            let mask = match pert.dropout {
                DropoutControl::Gamma(g) => dropout_mask(&z_aux, g),
                DropoutControl::Disabled => vec![1.0; n_aux * z.h() * z.w()],
            };
            let z_drop = apply_spatial_mask(&z_aux, &mask);
            let (p, c) = self.dropout_decoder.forward(&z_drop, &skips_aux, train, None);
            dropout = Some(p);
            dropout_cache = Some((c, mask));
        }
        let out = StudentOutput { z, main, noise, dropout };
        let cache = StudentCache {
            enc,
            main: main_cache,
            noise: noise_cache,
            dropout: dropout_cache,
            z_shape,
            skip_shapes,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients of every decoder and the encoder.
    pub fn backward(&mut self, cache: StudentCache, grads: StudentGrads) {
        let mut dz = grads.z.unwrap_or_else(|| Tensor::zeros(cache.z_shape));
        assert_eq!(dz.shape(), cache.z_shape, "bottleneck gradient shape");
        let mut dskips: Vec<Tensor> = cache.skip_shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        let mut merge = |dz: &mut Tensor, (d, ds): (Tensor, Vec<Tensor>)| {
            add_prefix(dz, &d);
            for (acc, g) in dskips.iter_mut().zip(&ds) {
                add_prefix(acc, g);
            }
        };
        if let Some(g) = &grads.main {
            merge(&mut dz, self.decoder.backward(cache.main, g));
        }
        if let (Some(c), Some(g)) = (cache.noise, &grads.noise) {
            merge(&mut dz, self.noise_decoder.backward(c, g));
        }
        if let (Some((c, mask)), Some(g)) = (cache.dropout, &grads.dropout) {
            let (d, ds) = self.dropout_decoder.backward(c, g);
            merge(&mut dz, (apply_spatial_mask(&d, &mask), ds));
        }
        self.encoder.backward(cache.enc, &dz, dskips);
    }

    /// Evaluation-mode main decoder output and bottleneck features.
    pub fn predict(&self, x: &Tensor) -> (Tensor, Tensor) {
        let (z, skips, _) = self.encoder.forward(x, false);
        let (p, _) = self.decoder.forward(&z, &skips, false, None);
        (p, z)
    }

    /// Evaluation-mode forward of one image through all three decoders.
    pub fn forward_image(
        &self,
        img: &RasterImage,
        domain: DomainTag,
        pert: &Perturbation,
        rng: &mut dyn RngCore,
    ) -> Result<StudentPrediction> {
        let (h, w) = img.dims();
        self.spec.unet.check_input(h, w)?;
        let x = images_to_tensor(&[img]);
        let (out, _) = self.forward(&x, 1, false, pert, rng);
        let map = |t: Tensor| ProbMap::from_clamped(h, w, t.into_vec());
        Ok(StudentPrediction {
            z: FeatureMap::new(out.z, Provenance::StudentEncoder, domain)?,
            main: map(out.main),
            noise: map(out.noise.expect("n_aux = 1")),
            dropout: map(out.dropout.expect("n_aux = 1")),
        })
    }

    /// Visits the encoder and main decoder under the same names a teacher uses.
    pub fn visit_teacher_path(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit("encoder", f);
        self.decoder.visit("decoder", f);
    }
}

impl Module for Student {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.noise_decoder.visit(&join(prefix, "noise_decoder"), f);
        self.dropout_decoder.visit(&join(prefix, "dropout_decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        self.noise_decoder.visit_mut(&join(prefix, "noise_decoder"), f);
        self.dropout_decoder.visit_mut(&join(prefix, "dropout_decoder"), f);
    }
}
