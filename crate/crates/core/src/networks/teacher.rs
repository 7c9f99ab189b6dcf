use rand::RngCore;
use vessel_nn::{join, Module, Param, Tensor};

use super::unet::{Decoder, Encoder, McDropout};
use super::{FeatureMap, Provenance, Student, TeacherSpec, UNetSpec};
use crate::data::images_to_tensor;
use crate::error::Result;
use crate::types::{DomainTag, ProbMap, RasterImage};

/// EMA copy of the student's encoder and main decoder with Monte Carlo dropout.
///
/// Batch norm always uses running statistics: the teacher is never trained
/// by gradient, so batch statistics would only add noise.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub encoder: Encoder,
    pub decoder: Decoder,
    unet: UNetSpec,
    spec: TeacherSpec,
}

impl Teacher {
    pub fn from_student(student: &Student, spec: &TeacherSpec) -> Self {
        Self {
            encoder: student.encoder.clone(),
            decoder: student.decoder.clone(),
            unet: student.spec().unet.clone(),
            spec: spec.clone(),
        }
    }

    pub fn spec(&self) -> &TeacherSpec {
        &self.spec
    }

    /// Returns `(probabilities, bottleneck)`. Passing an rng activates the
    /// dropout layers; `None` gives the deterministic prediction.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut dyn RngCore>) -> (Tensor, Tensor) {
        let (z, skips, _) = self.encoder.forward(x, false);
        let mc = rng.map(|rng| McDropout { rate: self.spec.mc_dropout_rate, placement: self.spec.placement, rng });
        let (p, _) = self.decoder.forward(&z, &skips, false, mc);
        (p, z)
    }

    pub fn forward_image(
        &self,
        img: &RasterImage,
        domain: DomainTag,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(ProbMap, FeatureMap)> {
        let (h, w) = img.dims();
        self.unet.check_input(h, w)?;
        let (p, z) = self.forward(&images_to_tensor(&[img]), rng);
        Ok((ProbMap::from_clamped(h, w, p.into_vec()), FeatureMap::new(z, Provenance::TeacherEncoder, domain)?))
    }
}

impl Module for Teacher {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
