use vessel_nn::Tensor;

use crate::data::{extract_patches, images_to_tensor, stitch_patches, tensor_to_probs, PatchGrid};
use crate::error::Result;
use crate::networks::{Student, Teacher, UNetSpec};
use crate::types::{ProbMap, RasterImage};

/// The network used to produce segmentations.
#[derive(Clone, Debug)]
pub enum Segmenter {
    Student(Student),
    Teacher(Teacher),
}

impl Segmenter {
    /// Deterministic evaluation-mode probabilities for an NCHW batch.
    pub fn predict(&self, x: &Tensor) -> Tensor {
        match self {
            Segmenter::Student(s) => s.predict(x).0,
            Segmenter::Teacher(t) => t.forward(x, None).0,
        }
    }
}

/// Patch-wise prediction of a full image, averaged where patches overlap.
pub fn predict_image(
    seg: &Segmenter,
    unet: &UNetSpec,
    img: &RasterImage,
    patch: usize,
    stride: usize,
    batch: usize,
) -> Result<ProbMap> {
    unet.check_input(patch, patch)?;
    let (h, w) = img.dims();
    let grid = PatchGrid::new(h, w, patch, stride)?;
    let patches = extract_patches(img, &grid)?;
    let mut preds = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch.max(1)) {
        let refs: Vec<&RasterImage> = chunk.iter().collect();
        preds.extend(tensor_to_probs(&seg.predict(&images_to_tensor(&refs))));
    }
    stitch_patches(&preds, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::StudentSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn whole_image_patch_equals_direct_prediction() {
        let spec = StudentSpec { unet: UNetSpec { depth: 2, base_filters: 4, ..Default::default() }, ..Default::default() };
        let seg = Segmenter::Student(Student::new(&spec, &mut ChaCha8Rng::seed_from_u64(0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = RasterImage::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.gen()).collect()).unwrap();
        let direct = seg.predict(&images_to_tensor(&[&img]));
        let stitched = predict_image(&seg, &spec.unet, &img, 32, 32, 4).unwrap();
        assert_eq!(stitched.probs(), direct.data());
        let tiled = predict_image(&seg, &spec.unet, &img, 16, 8, 3).unwrap();
        assert_eq!(tiled.dims(), (32, 32));
        assert_eq!(tiled, predict_image(&seg, &spec.unet, &img, 16, 8, 3).unwrap());
    }
}
