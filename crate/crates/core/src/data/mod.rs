//! Dataset loading, patching, augmentation and batch assembly.

mod augment;
mod batches;
mod patches;

use std::path::Path;

use vessel_nn::Tensor;

pub use augment::{adjust_brightness, augment_soft, augment_standard, rotate, AugmentationSpec, SoftAug, StandardAug};
pub use batches::{make_batches, Batch, BatchIndices, PatchPool};
pub use patches::{extract_patches, extract_prob_patches, stitch_patches, PatchGrid};

use crate::error::{Error, Result};
use crate::io::{list_images, read_raw_sample};
use crate::types::{BinaryMask, DomainTag, LabeledSample, ProbMap, RasterImage, Sample, UnlabeledSample};

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `dir/images/*` with the same-named files of `dir/masks/`.
pub fn load_labeled_dir(dir: &Path, domain: DomainTag) -> Result<Vec<LabeledSample>> {
    let images = list_images(&dir.join("images"))?;
    let masks_dir = dir.join("masks");
    let masks: std::collections::HashMap<String, std::path::PathBuf> =
        list_images(&masks_dir)?.into_iter().map(|m| (stem(&m), m)).collect();
    let mut out = Vec::with_capacity(images.len());
    for path in images {
        let id = stem(&path);
        let mask = masks
            .get(&id)
            .ok_or_else(|| Error::EmptyDataset(format!("no mask for image `{id}` in {}", masks_dir.display())))?;
        match read_raw_sample(&id, domain, &path, Some(mask))?.into_sample()? {
            Sample::Labeled(s) => out.push(s),
            Sample::Unlabeled(_) => unreachable!("mask was supplied"),
        }
    }
    Ok(out)
}

/// Loads `dir/images/*`; any masks present are ignored.
pub fn load_unlabeled_dir(dir: &Path, domain: DomainTag) -> Result<Vec<UnlabeledSample>> {
    let mut out = Vec::new();
    for path in list_images(&dir.join("images"))? {
        let id = stem(&path);
        match read_raw_sample(&id, domain, &path, None)?.into_sample()? {
            Sample::Unlabeled(s) => out.push(s),
            Sample::Labeled(_) => unreachable!("no mask was supplied"),
        }
    }
    Ok(out)
}

/// Stacks equally sized images into an NCHW tensor.
pub fn images_to_tensor(images: &[&RasterImage]) -> Tensor {
    let first = images.first().expect("at least one image");
    let (h, w) = first.dims();
    let c = first.channels();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        assert_eq!((img.dims(), img.channels()), ((h, w), c), "images in a batch must share their shape");
        data.extend(img.to_chw());
    }
    Tensor::from_vec([images.len(), c, h, w], data)
}

pub fn masks_to_tensor(masks: &[&BinaryMask]) -> Tensor {
    let (h, w) = masks[0].dims();
    let data = masks.iter().flat_map(|m| m.to_f32()).collect();
    Tensor::from_vec([masks.len(), 1, h, w], data)
}

/// Splits a `[n, 1, h, w]` probability tensor into maps.
pub fn tensor_to_probs(t: &Tensor) -> Vec<ProbMap> {
    assert_eq!(t.c(), 1, "probability tensors have one channel");
    (0..t.n()).map(|i| ProbMap::from_clamped(t.h(), t.w(), t.sample(i).to_vec())).collect()
}
