use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_standard, StandardAug};
use super::patches::{extract_patches, PatchGrid};
use crate::error::{Error, Result};
use crate::types::{BinaryMask, LabeledSample, RasterImage, UnlabeledSample};

/// Indices into the labeled and unlabeled patch pools for one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Augmented patches for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub labeled: Vec<(RasterImage, BinaryMask)>,
    pub unlabeled: Vec<RasterImage>,
}

/// `take` items from repeated independent shuffles of `0..n`.
fn cycled<R: Rng + ?Sized>(n: usize, take: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        out.extend(perm.into_iter().take(take - out.len()));
    }
    out
}

/// One epoch of paired batches.
///
/// The epoch has `max(ceil(L / B_l), ceil(U / B_u))` steps; the shorter
/// stream is reshuffled each time it is exhausted. With `n_unlabeled = 0`
/// the epoch is purely supervised.
pub fn make_batches<R: Rng + ?Sized>(
    n_labeled: usize,
    n_unlabeled: usize,
    batch_labeled: usize,
    batch_unlabeled: usize,
    require_unlabeled: bool,
    rng: &mut R,
) -> Result<Vec<BatchIndices>> {
    if batch_labeled == 0 || batch_unlabeled == 0 {
        return Err(Error::Config("batch sizes must be at least 1".into()));
    }
    if n_labeled == 0 {
        return Err(Error::EmptyDataset("no labeled patches".into()));
    }
    if require_unlabeled && n_unlabeled == 0 {
        return Err(Error::EmptyDataset("semi-supervised training needs unlabeled patches".into()));
    }
    let steps = n_labeled.div_ceil(batch_labeled).max(n_unlabeled.div_ceil(batch_unlabeled));
    let lab = cycled(n_labeled, steps * batch_labeled, rng);
    let unl = if n_unlabeled > 0 { cycled(n_unlabeled, steps * batch_unlabeled, rng) } else { Vec::new() };
    Ok((0..steps)
        .map(|s| BatchIndices {
            labeled: lab[s * batch_labeled..(s + 1) * batch_labeled].to_vec(),
            unlabeled: if unl.is_empty() { Vec::new() } else { unl[s * batch_unlabeled..(s + 1) * batch_unlabeled].to_vec() },
        })
        .collect())
}

/// All training patches held in memory.
#[derive(Clone, Debug)]
pub struct PatchPool {
    pub labeled: Vec<(RasterImage, BinaryMask)>,
    pub unlabeled: Vec<RasterImage>,
}

impl PatchPool {
    pub fn from_samples(labeled: &[LabeledSample], unlabeled: &[UnlabeledSample], patch: usize, stride: usize) -> Result<Self> {
        let mut lab = Vec::new();
        for s in labeled {
            let (h, w) = s.image.dims();
            let grid = PatchGrid::new(h, w, patch, stride)?;
            let images = extract_patches(&s.image, &grid)?;
            for (img, &(r, c)) in images.into_iter().zip(grid.origins()) {
                lab.push((img, s.mask.crop(r, c, patch, patch)));
            }
        }
        let mut unl = Vec::new();
        for s in unlabeled {
            let (h, w) = s.image.dims();
            unl.extend(extract_patches(&s.image, &PatchGrid::new(h, w, patch, stride)?)?);
        }
        Ok(Self { labeled: lab, unlabeled: unl })
    }

    /// Gathers and geometrically augments the indexed patches.
    pub fn assemble<R: Rng + ?Sized>(&self, idx: &BatchIndices, aug: &StandardAug, rng: &mut R) -> Batch {
        let labeled = idx
            .labeled
            .iter()
            .map(|&i| {
                let (img, mask) = &self.labeled[i];
                let (a, m) = augment_standard(img, Some(mask), aug, rng);
                (a, m.expect("mask passed through"))
            })
            .collect();
        let unlabeled = idx.unlabeled.iter().map(|&i| augment_standard(&self.unlabeled[i], None, aug, rng).0).collect();
        Batch { labeled, unlabeled }
    }
}
