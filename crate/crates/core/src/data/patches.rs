use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ProbMap, RasterImage};

/// Tiling of an `H x W` image into square patches.
///
/// Origins advance by `stride`; the last row and column are clamped so every
/// patch stays inside the image, which makes edge patches overlap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        if pos + patch >= len {
            out.push(len - patch);
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out.dedup();
    out
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 || stride > patch_size {
            return Err(Error::Config(format!("need 0 < stride <= patch size, got stride {stride}, patch {patch_size}")));
        }
        if patch_size > height.min(width) {
            return Err(Error::PatchTooLarge { patch: patch_size, height, width });
        }
        let rows = axis_origins(height, patch_size, stride);
        let cols = axis_origins(width, patch_size, stride);
        let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self { patch_size, stride, height, width, origins })
    }

    /// Row-major `(row, col)` patch origins.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

pub fn extract_patches(img: &RasterImage, grid: &PatchGrid) -> Result<Vec<RasterImage>> {
    if img.dims() != (grid.height, grid.width) {
        return Err(Error::GridMismatch(format!("grid built for {}x{}, image is {:?}", grid.height, grid.width, img.dims())));
    }
    let p = grid.patch_size;
    Ok(grid.origins.iter().map(|&(r, c)| img.crop(r, c, p, p)).collect())
}

pub fn extract_prob_patches(map: &ProbMap, grid: &PatchGrid) -> Result<Vec<ProbMap>> {
    if map.dims() != (grid.height, grid.width) {
        return Err(Error::GridMismatch(format!("grid built for {}x{}, map is {:?}", grid.height, grid.width, map.dims())));
    }
    let p = grid.patch_size;
    Ok(grid.origins.iter().map(|&(r, c)| map.crop(r, c, p, p)).collect())
}

/// Reassembles per-patch predictions, averaging wherever patches overlap.
pub fn stitch_patches(preds: &[ProbMap], grid: &PatchGrid) -> Result<ProbMap> {
    if preds.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} predictions for {} grid origins", preds.len(), grid.len())));
    }
    let p = grid.patch_size;
    let (h, w) = (grid.height, grid.width);
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    for (pred, &(r0, c0)) in preds.iter().zip(&grid.origins) {
        if pred.dims() != (p, p) {
            return Err(Error::GridMismatch(format!("prediction is {:?}, patch size is {p}", pred.dims())));
        }
        for r in 0..p {
            for c in 0..p {
                let i = (r0 + r) * w + c0 + c;
                sum[i] += pred.get(r, c) as f64;
                count[i] += 1;
            }
        }
    }
    let probs = sum.iter().zip(&count).map(|(s, &n)| (s / n as f64) as f32).collect();
    Ok(ProbMap::from_clamped(h, w, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_tiling() {
        let g = PatchGrid::new(800, 800, 400, 400).unwrap();
        assert_eq!(g.origins(), &[(0, 0), (0, 400), (400, 0), (400, 400)]);
    }

    #[test]
    fn clamped_tiling() {
        let g = PatchGrid::new(500, 500, 400, 400).unwrap();
        assert_eq!(g.origins(), &[(0, 0), (0, 100), (100, 0), (100, 100)]);
    }

    #[test]
    fn single_patch_is_whole_image() {
        let g = PatchGrid::new(400, 400, 400, 400).unwrap();
        assert_eq!(g.origins(), &[(0, 0)]);
        let img = RasterImage::new(400, 400, 1, (0..160_000).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
        assert_eq!(extract_patches(&img, &g).unwrap()[0], img);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        assert!(matches!(PatchGrid::new(300, 500, 400, 400), Err(Error::PatchTooLarge { .. })));
    }

    #[test]
    fn constant_patches_stitch_to_constant() {
        let g = PatchGrid::new(50, 70, 32, 20).unwrap();
        let preds = vec![ProbMap::filled(32, 32, 0.3); g.len()];
        let out = stitch_patches(&preds, &g).unwrap();
        assert!(out.probs().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn half_overlap_averages() {
        let g = PatchGrid::new(16, 24, 16, 8).unwrap();
        assert_eq!(g.origins(), &[(0, 0), (0, 8)]);
        let out = stitch_patches(&[ProbMap::filled(16, 16, 0.0), ProbMap::filled(16, 16, 1.0)], &g).unwrap();
        for r in 0..16 {
            assert_eq!(out.get(r, 4), 0.0);
            assert_eq!(out.get(r, 12), 0.5);
            assert_eq!(out.get(r, 20), 1.0);
        }
    }

    #[test]
    fn wrong_prediction_count_is_rejected() {
        let g = PatchGrid::new(32, 32, 16, 16).unwrap();
        assert!(matches!(stitch_patches(&[ProbMap::filled(16, 16, 0.0)], &g), Err(Error::GridMismatch(_))));
    }

    proptest! {
        #[test]
        fn grid_covers_every_pixel(h in 16usize..120, w in 16usize..120, p in 8usize..40, s in 1usize..48) {
            prop_assume!(p <= h.min(w) && s <= p);
            let g = PatchGrid::new(h, w, p, s).unwrap();
            let mut covered = vec![false; h * w];
            for &(r, c) in g.origins() {
                prop_assert!(r + p <= h && c + p <= w);
                for rr in r..r + p { for cc in c..c + p { covered[rr * w + cc] = true; } }
            }
            prop_assert!(covered.iter().all(|&v| v));
            prop_assert!(g.origins().windows(2).all(|o| o[0] < o[1]));
        }

        #[test]
        fn stitch_inverts_extract(h in 16usize..80, w in 16usize..80, p in 8usize..32, s in 1usize..40, seed in 0u64..1000) {
            prop_assume!(p <= h.min(w) && s <= p);
            let g = PatchGrid::new(h, w, p, s).unwrap();
            let probs: Vec<f32> = (0..h * w).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 999.0).collect();
            let map = ProbMap::new(h, w, probs).unwrap();
            let back = stitch_patches(&extract_prob_patches(&map, &g).unwrap(), &g).unwrap();
            prop_assert_eq!(back, map);
        }
    }
}
