use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::bilinear;
use crate::types::{BinaryMask, RasterImage};

/// Geometric augmentations applied identically to an image and its mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StandardAug {
    /// Probability of a random resized crop.
    pub crop_p: f32,
    /// Smallest crop side as a fraction of the input side.
    pub crop_min_scale: f32,
    pub hflip_p: f32,
    pub vflip_p: f32,
    pub rotation_p: f32,
    /// Rotation angle is drawn uniformly from `[-deg, deg]`.
    pub rotation_deg: f32,
}

impl Default for StandardAug {
    fn default() -> Self {
        Self { crop_p: 0.5, crop_min_scale: 0.7, hflip_p: 0.5, vflip_p: 0.5, rotation_p: 0.5, rotation_deg: 30.0 }
    }
}

impl StandardAug {
    pub fn none() -> Self {
        Self { crop_p: 0.0, crop_min_scale: 1.0, hflip_p: 0.0, vflip_p: 0.0, rotation_p: 0.0, rotation_deg: 0.0 }
    }
}

/// Photometric augmentations; pixel positions never move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftAug {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub grayscale_p: f32,
}

impl Default for SoftAug {
    fn default() -> Self {
        Self { brightness: 0.2, contrast: 0.2, saturation: 0.2, hue: 0.05, grayscale_p: 0.2 }
    }
}

impl SoftAug {
    pub fn none() -> Self {
        Self { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0, grayscale_p: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub standard: StandardAug,
    pub soft: SoftAug,
}

impl AugmentationSpec {
    pub fn validate(&self) -> crate::Result<()> {
        let s = &self.standard;
        let probs = [s.crop_p, s.hflip_p, s.vflip_p, s.rotation_p, self.soft.grayscale_p];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(s.crop_min_scale > 0.0 && s.crop_min_scale <= 1.0) {
            return Err(crate::Error::Config("crop_min_scale must lie in (0, 1]".into()));
        }
        let soft = &self.soft;
        if [soft.brightness, soft.contrast, soft.saturation, soft.hue, s.rotation_deg].iter().any(|v| *v < 0.0) {
            return Err(crate::Error::Config("jitter strengths and rotation range must be non-negative".into()));
        }
        Ok(())
    }
}

/// Inverse-maps every output pixel through `src(y, x)`, bilinear for the
/// image, nearest for the mask; out-of-image samples read as 0.
fn resample(
    img: &RasterImage,
    mask: Option<&BinaryMask>,
    src: impl Fn(f32, f32) -> (f32, f32),
) -> (RasterImage, Option<BinaryMask>) {
    let (h, w) = img.dims();
    let c = img.channels();
    let mut px = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            let (y, x) = src(r as f32, col as f32);
            for ch in 0..c {
                px[(r * w + col) * c + ch] = bilinear(img.pixels(), h, w, c, y, x, ch, 0.0);
            }
        }
    }
    let mask = mask.map(|m| {
        BinaryMask::from_fn(h, w, |r, col| {
            let (y, x) = src(r as f32, col as f32);
            let (yr, xr) = (y.round(), x.round());
            yr >= 0.0 && xr >= 0.0 && (yr as usize) < h && (xr as usize) < w && m.get(yr as usize, xr as usize)
        })
    });
    (RasterImage::from_clamped(h, w, c, px), mask)
}

fn hflip(img: &RasterImage, mask: Option<&BinaryMask>) -> (RasterImage, Option<BinaryMask>) {
    let (h, w) = img.dims();
    let c = img.channels();
    let mut px = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                px[(r * w + col) * c + ch] = img.get(r, w - 1 - col, ch);
            }
        }
    }
    let mask = mask.map(|m| BinaryMask::from_fn(h, w, |r, col| m.get(r, w - 1 - col)));
    (RasterImage::from_clamped(h, w, c, px), mask)
}

fn vflip(img: &RasterImage, mask: Option<&BinaryMask>) -> (RasterImage, Option<BinaryMask>) {
    let (h, w) = img.dims();
    let c = img.channels();
    let mut px = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                px[(r * w + col) * c + ch] = img.get(h - 1 - r, col, ch);
            }
        }
    }
    let mask = mask.map(|m| BinaryMask::from_fn(h, w, |r, col| m.get(h - 1 - r, col)));
    (RasterImage::from_clamped(h, w, c, px), mask)
}

/// Rotation by `deg` degrees (counter-clockwise) about the image centre.
pub fn rotate(img: &RasterImage, mask: Option<&BinaryMask>, deg: f32) -> (RasterImage, Option<BinaryMask>) {
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (s, c) = deg.to_radians().sin_cos();
    resample(img, mask, |r, col| {
        let (dy, dx) = (r - cy, col - cx);
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    })
}

/// Square random resized crop back to the input resolution.
fn resized_crop<R: Rng + ?Sized>(
    img: &RasterImage,
    mask: Option<&BinaryMask>,
    min_scale: f32,
    rng: &mut R,
) -> (RasterImage, Option<BinaryMask>) {
    let (h, w) = img.dims();
    let scale = if min_scale < 1.0 { rng.gen_range(min_scale..=1.0) } else { 1.0 };
    let ch = ((h as f32 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f32 * scale).round() as usize).clamp(1, w);
    let r0 = rng.gen_range(0..=h - ch) as f32;
    let c0 = rng.gen_range(0..=w - cw) as f32;
    let (sy, sx) = (ch as f32 / h as f32, cw as f32 / w as f32);
    resample(img, mask, |r, col| (r0 + (r + 0.5) * sy - 0.5, c0 + (col + 0.5) * sx - 0.5))
}

/// Random crop, flips and rotation, applied identically to image and mask.
pub fn augment_standard<R: Rng + ?Sized>(
    img: &RasterImage,
    mask: Option<&BinaryMask>,
    spec: &StandardAug,
    rng: &mut R,
) -> (RasterImage, Option<BinaryMask>) {
    if let Some(m) = mask {
        assert_eq!(m.dims(), img.dims(), "augmentation mask must match the image");
    }
    let mut cur = (img.clone(), mask.cloned());
    if spec.crop_p > 0.0 && rng.gen::<f32>() < spec.crop_p {
        cur = resized_crop(&cur.0, cur.1.as_ref(), spec.crop_min_scale, rng);
    }
    if spec.hflip_p > 0.0 && rng.gen::<f32>() < spec.hflip_p {
        cur = hflip(&cur.0, cur.1.as_ref());
    }
    if spec.vflip_p > 0.0 && rng.gen::<f32>() < spec.vflip_p {
        cur = vflip(&cur.0, cur.1.as_ref());
    }
    if spec.rotation_p > 0.0 && spec.rotation_deg > 0.0 && rng.gen::<f32>() < spec.rotation_p {
        let deg = rng.gen_range(-spec.rotation_deg..=spec.rotation_deg);
        cur = rotate(&cur.0, cur.1.as_ref(), deg);
    }
    cur
}

fn gray(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv(p: [f32; 3]) -> [f32; 3] {
    let max = p[0].max(p[1]).max(p[2]);
    let min = p[0].min(p[1]).min(p[2]);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == p[0] {
        ((p[1] - p[2]) / d).rem_euclid(6.0) / 6.0
    } else if max == p[1] {
        ((p[2] - p[0]) / d + 2.0) / 6.0
    } else {
        ((p[0] - p[1]) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Additive brightness shift, clamped to the unit interval.
pub fn adjust_brightness(img: &RasterImage, delta: f32) -> RasterImage {
    let (h, w) = img.dims();
    RasterImage::from_clamped(h, w, img.channels(), img.pixels().iter().map(|v| v + delta).collect())
}

/// Colour jitter followed by random grayscale; strengths of zero skip the
/// corresponding transform entirely.
pub fn augment_soft<R: Rng + ?Sized>(img: &RasterImage, spec: &SoftAug, rng: &mut R) -> RasterImage {
    let (h, w) = img.dims();
    let c = img.channels();
    let mut out = img.clone();
    if spec.brightness > 0.0 {
        out = adjust_brightness(&out, rng.gen_range(-spec.brightness..=spec.brightness));
    }
    if spec.contrast > 0.0 {
        let f = rng.gen_range(1.0 - spec.contrast..=1.0 + spec.contrast).max(0.0);
        let mean = if c == 3 {
            out.pixels().chunks(3).map(|p| gray(p) as f64).sum::<f64>() / (h * w) as f64
        } else {
            out.pixels().iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64
        } as f32;
        let px = out.pixels().iter().map(|v| mean + f * (v - mean)).collect();
        out = RasterImage::from_clamped(h, w, c, px);
    }
    if c == 3 && spec.saturation > 0.0 {
        let f = rng.gen_range(1.0 - spec.saturation..=1.0 + spec.saturation).max(0.0);
        let mut px = out.pixels().to_vec();
        for p in px.chunks_mut(3) {
            let g = gray(p);
            p.iter_mut().for_each(|v| *v = g + f * (*v - g));
        }
        out = RasterImage::from_clamped(h, w, c, px);
    }
    if c == 3 && spec.hue > 0.0 {
        let shift = rng.gen_range(-spec.hue..=spec.hue);
        let mut px = out.pixels().to_vec();
        for p in px.chunks_mut(3) {
            let mut hsv = rgb_to_hsv([p[0], p[1], p[2]]);
            hsv[0] += shift;
            p.copy_from_slice(&hsv_to_rgb(hsv));
        }
        out = RasterImage::from_clamped(h, w, c, px);
    }
    if c == 3 && spec.grayscale_p > 0.0 && rng.gen::<f32>() < spec.grayscale_p {
        let mut px = out.pixels().to_vec();
        for p in px.chunks_mut(3) {
            let g = gray(p);
            p.iter_mut().for_each(|v| *v = g);
        }
        out = RasterImage::from_clamped(h, w, c, px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn disabled_standard_aug_is_identity() {
        let img = noise_image(20, 24, 1);
        let mask = BinaryMask::from_fn(20, 24, |r, c| r == c);
        let (i2, m2) = augment_standard(&img, Some(&mask), &StandardAug::none(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(i2, img);
        assert_eq!(m2.unwrap(), mask);
    }

    #[test]
    fn hflip_moves_single_pixel() {
        let img = noise_image(16, 20, 2);
        let mask = BinaryMask::from_fn(16, 20, |r, c| (r, c) == (3, 5));
        let spec = StandardAug { hflip_p: 1.0, ..StandardAug::none() };
        let (i2, m2) = augment_standard(&img, Some(&mask), &spec, &mut ChaCha8Rng::seed_from_u64(0));
        let m2 = m2.unwrap();
        assert!(m2.get(3, 20 - 1 - 5));
        assert_eq!(m2.count(), 1);
        assert_eq!(i2.get(7, 0, 1), img.get(7, 19, 1));
    }

    #[test]
    fn quarter_turn_transposes_a_stroke() {
        let n = 32;
        let img = RasterImage::new(n, n, 1, vec![0.5; n * n]).unwrap();
        let mask = BinaryMask::from_fn(n, n, |r, c| (15..17).contains(&r) && (4..28).contains(&c));
        let (_, rotated) = rotate(&img, Some(&mask), 90.0);
        let rotated = rotated.unwrap();
        assert_eq!(rotated.count(), mask.count());
        let cols: Vec<usize> = (0..n).filter(|&c| (0..n).any(|r| rotated.get(r, c))).collect();
        assert_eq!(cols, vec![15, 16]);
    }

    #[test]
    fn zero_soft_aug_is_identity() {
        let img = noise_image(16, 16, 3);
        assert_eq!(augment_soft(&img, &SoftAug::none(), &mut ChaCha8Rng::seed_from_u64(1)), img);
    }

    #[test]
    fn forced_grayscale_equalises_channels() {
        let img = noise_image(16, 16, 4);
        let spec = SoftAug { grayscale_p: 1.0, ..SoftAug::none() };
        let out = augment_soft(&img, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(out.pixels().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn brightness_matches_direct_recomputation() {
        let img = noise_image(16, 16, 5);
        let spec = SoftAug { brightness: 0.3, ..SoftAug::none() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: f32 = ChaCha8Rng::seed_from_u64(8).gen_range(-0.3..=0.3);
        let out = augment_soft(&img, &spec, &mut rng);
        for (o, v) in out.pixels().iter().zip(img.pixels()) {
            assert_eq!(*o, (v + b).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn hsv_round_trip() {
        let img = noise_image(16, 16, 6);
        for p in img.pixels().chunks(3) {
            let back = hsv_to_rgb(rgb_to_hsv([p[0], p[1], p[2]]));
            for k in 0..3 {
                assert!((back[k] - p[k]).abs() < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn flips_preserve_count_and_binarity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = noise_image(16, 18, seed);
            let mask = BinaryMask::from_fn(16, 18, |_, _| rng.gen::<bool>());
            let spec = StandardAug { hflip_p: 0.5, vflip_p: 0.5, ..StandardAug::none() };
            let (_, m2) = augment_standard(&img, Some(&mask), &spec, &mut rng);
            let m2 = m2.unwrap();
            prop_assert_eq!(m2.count(), mask.count());
            prop_assert!(m2.pixels().iter().all(|&v| v <= 1));
        }

        #[test]
        fn full_standard_aug_keeps_mask_binary(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = noise_image(24, 24, seed);
            let mask = BinaryMask::from_fn(24, 24, |r, c| (r * 7 + c * 3) % 5 == 0);
            let (i2, m2) = augment_standard(&img, Some(&mask), &StandardAug::default(), &mut rng);
            prop_assert!(m2.unwrap().pixels().iter().all(|&v| v <= 1));
            prop_assert!(i2.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn soft_aug_is_pointwise(seed in 0u64..200) {
            // A pixel-position-preserving transform maps equal input pixels to equal outputs.
            let mut img_px = noise_image(16, 16, seed).into_pixels();
            let copy: Vec<f32> = img_px[0..3].to_vec();
            img_px[3 * 200..3 * 201].copy_from_slice(&copy);
            let img = RasterImage::new(16, 16, 3, img_px).unwrap();
            let out = augment_soft(&img, &SoftAug::default(), &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&out.pixels()[0..3], &out.pixels()[600..603]);
        }
    }
}
