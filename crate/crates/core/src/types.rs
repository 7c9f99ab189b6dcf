//! Pixel-grid value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible image side.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Channel-last, row-major image with unit-interval samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::RangeViolation(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::RangeViolation(format!(
                "image sides must be at least {MIN_IMAGE_SIDE}, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape("image buffer", height * width * channels, pixels.len()));
        }
        check_unit(&pixels, "image")?;
        Ok(Self { height, width, channels, pixels })
    }

    /// Builds an image from values that are known to be in range; out-of-range
    /// values are clamped.
    pub(crate) fn from_clamped(height: usize, width: usize, channels: usize, mut pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * channels);
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { height, width, channels, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// Rec. 601 luma, or the single channel of a grayscale image.
    pub fn luma(&self, row: usize, col: usize) -> f32 {
        if self.channels == 1 {
            return self.get(row, col, 0);
        }
        0.299 * self.get(row, col, 0) + 0.587 * self.get(row, col, 1) + 0.114 * self.get(row, col, 2)
    }

    /// Rectangular crop; the caller guarantees the window is in bounds.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Self {
        assert!(row + height <= self.height && col + width <= self.width, "crop out of bounds");
        let c = self.channels;
        let mut pixels = Vec::with_capacity(height * width * c);
        for r in row..row + height {
            let start = (r * self.width + col) * c;
            pixels.extend_from_slice(&self.pixels[start..start + width * c]);
        }
        Self { height, width, channels: c, pixels }
    }

    /// Planar channel-first copy, as consumed by the networks.
    pub fn to_chw(&self) -> Vec<f32> {
        let (hw, c) = (self.height * self.width, self.channels);
        let mut out = vec![0.0; hw * c];
        for (i, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                out[ch * hw + i] = *v;
            }
        }
        out
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }
}

/// Binary vessel mask, 1 marking foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("mask buffer", height * width, pixels.len()));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(Error::RangeViolation(format!("mask value {v} is not binary")));
        }
        Ok(Self { height, width, pixels })
    }

    /// Accepts real-valued input as long as every value is exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("mask buffer", height * width, values.len()));
        }
        let mut pixels = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 {
                pixels.push(0);
            } else if v == 1.0 {
                pixels.push(1);
            } else {
                return Err(Error::RangeViolation(format!("mask value {v} is not binary")));
            }
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c) as u8);
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col] == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.pixels[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.pixels.len().max(1) as f64
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Self {
        assert!(row + height <= self.height && col + width <= self.width, "crop out of bounds");
        let mut pixels = Vec::with_capacity(height * width);
        for r in row..row + height {
            pixels.extend_from_slice(&self.pixels[r * self.width + col..r * self.width + col + width]);
        }
        Self { height, width, pixels }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32).collect()
    }

    /// Reinterprets the mask as a probability map with hard 0/1 values.
    pub fn to_prob(&self) -> ProbMap {
        ProbMap { height: self.height, width: self.width, probs: self.to_f32() }
    }
}

/// Per-pixel foreground probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    probs: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != height * width {
            return Err(Error::shape("probability buffer", height * width, probs.len()));
        }
        check_unit(&probs, "probability")?;
        Ok(Self { height, width, probs })
    }

    pub(crate) fn from_clamped(height: usize, width: usize, mut probs: Vec<f32>) -> Self {
        debug_assert_eq!(probs.len(), height * width);
        for v in &mut probs {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { height, width, probs }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value), "probability out of range");
        Self { height, width, probs: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.probs[row * self.width + col]
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Self {
        assert!(row + height <= self.height && col + width <= self.width, "crop out of bounds");
        let mut probs = Vec::with_capacity(height * width);
        for r in row..row + height {
            probs.extend_from_slice(&self.probs[r * self.width + col..r * self.width + col + width]);
        }
        Self { height, width, probs }
    }

    pub fn into_probs(self) -> Vec<f32> {
        self.probs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    LabeledSource,
    UnlabeledTarget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub domain: DomainTag,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, image: RasterImage, mask: BinaryMask, domain: DomainTag) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::shape("image/mask dims", image.dims(), mask.dims()));
        }
        Ok(Self { id: id.into(), image, mask, domain })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub id: String,
    pub image: RasterImage,
    pub domain: DomainTag,
}

/// A sample as decoded from storage, before any invariant has been checked.
#[derive(Clone, Debug)]
pub struct RawSample {
    pub id: String,
    pub domain: DomainTag,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    /// `(height, width, values)` of the paired mask, if any.
    pub mask: Option<(usize, usize, Vec<f32>)>,
}

/// Checks every type invariant of a raw sample.
pub fn validate_sample(s: &RawSample) -> Result<()> {
    s.clone().into_sample().map(|_| ())
}

/// Either kind of validated sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Labeled(LabeledSample),
    Unlabeled(UnlabeledSample),
}

impl RawSample {
    pub fn into_sample(self) -> Result<Sample> {
        if let Some((mh, mw, _)) = &self.mask {
            if (*mh, *mw) != (self.height, self.width) {
                return Err(Error::shape("image/mask dims", (self.height, self.width), (*mh, *mw)));
            }
        }
        let image = RasterImage::new(self.height, self.width, self.channels, self.pixels)?;
        match self.mask {
            Some((h, w, values)) => {
                let mask = BinaryMask::from_values(h, w, &values)?;
                Ok(Sample::Labeled(LabeledSample::new(self.id, image, mask, self.domain)?))
            }
            None => Ok(Sample::Unlabeled(UnlabeledSample { id: self.id, image, domain: self.domain })),
        }
    }
}

/// Foreground wherever the probability strictly exceeds `threshold`.
pub fn binarize(p: &ProbMap, threshold: f32) -> BinaryMask {
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
    BinaryMask { height: p.height, width: p.width, pixels: p.probs.iter().map(|&v| (v > threshold) as u8).collect() }
}

fn check_unit(values: &[f32], what: &str) -> Result<()> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::RangeViolation(format!("{what} value {} at index {i} outside [0, 1]", values[i]))),
        None => Ok(()),
    }
}
