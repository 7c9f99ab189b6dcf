//! Synthetic two-domain fundus corpus.
//!
//! Source images carry wide, high-contrast vessel trees; the target domain is
//! produced by thinning the vessels and degrading the photometry, which gives
//! a controlled domain gap with exact ground truth.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgproc::{count_components, distance_to_background, gaussian_blur, skeletonize, value_noise};
use crate::io::{save_image, save_mask, write_json};
use crate::rng::item_rng;
use crate::types::{BinaryMask, DomainTag, RasterImage};

const MAX_RETRIES: usize = 16;
const MIN_FRACTION: f64 = 0.01;
const MAX_FRACTION: f64 = 0.25;
const STEP_PX: f32 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_trees: usize,
    pub branch_depth: usize,
    /// `[min, max]` stroke width in pixels.
    pub vessel_width_px: [f32; 2],
    pub background_texture_amplitude: f32,
    /// Standard deviation of the per-step heading change, in radians per pixel.
    pub tortuosity: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            n_trees: 3,
            branch_depth: 3,
            vessel_width_px: [1.5, 4.5],
            background_texture_amplitude: 0.08,
            tortuosity: 0.06,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 {
            return Err(Error::Config(format!("synth image_size must be at least 64, got {}", self.image_size)));
        }
        let [lo, hi] = self.vessel_width_px;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("vessel_width_px must be a positive range, got [{lo}, {hi}]")));
        }
        if !(self.background_texture_amplitude >= 0.0 && self.tortuosity >= 0.0) {
            return Err(Error::Config("texture amplitude and tortuosity must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainShiftSpec {
    /// Additive RGB offset.
    pub tint: [f32; 3],
    pub blur_sigma: f32,
    pub width_scale: f32,
    pub contrast_scale: f32,
    pub vignette_strength: f32,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        Self { tint: [0.06, -0.02, 0.04], blur_sigma: 1.0, width_scale: 0.6, contrast_scale: 0.7, vignette_strength: 0.3 }
    }
}

impl DomainShiftSpec {
    pub fn identity() -> Self {
        Self { tint: [0.0; 3], blur_sigma: 0.0, width_scale: 1.0, contrast_scale: 1.0, vignette_strength: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config(format!("width_scale must be in (0, 1], got {}", self.width_scale)));
        }
        if !(self.contrast_scale > 0.0 && self.contrast_scale <= 1.0) {
            return Err(Error::Config(format!("contrast_scale must be in (0, 1], got {}", self.contrast_scale)));
        }
        if !(self.blur_sigma >= 0.0 && self.vignette_strength >= 0.0 && self.vignette_strength <= 1.0) {
            return Err(Error::Config("blur_sigma must be >= 0 and vignette_strength in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: [f32; 2],
    b: [f32; 2],
    width: f32,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

struct Grower<'a, R: Rng + ?Sized> {
    cfg: &'a SynthConfig,
    rng: &'a mut R,
    segments: Vec<Segment>,
}

impl<R: Rng + ?Sized> Grower<'_, R> {
    fn grow(&mut self, mut pos: [f32; 2], mut heading: f32, width: f32, length: f32, depth: usize) {
        let size = self.cfg.image_size as f32;
        let steps = (length / STEP_PX).ceil() as usize;
        let mut drift = 0.0f32;
        for _ in 0..steps {
            drift = 0.8 * drift + self.cfg.tortuosity * STEP_PX.sqrt() * gauss(self.rng);
            heading += drift;
            let next = [pos[0] + STEP_PX * heading.sin(), pos[1] + STEP_PX * heading.cos()];
            self.segments.push(Segment { a: pos, b: next, width });
            pos = next;
            if pos[0] < -4.0 || pos[1] < -4.0 || pos[0] > size + 4.0 || pos[1] > size + 4.0 {
                return;
            }
        }
        if depth < self.cfg.branch_depth {
            let child_width = (width * 0.75).max(self.cfg.vessel_width_px[0]);
            for sign in [-1.0f32, 1.0] {
                let turn = sign * self.rng.gen_range(0.3f32..0.8);
                let len = length * self.rng.gen_range(0.6f32..0.8);
                self.grow(pos, heading + turn, child_width, len, depth + 1);
            }
        }
    }
}

fn segment_distance(p: [f32; 2], s: &Segment) -> f32 {
    let (dy, dx) = (s.b[0] - s.a[0], s.b[1] - s.a[1]);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 { (((p[0] - s.a[0]) * dy + (p[1] - s.a[1]) * dx) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qy, qx) = (s.a[0] + t * dy - p[0], s.a[1] + t * dx - p[1]);
    (qy * qy + qx * qx).sqrt()
}

/// Anti-aliased stroke coverage in `[0, 1]` per pixel.
fn coverage(segments: &[Segment], size: usize) -> Vec<f32> {
    let mut cov = vec![0.0f32; size * size];
    for s in segments {
        let reach = s.width / 2.0 + 1.0;
        let r0 = (s.a[0].min(s.b[0]) - reach).floor().max(0.0) as usize;
        let r1 = (s.a[0].max(s.b[0]) + reach).ceil().min(size as f32 - 1.0);
        let c0 = (s.a[1].min(s.b[1]) - reach).floor().max(0.0) as usize;
        let c1 = (s.a[1].max(s.b[1]) + reach).ceil().min(size as f32 - 1.0);
        if r1 < 0.0 || c1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let d = segment_distance([r as f32, c as f32], s);
                let v = (s.width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut cov[r * size + c];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    cov
}

/// Renders one fundus-like image with its exact vessel mask.
pub fn render_vessel_tree<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<(RasterImage, BinaryMask)> {
    cfg.validate()?;
    if cfg.n_trees == 0 {
        return Err(Error::DegenerateGeometry("n_trees = 0 yields no vessel foreground".into()));
    }
    let size = cfg.image_size;
    let s = size as f32;
    let mut last_fraction = 0.0;
    for _ in 0..MAX_RETRIES {
        let disc = [s * rng.gen_range(0.35f32..0.65), s * rng.gen_range(0.3f32..0.7)];
        let disc_radius = 0.07 * s;
        let mut grower = Grower { cfg, rng: &mut *rng, segments: Vec::new() };
        let phase: f32 = grower.rng.gen_range(0.0..2.0 * PI);
        for t in 0..cfg.n_trees {
            let heading = phase + 2.0 * PI * t as f32 / cfg.n_trees as f32 + grower.rng.gen_range(-0.3f32..0.3);
            let start = [disc[0] + disc_radius * 0.5 * heading.sin(), disc[1] + disc_radius * 0.5 * heading.cos()];
            let [lo, hi] = cfg.vessel_width_px;
            let width = grower.rng.gen_range(((lo + hi) / 2.0)..=hi);
            let length = s * grower.rng.gen_range(0.3f32..0.45);
            grower.grow(start, heading, width, length, 0);
        }
        let segments = grower.segments;
        let cov = coverage(&segments, size);
        let mask = BinaryMask::from_fn(size, size, |r, c| cov[r * size + c] >= 0.5);
        last_fraction = mask.foreground_fraction();
        if !(MIN_FRACTION..=MAX_FRACTION).contains(&last_fraction) {
            continue;
        }
        let image = paint(cfg, &cov, disc, disc_radius, rng);
        return Ok((image, mask));
    }
    Err(Error::DegenerateGeometry(format!(
        "foreground fraction {last_fraction:.4} outside [{MIN_FRACTION}, {MAX_FRACTION}] after {MAX_RETRIES} attempts"
    )))
}

fn paint<R: Rng + ?Sized>(cfg: &SynthConfig, cov: &[f32], disc: [f32; 2], disc_radius: f32, rng: &mut R) -> RasterImage {
    let size = cfg.image_size;
    let s = size as f32;
    let coarse = value_noise(size, size, 4, rng);
    let fine = value_noise(size, size, 12, rng);
    let base = [0.78f32, 0.40, 0.20];
    let disc_tint = [0.20f32, 0.38, 0.32];
    let vessel_contrast = [0.42f32, 0.62, 0.55];
    let amp = cfg.background_texture_amplitude;
    let mut px = vec![0.0f32; size * size * 3];
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            let texture = 1.0 + amp * (0.65 * coarse[i] + 0.35 * fine[i]);
            let (dy, dx) = (r as f32 - s / 2.0, c as f32 - s / 2.0);
            let falloff = 1.0 - 0.25 * (dy * dy + dx * dx) / (s * s / 2.0);
            let (oy, ox) = (r as f32 - disc[0], c as f32 - disc[1]);
            let glow = (-(oy * oy + ox * ox) / (2.0 * disc_radius * disc_radius)).exp();
            for ch in 0..3 {
                let bg = base[ch] * texture * falloff + disc_tint[ch] * glow;
                px[i * 3 + ch] = bg * (1.0 - vessel_contrast[ch] * cov[i]);
            }
        }
    }
    RasterImage::from_clamped(size, size, 3, px)
}

/// Thins the vessels and degrades the photometry of a source-domain pair.
pub fn apply_domain_shift<R: Rng + ?Sized>(
    img: &RasterImage,
    mask: &BinaryMask,
    spec: &DomainShiftSpec,
    rng: &mut R,
) -> Result<(RasterImage, BinaryMask)> {
    spec.validate()?;
    if img.dims() != mask.dims() {
        return Err(Error::shape("image/mask dims", img.dims(), mask.dims()));
    }
    let (h, w) = img.dims();
    let c = img.channels();
    let mut px = img.pixels().to_vec();
    let mut out_mask = mask.clone();

    if spec.width_scale < 1.0 {
        let thin = thin_mask(mask, spec.width_scale);
        inpaint_removed(&mut px, h, w, c, mask, &thin);
        out_mask = thin;
    }
    if spec.contrast_scale < 1.0 {
        for ch in 0..c {
            let mean = (0..h * w).map(|i| px[i * c + ch] as f64).sum::<f64>() / (h * w) as f64;
            let mean = mean as f32;
            for i in 0..h * w {
                let v = &mut px[i * c + ch];
                *v = mean + spec.contrast_scale * (*v - mean);
            }
        }
    }
    if spec.tint.iter().any(|&t| t != 0.0) {
        for i in 0..h * w {
            for ch in 0..c {
                let v = &mut px[i * c + ch];
                *v = (*v + spec.tint[ch.min(2)]).clamp(0.0, 1.0);
            }
        }
    }
    if spec.vignette_strength > 0.0 {
        let strength = spec.vignette_strength * rng.gen_range(0.85f32..1.15);
        let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
        let rmax2 = cy * cy + cx * cx;
        for r in 0..h {
            for col in 0..w {
                let (dy, dx) = (r as f32 - cy, col as f32 - cx);
                let f = (1.0 - strength * (dy * dy + dx * dx) / rmax2).max(0.0);
                for ch in 0..c {
                    px[(r * w + col) * c + ch] *= f;
                }
            }
        }
    }
    if spec.blur_sigma > 0.0 {
        let sigma = spec.blur_sigma * rng.gen_range(0.85f32..1.15);
        let mut plane = vec![0.0; h * w];
        for ch in 0..c {
            for i in 0..h * w {
                plane[i] = px[i * c + ch];
            }
            gaussian_blur(&mut plane, h, w, sigma);
            for i in 0..h * w {
                px[i * c + ch] = plane[i];
            }
        }
    }
    Ok((RasterImage::from_clamped(h, w, c, px), out_mask))
}

/// Morphological thinning: keeps the skeleton plus every pixel whose
/// distance from the centreline is within `scale` of the local half-width.
fn thin_mask(mask: &BinaryMask, scale: f32) -> BinaryMask {
    const REACH: usize = 10;
    let (h, w) = mask.dims();
    let fg: Vec<bool> = mask.pixels().iter().map(|&v| v == 1).collect();
    let dist = distance_to_background(&fg, h, w, REACH);
    let skeleton = skeletonize(&fg, h, w);
    let win = 4isize;
    BinaryMask::from_fn(h, w, |r, c| {
        let i = r * w + c;
        if !fg[i] {
            return false;
        }
        if skeleton[i] {
            return true;
        }
        let mut local_max = dist[i];
        for dr in -win..=win {
            for dc in -win..=win {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                    local_max = local_max.max(dist[rr as usize * w + cc as usize]);
                }
            }
        }
        // Offset of the pixel from the local centreline versus the scaled half-width.
        local_max - dist[i] < scale * (local_max - 0.5)
    })
}

/// Replaces removed vessel pixels (and a one-pixel halo around the original
/// vessels) with the mean of nearby untouched background.
fn inpaint_removed(px: &mut [f32], h: usize, w: usize, c: usize, before: &BinaryMask, after: &BinaryMask) {
    let near_vessel = |r: usize, col: usize| -> bool {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (rr, cc) = (r as isize + dr, col as isize + dc);
                if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize && before.get(rr as usize, cc as usize) {
                    return true;
                }
            }
        }
        false
    };
    let mut clean = vec![true; h * w];
    for r in 0..h {
        for col in 0..w {
            clean[r * w + col] = !near_vessel(r, col);
        }
    }
    let source = px.to_vec();
    for r in 0..h {
        for col in 0..w {
            let i = r * w + col;
            if clean[i] || after.get(r, col) {
                continue;
            }
            let mut reach = 3isize;
            loop {
                let mut acc = [0.0f64; 3];
                let mut n = 0usize;
                for dr in -reach..=reach {
                    for dc in -reach..=reach {
                        let (rr, cc) = (r as isize + dr, col as isize + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let j = rr as usize * w + cc as usize;
                        if clean[j] {
                            n += 1;
                            for ch in 0..c {
                                acc[ch] += source[j * c + ch] as f64;
                            }
                        }
                    }
                }
                if n > 0 || reach > 16 {
                    for ch in 0..c {
                        if n > 0 {
                            px[i * c + ch] = (acc[ch] / n as f64) as f32;
                        }
                    }
                    break;
                }
                reach *= 2;
            }
        }
    }
}

/// Number of 8-connected vessel components in a mask.
pub fn mask_components(mask: &BinaryMask) -> usize {
    let fg: Vec<bool> = mask.pixels().iter().map(|&v| v == 1).collect();
    count_components(&fg, mask.height(), mask.width())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Labeled,
    Unlabeled,
    TestSource,
    TestTarget,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::TestSource => "test_source",
            Split::TestTarget => "test_target",
        }
    }

    pub fn domain(self) -> DomainTag {
        match self {
            Split::Labeled | Split::TestSource => DomainTag::LabeledSource,
            Split::Unlabeled | Split::TestTarget => DomainTag::UnlabeledTarget,
        }
    }

    fn has_mask(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub domain: DomainTag,
    pub image_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub code_version: String,
    pub synth: SynthConfig,
    pub shift: DomainShiftSpec,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.id.as_str()).collect()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("manifest serialises")))
    }
}

/// Renders one item of a corpus; a pure function of `(cfg, shift, id)`.
pub fn render_item(cfg: &SynthConfig, shift: &DomainShiftSpec, split: Split, id: &str) -> Result<(RasterImage, BinaryMask)> {
    let mut rng = item_rng(cfg.seed, id);
    let (img, mask) = render_vessel_tree(cfg, &mut rng)?;
    match split.domain() {
        DomainTag::LabeledSource => Ok((img, mask)),
        DomainTag::UnlabeledTarget => apply_domain_shift(&img, &mask, shift, &mut rng),
    }
}

/// Writes a complete two-domain corpus under `out_dir`.
///
/// `n_test` images are produced for each of the source and target test splits.
pub fn gen_corpus(
    cfg: &SynthConfig,
    n_labeled: usize,
    n_unlabeled: usize,
    n_test: usize,
    shift: &DomainShiftSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    shift.validate()?;
    let plan = [
        (Split::Labeled, n_labeled),
        (Split::Unlabeled, n_unlabeled),
        (Split::TestSource, n_test),
        (Split::TestTarget, n_test),
    ];
    let mut entries = Vec::new();
    for (split, count) in plan {
        let dir = out_dir.join(split.dir_name());
        std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(&dir, e))?;
        if split.has_mask() {
            std::fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(&dir, e))?;
        }
        for k in 0..count {
            let id = format!("{}_{k:03}", split.dir_name());
            let (img, mask) = render_item(cfg, shift, split, &id)?;
            let image_path = dir.join("images").join(format!("{id}.png"));
            save_image(&img, &image_path)?;
            let mask_sha256 = if split.has_mask() {
                let mask_path = dir.join("masks").join(format!("{id}.png"));
                save_mask(&mask, &mask_path)?;
                Some(file_sha256(&mask_path)?)
            } else {
                None
            };
            entries.push(ManifestEntry {
                id,
                split,
                domain: split.domain(),
                image_sha256: file_sha256(&image_path)?,
                mask_sha256,
            });
        }
    }
    let manifest = Manifest {
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        synth: cfg.clone(),
        shift: shift.clone(),
        entries,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub(crate) fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
