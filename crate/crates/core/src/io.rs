//! PNG/BMP codecs and small filesystem helpers.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, DomainTag, ProbMap, RasterImage, RawSample};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = img.dims();
    let res = if img.channels() == 3 {
        let buf: RgbImage =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| Rgb([0, 1, 2].map(|c| quantize(img.get(y as usize, x as usize, c)))));
        buf.save(path)
    } else {
        let buf: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([quantize(img.get(y as usize, x as usize, 0))]));
        buf.save(path)
    };
    res.map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes a mask as 8-bit grayscale with foreground 255.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = mask.dims();
    let buf: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]));
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes a probability map as an 8-bit grayscale image.
pub fn save_prob(map: &ProbMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = map.dims();
    let buf: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([quantize(map.get(y as usize, x as usize))]));
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Decodes an image file into unit-interval samples (8-bit values / 255).
/// Colour inputs become 3-channel images, grayscale inputs 1-channel.
pub fn read_raw_image(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        Ok((h, w, 3, rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
    } else {
        let l = img.to_luma8();
        Ok((h, w, 1, l.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
    }
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let (h, w, c, px) = read_raw_image(path)?;
    RasterImage::new(h, w, c, px)
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, values) = read_raw_mask(path)?;
    BinaryMask::from_values(h, w, &values)
}

fn read_raw_mask(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let l = decode(path)?.to_luma8();
    let (w, h) = (l.width() as usize, l.height() as usize);
    let values = l.into_raw().into_iter().map(|v| if v == 255 { 1.0 } else { v as f32 / 255.0 }).collect();
    Ok((h, w, values))
}

/// Reads an image and, optionally, its mask without checking invariants.
pub fn read_raw_sample(id: &str, domain: DomainTag, image: &Path, mask: Option<&Path>) -> Result<RawSample> {
    let (height, width, channels, pixels) = read_raw_image(image)?;
    let mask = mask.map(read_raw_mask).transpose()?;
    Ok(RawSample { id: id.to_string(), domain, height, width, channels, pixels, mask })
}

/// Image files (`.png`/`.bmp`) of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png") | Some("bmp")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}
