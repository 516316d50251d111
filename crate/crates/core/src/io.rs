//! File I/O: grayscale rasters (PGM and PNG), 0/255 mask encoding, RGB
//! overlays, and atomic artifact writes.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};
use image::ImageReader;
use std::path::Path;

/// Write via a temp file in the same directory, then rename, so an
/// interrupted run never leaves a partial final artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_atomic_str(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Load an 8-bit grayscale raster. Non-grayscale inputs are converted by
/// luminance with a warning on stderr.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let dyn_img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::invalid(format!("cannot decode {}: {e}", path.display())))?;
    let converted = !matches!(dyn_img.color(), image::ColorType::L8);
    if converted {
        eprintln!(
            "warning: {} is not 8-bit grayscale; converting by luminance",
            path.display()
        );
    }
    let gray = dyn_img.to_luma8();
    GrayImage::new(gray.width() as usize, gray.height() as usize, gray.into_raw())
}

fn encode(path: &Path, w: usize, h: usize, data: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::invalid("raster buffer size mismatch"))?;
    let mut bytes: Vec<u8> = Vec::new();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => image::ImageFormat::Png,
        _ => image::ImageFormat::Pnm,
    };
    img.write_to(&mut std::io::Cursor::new(&mut bytes), format)?;
    write_atomic(path, &bytes)
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    encode(path, img.width(), img.height(), img.data().to_vec())
}

/// Masks are written as 8-bit rasters with 0/255 encoding.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data = mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode(path, mask.width(), mask.height(), data)
}

/// Pixels >= 128 are read back as vessel.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    let data = img.data().iter().map(|&v| v >= 128).collect();
    BinaryMask::new(img.width(), img.height(), data)
}

/// 8-bit RGB overlay raster.
pub fn save_rgb(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    let img = image::RgbImage::from_raw(w as u32, h as u32, rgb.to_vec())
        .ok_or_else(|| Error::invalid("overlay buffer size mismatch"))?;
    let mut bytes: Vec<u8> = Vec::new();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => image::ImageFormat::Png,
        _ => image::ImageFormat::Pnm,
    };
    img.write_to(&mut std::io::Cursor::new(&mut bytes), format)?;
    write_atomic(path, &bytes)
}

/// Minimal CSV writer: fixed documented headers, no quoting needed for the
/// numeric payloads this crate emits.
pub fn save_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic_str(path, &text)
}
