//! Masks on disk: an 8-bit grayscale PNG (white = open) plus a text sidecar
//! with the temperature and binary flag. ASCII masks (`.txt`, `#` open,
//! `.` closed) are also accepted on load.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use ndarray::Array2;

use super::{image_io::load_image, read_file, write_file};
use crate::error::{Error, Result};
use crate::mask::{parse_ascii_mask, MaskPattern};

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("mask.txt")
}

pub fn save_mask(path: &Path, mask: &MaskPattern) -> Result<()> {
    let n = mask.size() as u32;
    let grid = mask.grid();
    ImageBuffer::<Luma<u8>, _>::from_fn(n, n, |x, y| {
        Luma([(grid[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
    .save(path)
    .map_err(|e| Error::format(path, e.to_string()))?;
    let sidecar = format!(
        "version = 1\nsize = {}\ntemperature = {}\nbinary = {}\ntransmission = {}\nsha256 = {}\n",
        mask.size(),
        mask.temperature(),
        mask.is_binary(),
        mask.transmission(),
        mask.content_hash()
    );
    write_file(&sidecar_path(path), sidecar.as_bytes())
}

fn sidecar_fields(path: &Path) -> Result<Option<(f64, bool)>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = String::from_utf8(read_file(&side)?).map_err(|_| Error::format(&side, "not utf-8"))?;
    let mut temperature = None;
    let mut binary = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k.trim() {
            "temperature" => temperature = v.trim().parse::<f64>().ok(),
            "binary" => binary = v.trim().parse::<bool>().ok(),
            _ => {}
        }
    }
    match (temperature, binary) {
        (Some(t), Some(b)) => Ok(Some((t, b))),
        _ => Err(Error::format(&side, "sidecar needs temperature and binary fields")),
    }
}

/// Load a mask as stored, continuous values included.
pub fn load_mask(path: &Path) -> Result<MaskPattern> {
    let is_txt = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    if is_txt {
        let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not utf-8"))?;
        return parse_ascii_mask(&text);
    }
    let img = load_image(path)?;
    let (c, h, w) = img.dim();
    if c != 1 || h != w {
        return Err(Error::format(path, format!("mask must be square grayscale, got {c}x{h}x{w}")));
    }
    let grid: Array2<f64> = img.index_axis_move(ndarray::Axis(0), 0);
    let mut mask = MaskPattern::from_grid(grid)?;
    if let Some((t, binary)) = sidecar_fields(path)? {
        if binary && !mask.is_binary() {
            return Err(Error::format(path, "sidecar says binary but pixels are not 0/255"));
        }
        mask.set_metadata(t, binary || mask.is_binary());
    }
    Ok(mask)
}

/// Load a mask for fabrication-style use: continuous masks are binarized at 0.5.
pub fn load_mask_thresholded(path: &Path) -> Result<MaskPattern> {
    let mask = load_mask(path)?;
    Ok(if mask.is_binary() { mask } else { mask.binarize(0.5) })
}
