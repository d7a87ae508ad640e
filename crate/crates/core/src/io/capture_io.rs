//! Capture directories: `left.pfm`, `right.pfm` and an 8-bit `preview.png`
//! of `left + right`.

use std::path::Path;

use super::{
    create_dir,
    image_io::save_png8,
    pfm::{read_pfm, write_pfm},
};
use crate::error::{Error, Result};
use crate::render::DualPixelCapture;

pub fn save_capture(dir: &Path, capture: &DualPixelCapture) -> Result<()> {
    create_dir(dir)?;
    write_pfm(&dir.join("left.pfm"), &capture.left)?;
    write_pfm(&dir.join("right.pfm"), &capture.right)?;
    save_png8(&dir.join("preview.png"), &capture.combined())
}

pub fn load_capture(dir: &Path) -> Result<DualPixelCapture> {
    let left = read_pfm(&dir.join("left.pfm"))?;
    let right = read_pfm(&dir.join("right.pfm"))?;
    DualPixelCapture::new(left, right).map_err(|e| Error::format(dir, e.to_string()))
}
