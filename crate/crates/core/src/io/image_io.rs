//! PNG input and 8/16-bit previews.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};

use super::pfm::read_pfm;
use crate::error::{Error, Result};

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Load an intensity image as `C x H x W` in `[0, 1]`. PNG (8 or 16 bit,
/// gray or colour; alpha dropped) and PFM are accepted.
pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if is_pfm {
        return read_pfm(path);
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let colour = img.color().has_color();
    let to_arr = |c: usize, data: Vec<u16>| {
        Array3::from_shape_fn((c, h, w), |(ch, y, x)| data[(y * w + x) * c + ch] as f64 / 65535.0)
    };
    Ok(match (colour, img) {
        (false, DynamicImage::ImageLuma8(buf)) => Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            buf.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
        }),
        (true, DynamicImage::ImageRgb8(buf)) => Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            buf.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        }),
        (false, other) => to_arr(1, other.to_luma16().into_raw()),
        (true, other) => to_arr(3, other.to_rgb16().into_raw()),
    })
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// 8-bit PNG of a `C x H x W` image, values clipped to `[0, 1]`.
pub fn save_png8(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (c, h, w) = img.dim();
    let (w32, h32) = (w as u32, h as u32);
    let res = match c {
        1 => ImageBuffer::<Luma<u8>, _>::from_fn(w32, h32, |x, y| {
            Luma([quantize(img[[0, y as usize, x as usize]], 255.0) as u8])
        })
        .save(path),
        3 => ImageBuffer::<Rgb<u8>, _>::from_fn(w32, h32, |x, y| {
            Rgb(std::array::from_fn(|ch| quantize(img[[ch, y as usize, x as usize]], 255.0) as u8))
        })
        .save(path),
        _ => return Err(Error::Shape(format!("PNG preview needs 1 or 3 channels, got {c}"))),
    };
    res.map_err(|e| image_err(path, e))
}

/// 16-bit grayscale PNG of a map, values clipped to `[0, 1]`.
pub fn save_png16(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    ImageBuffer::<Luma<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(map[[y as usize, x as usize]], 65535.0) as u16])
    })
    .save(path)
    .map_err(|e| image_err(path, e))
}

/// Blue-white-red ramp: `lo` maps to blue, the midpoint to white, `hi` to red.
pub fn colormap(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if t < 0.5 {
        let s = t * 2.0;
        (s, s, 1.0)
    } else {
        let s = (1.0 - t) * 2.0;
        (1.0, s, s)
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

pub fn save_colormap_png(path: &Path, map: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = map.dim();
    ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        Rgb(colormap(map[[y as usize, x as usize]], lo, hi))
    })
    .save(path)
    .map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| ((c + y * 5 + x) as f64 / 30.0).min(1.0));
        let p = dir.path().join("a.png");
        save_png8(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.dim(), (3, 4, 5));
        let err = (&back - &img).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 0.5 / 255.0 + 1e-12);

        let map = Array2::from_shape_fn((3, 3), |(y, x)| (y * 3 + x) as f64 / 8.0);
        let p16 = dir.path().join("b.png");
        save_png16(&p16, &map).unwrap();
        let back = load_image(&p16).unwrap();
        assert_eq!(back.dim(), (1, 3, 3));
        assert!((back[[0, 2, 2]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(-1.0, -1.0, 1.0), [0, 0, 255]);
        assert_eq!(colormap(0.0, -1.0, 1.0), [255, 255, 255]);
        assert_eq!(colormap(5.0, -1.0, 1.0), [255, 0, 0]);
    }
}
