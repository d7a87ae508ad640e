//! Procedural RGB-D content for tests, calibration and mask optimization.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraConfig;
use crate::conv::box_sum;
use crate::error::{ensure, Error, Result};
use crate::io::{image_io::load_image, pfm::read_pfm_2d, pfm::write_pfm, pfm::write_pfm_2d};

/// Box-smoothing radii of the texture octaves.
const OCTAVES: [usize; 5] = [1, 2, 4, 8, 16];

/// Sum of box-smoothed noise octaves, each scaled to standard deviation
/// `sqrt(r)`, which gives a roughly `1/f` spectrum like natural images.
fn multiscale_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    let mut acc = Array2::zeros((h, w));
    // Octaves wider than a quarter of the image are nearly constant.
    for r in OCTAVES.into_iter().filter(|&r| r == 1 || 4 * r <= h.min(w)) {
        let noise = Array2::from_shape_fn((h, w), |_| rng.random::<f64>() - 0.5);
        let band = box_sum(noise.view(), r);
        let sd = band.std(0.0).max(f64::MIN_POSITIVE);
        acc.scaled_add((r as f64).sqrt() / sd, &band);
    }
    acc
}

/// Random texture in `[0.1, 0.9]`, `channels x h x w`, with detail at
/// every scale. Channels share most of their structure, like natural
/// colour images.
pub fn texture(seed: u64, channels: usize, h: usize, w: usize) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = multiscale_noise(&mut rng, h, w);
    let mut out = Array3::zeros((channels, h, w));
    for c in 0..channels {
        let ch = if channels > 1 {
            &base + &(multiscale_noise(&mut rng, h, w) * 0.3)
        } else {
            base.clone()
        };
        let (lo, hi) = ch.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        out.index_axis_mut(Axis(0), c).assign(&ch.mapv(|v| 0.1 + 0.8 * (v - lo) / span));
    }
    out
}

/// Zero every pixel within `border` of the edge.
pub fn with_zero_border(mut img: Array3<f64>, border: usize) -> Array3<f64> {
    let (_, h, w) = img.dim();
    for ((_, y, x), v) in img.indexed_iter_mut() {
        if y < border || x < border || y + border >= h || x + border >= w {
            *v = 0.0;
        }
    }
    img
}

/// An intensity image with a per-pixel depth in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    pub name: String,
    pub intensity: Array3<f64>,
    pub depth_mm: Array2<f64>,
}

impl RgbdSample {
    pub fn new(name: impl Into<String>, intensity: Array3<f64>, depth_mm: Array2<f64>) -> Result<Self> {
        let (_, h, w) = intensity.dim();
        if depth_mm.dim() != (h, w) {
            return Err(Error::Shape(format!("depth {:?} vs image {h}x{w}", depth_mm.dim())));
        }
        Ok(RgbdSample {
            name: name.into(),
            intensity,
            depth_mm,
        })
    }
}

/// Textured plane at the depth that produces `blur_px` of defocus.
pub fn fronto_parallel_sample(seed: u64, channels: usize, size: usize, blur_px: f64, camera: &CameraConfig) -> Result<RgbdSample> {
    let z = camera.depth_at_blur_px(blur_px);
    ensure(z.is_finite() && z > 0.0, || format!("blur {blur_px} px has no finite depth"))?;
    RgbdSample::new(
        format!("plane_{blur_px:+.1}px"),
        texture(seed, channels, size, size),
        Array2::from_elem((size, size), z),
    )
}

/// Textured background with a few textured rectangles in front of it, each
/// at a random depth inside the camera's blur range.
pub fn layered_sample(seed: u64, channels: usize, size: usize, camera: &CameraConfig) -> Result<RgbdSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f1a_7e);
    let max = camera.max_blur_px;
    let depth_at = |rng: &mut ChaCha8Rng| camera.depth_at_blur_px(rng.random_range(-max..=max) * 0.95);
    let mut intensity = texture(seed, channels, size, size);
    let mut depth = Array2::from_elem((size, size), depth_at(&mut rng));
    let shapes = rng.random_range(1..=3);
    for i in 0..shapes {
        let z = depth_at(&mut rng).min(depth[[0, 0]]);
        let tex = texture(seed.wrapping_add(1000 + i as u64), channels, size, size);
        let (h0, w0) = (rng.random_range(size / 4..=size / 2), rng.random_range(size / 4..=size / 2));
        let (y0, x0) = (rng.random_range(0..=size - h0), rng.random_range(0..=size - w0));
        for y in y0..y0 + h0 {
            for x in x0..x0 + w0 {
                if z <= depth[[y, x]] {
                    depth[[y, x]] = z;
                    for c in 0..channels {
                        intensity[[c, y, x]] = tex[[c, y, x]];
                    }
                }
            }
        }
    }
    RgbdSample::new(format!("layered_{seed}"), intensity, depth)
}

pub fn layered_dataset(seed: u64, count: usize, channels: usize, size: usize, camera: &CameraConfig) -> Result<Vec<RgbdSample>> {
    (0..count)
        .map(|i| layered_sample(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), channels, size, camera))
        .collect()
}

/// Write one subdirectory per sample with `image.pfm` and `depth.pfm`.
pub fn save_dataset(dir: &Path, samples: &[RgbdSample]) -> Result<()> {
    for s in samples {
        let sub = dir.join(&s.name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_pfm(&sub.join("image.pfm"), &s.intensity)?;
        write_pfm_2d(&sub.join("depth.pfm"), &s.depth_mm)?;
    }
    Ok(())
}

/// Read a dataset directory: every subdirectory with `depth.pfm` and an
/// `image.pfm` or `image.png`, in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<RgbdSample>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("depth.pfm").exists())
        .collect();
    subs.sort();
    let mut out = Vec::with_capacity(subs.len());
    for sub in subs {
        let img_path = ["image.pfm", "image.png"]
            .iter()
            .map(|n| sub.join(n))
            .find(|p| p.exists())
            .ok_or_else(|| Error::format(&sub, "no image.pfm or image.png"))?;
        let name = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(RgbdSample::new(name, load_image(&img_path)?, read_pfm_2d(&sub.join("depth.pfm"))?)?);
    }
    if out.is_empty() {
        return Err(Error::format(dir, "dataset has no samples"));
    }
    Ok(out)
}
