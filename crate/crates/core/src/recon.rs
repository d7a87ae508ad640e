//! Classical depth and all-in-focus reconstruction from a dual-pixel pair.
//!
//! Depth hypotheses are scored with a cross-blur test: if the scene sits on
//! plane `k`, blurring the left view with the right kernel of `k` gives the
//! same image as blurring the right view with the left kernel of `k`.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::camera::CameraConfig;
use crate::conv::{box_sum, Convolver, Fft2};
use crate::error::{ensure, Error, Result};
use crate::psf::PsfStack;
use crate::registry::Registry;
use crate::render::{nearest_plane, DualPixelCapture};

pub const DEFAULT_PATCH_RADIUS: usize = 4;
pub const DEFAULT_WIENER_REG: f64 = 1e-2;

/// Matching cost per plane and pixel, `K x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    costs: Array3<f64>,
    blurs: Vec<f64>,
}

impl CostVolume {
    pub fn new(costs: Array3<f64>, blurs: Vec<f64>) -> Result<Self> {
        ensure(costs.len_of(Axis(0)) == blurs.len(), || {
            format!("{} cost planes for {} blurs", costs.len_of(Axis(0)), blurs.len())
        })?;
        ensure(!blurs.is_empty(), || "cost volume needs at least one plane".into())?;
        ensure(costs.iter().all(|c| c.is_finite() && *c >= 0.0), || {
            "costs must be finite and non-negative".into()
        })?;
        Ok(CostVolume { costs, blurs })
    }

    pub fn costs(&self) -> &Array3<f64> {
        &self.costs
    }

    pub fn blurs(&self) -> &[f64] {
        &self.blurs
    }

    pub fn dim(&self) -> (usize, usize) {
        let (_, h, w) = self.costs.dim();
        (h, w)
    }

    /// Threshold under which two costs count as tied.
    fn tie_tolerance(&self) -> f64 {
        1e-10 * self.costs.mean().unwrap_or(0.0)
    }

    /// Per-pixel best plane; ties go to the smallest `|blur|`.
    pub fn argmin(&self) -> Array2<usize> {
        let (h, w) = self.dim();
        let tol = self.tie_tolerance();
        let mut out = Array2::zeros((h, w));
        Zip::indexed(&mut out).par_for_each(|(y, x), k| *k = self.best_plane(y, x, tol));
        out
    }

    fn best_plane(&self, y: usize, x: usize, tol: f64) -> usize {
        let col = self.costs.slice(s![.., y, x]);
        let min = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let mut best = usize::MAX;
        for (k, &c) in col.iter().enumerate() {
            if c <= min + tol && (best == usize::MAX || self.blurs[k].abs() < self.blurs[best].abs()) {
                best = k;
            }
        }
        best
    }

    /// Mean gap between the best and second-best cost over the pixels where
    /// `include` is true.
    pub fn margin(&self, include: &Array2<bool>) -> Result<f64> {
        ensure(include.dim() == self.dim(), || "margin mask shape mismatch".into())?;
        ensure(self.blurs.len() >= 2, || "margin needs two planes".into())?;
        let mut total = 0.0;
        let mut count = 0usize;
        for ((y, x), &inc) in include.indexed_iter() {
            if !inc {
                continue;
            }
            let (mut a, mut b) = (f64::INFINITY, f64::INFINITY);
            for &c in self.costs.slice(s![.., y, x]) {
                if c < a {
                    b = a;
                    a = c;
                } else if c < b {
                    b = c;
                }
            }
            total += b - a;
            count += 1;
        }
        ensure(count > 0, || "margin mask selects no pixels".into())?;
        Ok(total / count as f64)
    }
}

/// Signed defocus divided by the largest blur the stack handles.
#[derive(Debug, Clone, PartialEq)]
pub struct DefocusMap {
    normalized: Array2<f64>,
    max_blur_px: f64,
}

impl DefocusMap {
    pub fn new(normalized: Array2<f64>, max_blur_px: f64) -> Result<Self> {
        ensure(max_blur_px > 0.0 && max_blur_px.is_finite(), || {
            format!("max blur must be positive, got {max_blur_px}")
        })?;
        ensure(normalized.iter().all(|v| (-1.0..=1.0).contains(v)), || {
            "normalized defocus must lie in [-1, 1]".into()
        })?;
        Ok(DefocusMap {
            normalized,
            max_blur_px,
        })
    }

    /// Build from signed blur in pixels, clamping to the handled range.
    pub fn from_blur_px(blur_px: &Array2<f64>, max_blur_px: f64) -> Result<Self> {
        ensure(blur_px.iter().all(|b| b.is_finite()), || "blur map must be finite".into())?;
        DefocusMap::new(blur_px.mapv(|b| (b / max_blur_px).clamp(-1.0, 1.0)), max_blur_px)
    }

    pub fn normalized(&self) -> &Array2<f64> {
        &self.normalized
    }

    pub fn max_blur_px(&self) -> f64 {
        self.max_blur_px
    }

    pub fn blur_px(&self) -> Array2<f64> {
        self.normalized.mapv(|n| n * self.max_blur_px)
    }

    pub fn blur_mm(&self, camera: &CameraConfig) -> Array2<f64> {
        let p = camera.pixel_pitch_mm();
        self.normalized.mapv(|n| n * self.max_blur_px * p)
    }
}

fn views_normalized(capture: &DualPixelCapture) -> (Array3<f64>, Array3<f64>) {
    let scale = capture.combined().mean().unwrap_or(0.0);
    if scale > 0.0 {
        (&capture.left / scale, &capture.right / scale)
    } else {
        (capture.left.clone(), capture.right.clone())
    }
}

/// Cross-blur cost volume. Each plane's kernels are scaled to unit total
/// energy and the capture to unit mean, so costs are comparable across
/// planes, codes and exposures.
pub fn defocus_cost_volume(capture: &DualPixelCapture, stack: &PsfStack, patch_radius: usize) -> Result<CostVolume> {
    ensure(patch_radius >= 1, || format!("patch radius must be >= 1, got {patch_radius}"))?;
    let (c, h, w) = capture.dim();
    let (left, right) = views_normalized(capture);
    let e = stack.extent();
    let convolver = Convolver::new(h, w, e, e);
    let left_spec: Vec<_> = left.outer_iter().map(|ch| convolver.spectrum(ch)).collect();
    let right_spec: Vec<_> = right.outer_iter().map(|ch| convolver.spectrum(ch)).collect();
    let planes: Vec<Array2<f64>> = stack
        .planes()
        .par_iter()
        .enumerate()
        .map(|(k, plane)| {
            let energy = plane.energy();
            if !(energy > 0.0) {
                return Err(Error::Degenerate(format!("plane {k} passes no light")));
            }
            let hl = convolver.spectrum((&plane.left / energy).view());
            let hr = convolver.spectrum((&plane.right / energy).view());
            let mut sq = Array2::<f64>::zeros((h, w));
            for ch in 0..c {
                let a = convolver.apply(&left_spec[ch], &hr);
                let b = convolver.apply(&right_spec[ch], &hl);
                Zip::from(&mut sq).and(&a).and(&b).for_each(|s, &a, &b| *s += (a - b) * (a - b));
            }
            Ok(box_sum(sq.view(), patch_radius))
        })
        .collect::<Result<_>>()?;
    let mut costs = Array3::zeros((planes.len(), h, w));
    for (k, p) in planes.into_iter().enumerate() {
        costs.index_axis_mut(Axis(0), k).assign(&p);
    }
    CostVolume::new(costs, stack.blurs())
}

/// Offset in `[-0.5, 0.5]` of the vertex of the parabola through three
/// equally spaced samples; zero when they do not open upward.
pub fn parabolic_offset(c_minus: f64, c0: f64, c_plus: f64) -> f64 {
    let denom = c_minus - 2.0 * c0 + c_plus;
    if denom > 0.0 {
        (0.5 * (c_minus - c_plus) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Best plane per pixel refined to sub-plane precision.
pub fn estimate_defocus(costs: &CostVolume, stack: &PsfStack) -> Result<DefocusMap> {
    let blurs = costs.blurs();
    ensure(blurs == stack.blurs().as_slice(), || "cost volume does not match the stack".into())?;
    let best = costs.argmin();
    let k_last = blurs.len() - 1;
    let vol = costs.costs();
    let mut blur = Array2::<f64>::zeros(best.dim());
    Zip::indexed(&mut blur).and(&best).par_for_each(|(y, x), b, &k| {
        let mut est = blurs[k];
        if k > 0 && k < k_last {
            let d = parabolic_offset(vol[[k - 1, y, x]], vol[[k, y, x]], vol[[k + 1, y, x]]);
            est += if d >= 0.0 { d * (blurs[k + 1] - blurs[k]) } else { d * (blurs[k] - blurs[k - 1]) };
        }
        *b = est;
    });
    DefocusMap::from_blur_px(&blur, stack.max_blur_px())
}

/// Metric depth (mm) per pixel; blur at or past the far asymptote maps to
/// `f64::INFINITY`.
pub fn defocus_to_depth(map: &DefocusMap, camera: &CameraConfig) -> Result<Array2<f64>> {
    camera.validate()?;
    Ok(map.blur_px().mapv(|b| camera.depth_at_blur_px(b)))
}

/// Even extension to a `2h x 2w` period: the image, its mirror images to
/// the right and below, and the doubly mirrored copy. The periodic signal
/// has no seams, so circular deconvolution does not ring at the wrap.
fn symmetric_extension(img: ArrayView2<f64>) -> Array2<Complex64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((2 * h, 2 * w), |(y, x)| {
        let sy = if y < h { y } else { 2 * h - 1 - y };
        let sx = if x < w { x } else { 2 * w - 1 - x };
        Complex64::new(img[[sy, sx]], 0.0)
    })
}

/// Wiener filter `conj(H) / (|H|^2 + reg (P - |H|^2))` with `P = |H(0)|^2`.
/// The filter is exact inversion at DC and for a delta kernel, and shrinks
/// every other frequency as `reg` grows.
fn wiener_filter(kernel: &Array2<f64>, fft: &Fft2, reg: f64) -> Array2<Complex64> {
    let (rows, cols) = fft.shape();
    let e = kernel.nrows();
    let c = (e / 2) as isize;
    let mut buf = Array2::<Complex64>::zeros((rows, cols));
    for ((a, b), &v) in kernel.indexed_iter() {
        let y = (a as isize - c).rem_euclid(rows as isize) as usize;
        let x = (b as isize - c).rem_euclid(cols as isize) as usize;
        buf[[y, x]].re += v;
    }
    fft.forward(&mut buf);
    let peak = kernel.sum().powi(2);
    buf.mapv(|k| {
        let p = k.norm_sqr();
        let denom = p + reg * (peak - p).max(0.0);
        if denom > 0.0 {
            k.conj() / denom
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// All-in-focus estimate: `left + right` is Wiener-deconvolved with each
/// plane's combined kernel and every pixel takes the result of the plane
/// nearest its defocus. Negative output is clamped to zero.
pub fn deblur_aif(capture: &DualPixelCapture, map: &DefocusMap, stack: &PsfStack, reg: f64) -> Result<Array3<f64>> {
    ensure(reg > 0.0 && reg.is_finite(), || format!("Wiener regularizer must be positive, got {reg}"))?;
    let (c, h, w) = capture.dim();
    ensure(map.normalized().dim() == (h, w), || "defocus map does not match the capture".into())?;
    let blurred = capture.combined();
    let blurs = stack.blurs();
    let choice = map.blur_px().mapv(|b| nearest_plane(&blurs, b));
    let mut used = vec![false; blurs.len()];
    choice.iter().for_each(|&k| used[k] = true);

    let fft = Fft2::new(2 * h, 2 * w);
    let spectra: Vec<Array2<Complex64>> = blurred
        .outer_iter()
        .map(|ch| {
            let mut s = symmetric_extension(ch);
            fft.forward(&mut s);
            s
        })
        .collect();

    let restored: Vec<Option<Array3<f64>>> = (0..blurs.len())
        .into_par_iter()
        .map(|k| {
            if !used[k] {
                return None;
            }
            let plane = &stack.planes()[k];
            let filter = wiener_filter(&plane.combined(), &fft, reg);
            let mut out = Array3::zeros((c, h, w));
            for (ch, spec) in spectra.iter().enumerate() {
                let mut prod = spec * &filter;
                fft.inverse(&mut prod);
                out.index_axis_mut(Axis(0), ch)
                    .assign(&prod.slice(s![..h, ..w]).mapv(|v| v.re));
            }
            Some(out)
        })
        .collect();

    let mut aif = Array3::zeros((c, h, w));
    for ((y, x), &k) in choice.indexed_iter() {
        let src = restored[k].as_ref().expect("plane was restored");
        for ch in 0..c {
            aif[[ch, y, x]] = src[[ch, y, x]].max(0.0);
        }
    }
    Ok(aif)
}

/// `size x size` median filter with edge replication; `size` must be odd.
pub fn median_filter(map: &Array2<f64>, size: usize) -> Result<Array2<f64>> {
    ensure(size % 2 == 1, || format!("median window must be odd, got {size}"))?;
    let (h, w) = map.dim();
    let r = (size / 2) as isize;
    let mut out = Array2::zeros((h, w));
    Zip::indexed(&mut out).par_for_each(|(y, x), o| {
        let mut win = Vec::with_capacity(size * size);
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                win.push(map[[yy, xx]]);
            }
        }
        win.sort_by(f64::total_cmp);
        *o = win[win.len() / 2];
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    pub patch_radius: usize,
    pub wiener_reg: f64,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            patch_radius: DEFAULT_PATCH_RADIUS,
            wiener_reg: DEFAULT_WIENER_REG,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub defocus: DefocusMap,
    pub aif: Array3<f64>,
}

/// A depth and all-in-focus estimator selectable by name.
pub trait Reconstructor: Send + Sync {
    fn describe(&self) -> &'static str;
    fn reconstruct(&self, capture: &DualPixelCapture, stack: &PsfStack, params: &ReconParams) -> Result<Reconstruction>;
}

pub struct CrossBlurWiener;

impl Reconstructor for CrossBlurWiener {
    fn describe(&self) -> &'static str {
        "cross-blur cost volume with Wiener compositing"
    }

    fn reconstruct(&self, capture: &DualPixelCapture, stack: &PsfStack, params: &ReconParams) -> Result<Reconstruction> {
        let costs = defocus_cost_volume(capture, stack, params.patch_radius)?;
        let defocus = estimate_defocus(&costs, stack)?;
        let aif = deblur_aif(capture, &defocus, stack, params.wiener_reg)?;
        Ok(Reconstruction { defocus, aif })
    }
}

pub fn reconstructors() -> Registry<dyn Reconstructor> {
    Registry::<dyn Reconstructor>::new("reconstructor").with("classical", Arc::new(CrossBlurWiener))
}

/// Pixels at least `border` away from every image edge.
pub fn interior_mask(h: usize, w: usize, border: usize) -> Array2<bool> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        y >= border && x >= border && y + border < h && x + border < w
    })
}

/// Gray view of a channel stack, as the channel mean.
pub fn to_gray(img: &Array3<f64>) -> Array2<f64> {
    img.mean_axis(Axis(0)).expect("image has channels")
}
