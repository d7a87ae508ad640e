//! Dual-pixel point-spread functions.
//!
//! Naive (uncoded) DP kernels are tapered half discs: the circle of confusion
//! multiplied by a 2D Butterworth falloff anchored on one rim, so that most
//! light lands on one half with some leakage into the other. Left and right
//! kernels are mirror images, and the bright half swaps sides across the
//! focal plane. Coded kernels multiply the naive ones by the aperture code,
//! rotated by 180 degrees for points behind the focal plane.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::camera::CameraConfig;
use crate::conv::{mirror_horizontal, Fft2};
use crate::error::{ensure, Error, Result};
use crate::mask::MaskPattern;

/// Sub-samples per pixel axis when rasterizing the blur disc.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpPsfModelParams {
    /// Butterworth order.
    pub filter_order: u32,
    /// Vertical stretch of the Butterworth falloff; larger values make the
    /// taper depend mostly on the horizontal position.
    pub shape_alpha: f64,
    /// Butterworth cutoff as a fraction of the blur diameter.
    pub shape_beta: f64,
    /// Box-smoothing window (odd, pixels), capped by the blur radius.
    pub smoothing_strength: usize,
}

impl Default for DpPsfModelParams {
    fn default() -> Self {
        DpPsfModelParams {
            filter_order: 1,
            shape_alpha: 2.5,
            shape_beta: 0.4,
            smoothing_strength: 7,
        }
    }
}

impl DpPsfModelParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.filter_order >= 1, || "filter order must be >= 1".into())?;
        ensure(self.shape_alpha.is_finite() && self.shape_alpha > 0.0, || {
            format!("shape_alpha must be positive and finite, got {}", self.shape_alpha)
        })?;
        ensure(self.shape_beta.is_finite() && self.shape_beta > 0.0, || {
            format!("shape_beta must be positive and finite, got {}", self.shape_beta)
        })?;
        ensure(self.smoothing_strength % 2 == 1, || {
            format!(
                "smoothing strength must be a positive odd integer, got {}",
                self.smoothing_strength
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Smallest odd extent holding a blur disc of the given diameter.
pub fn required_extent(blur_px: f64) -> usize {
    2 * (blur_px.abs() / 2.0).ceil() as usize + 1
}

fn delta(extent: usize, value: f64) -> Array2<f64> {
    let mut k = Array2::zeros((extent, extent));
    k[[extent / 2, extent / 2]] = value;
    k
}

fn box_smooth_1d(grid: &Array2<f64>, width: usize, axis: Axis) -> Array2<f64> {
    let half = (width / 2) as isize;
    let mut out = Array2::zeros(grid.dim());
    let len = grid.len_of(axis) as isize;
    for (src, mut dst) in grid.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for i in 0..len {
            let lo = (i - half).max(0);
            let hi = (i + half).min(len - 1);
            let sum: f64 = (lo..=hi).map(|j| src[j as usize]).sum();
            dst[i as usize] = sum / width as f64;
        }
    }
    out
}

/// Tapered half-disc with its bright half on `+x`, normalized to sum 0.5.
fn canonical_kernel(blur_px: f64, model: &DpPsfModelParams, extent: usize) -> Array2<f64> {
    let radius = blur_px.abs() / 2.0;
    let half = (extent / 2) as f64;
    let cutoff = model.shape_beta * 2.0 * radius;
    let order2 = 2 * model.filter_order as i32;

    let mut coverage = Array2::<f64>::zeros((extent, extent));
    let mut taper = Array2::<f64>::zeros((extent, extent));
    for ((r, c), cov) in coverage.indexed_iter_mut() {
        let y = r as f64 - half;
        let x = c as f64 - half;
        let mut inside = 0usize;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let oy = (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                let ox = (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                if (y + oy).powi(2) + (x + ox).powi(2) <= radius * radius {
                    inside += 1;
                }
            }
        }
        *cov = inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        // Butterworth falloff measured from the bright rim at (x, y) = (R, 0)
        let rho = ((radius - x).powi(2) + (y / model.shape_alpha).powi(2)).sqrt();
        taper[[r, c]] = 1.0 / (1.0 + (rho / cutoff).powi(order2));
    }
    if coverage.sum() == 0.0 {
        return delta(extent, 0.5);
    }
    let mut kernel = &coverage * &taper;

    let cap = {
        let r = radius.floor() as usize;
        if r % 2 == 0 { r.saturating_sub(1) } else { r }
    };
    let width = model.smoothing_strength.min(cap.max(1));
    if width > 1 {
        kernel = box_smooth_1d(&kernel, width, Axis(0));
        kernel = box_smooth_1d(&kernel, width, Axis(1));
        Zip::from(&mut kernel)
            .and(&coverage)
            .for_each(|k, &cov| if cov == 0.0 { *k = 0.0 });
    }
    let total = kernel.sum();
    kernel.mapv_inplace(|v| 0.5 * v / total);
    kernel
}

/// One naive DP kernel on an `extent x extent` grid. The left and right
/// kernels at the same blur sum to one together.
pub fn naive_dp_psf(
    blur_px: f64,
    side: Side,
    model: &DpPsfModelParams,
    extent: usize,
) -> Result<Array2<f64>> {
    model.validate()?;
    ensure(blur_px.is_finite(), || format!("blur must be finite, got {blur_px}"))?;
    ensure(extent % 2 == 1, || format!("kernel extent must be odd, got {extent}"))?;
    if required_extent(blur_px) > extent {
        return Err(Error::Sizing(format!(
            "blur {blur_px} px needs a {0}x{0} kernel, extent is {extent}",
            required_extent(blur_px)
        )));
    }
    if blur_px == 0.0 {
        return Ok(delta(extent, 0.5));
    }
    let k = canonical_kernel(blur_px, model, extent);
    // the left view has its bright half on +x behind the focal plane
    let bright_right = (side == Side::Left) == (blur_px > 0.0);
    Ok(if bright_right {
        k
    } else {
        mirror_horizontal(k.view())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfPlane {
    pub signed_blur_px: f64,
    pub left: Array2<f64>,
    pub right: Array2<f64>,
}

impl PsfPlane {
    pub fn kernel(&self, side: Side) -> &Array2<f64> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn combined(&self) -> Array2<f64> {
        &self.left + &self.right
    }

    pub fn energy(&self) -> f64 {
        self.left.sum() + self.right.sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    planes: Vec<PsfPlane>,
    extent: usize,
    coded: bool,
}

impl PsfStack {
    /// Assemble a stack, checking the structural invariants.
    pub fn from_planes(planes: Vec<PsfPlane>, extent: usize, coded: bool) -> Result<Self> {
        ensure(!planes.is_empty(), || "stack needs at least one plane".into())?;
        ensure(extent % 2 == 1, || format!("kernel extent must be odd, got {extent}"))?;
        for (i, p) in planes.iter().enumerate() {
            ensure(
                p.left.dim() == (extent, extent) && p.right.dim() == (extent, extent),
                || format!("plane {i} kernels are not {extent}x{extent}"),
            )?;
            ensure(
                p.left.iter().chain(p.right.iter()).all(|v| v.is_finite() && *v >= 0.0),
                || format!("plane {i} has negative or non-finite kernel entries"),
            )?;
        }
        ensure(
            planes.windows(2).all(|w| w[0].signed_blur_px < w[1].signed_blur_px),
            || "plane blurs must be strictly increasing".into(),
        )?;
        Ok(PsfStack {
            planes,
            extent,
            coded,
        })
    }

    pub fn planes(&self) -> &[PsfPlane] {
        &self.planes
    }

    pub fn plane(&self, index: usize) -> Result<&PsfPlane> {
        self.planes.get(index).ok_or_else(|| {
            Error::Validation(format!(
                "plane index {index} out of range (stack has {})",
                self.planes.len()
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn is_coded(&self) -> bool {
        self.coded
    }

    pub fn blurs(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.signed_blur_px).collect()
    }

    pub fn max_blur_px(&self) -> f64 {
        self.planes
            .iter()
            .map(|p| p.signed_blur_px.abs())
            .fold(0.0, f64::max)
    }

    /// Index of the in-focus plane, if the stack has one.
    pub fn focus_index(&self) -> Option<usize> {
        self.planes.iter().position(|p| p.signed_blur_px == 0.0)
    }

    /// Same geometry (plane blurs and extent) as `other`.
    pub fn same_geometry(&self, other: &PsfStack) -> bool {
        self.extent == other.extent && self.blurs() == other.blurs()
    }
}

/// Naive DP kernels for every depth plane of the camera.
pub fn generate_psf_stack(camera: &CameraConfig, model: &DpPsfModelParams) -> Result<PsfStack> {
    camera.validate()?;
    model.validate()?;
    let extent = camera.kernel_extent();
    let planes = camera
        .plane_blurs()
        .into_par_iter()
        .map(|b| {
            Ok(PsfPlane {
                signed_blur_px: b,
                left: naive_dp_psf(b, Side::Left, model, extent)?,
                right: naive_dp_psf(b, Side::Right, model, extent)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PsfStack::from_planes(planes, extent, false)
}

/// Mask cell sampled by each kernel pixel under nearest-neighbour
/// resampling, scaled so that the aperture disc of an `n x n` mask covers
/// the blur disc of the given diameter. Samples falling outside the aperture
/// are pulled radially onto its rim. At zero blur only the centre pixel
/// samples the mask.
pub fn resample_indices(n: usize, extent: usize, blur_px: f64) -> Array2<Option<(usize, usize)>> {
    let centre = n as f64 / 2.0;
    let half = (extent / 2) as isize;
    let radius = blur_px.abs() / 2.0;
    let mut out = Array2::from_elem((extent, extent), None);
    if radius == 0.0 {
        out[[extent / 2, extent / 2]] = Some((n / 2, n / 2));
        return out;
    }
    let scale = n as f64 / (2.0 * radius);
    let limit = centre * (1.0 - 1e-9);
    for ((r, c), v) in out.indexed_iter_mut() {
        let mut u = (c as isize - half) as f64 * scale;
        let mut w = (r as isize - half) as f64 * scale;
        let rad = u.hypot(w);
        if rad > limit {
            u *= limit / rad;
            w *= limit / rad;
        }
        let col = ((u + centre).floor() as isize).clamp(0, n as isize - 1) as usize;
        let row = ((w + centre).floor() as isize).clamp(0, n as isize - 1) as usize;
        *v = Some((row, col));
    }
    out
}

/// Indices of [`resample_indices`] as they apply to one plane: rotated by
/// 180 degrees behind the focal plane.
pub fn plane_mask_indices(n: usize, extent: usize, blur_px: f64) -> Array2<Option<(usize, usize)>> {
    let idx = resample_indices(n, extent, blur_px);
    if blur_px > 0.0 {
        idx.slice(s![..;-1, ..;-1]).to_owned()
    } else {
        idx
    }
}

fn gather(grid: ArrayView2<f64>, idx: &Array2<Option<(usize, usize)>>) -> Array2<f64> {
    idx.mapv(|i| i.map_or(0.0, |rc| grid[rc]))
}

/// Nearest-neighbour resampling of a mask grid onto a kernel grid.
pub fn resample_mask(grid: ArrayView2<f64>, extent: usize, blur_px: f64) -> Array2<f64> {
    gather(grid, &resample_indices(grid.nrows(), extent, blur_px))
}

/// The mask as it multiplies the kernels of one plane: resampled to the blur
/// size and rotated by 180 degrees behind the focal plane.
pub fn plane_mask(grid: ArrayView2<f64>, extent: usize, blur_px: f64) -> Array2<f64> {
    gather(grid, &plane_mask_indices(grid.nrows(), extent, blur_px))
}

/// Apply an aperture code to a naive stack. Kernels are not renormalized.
pub fn code_psf_stack(stack: &PsfStack, mask: &MaskPattern) -> Result<PsfStack> {
    if stack.is_coded() {
        return Err(Error::State("stack is already coded".into()));
    }
    let extent = stack.extent();
    let planes = stack
        .planes()
        .par_iter()
        .map(|p| {
            let m = plane_mask(mask.grid().view(), extent, p.signed_blur_px);
            PsfPlane {
                signed_blur_px: p.signed_blur_px,
                left: &m * &p.left,
                right: &m * &p.right,
            }
        })
        .collect();
    Ok(PsfStack {
        planes,
        extent,
        coded: true,
    })
}

/// Magnitude of the 2D DFT of a kernel, normalized so the DC term is 1.
/// Frequencies are in FFT order (DC at `[0, 0]`).
pub fn mtf(kernel: ArrayView2<f64>) -> Result<Array2<f64>> {
    let total = kernel.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("MTF of a kernel with no energy".into()));
    }
    let (h, w) = kernel.dim();
    let spec = Fft2::new(h, w).forward_real(kernel);
    Ok(spec.mapv(|c: Complex64| c.norm() / total))
}

/// Signed frequency (cycles/pixel) of FFT bin `k` out of `n`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let s = if 2 * k > n { k - n } else { k };
    s as f64 / n as f64
}

/// Radial frequency band used for "mid-band" MTF summaries, cycles/pixel.
pub const MID_BAND: (f64, f64) = (0.1, 0.25);

/// Frequency bins whose radial frequency lies in `[lo, hi]`.
pub fn band_bins(h: usize, w: usize, band: (f64, f64)) -> Vec<(usize, usize)> {
    let mut bins = Vec::new();
    for u in 0..h {
        for v in 0..w {
            let f = bin_frequency(u, h).hypot(bin_frequency(v, w));
            if f >= band.0 && f <= band.1 {
                bins.push((u, v));
            }
        }
    }
    bins
}

/// Mean MTF over the mid band.
pub fn midband_mtf(kernel: ArrayView2<f64>) -> Result<f64> {
    let m = mtf(kernel)?;
    let bins = band_bins(m.nrows(), m.ncols(), MID_BAND);
    Ok(bins.iter().map(|&(u, v)| m[[u, v]]).sum::<f64>() / bins.len() as f64)
}

/// Radially averaged MTF profile in `nbins` bins up to Nyquist.
pub fn radial_mtf(kernel: ArrayView2<f64>, nbins: usize) -> Result<Vec<(f64, f64)>> {
    let m = mtf(kernel)?;
    let (h, w) = m.dim();
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for ((u, v), &val) in m.indexed_iter() {
        let f = bin_frequency(u, h).hypot(bin_frequency(v, w));
        let b = ((f / 0.5) * nbins as f64).floor() as usize;
        if b < nbins {
            sums[b] += val;
            counts[b] += 1;
        }
    }
    Ok((0..nbins)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * 0.5 / nbins as f64, sums[b] / counts[b] as f64))
        .collect())
}

fn centroid_x(kernel: &Array2<f64>) -> Result<f64> {
    let total = kernel.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("centroid of a kernel with no energy".into()));
    }
    let half = (kernel.ncols() / 2) as f64;
    let moment: f64 = kernel
        .indexed_iter()
        .map(|((_, c), &v)| (c as f64 - half) * v)
        .sum();
    Ok(moment / total)
}

/// Horizontal offset between the left and right kernel centroids.
pub fn psf_centroid_disparity(stack: &PsfStack, plane_index: usize) -> Result<f64> {
    let p = stack.plane(plane_index)?;
    Ok(centroid_x(&p.left)? - centroid_x(&p.right)?)
}
