//! 2D convolution with zero padding and same-size output, in a direct and an
//! FFT flavour. Both compute the true convolution `(k * img)` with the kernel
//! centred on its middle sample, and agree to rounding error.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Zip};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Kernels with at most this many non-zero taps are convolved directly.
pub const DIRECT_TAP_LIMIT: usize = 64;

/// Forward/inverse 2D FFT of a fixed size.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn run(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols));
        let buf = data
            .as_slice_mut()
            .expect("fft buffer must be in standard layout");
        row.process(buf);
        let mut column = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform, scaled so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    /// Forward transform of a real grid placed at the origin, zero padded to
    /// the plan size.
    pub fn forward_real(&self, src: ArrayView2<f64>) -> Array2<Complex64> {
        let (h, w) = src.dim();
        assert!(h <= self.rows && w <= self.cols);
        let mut buf = Array2::<Complex64>::zeros((self.rows, self.cols));
        buf.slice_mut(s![..h, ..w])
            .zip_mut_with(&src, |d, &v| *d = Complex64::new(v, 0.0));
        self.forward(&mut buf);
        buf
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Spectrum of an image or kernel padded for a particular [`Convolver`].
#[derive(Clone)]
pub struct Spectrum(Array2<Complex64>);

impl Spectrum {
    pub fn data(&self) -> &Array2<Complex64> {
        &self.0
    }
}

/// FFT convolution of `h x w` images with kernels of at most `kh x kw`.
/// Image spectra can be reused across many kernels.
#[derive(Clone)]
pub struct Convolver {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    fft: Fft2,
}

impl Convolver {
    pub fn new(h: usize, w: usize, kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
        let fft = Fft2::new(fast_len(h + kh - 1), fast_len(w + kw - 1));
        Convolver { h, w, kh, kw, fft }
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn spectrum(&self, data: ArrayView2<f64>) -> Spectrum {
        let (h, w) = data.dim();
        assert!(
            (h == self.h && w == self.w) || (h <= self.kh && w <= self.kw),
            "grid {h}x{w} does not fit convolver ({}x{} image, {}x{} kernel)",
            self.h,
            self.w,
            self.kh,
            self.kw
        );
        Spectrum(self.fft.forward_real(data))
    }

    /// Same-size convolution from two spectra; the kernel must have odd
    /// extent `kh x kw` as given to [`Convolver::new`].
    pub fn apply(&self, image: &Spectrum, kernel: &Spectrum) -> Array2<f64> {
        let mut prod = Array2::<Complex64>::zeros(self.fft.shape());
        Zip::from(&mut prod)
            .and(&image.0)
            .and(&kernel.0)
            .for_each(|p, &a, &b| *p = a * b);
        self.fft.inverse(&mut prod);
        let (oy, ox) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        prod.slice(s![oy..oy + self.h, ox..ox + self.w])
            .mapv(|c| c.re)
    }

    pub fn convolve(&self, image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(kernel.dim(), (self.kh, self.kw));
        self.apply(&self.spectrum(image), &self.spectrum(kernel))
    }
}

/// Direct same-size convolution with zero padding. Zero taps are skipped,
/// so sparse kernels are cheap.
pub fn convolve_direct(image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = image.dim();
    let (kh, kw) = kernel.dim();
    assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Array2::<f64>::zeros((h, w));
    for ((a, b), &kv) in kernel.indexed_iter() {
        if kv == 0.0 {
            continue;
        }
        // out(y, x) += k(a, b) * img(y + ch - a, x + cw - b)
        let dy = ch - a as isize;
        let dx = cw - b as isize;
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
        if y0 >= y1 || x0 >= x1 {
            continue;
        }
        let src = image.slice(s![
            (y0 as isize + dy) as usize..(y1 as isize + dy) as usize,
            (x0 as isize + dx) as usize..(x1 as isize + dx) as usize
        ]);
        let mut dst = out.slice_mut(s![y0..y1, x0..x1]);
        dst.zip_mut_with(&src, |o, &v| *o += kv * v);
    }
    out
}

/// Same-size convolution choosing the direct path for sparse kernels and the
/// FFT path otherwise.
pub fn convolve(image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
    let taps = kernel.iter().filter(|v| **v != 0.0).count();
    if taps <= DIRECT_TAP_LIMIT {
        convolve_direct(image, kernel)
    } else {
        let (h, w) = image.dim();
        let (kh, kw) = kernel.dim();
        Convolver::new(h, w, kh, kw).convolve(image, kernel)
    }
}

/// Sum over the `(2r+1) x (2r+1)` window around each pixel, zero padded.
/// Computed as two direct 1D passes so each output only sums nearby values.
pub fn box_sum(image: ArrayView2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    let mut rows = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            rows[[y, x]] = image.slice(s![y, x0..x1]).sum();
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        rows.slice(s![y0..y1, x]).sum()
    })
}

/// Mirror a grid about its vertical axis (`out[y][x] = in[y][w-1-x]`).
pub fn mirror_horizontal(grid: ArrayView2<f64>) -> Array2<f64> {
    grid.slice(s![.., ..;-1]).to_owned()
}

/// Rotate a grid by 180 degrees (flip both axes).
pub fn flip_both(grid: ArrayView2<f64>) -> Array2<f64> {
    grid.slice(s![..;-1, ..;-1]).to_owned()
}
