//! Smooth conditioning objective on the coded PSF stack, with its exact
//! gradient through the sigmoid, the per-plane mask resampling and the DFT.

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use crate::conv::Fft2;
use crate::error::{Error, Result};
use crate::mask::{aperture_disc, sigmoid};
use crate::psf::{band_bins, plane_mask_indices, PsfStack, MID_BAND};

/// Keeps `|F|` and the plane distance differentiable at zero.
const SMOOTH_EPS: f64 = 1e-9;

struct Plane {
    kernels: [Array2<f64>; 2],
    /// Flat mask cell sampled by each kernel pixel.
    cells: Array2<Option<usize>>,
}

/// Precomputed geometry for evaluating the objective on `n x n` masks.
pub struct MtfProblem {
    n: usize,
    planes: Vec<Plane>,
    bins: Vec<(usize, usize)>,
    fft: Fft2,
    disc: Array2<f64>,
    disc_area: f64,
    beta5: f64,
}

/// Objective value split into its parts, with the gradient if requested.
#[derive(Debug, Clone)]
pub struct MtfEvaluation {
    pub value: f64,
    pub mean_midband: f64,
    pub mean_dissimilarity: f64,
    pub penalty: f64,
    pub transmission: f64,
    pub gradient: Option<Array2<f64>>,
}

impl MtfProblem {
    pub fn new(stack: &PsfStack, mask_size: usize, beta5: f64) -> Result<Self> {
        if stack.is_coded() {
            return Err(Error::State("objective needs an uncoded stack".into()));
        }
        if mask_size == 0 {
            return Err(Error::Validation("mask size must be positive".into()));
        }
        let e = stack.extent();
        let planes = stack
            .planes()
            .iter()
            .map(|p| Plane {
                kernels: [p.left.clone(), p.right.clone()],
                cells: plane_mask_indices(mask_size, e, p.signed_blur_px).mapv(|i| i.map(|(r, c)| r * mask_size + c)),
            })
            .collect();
        let disc = aperture_disc(mask_size);
        let disc_area = disc.sum();
        Ok(MtfProblem {
            n: mask_size,
            planes,
            bins: band_bins(e, e, MID_BAND),
            fft: Fft2::new(e, e),
            disc,
            disc_area,
            beta5,
        })
    }

    pub fn mask_size(&self) -> usize {
        self.n
    }

    fn coded(&self, plane: &Plane, view: usize, grid: &[f64]) -> Array2<f64> {
        Zip::from(&plane.kernels[view])
            .and(&plane.cells)
            .map_collect(|&h, &c| c.map_or(0.0, |i| grid[i] * h))
    }

    /// Evaluate on a grid of transmissions in `[0, 1]`; the gradient, if
    /// requested, is with respect to the grid.
    pub fn evaluate_grid(&self, grid: &Array2<f64>, want_gradient: bool) -> Result<MtfEvaluation> {
        if grid.dim() != (self.n, self.n) {
            return Err(Error::Shape(format!("mask is {:?}, objective expects {}x{}", grid.dim(), self.n, self.n)));
        }
        let flat: Vec<f64> = grid.iter().copied().collect();
        let k = self.planes.len();
        let n_views = (2 * k) as f64;
        let n_pairs = k.saturating_sub(1) as f64;
        let nb = self.bins.len() as f64;

        // coded kernels and their sums
        let mut coded = Vec::with_capacity(k);
        for (pi, p) in self.planes.iter().enumerate() {
            let pair = [self.coded(p, 0, &flat), self.coded(p, 1, &flat)];
            let sums = [pair[0].sum(), pair[1].sum()];
            if !(sums[0] > 0.0 && sums[1] > 0.0) {
                return Err(Error::Degenerate(format!("plane {pi} passes no light")));
            }
            coded.push((pair, sums));
        }

        let mut grad_c: Vec<[Array2<f64>; 2]> = Vec::new();
        let mut mid_total = 0.0;
        for (pair, sums) in &coded {
            let mut g_pair = [Array2::zeros(pair[0].dim()), Array2::zeros(pair[0].dim())];
            for v in 0..2 {
                let mut spec = pair[v].mapv(|x| Complex64::new(x, 0.0));
                self.fft.forward(&mut spec);
                let s = sums[v];
                let mut a = 0.0;
                let mut g = Array2::<Complex64>::zeros(spec.dim());
                for &(u, w) in &self.bins {
                    let f = spec[[u, w]];
                    let mag = (f.norm_sqr() + SMOOTH_EPS * SMOOTH_EPS).sqrt();
                    a += mag;
                    g[[u, w]] = f.conj() / mag;
                }
                a /= nb * s;
                mid_total += a;
                if want_gradient {
                    // dA/dC(x) = Re(sum_f G_f e^{-2 pi i f x}) / (|B| S) - A / S
                    self.fft.forward(&mut g);
                    g_pair[v] = g.mapv(|c| -(c.re / (nb * s) - a / s) / n_views);
                }
            }
            if want_gradient {
                grad_c.push(g_pair);
            }
        }

        let mut dis_total = 0.0;
        for i in 0..k.saturating_sub(1) {
            let (ca, sa) = &coded[i];
            let (cb, sb) = &coded[i + 1];
            let diffs: [Array2<f64>; 2] = std::array::from_fn(|v| &ca[v] / sa[v] - &cb[v] / sb[v]);
            let d = (diffs.iter().map(|d| d.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() + SMOOTH_EPS * SMOOTH_EPS).sqrt();
            dis_total += d;
            if want_gradient {
                for v in 0..2 {
                    let u = &diffs[v] / d;
                    // through P = C / S for both planes of the pair
                    for (idx, sign, c, s) in [(i, 1.0, &ca[v], sa[v]), (i + 1, -1.0, &cb[v], sb[v])] {
                        let dot: f64 = Zip::from(&u).and(c).fold(0.0, |acc, &a, &b| acc + a * b);
                        let dd = (&u / s).mapv(|x| x - dot / (s * s)) * sign;
                        grad_c[idx][v].scaled_add(-1.0 / n_pairs, &dd);
                    }
                }
            }
        }

        let mean_midband = mid_total / n_views;
        let mean_dissimilarity = if k > 1 { dis_total / n_pairs } else { 0.0 };
        let transmission = Zip::from(grid).and(&self.disc).fold(0.0, |a, &g, &d| a + g * d) / self.disc_area;
        let penalty = self.beta5 * (0.5 - transmission).max(0.0);
        let value = -(mean_midband + mean_dissimilarity) + penalty;

        let gradient = want_gradient.then(|| {
            let mut gg = vec![0.0; self.n * self.n];
            for (p, gpair) in self.planes.iter().zip(&grad_c) {
                for v in 0..2 {
                    Zip::from(&gpair[v]).and(&p.kernels[v]).and(&p.cells).for_each(|&g, &h, &c| {
                        if let Some(i) = c {
                            gg[i] += g * h;
                        }
                    });
                }
            }
            let mut out = Array2::from_shape_vec((self.n, self.n), gg).unwrap();
            if transmission < 0.5 {
                out.scaled_add(-self.beta5 / self.disc_area, &self.disc);
            }
            out
        });
        Ok(MtfEvaluation {
            value,
            mean_midband,
            mean_dissimilarity,
            penalty,
            transmission,
            gradient,
        })
    }

    /// Evaluate at `grid = sigmoid(temperature * theta)`; the gradient, if
    /// requested, is with respect to `theta`.
    pub fn evaluate(&self, theta: &Array2<f64>, temperature: f64, want_gradient: bool) -> Result<MtfEvaluation> {
        let grid = theta.mapv(|t| sigmoid(temperature * t));
        let mut ev = self.evaluate_grid(&grid, want_gradient)?;
        if let Some(g) = ev.gradient.as_mut() {
            Zip::from(g).and(&grid).for_each(|d, &s| *d *= temperature * s * (1.0 - s));
        }
        Ok(ev)
    }
}
