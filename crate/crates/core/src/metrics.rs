//! Depth, affine-invariant, image-quality and training-loss metrics.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mask::{mask_regularizer, MaskPattern};

pub const DEFAULT_DELTA_THRESHOLD: f64 = 1.05;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

const IRLS_TOLERANCE: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const L1_POLISH_POINTS: usize = 8;

fn same_shape<D: ndarray::Dimension>(a: &D, b: &D) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.slice(), b.slice())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub delta1: f64,
}

/// RMSE, MAE and the fraction of pixels with `max(p/g, g/p) < threshold`.
pub fn depth_metrics(pred: &Array2<f64>, gt: &Array2<f64>, delta_threshold: f64) -> Result<DepthMetrics> {
    same_shape(&pred.raw_dim(), &gt.raw_dim())?;
    ensure(!gt.is_empty(), || "empty depth maps".into())?;
    ensure(gt.iter().all(|&g| g > 0.0), || "ground-truth depth must be positive".into())?;
    let n = gt.len() as f64;
    let (mut sq, mut abs, mut hits) = (0.0, 0.0, 0usize);
    Zip::from(pred).and(gt).for_each(|&p, &g| {
        let d = p - g;
        sq += d * d;
        abs += d.abs();
        if (p / g).max(g / p) < delta_threshold {
            hits += 1;
        }
    });
    Ok(DepthMetrics {
        rmse_mm: (sq / n).sqrt(),
        mae_mm: abs / n,
        delta1: hits as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMetrics {
    pub ai1: f64,
    pub ai2: f64,
    pub one_minus_abs_spearman: f64,
    /// The prediction was constant, so the fits used a zero slope.
    pub degenerate: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn l1_cost(x: &[f64], y: &[f64], p: f64, q: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| (b - (p * a + q)).abs()).sum::<f64>() / x.len() as f64
}

/// Least squares `y ~ p x + q` with optional weights.
fn weighted_line(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Option<(f64, f64)> {
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..x.len()).map(wt).sum();
    let mx = (0..x.len()).map(|i| wt(i) * x[i]).sum::<f64>() / sw;
    let my = (0..x.len()).map(|i| wt(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..x.len()).map(|i| wt(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..x.len()).map(|i| wt(i) * (x[i] - mx) * (y[i] - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let p = sxy / sxx;
    Some((p, my - p * mx))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-absolute-deviation line by IRLS from the least-squares start,
/// polished by trying lines through pairs of the best-fitting points (an
/// optimal L1 line passes through two data points).
fn l1_line(x: &[f64], y: &[f64], start: (f64, f64)) -> (f64, f64) {
    let (mut p, mut q) = start;
    let mut w = vec![0.0; x.len()];
    for _ in 0..IRLS_MAX_ITER {
        for i in 0..x.len() {
            w[i] = 1.0 / (y[i] - (p * x[i] + q)).abs().max(1e-12);
        }
        let Some((np, nq)) = weighted_line(x, y, Some(&w)) else { break };
        let step = (np - p).abs() + (nq - q).abs();
        p = np;
        q = nq;
        if step < IRLS_TOLERANCE * (1.0 + p.abs() + q.abs()) {
            break;
        }
    }
    let mut best = (p, q, l1_cost(x, y, p, q));
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (y[a] - (p * x[a] + q)).abs();
        let rb = (y[b] - (p * x[b] + q)).abs();
        ra.total_cmp(&rb)
    });
    let near = &order[..order.len().min(L1_POLISH_POINTS)];
    for (i, &a) in near.iter().enumerate() {
        for &b in &near[i + 1..] {
            if x[a] == x[b] {
                continue;
            }
            let pp = (y[b] - y[a]) / (x[b] - x[a]);
            let qq = y[a] - pp * x[a];
            let c = l1_cost(x, y, pp, qq);
            if c < best.2 {
                best = (pp, qq, c);
            }
        }
    }
    (best.0, best.1)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Errors after the best affine map of `pred` onto `gt`: mean absolute
/// (`ai1`) and root mean square (`ai2`), plus `1 - |spearman|`.
pub fn affine_invariant_metrics(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<AffineMetrics> {
    same_shape(&pred.raw_dim(), &gt.raw_dim())?;
    ensure(pred.len() >= 2, || "need at least two pixels".into())?;
    ensure(pred.iter().chain(gt.iter()).all(|v| v.is_finite()), || "inputs must be finite".into())?;
    let x: Vec<f64> = pred.iter().copied().collect();
    let y: Vec<f64> = gt.iter().copied().collect();
    let rho = spearman(&x, &y);
    let (ai1, ai2, degenerate) = match weighted_line(&x, &y, None) {
        Some((p, q)) => {
            let ai2 = (x.iter().zip(&y).map(|(a, b)| (b - (p * a + q)).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            let (p1, q1) = l1_line(&x, &y, (p, q));
            (l1_cost(&x, &y, p1, q1), ai2, false)
        }
        None => {
            let my = mean(&y);
            let ai2 = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
            (l1_cost(&x, &y, 0.0, median(&y)), ai2, true)
        }
    };
    Ok(AffineMetrics {
        ai1,
        ai2,
        one_minus_abs_spearman: 1.0 - rho.abs(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// `+inf` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn psnr(pred: &Array3<f64>, gt: &Array3<f64>, peak: f64) -> Result<f64> {
    same_shape(&pred.raw_dim(), &gt.raw_dim())?;
    ensure(peak > 0.0, || format!("peak must be positive, got {peak}"))?;
    ensure(!gt.is_empty(), || "empty images".into())?;
    let mse = Zip::from(pred).and(gt).fold(0.0, |acc, &a, &b| acc + (a - b).powi(2)) / gt.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

fn gaussian_window() -> Array1<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g = Array1::from_shape_fn(SSIM_WINDOW, |i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s = g.sum();
    g / s
}

/// Separable valid-mode filtering with a symmetric 1D window.
fn filter_valid(img: &Array2<f64>, g: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = g.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(y, x)| {
        (0..n).map(|k| g[k] * img[[y, x + k]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(y, x)| {
        (0..n).map(|k| g[k] * rows[[y + k, x]]).sum::<f64>()
    })
}

/// Mean SSIM of one channel over all full windows.
pub fn ssim_channel(a: ArrayView2<f64>, b: ArrayView2<f64>, peak: f64) -> Result<f64> {
    same_shape(&a.raw_dim(), &b.raw_dim())?;
    let (h, w) = a.dim();
    ensure(h >= SSIM_WINDOW && w >= SSIM_WINDOW, || {
        format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")
    })?;
    let g = gaussian_window();
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter_valid(&a, &g);
    let mu_b = filter_valid(&b, &g);
    let aa = filter_valid(&(&a * &a), &g);
    let bb = filter_valid(&(&b * &b), &g);
    let ab = filter_valid(&(&a * &b), &g);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).for_each(|&ma, &mb, &saa, &sbb, &sab| {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    });
    Ok(total / mu_a.len() as f64)
}

pub fn ssim(pred: &Array3<f64>, gt: &Array3<f64>, peak: f64) -> Result<f64> {
    same_shape(&pred.raw_dim(), &gt.raw_dim())?;
    ensure(peak > 0.0, || format!("peak must be positive, got {peak}"))?;
    let mut total = 0.0;
    for (a, b) in pred.outer_iter().zip(gt.outer_iter()) {
        total += ssim_channel(a, b, peak)?;
    }
    Ok(total / pred.shape()[0] as f64)
}

pub fn image_metrics(pred: &Array3<f64>, gt: &Array3<f64>, peak: f64) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        psnr_db: psnr(pred, gt, peak)?,
        ssim: ssim(pred, gt, peak)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 1.0,
            beta2: 0.5,
            beta3: 1.0,
            beta4: 0.5,
            beta5: 1e3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta1, self.beta2, self.beta3, self.beta4, self.beta5];
        ensure(all.iter().all(|b| b.is_finite() && *b >= 0.0), || {
            format!("loss weights must be finite and non-negative: {all:?}")
        })
    }
}

/// Forward differences with replicate boundary: the last column of `gx` and
/// the last row of `gy` are zero.
pub fn forward_gradient(img: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    if w > 1 {
        let d = &img.slice(s![.., 1..]) - &img.slice(s![.., ..w - 1]);
        gx.slice_mut(s![.., ..w - 1]).assign(&d);
    }
    if h > 1 {
        let d = &img.slice(s![1.., ..]) - &img.slice(s![..h - 1, ..]);
        gy.slice_mut(s![..h - 1, ..]).assign(&d);
    }
    (gx, gy)
}

fn mean_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    Zip::from(&a).and(&b).fold(0.0, |acc, &x, &y| acc + (x - y).abs()) / a.len() as f64
}

/// `mean |pred - gt|` plus `weight_grad` times the mean absolute gradient
/// difference along each axis, averaged over channels.
fn l1_with_gradient<'a>(
    pred: impl Iterator<Item = ArrayView2<'a, f64>>,
    gt: impl Iterator<Item = ArrayView2<'a, f64>>,
    w_value: f64,
    w_grad: f64,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (p, g) in pred.zip(gt) {
        let (pgx, pgy) = forward_gradient(p);
        let (ggx, ggy) = forward_gradient(g);
        total += w_value * mean_abs_diff(p, g)
            + w_grad * (mean_abs_diff(pgx.view(), ggx.view()) + mean_abs_diff(pgy.view(), ggy.view()));
        n += 1;
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingLoss {
    pub total: f64,
    pub l_aif: f64,
    pub l_defocus: f64,
    pub l_mask: f64,
}

/// Image term, defocus term and light-budget hinge.
pub fn training_loss_with_transmission(
    pred_aif: &Array3<f64>,
    gt_aif: &Array3<f64>,
    pred_defocus: &Array2<f64>,
    gt_defocus: &Array2<f64>,
    transmission: f64,
    w: &LossWeights,
) -> Result<TrainingLoss> {
    w.validate()?;
    same_shape(&pred_aif.raw_dim(), &gt_aif.raw_dim())?;
    same_shape(&pred_defocus.raw_dim(), &gt_defocus.raw_dim())?;
    ensure(!gt_aif.is_empty() && !gt_defocus.is_empty(), || "empty inputs".into())?;
    let l_aif = l1_with_gradient(pred_aif.outer_iter(), gt_aif.outer_iter(), w.beta1, w.beta2);
    let l_defocus = l1_with_gradient(
        std::iter::once(pred_defocus.view()),
        std::iter::once(gt_defocus.view()),
        w.beta3,
        w.beta4,
    );
    let l_mask = mask_regularizer(transmission, w.beta5);
    Ok(TrainingLoss {
        total: l_aif + l_defocus + l_mask,
        l_aif,
        l_defocus,
        l_mask,
    })
}

pub fn training_loss(
    pred_aif: &Array3<f64>,
    gt_aif: &Array3<f64>,
    pred_defocus: &Array2<f64>,
    gt_defocus: &Array2<f64>,
    mask: &MaskPattern,
    w: &LossWeights,
) -> Result<TrainingLoss> {
    training_loss_with_transmission(pred_aif, gt_aif, pred_defocus, gt_defocus, mask.transmission(), w)
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub name: String,
    #[serde(with = "float_sentinel")]
    pub rmse: f64,
    #[serde(with = "float_sentinel")]
    pub mae: f64,
    #[serde(with = "float_sentinel")]
    pub delta1: f64,
    #[serde(with = "float_sentinel")]
    pub ai1: f64,
    #[serde(with = "float_sentinel")]
    pub ai2: f64,
    #[serde(with = "float_sentinel")]
    pub spearman: f64,
    #[serde(with = "float_sentinel")]
    pub psnr: f64,
    #[serde(with = "float_sentinel")]
    pub ssim: f64,
}

impl SceneReport {
    fn fields(&self) -> [f64; 8] {
        [self.rmse, self.mae, self.delta1, self.ai1, self.ai2, self.spearman, self.psnr, self.ssim]
    }

    /// Field-wise mean, named `aggregate`.
    pub fn aggregate(reports: &[SceneReport]) -> Result<SceneReport> {
        ensure(!reports.is_empty(), || "nothing to aggregate".into())?;
        let mut acc = [0.0; 8];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.fields()) {
                *a += v;
            }
        }
        let n = reports.len() as f64;
        let m = acc.map(|v| v / n);
        Ok(SceneReport {
            name: "aggregate".into(),
            rmse: m[0],
            mae: m[1],
            delta1: m[2],
            ai1: m[3],
            ai2: m[4],
            spearman: m[5],
            psnr: m[6],
            ssim: m[7],
        })
    }
}

/// Scores one scene. `spearman` holds `1 - |rank correlation|` between the
/// predicted and true depth; images are compared with peak 1.
pub fn scene_report(
    name: &str,
    pred_depth: &Array2<f64>,
    gt_depth: &Array2<f64>,
    pred_aif: &Array3<f64>,
    gt_aif: &Array3<f64>,
) -> Result<SceneReport> {
    let d = depth_metrics(pred_depth, gt_depth, DEFAULT_DELTA_THRESHOLD)?;
    let a = affine_invariant_metrics(pred_depth, gt_depth)?;
    let i = image_metrics(pred_aif, gt_aif, 1.0)?;
    Ok(SceneReport {
        name: name.to_string(),
        rmse: d.rmse_mm,
        mae: d.mae_mm,
        delta1: d.delta1,
        ai1: a.ai1,
        ai2: a.ai2,
        spearman: a.one_minus_abs_spearman,
        psnr: i.psnr_db,
        ssim: i.ssim,
    })
}

/// Non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod float_sentinel {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("bad float sentinel {other:?}"))),
            },
        }
    }
}
