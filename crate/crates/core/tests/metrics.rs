use codedpix::metrics::*;
use codedpix::MaskPattern;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random_range(lo..hi))
}

#[test]
fn depth_metrics_match_scalar_loops() {
    let gt = random_grid(1, 7, 9, 300.0, 600.0);
    let pred = &gt + &random_grid(2, 7, 9, -40.0, 40.0);
    let m = depth_metrics(&pred, &gt, 1.05).unwrap();
    let (mut sq, mut ab, mut hit) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt.iter()) {
        sq += (p - g) * (p - g);
        ab += (p - g).abs();
        if (p / g).max(g / p) < 1.05 {
            hit += 1.0;
        }
    }
    let n = gt.len() as f64;
    assert!((m.rmse_mm - (sq / n).sqrt()).abs() < 1e-12);
    assert!((m.mae_mm - ab / n).abs() < 1e-12);
    assert_eq!(m.delta1, hit / n);
}

#[test]
fn depth_metrics_reject_bad_input() {
    let gt = Array2::from_elem((3, 3), 400.0);
    assert!(depth_metrics(&Array2::zeros((3, 4)), &gt, 1.05).is_err());
    let mut bad = gt.clone();
    bad[[1, 1]] = 0.0;
    assert!(depth_metrics(&gt, &bad, 1.05).is_err());
}

#[test]
fn ties_share_average_rank() {
    assert_eq!(average_ranks(&[3.0, 1.0, 2.0, 2.0]), vec![4.0, 1.0, 2.5, 2.5]);
    assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
}

/// Spearman as Pearson correlation of average ranks, computed by hand.
fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_matches_rank_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let a: Vec<f64> = (0..15).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..15).map(|_| rng.random_range(0..6) as f64).collect();
        assert!((spearman(&a, &b) - spearman_oracle(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn reversed_order_is_perfectly_ranked() {
    let gt = random_grid(5, 4, 4, 1.0, 2.0);
    let m = affine_invariant_metrics(&gt.mapv(|v| -v.powi(3)), &gt).unwrap();
    assert!(m.one_minus_abs_spearman.abs() < 1e-12);
}

#[test]
fn constant_prediction_is_degenerate() {
    let gt = random_grid(6, 4, 4, 1.0, 2.0);
    let m = affine_invariant_metrics(&Array2::from_elem((4, 4), 3.0), &gt).unwrap();
    assert!(m.degenerate);
    let y: Vec<f64> = gt.iter().copied().collect();
    let mean = y.iter().sum::<f64>() / 16.0;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0).sqrt();
    assert!((m.ai2 - sd).abs() < 1e-12);
}

/// Exact L1 affine fit by enumerating lines through pairs of points.
fn l1_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if x[i] != x[j] {
                let p = (y[j] - y[i]) / (x[j] - x[i]);
                let q = y[i] - p * x[i];
                best = best.min(x.iter().zip(y).map(|(a, b)| (b - p * a - q).abs()).sum::<f64>() / x.len() as f64);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_metrics_ignore_affine_reparameterization(seed in 0u64..1000, p in 0.1f64..5.0, neg in any::<bool>(), q in -100.0f64..100.0) {
        let gt = random_grid(seed, 4, 5, 0.0, 10.0);
        let pred = random_grid(seed + 1, 4, 5, 0.0, 10.0);
        let p = if neg { -p } else { p };
        let a = affine_invariant_metrics(&pred, &gt).unwrap();
        let b = affine_invariant_metrics(&pred.mapv(|v| p * v + q), &gt).unwrap();
        prop_assert!((a.ai1 - b.ai1).abs() < 1e-7 * (1.0 + a.ai1));
        prop_assert!((a.ai2 - b.ai2).abs() < 1e-9 * (1.0 + a.ai2));
        prop_assert!((a.one_minus_abs_spearman - b.one_minus_abs_spearman).abs() < 1e-12);
    }

    #[test]
    fn ai1_reaches_the_exact_l1_fit(seed in 0u64..1000) {
        let gt = random_grid(seed, 3, 4, -1.0, 1.0);
        let pred = random_grid(seed + 7, 3, 4, -1.0, 1.0);
        let x: Vec<f64> = pred.iter().copied().collect();
        let y: Vec<f64> = gt.iter().copied().collect();
        let m = affine_invariant_metrics(&pred, &gt).unwrap();
        prop_assert!((m.ai1 - l1_oracle(&x, &y)).abs() < 1e-9);
        prop_assert!(m.ai1 <= m.ai2 + 1e-12);
    }
}

#[test]
fn psnr_of_constant_offset() {
    let gt = Array3::from_elem((2, 5, 5), 0.5);
    assert!((psnr(&(&gt + 0.1), &gt, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&gt, &gt, 1.0).unwrap(), f64::INFINITY);
}

/// SSIM by explicit windows: Gaussian weights, valid positions only.
fn ssim_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = 11usize;
    let mut g = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = a.dim();
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wgt = g[i][j] / s;
                    let (va, vb) = (a[[y + i, x + j]], b[[y + i, x + j]]);
                    ma += wgt * va;
                    mb += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let (sa, sb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn ssim_matches_window_loop() {
    let a = random_grid(8, 19, 23, 0.0, 1.0);
    let b = (&a * 0.7) + &random_grid(9, 19, 23, 0.0, 0.3);
    let got = ssim_channel(a.view(), b.view(), 1.0).unwrap();
    assert!((got - ssim_oracle(&a, &b)).abs() < 1e-12);
    assert!((ssim_channel(a.view(), a.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim_channel(a.slice(ndarray::s![..10, ..]), a.slice(ndarray::s![..10, ..]), 1.0).is_err());
}

#[test]
fn loss_terms_follow_their_definitions() {
    let gt = Array3::from_shape_fn((2, 6, 6), |(c, y, x)| (c + y * x) as f64 * 0.01);
    let pred = &gt + 0.05;
    let gd = random_grid(3, 6, 6, -1.0, 1.0);
    let pd = &gd * 2.0;
    let w = LossWeights::default();
    let l = training_loss_with_transmission(&pred, &gt, &pd, &gd, 0.4, &w).unwrap();
    // A constant offset leaves gradients unchanged.
    assert!((l.l_aif - 0.05).abs() < 1e-12);
    let (gx, gy) = forward_gradient(gd.view());
    let oracle = w.beta3 * gd.mapv(f64::abs).mean().unwrap()
        + w.beta4 * (gx.mapv(f64::abs).mean().unwrap() + gy.mapv(f64::abs).mean().unwrap());
    assert!((l.l_defocus - oracle).abs() < 1e-12);
    assert!((l.l_mask - 100.0).abs() < 1e-9);
    assert!((l.total - (l.l_aif + l.l_defocus + l.l_mask)).abs() < 1e-12);

    let open = MaskPattern::open(21);
    let l = training_loss(&gt, &gt, &gd, &gd, &open, &w).unwrap();
    assert_eq!(l.total, 0.0);
}

#[test]
fn forward_gradient_of_a_ramp() {
    let ramp = Array2::from_shape_fn((4, 5), |(y, x)| 2.0 * x as f64 + 3.0 * y as f64);
    let (gx, gy) = forward_gradient(ramp.view());
    for ((y, x), &v) in gx.indexed_iter() {
        assert_eq!(v, if x < 4 { 2.0 } else { 0.0 }, "gx at {y},{x}");
    }
    for ((y, _), &v) in gy.indexed_iter() {
        assert_eq!(v, if y < 3 { 3.0 } else { 0.0 });
    }
}

#[test]
fn negative_weights_are_rejected() {
    let w = LossWeights { beta2: -1.0, ..LossWeights::default() };
    let a = Array3::zeros((1, 3, 3));
    let d = Array2::zeros((3, 3));
    assert!(training_loss_with_transmission(&a, &a, &d, &d, 1.0, &w).is_err());
}

#[test]
fn aggregate_is_the_field_mean_and_survives_json() {
    let gt_depth = random_grid(10, 16, 16, 300.0, 500.0);
    let img = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| ((y * 16 + x) % 7) as f64 / 7.0);
    let a = scene_report("a", &gt_depth, &gt_depth, &img, &img).unwrap();
    let b = scene_report("b", &(&gt_depth * 1.02), &gt_depth, &(&img * 0.9), &img).unwrap();
    let agg = SceneReport::aggregate(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(agg.name, "aggregate");
    assert!((agg.rmse - (a.rmse + b.rmse) / 2.0).abs() < 1e-12);
    assert!((agg.ssim - (a.ssim + b.ssim) / 2.0).abs() < 1e-12);
    assert_eq!(a.psnr, f64::INFINITY);
    let text = serde_json::to_string(&a).unwrap();
    assert!(text.contains("\"psnr\":\"inf\""));
    let back: SceneReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, a);
    assert!(SceneReport::aggregate(&[]).is_err());
}
