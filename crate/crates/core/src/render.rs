//! Multiplane scene representation and dual-pixel image formation.

use std::sync::Arc;

use log::warn;
use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraConfig;
use crate::conv::{convolve_direct, Convolver, Spectrum, DIRECT_TAP_LIMIT};
use crate::error::{ensure, Error, Result};
use crate::psf::{PsfStack, Side};
use crate::registry::Registry;

/// Normalizer values below this make a layer's contribution zero.
pub const NORMALIZER_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MpiLayer {
    /// `C x H x W` intensity, zero outside the layer.
    pub intensity: Array3<f64>,
    /// `H x W` binary occupancy.
    pub alpha: Array2<f64>,
}

/// A scene split into fronto-parallel layers, one per stack plane in
/// order of increasing signed blur. Negative blur is in front of the focus
/// plane, so layer 0 is the nearest and higher indices lie farther away.
#[derive(Debug, Clone, PartialEq)]
pub struct MpiScene {
    layers: Vec<MpiLayer>,
    clamped_pixels: usize,
}

impl MpiScene {
    pub fn new(layers: Vec<MpiLayer>) -> Result<Self> {
        ensure(!layers.is_empty(), || "scene needs at least one layer".into())?;
        let (c, h, w) = layers[0].intensity.dim();
        ensure(c == 1 || c == 3, || format!("scenes have 1 or 3 channels, got {c}"))?;
        let mut coverage = Array2::<f64>::zeros((h, w));
        for (i, l) in layers.iter().enumerate() {
            if l.intensity.dim() != (c, h, w) || l.alpha.dim() != (h, w) {
                return Err(Error::Shape(format!("layer {i} does not match {c}x{h}x{w}")));
            }
            ensure(l.alpha.iter().all(|&a| a == 0.0 || a == 1.0), || {
                format!("layer {i} alpha is not binary")
            })?;
            for ch in l.intensity.outer_iter() {
                let ok = Zip::from(&ch)
                    .and(&l.alpha)
                    .all(|&v, &a| v.is_finite() && v >= 0.0 && (a == 1.0 || v == 0.0));
                ensure(ok, || {
                    format!("layer {i} intensity must be non-negative and zero outside its alpha")
                })?;
            }
            coverage += &l.alpha;
        }
        ensure(coverage.iter().all(|&s| s == 1.0), || {
            "layer alphas must partition the image".into()
        })?;
        Ok(MpiScene {
            layers,
            clamped_pixels: 0,
        })
    }

    /// Whole image on a single layer out of `num_layers`.
    pub fn fronto_parallel(intensity: Array3<f64>, layer: usize, num_layers: usize) -> Result<Self> {
        ensure(layer < num_layers, || format!("layer {layer} out of {num_layers}"))?;
        let (c, h, w) = intensity.dim();
        let layers = (0..num_layers)
            .map(|k| {
                if k == layer {
                    MpiLayer {
                        intensity: intensity.clone(),
                        alpha: Array2::ones((h, w)),
                    }
                } else {
                    MpiLayer {
                        intensity: Array3::zeros((c, h, w)),
                        alpha: Array2::zeros((h, w)),
                    }
                }
            })
            .collect();
        MpiScene::new(layers)
    }

    pub fn layers(&self) -> &[MpiLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(channels, height, width)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.layers[0].intensity.dim()
    }

    /// Pixels whose depth fell outside the stack's blur range and were
    /// assigned to the nearest end plane.
    pub fn clamped_pixels(&self) -> usize {
        self.clamped_pixels
    }

    /// The sharp (all-in-focus) image.
    pub fn composite(&self) -> Array3<f64> {
        let mut out = Array3::zeros(self.dim());
        for l in &self.layers {
            out += &l.intensity;
        }
        out
    }

    /// Index of the layer owning each pixel.
    pub fn layer_index_map(&self) -> Array2<usize> {
        let (_, h, w) = self.dim();
        let mut idx = Array2::zeros((h, w));
        for (k, l) in self.layers.iter().enumerate() {
            Zip::from(&mut idx).and(&l.alpha).for_each(|i, &a| {
                if a == 1.0 {
                    *i = k
                }
            });
        }
        idx
    }
}

/// Index of the plane whose signed blur is nearest `blur`; the first of
/// equally near planes wins.
pub fn nearest_plane(blurs: &[f64], blur: f64) -> usize {
    let mut best = 0;
    for (i, b) in blurs.iter().enumerate() {
        if (b - blur).abs() < (blurs[best] - blur).abs() {
            best = i;
        }
    }
    best
}

/// Quantize an RGB-D image into the stack's depth planes.
pub fn build_mpi(
    intensity: &Array3<f64>,
    depth_mm: &Array2<f64>,
    camera: &CameraConfig,
    stack: &PsfStack,
) -> Result<MpiScene> {
    camera.validate()?;
    let (c, h, w) = intensity.dim();
    if depth_mm.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "depth map is {:?}, image is {h}x{w}",
            depth_mm.dim()
        )));
    }
    ensure(depth_mm.iter().all(|z| z.is_finite() && *z > 0.0), || {
        "depth values must be positive and finite".into()
    })?;
    let blurs = stack.blurs();
    let tol = 1e-9 * stack.max_blur_px().max(1.0);
    let (lo, hi) = (blurs[0] - tol, blurs[blurs.len() - 1] + tol);
    let mut clamped = 0usize;
    let index = depth_mm.mapv(|z| {
        let b = camera.blur_px_at_depth(z);
        if b < lo || b > hi {
            clamped += 1;
        }
        nearest_plane(&blurs, b)
    });
    if clamped > 0 {
        warn!("{clamped} pixels outside the stack's depth range were clamped");
    }
    let layers = (0..blurs.len())
        .map(|k| {
            let alpha = index.mapv(|i| if i == k { 1.0 } else { 0.0 });
            let mut layer = intensity.clone();
            for mut ch in layer.outer_iter_mut() {
                ch.zip_mut_with(&alpha, |v, &a| *v *= a);
            }
            MpiLayer { intensity: layer, alpha }
        })
        .collect();
    debug_assert_eq!(c, intensity.len_of(Axis(0)));
    let mut scene = MpiScene::new(layers)?;
    scene.clamped_pixels = clamped;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub a: f64,
    pub b: f64,
    pub seed: u64,
}

/// Left and right dual-pixel images, `C x H x W` each.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPixelCapture {
    pub left: Array3<f64>,
    pub right: Array3<f64>,
    pub noise: Option<NoiseParams>,
}

impl DualPixelCapture {
    pub fn new(left: Array3<f64>, right: Array3<f64>) -> Result<Self> {
        if left.dim() != right.dim() {
            return Err(Error::Shape(format!(
                "left {:?} and right {:?} differ",
                left.dim(),
                right.dim()
            )));
        }
        Ok(DualPixelCapture {
            left,
            right,
            noise: None,
        })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.left.dim()
    }

    pub fn view(&self, side: Side) -> &Array3<f64> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// `left + right`, the image a conventional pixel would record.
    pub fn combined(&self) -> Array3<f64> {
        &self.left + &self.right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Direct for sparse kernels, FFT otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Convolves a set of same-sized images with one plane's kernels, sharing
/// image spectra across kernels.
struct PlaneConv<'a> {
    mode: ConvMode,
    convolver: &'a Convolver,
}

impl PlaneConv<'_> {
    fn use_direct(&self, kernel: &Array2<f64>) -> bool {
        match self.mode {
            ConvMode::Direct => true,
            ConvMode::Fft => false,
            ConvMode::Auto => kernel.iter().filter(|v| **v != 0.0).count() <= DIRECT_TAP_LIMIT,
        }
    }

    fn run(&self, images: &[ArrayView2<f64>], kernel: &Array2<f64>, cache: &mut Option<Vec<Spectrum>>) -> Vec<Array2<f64>> {
        if self.use_direct(kernel) {
            return images.iter().map(|im| convolve_direct(*im, kernel.view())).collect();
        }
        let spectra = cache.get_or_insert_with(|| {
            images.iter().map(|im| self.convolver.spectrum(*im)).collect()
        });
        let ks = self.convolver.spectrum(kernel.view());
        spectra.iter().map(|sp| self.convolver.apply(sp, &ks)).collect()
    }
}

fn check_scene_stack(scene: &MpiScene, stack: &PsfStack) -> Result<()> {
    if scene.num_layers() != stack.len() {
        return Err(Error::Shape(format!(
            "scene has {} layers, stack has {} planes",
            scene.num_layers(),
            stack.len()
        )));
    }
    Ok(())
}

fn channel_views(img: &Array3<f64>) -> Vec<ArrayView2<'_, f64>> {
    img.outer_iter().collect()
}

fn stack_channels(chs: Vec<Array2<f64>>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let mut out = Array3::zeros((c, h, w));
    for (i, ch) in chs.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&ch);
    }
    out
}

/// Linear layered render: each view is the sum over planes of the layer
/// intensity convolved with that plane's kernel. No occlusion handling.
pub fn render_simple_with(scene: &MpiScene, stack: &PsfStack, mode: ConvMode) -> Result<DualPixelCapture> {
    check_scene_stack(scene, stack)?;
    let (c, h, w) = scene.dim();
    let e = stack.extent();
    let convolver = Convolver::new(h, w, e, e);
    let pc = PlaneConv { mode, convolver: &convolver };
    let per_plane: Vec<Option<(Array3<f64>, Array3<f64>)>> = scene
        .layers()
        .par_iter()
        .zip(stack.planes().par_iter())
        .map(|(layer, plane)| {
            if layer.alpha.iter().all(|&a| a == 0.0) {
                return None;
            }
            let imgs = channel_views(&layer.intensity);
            let mut cache = None;
            let l = pc.run(&imgs, &plane.left, &mut cache);
            let r = pc.run(&imgs, &plane.right, &mut cache);
            Some((stack_channels(l, c, h, w), stack_channels(r, c, h, w)))
        })
        .collect();
    let mut left = Array3::zeros((c, h, w));
    let mut right = Array3::zeros((c, h, w));
    for (l, r) in per_plane.into_iter().flatten() {
        left += &l;
        right += &r;
    }
    DualPixelCapture::new(left, right)
}

pub fn render_simple(scene: &MpiScene, stack: &PsfStack) -> Result<DualPixelCapture> {
    render_simple_with(scene, stack, ConvMode::Auto)
}

fn max_pool3(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let ys = y.saturating_sub(1)..(y + 2).min(h);
        let xs = x.saturating_sub(1)..(x + 2).min(w);
        a.slice(s![ys, xs]).fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    })
}

/// Soften the binary layer alphas before occlusion-aware compositing: a 3x3
/// max-pool per layer, then every occupied pixel of a layer is averaged with
/// the same pixel of the next nearer layer (index `i - 1`), then alphas are
/// renormalized to sum to one per pixel.
pub fn preprocess_alphas(scene: &MpiScene) -> Vec<Array2<f64>> {
    let pooled: Vec<Array2<f64>> = scene.layers().par_iter().map(|l| max_pool3(&l.alpha)).collect();
    let k = pooled.len();
    let (_, h, w) = scene.dim();
    let zero = Array2::zeros((h, w));
    let mut blended: Vec<Array2<f64>> = (0..k)
        .map(|i| {
            let nearer = if i > 0 { &pooled[i - 1] } else { &zero };
            let mut b = pooled[i].clone();
            Zip::from(&mut b).and(nearer).for_each(|v, &n| {
                if *v > 0.0 {
                    *v = 0.5 * (*v + n);
                }
            });
            b
        })
        .collect();
    let mut total = Array2::<f64>::zeros((h, w));
    for b in &blended {
        total += b;
    }
    for b in &mut blended {
        Zip::from(b).and(&total).for_each(|v, &t| *v /= t);
    }
    blended
}

/// Occlusion-aware layered render. Layers are composited back to front
/// (highest index first); each layer's blurred intensity is divided by the
/// blurred occupancy of itself and everything behind it, and attenuated by
/// the blurred occupancy of all nearer layers.
/// Kernels enter the normalizers with unit sum, so light removed by the
/// aperture code or split between the two views is preserved in the output.
pub fn render_occlusion_aware_with(scene: &MpiScene, stack: &PsfStack, mode: ConvMode) -> Result<DualPixelCapture> {
    check_scene_stack(scene, stack)?;
    let (c, h, w) = scene.dim();
    let k = scene.num_layers();
    let alphas = preprocess_alphas(scene);
    let sharp = scene.composite();
    // cumulative[i]: occupancy of layer i and every layer behind it
    let mut cumulative = vec![Array2::<f64>::zeros((h, w)); k];
    let mut acc = Array2::<f64>::zeros((h, w));
    for i in (0..k).rev() {
        acc += &alphas[i];
        cumulative[i] = acc.clone();
    }
    let e = stack.extent();
    let convolver = Convolver::new(h, w, e, e);
    let pc = PlaneConv { mode, convolver: &convolver };

    // per plane and view: (blurred intensity / E, 1 - blurred alpha / E)
    type Terms = (Array3<f64>, Array2<f64>);
    let per_plane: Vec<Option<[Terms; 2]>> = (0..k)
        .into_par_iter()
        .map(|i| {
            if alphas[i].iter().all(|&a| a == 0.0) {
                return None;
            }
            let mut layer = sharp.clone();
            for mut ch in layer.outer_iter_mut() {
                ch.zip_mut_with(&alphas[i], |v, &a| *v *= a);
            }
            let mut images = channel_views(&layer);
            images.push(alphas[i].view());
            images.push(cumulative[i].view());
            let mut cache = None;
            let plane = &stack.planes()[i];
            let out = [Side::Left, Side::Right].map(|side| {
                let kernel = plane.kernel(side);
                let energy = kernel.sum();
                if !(energy > 0.0) {
                    return (Array3::zeros((c, h, w)), Array2::ones((h, w)));
                }
                let mut conv = pc.run(&images, kernel, &mut cache);
                let norm = conv.pop().unwrap().mapv(|v| v / energy);
                let occ = conv.pop().unwrap().mapv(|v| v / energy);
                let mut term = stack_channels(conv, c, h, w);
                for mut ch in term.outer_iter_mut() {
                    Zip::from(&mut ch).and(&norm).for_each(|v, &n| {
                        *v = if n < NORMALIZER_EPS { 0.0 } else { *v / n };
                    });
                }
                let transmit = Zip::from(&occ)
                    .and(&norm)
                    .map_collect(|&o, &n| if n < NORMALIZER_EPS { 1.0 } else { (1.0 - o / n).clamp(0.0, 1.0) });
                (term, transmit)
            });
            Some(out)
        })
        .collect();

    let mut views = [Array3::<f64>::zeros((c, h, w)), Array3::<f64>::zeros((c, h, w))];
    for (v, out) in views.iter_mut().enumerate() {
        let mut through = Array2::<f64>::ones((h, w));
        // front to back, accumulating the transmission of nearer layers
        for terms in per_plane.iter().flatten() {
            let (term, transmit) = &terms[v];
            for (mut o, t) in out.outer_iter_mut().zip(term.outer_iter()) {
                Zip::from(&mut o).and(&t).and(&through).for_each(|o, &t, &p| *o += t * p);
            }
            through *= transmit;
        }
    }
    let [left, right] = views;
    DualPixelCapture::new(left, right)
}

pub fn render_occlusion_aware(scene: &MpiScene, stack: &PsfStack) -> Result<DualPixelCapture> {
    render_occlusion_aware_with(scene, stack, ConvMode::Auto)
}

/// Add signal-dependent Gaussian noise with variance `a * x + b`,
/// independently to each view. Results are clamped at zero.
pub fn add_noise(capture: &DualPixelCapture, a: f64, b: f64, seed: u64) -> Result<DualPixelCapture> {
    ensure(a.is_finite() && a >= 0.0, || format!("noise parameter a must be >= 0, got {a}"))?;
    ensure(b.is_finite() && b >= 0.0, || format!("noise parameter b must be >= 0, got {b}"))?;
    if capture.noise.is_some() {
        return Err(Error::State("capture already carries noise".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = capture.clone();
    if a > 0.0 || b > 0.0 {
        for img in [&mut out.left, &mut out.right] {
            for v in img.iter_mut() {
                let sd = (a * v.max(0.0) + b).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v + sd * z).max(0.0);
            }
        }
    }
    out.noise = Some(NoiseParams { a, b, seed });
    Ok(out)
}

/// Uniformly pick one of `count` stacks for the given seed.
pub fn sample_stack_index(count: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..count)
}

/// Render with one of several calibrated stacks, drawn uniformly by seed.
pub fn render_with_psf_sampling(scene: &MpiScene, stacks: &[PsfStack], seed: u64) -> Result<DualPixelCapture> {
    ensure(!stacks.is_empty(), || "need at least one PSF stack".into())?;
    ensure(stacks.iter().all(|s| s.same_geometry(&stacks[0])), || {
        "all sampled stacks must share plane blurs and extent".into()
    })?;
    let i = sample_stack_index(stacks.len(), seed);
    render_occlusion_aware(scene, &stacks[i])
}

/// An image-formation model selectable by name.
pub trait Renderer: Send + Sync {
    fn describe(&self) -> &'static str;
    fn render(&self, scene: &MpiScene, stack: &PsfStack) -> Result<DualPixelCapture>;
}

pub struct SimpleRenderer(pub ConvMode);

impl Renderer for SimpleRenderer {
    fn describe(&self) -> &'static str {
        "linear sum of per-layer convolutions"
    }
    fn render(&self, scene: &MpiScene, stack: &PsfStack) -> Result<DualPixelCapture> {
        render_simple_with(scene, stack, self.0)
    }
}

pub struct OcclusionAwareRenderer(pub ConvMode);

impl Renderer for OcclusionAwareRenderer {
    fn describe(&self) -> &'static str {
        "back-to-front compositing with normalized occlusion"
    }
    fn render(&self, scene: &MpiScene, stack: &PsfStack) -> Result<DualPixelCapture> {
        render_occlusion_aware_with(scene, stack, self.0)
    }
}

pub fn renderers() -> Registry<dyn Renderer> {
    Registry::<dyn Renderer>::new("renderer")
        .with("simple", Arc::new(SimpleRenderer(ConvMode::Auto)))
        .with("occlusion_aware", Arc::new(OcclusionAwareRenderer(ConvMode::Auto)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::{generate_psf_stack, DpPsfModelParams};
    use rand::Rng;

    fn small_camera() -> CameraConfig {
        CameraConfig {
            num_planes: 5,
            max_blur_px: 8.0,
            ..Default::default()
        }
    }

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn scene_validation() {
        let img = random_image(1, 1, 4, 4);
        let mut bad = MpiScene::fronto_parallel(img.clone(), 0, 2).unwrap().layers;
        bad[1].alpha[[0, 0]] = 1.0;
        assert!(MpiScene::new(bad).is_err());
        let mut leak = MpiScene::fronto_parallel(img, 0, 2).unwrap().layers;
        leak[1].intensity[[0, 0, 0]] = 0.3;
        assert!(MpiScene::new(leak).is_err());
    }

    #[test]
    fn build_mpi_at_focus_is_single_layer() {
        let cam = CameraConfig::default();
        let stack = generate_psf_stack(&cam, &DpPsfModelParams::default()).unwrap();
        let img = random_image(2, 3, 8, 8);
        let depth = Array2::from_elem((8, 8), cam.focus_distance_mm);
        let scene = build_mpi(&img, &depth, &cam, &stack).unwrap();
        for (k, l) in scene.layers().iter().enumerate() {
            let occupied = l.alpha.sum();
            assert_eq!(occupied, if k == 10 { 64.0 } else { 0.0 });
        }
        assert_eq!(scene.composite(), img);
    }

    #[test]
    fn build_mpi_extremes_and_clamping() {
        let cam = CameraConfig::default();
        let stack = generate_psf_stack(&cam, &DpPsfModelParams::default()).unwrap();
        let img = random_image(3, 1, 4, 8);
        let near = cam.depth_at_blur_px(-40.0);
        let far = cam.depth_at_blur_px(40.0);
        let depth = Array2::from_shape_fn((4, 8), |(_, x)| if x < 4 { near } else { far });
        let scene = build_mpi(&img, &depth, &cam, &stack).unwrap();
        let occupied: Vec<usize> = scene
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.alpha.sum() > 0.0)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(occupied, vec![0, 20]);
        assert_eq!(scene.clamped_pixels(), 0);

        let depth = Array2::from_elem((4, 8), 250.0);
        let scene = build_mpi(&img, &depth, &cam, &stack).unwrap();
        assert_eq!(scene.clamped_pixels(), 32);
        assert_eq!(scene.layers()[0].alpha.sum(), 32.0);
        assert!(build_mpi(&img, &Array2::zeros((4, 8)), &cam, &stack).is_err());
        assert!(build_mpi(&img, &Array2::from_elem((3, 8), 400.0), &cam, &stack).is_err());
    }

    #[test]
    fn in_focus_render_splits_intensity() {
        let cam = small_camera();
        let stack = generate_psf_stack(&cam, &DpPsfModelParams::default()).unwrap();
        let img = random_image(4, 3, 12, 12);
        let scene = MpiScene::fronto_parallel(img.clone(), 2, 5).unwrap();
        let cap = render_simple(&scene, &stack).unwrap();
        assert_eq!(cap.left, &img * 0.5);
        assert_eq!(cap.right, &img * 0.5);
        let occ = render_occlusion_aware(&scene, &stack).unwrap();
        let diff = (&occ.combined() - &img).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-6);
    }

    #[test]
    fn fft_render_matches_direct() {
        let cam = small_camera();
        let stack = generate_psf_stack(&cam, &DpPsfModelParams::default()).unwrap();
        let img = random_image(5, 1, 32, 32);
        let depth_blur = Array2::from_shape_fn((32, 32), |(y, x)| ((x + y) % 5) as f64 * 4.0 - 8.0);
        let depth = depth_blur.mapv(|b| cam.depth_at_blur_px(b));
        let scene = build_mpi(&img, &depth, &cam, &stack).unwrap();
        let a = render_simple_with(&scene, &stack, ConvMode::Fft).unwrap();
        let b = render_simple_with(&scene, &stack, ConvMode::Direct).unwrap();
        let diff = (&a.left - &b.left).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-9, "{diff}");
        let a = render_occlusion_aware_with(&scene, &stack, ConvMode::Fft).unwrap();
        let b = render_occlusion_aware_with(&scene, &stack, ConvMode::Direct).unwrap();
        let diff = (&a.right - &b.right).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn single_layer_alphas_unchanged() {
        let img = random_image(6, 1, 6, 6);
        let scene = MpiScene::fronto_parallel(img, 1, 3).unwrap();
        let a = preprocess_alphas(&scene);
        assert_eq!(a[1], Array2::<f64>::ones((6, 6)));
        assert_eq!(a[0], Array2::<f64>::zeros((6, 6)));
        assert_eq!(a[2], Array2::<f64>::zeros((6, 6)));
    }

    #[test]
    fn seam_alphas_hand_computed() {
        // far layer on columns 0..3, near layer on columns 3..6
        let alpha_far = Array2::from_shape_fn((3, 6), |(_, x)| if x < 3 { 1.0 } else { 0.0 });
        let alpha_near = alpha_far.mapv(|a| 1.0 - a);
        let layers = vec![
            MpiLayer { intensity: Array3::zeros((1, 3, 6)), alpha: alpha_near },
            MpiLayer { intensity: Array3::zeros((1, 3, 6)), alpha: alpha_far },
        ];
        let a = preprocess_alphas(&MpiScene::new(layers).unwrap());
        let far_row = [1.0, 1.0, 2.0 / 3.0, 2.0 / 3.0, 0.0, 0.0];
        for y in 0..3 {
            for x in 0..6 {
                assert!((a[1][[y, x]] - far_row[x]).abs() < 1e-12);
                assert!((a[0][[y, x]] + a[1][[y, x]] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_zero_is_identity_and_seeded() {
        let img = random_image(7, 1, 8, 8);
        let cap = DualPixelCapture::new(img.clone(), img.clone()).unwrap();
        let same = add_noise(&cap, 0.0, 0.0, 3).unwrap();
        assert_eq!(same.left, cap.left);
        let n1 = add_noise(&cap, 0.01, 1e-4, 42).unwrap();
        let n2 = add_noise(&cap, 0.01, 1e-4, 42).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1.left, n1.right);
        assert!(add_noise(&cap, -1.0, 0.0, 0).is_err());
        assert!(add_noise(&n1, 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn psf_sampling() {
        let cam = small_camera();
        let stack = generate_psf_stack(&cam, &DpPsfModelParams::default()).unwrap();
        let img = random_image(8, 1, 16, 16);
        let scene = MpiScene::fronto_parallel(img, 3, 5).unwrap();
        let one = render_with_psf_sampling(&scene, std::slice::from_ref(&stack), 9).unwrap();
        assert_eq!(one, render_occlusion_aware(&scene, &stack).unwrap());
        assert!(render_with_psf_sampling(&scene, &[], 0).is_err());
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            counts[sample_stack_index(4, seed)] += 1;
        }
        for c in counts {
            assert!((200..=300).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn renderer_registry() {
        let reg = renderers();
        assert_eq!(reg.names(), vec!["occlusion_aware", "simple"]);
        assert!(reg.get("raytrace").is_err());
    }
}
