//! Mask objectives selectable by name.

use std::sync::Arc;

use ndarray::{s, Array2};

use super::mtf::MtfProblem;
use crate::camera::CameraConfig;
use crate::error::{Error, Result};
use crate::mask::MaskPattern;
use crate::metrics::{training_loss, LossWeights};
use crate::psf::{code_psf_stack, PsfStack};
use crate::recon::{ReconParams, Reconstructor};
use crate::registry::Registry;
use crate::render::{add_noise, build_mpi, render_occlusion_aware};
use crate::synth::RgbdSample;

/// Reconstruction used inside the proxy objective.
#[derive(Clone)]
pub enum ProxyRecon {
    Model(Arc<dyn Reconstructor>),
    /// Returns the ground truth; isolates the light-budget term.
    Perfect,
}

/// Everything an objective may need that stays fixed during a run.
pub struct ObjectiveContext {
    pub camera: CameraConfig,
    /// The uncoded stack the mask is applied to.
    pub stack: PsfStack,
    pub mtf: MtfProblem,
    pub weights: LossWeights,
    pub noise_a: f64,
    pub noise_b: f64,
    pub recon: ProxyRecon,
    pub recon_params: ReconParams,
}

/// Per-iteration inputs, shared by all probes of one gradient.
pub struct IterationInputs<'a> {
    pub batch: &'a [RgbdSample],
    pub noise_seed: u64,
}

pub trait MaskObjective: Send + Sync {
    fn describe(&self) -> &'static str;

    fn evaluate(&self, theta: &Array2<f64>, temperature: f64, ctx: &ObjectiveContext, it: &IterationInputs) -> Result<f64>;

    /// Exact gradient with respect to `theta`, when the objective has one.
    fn analytic_gradient(
        &self,
        _theta: &Array2<f64>,
        _temperature: f64,
        _ctx: &ObjectiveContext,
        _it: &IterationInputs,
    ) -> Option<Result<Array2<f64>>> {
        None
    }
}

/// Negative mean mid-band MTF plus negative mean distance between the
/// normalized PSFs of adjacent planes, plus the light-budget penalty.
pub struct MtfDiscriminability;

impl MaskObjective for MtfDiscriminability {
    fn describe(&self) -> &'static str {
        "coded PSF conditioning: mid-band MTF and adjacent-plane separation"
    }

    fn evaluate(&self, theta: &Array2<f64>, temperature: f64, ctx: &ObjectiveContext, _: &IterationInputs) -> Result<f64> {
        Ok(ctx.mtf.evaluate(theta, temperature, false)?.value)
    }

    fn analytic_gradient(&self, theta: &Array2<f64>, temperature: f64, ctx: &ObjectiveContext, _: &IterationInputs) -> Option<Result<Array2<f64>>> {
        Some(
            ctx.mtf
                .evaluate(theta, temperature, true)
                .map(|e| e.gradient.expect("gradient requested")),
        )
    }
}

/// Mean training loss of rendering, adding noise to and reconstructing a
/// batch of RGB-D patches through the coded stack.
pub struct ProxyReconstruction;

impl MaskObjective for ProxyReconstruction {
    fn describe(&self) -> &'static str {
        "render, add noise, reconstruct and score against ground truth"
    }

    fn evaluate(&self, theta: &Array2<f64>, temperature: f64, ctx: &ObjectiveContext, it: &IterationInputs) -> Result<f64> {
        if it.batch.is_empty() {
            return Err(Error::Validation("proxy objective needs a non-empty batch".into()));
        }
        let mask = MaskPattern::from_params(theta.clone(), temperature)?;
        let coded = code_psf_stack(&ctx.stack, &mask)?;
        let max_blur = ctx.stack.max_blur_px();
        let mut total = 0.0;
        let mut l_mask = 0.0;
        for (i, sample) in it.batch.iter().enumerate() {
            let gt_defocus = sample
                .depth_mm
                .mapv(|z| (ctx.camera.blur_px_at_depth(z) / max_blur).clamp(-1.0, 1.0));
            let (aif, defocus) = match &ctx.recon {
                ProxyRecon::Perfect => (sample.intensity.clone(), gt_defocus.clone()),
                ProxyRecon::Model(r) => {
                    let scene = build_mpi(&sample.intensity, &sample.depth_mm, &ctx.camera, &coded)?;
                    let clean = render_occlusion_aware(&scene, &coded)?;
                    let seed = it.noise_seed.wrapping_add(i as u64);
                    let noisy = add_noise(&clean, ctx.noise_a, ctx.noise_b, seed)?;
                    let rec = r.reconstruct(&noisy, &coded, &ctx.recon_params)?;
                    (rec.aif, rec.defocus.normalized().clone())
                }
            };
            let loss = training_loss(&aif, &sample.intensity, &defocus, &gt_defocus, &mask, &ctx.weights)?;
            total += loss.l_aif + loss.l_defocus;
            l_mask = loss.l_mask;
        }
        Ok(total / it.batch.len() as f64 + l_mask)
    }
}

pub fn mask_objectives() -> Registry<dyn MaskObjective> {
    Registry::<dyn MaskObjective>::new("objective")
        .with("mtf_discriminability", Arc::new(MtfDiscriminability))
        .with("proxy_recon", Arc::new(ProxyReconstruction))
}

/// `size x size` crop at `(y, x)`, clipped to the sample.
pub fn crop_sample(sample: &RgbdSample, y: usize, x: usize, size: usize) -> RgbdSample {
    let (_, h, w) = sample.intensity.dim();
    let (y1, x1) = ((y + size).min(h), (x + size).min(w));
    RgbdSample {
        name: format!("{}@{y},{x}", sample.name),
        intensity: sample.intensity.slice(s![.., y..y1, x..x1]).to_owned(),
        depth_mm: sample.depth_mm.slice(s![y..y1, x..x1]).to_owned(),
    }
}
