//! Aperture-code optimization: a latent grid squashed by a temperature-scaled
//! sigmoid, annealed over iterations and trained with Adam on a selectable
//! objective. The light budget is enforced by a hinge penalty and, if needed,
//! by a final repair of the binarized code.

mod gradient;
mod mtf;
mod objective;

use std::path::Path;
use std::sync::Arc;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gradient::{finite_diff_gradient, AdamState, DEFAULT_FD_STEP};
pub use mtf::{MtfEvaluation, MtfProblem};
pub use objective::{
    crop_sample, mask_objectives, IterationInputs, MaskObjective, MtfDiscriminability, ObjectiveContext,
    ProxyReconstruction, ProxyRecon,
};

use crate::camera::CameraConfig;
use crate::error::{ensure, Error, Result};
use crate::io::{read_file, write_file};
use crate::mask::{aperture_disc, MaskPattern};
use crate::metrics::LossWeights;
use crate::psf::{generate_psf_stack, DpPsfModelParams};
use crate::recon::{reconstructors, ReconParams};
use crate::synth::RgbdSample;

/// Latent value for cells inside (and minus, outside) the aperture at start.
pub const INITIAL_LATENT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    FiniteDifference,
    /// Use the objective's exact gradient; errors if it has none.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub epochs: usize,
    pub mask_learning_epochs: usize,
    pub iterations_per_epoch: usize,
    /// Overrides `mask_learning_epochs * iterations_per_epoch`.
    pub iterations: Option<usize>,
    pub lr_mask: f64,
    pub lr_decay: bool,
    pub alpha0: f64,
    pub alpha_schedule_divisor: f64,
    pub batch_patches: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub objective: String,
    pub mask_size: usize,
    pub fd_step: f64,
    pub gradient: GradientMode,
    /// `perfect` or a registered reconstructor name.
    pub recon: String,
    pub noise_a: f64,
    pub noise_b: f64,
    pub weights: LossWeights,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            epochs: 80,
            mask_learning_epochs: 30,
            iterations_per_epoch: 10,
            iterations: None,
            lr_mask: 3e-4,
            lr_decay: true,
            alpha0: 0.0,
            alpha_schedule_divisor: 8000.0,
            batch_patches: 2,
            patch_size: 64,
            seed: 0,
            objective: "mtf_discriminability".into(),
            mask_size: 21,
            fd_step: DEFAULT_FD_STEP,
            gradient: GradientMode::FiniteDifference,
            recon: "classical".into(),
            noise_a: 1e-4,
            noise_b: 1e-6,
            weights: LossWeights::default(),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.mask_learning_epochs <= self.epochs, || {
            format!(
                "mask learning epochs ({}) exceed epochs ({})",
                self.mask_learning_epochs, self.epochs
            )
        })?;
        ensure(self.lr_mask.is_finite() && self.lr_mask >= 0.0, || {
            format!("lr_mask must be >= 0, got {}", self.lr_mask)
        })?;
        ensure(self.alpha0.is_finite() && self.alpha0 >= 0.0, || format!("alpha0 must be >= 0, got {}", self.alpha0))?;
        ensure(self.alpha_schedule_divisor > 0.0 && self.alpha_schedule_divisor.is_finite(), || {
            format!("alpha_schedule_divisor must be positive, got {}", self.alpha_schedule_divisor)
        })?;
        ensure(self.mask_size >= 3, || format!("mask size must be >= 3, got {}", self.mask_size))?;
        ensure(self.fd_step > 0.0 && self.fd_step.is_finite(), || format!("fd_step must be positive, got {}", self.fd_step))?;
        ensure(self.patch_size >= 1 && self.batch_patches >= 1, || "batch and patch sizes must be positive".into())?;
        ensure(self.noise_a >= 0.0 && self.noise_b >= 0.0, || "noise parameters must be >= 0".into())?;
        self.weights.validate()
    }

    /// Number of mask updates; the mask is frozen afterwards.
    pub fn mask_iterations(&self) -> usize {
        self.iterations
            .unwrap_or(self.mask_learning_epochs * self.iterations_per_epoch)
    }

    /// Learning rate at iteration `t`, cosine-decayed over the mask phase.
    pub fn lr_at(&self, t: usize) -> f64 {
        let total = self.mask_iterations();
        if !self.lr_decay || total == 0 {
            return self.lr_mask;
        }
        self.lr_mask * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
    }
}

/// Sigmoid temperature at iteration `t`: `alpha0 + t / divisor`.
pub fn temperature_at(t: usize, cfg: &OptimizeConfig) -> f64 {
    cfg.alpha0 + t as f64 / cfg.alpha_schedule_divisor
}

/// `+3` inside the aperture disc, `-3` outside.
pub fn initial_latent(size: usize) -> Array2<f64> {
    aperture_disc(size).mapv(|d| if d > 0.0 { INITIAL_LATENT } else { -INITIAL_LATENT })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub temperature: f64,
    pub objective: f64,
    pub best_objective: f64,
    pub transmission: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeTrace {
    pub records: Vec<TraceRecord>,
    /// Latent mask at the temperature of the last scheduled iteration.
    pub final_continuous: MaskPattern,
    pub final_binary: MaskPattern,
    /// Cells opened after binarization to restore the light budget.
    pub repaired_cells: usize,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: OptimizeConfig,
    pub next_iteration: usize,
    pub theta: Vec<f64>,
    pub adam: AdamState,
    pub best_objective: f64,
    pub records: Vec<TraceRecord>,
}

const CHECKPOINT_FORMAT: &str = "codedpix-mask-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(path, "not a mask checkpoint of a supported version"));
        }
        Ok(ck)
    }
}

fn derive_seed(seed: u64, t: usize, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17));
    rng.set_stream(t as u64);
    rng.random()
}

/// Sequential descent loop over the latent grid.
pub struct MaskOptimizer {
    cfg: OptimizeConfig,
    objective: Arc<dyn MaskObjective>,
    ctx: ObjectiveContext,
    dataset: Vec<RgbdSample>,
    theta: Array2<f64>,
    adam: AdamState,
    next: usize,
    best: f64,
    records: Vec<TraceRecord>,
    aborted: Option<String>,
}

impl MaskOptimizer {
    pub fn new(cfg: &OptimizeConfig, dataset: &[RgbdSample], camera: &CameraConfig, model: &DpPsfModelParams) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        let objective = mask_objectives().get(&cfg.objective)?;
        if cfg.objective == "proxy_recon" {
            ensure(!dataset.is_empty(), || "the proxy objective needs a non-empty dataset".into())?;
        }
        let recon = if cfg.recon == "perfect" {
            ProxyRecon::Perfect
        } else {
            ProxyRecon::Model(reconstructors().get(&cfg.recon)?)
        };
        let stack = generate_psf_stack(camera, model)?;
        let mtf = MtfProblem::new(&stack, cfg.mask_size, cfg.weights.beta5)?;
        let theta = initial_latent(cfg.mask_size);
        Ok(MaskOptimizer {
            cfg: cfg.clone(),
            objective,
            ctx: ObjectiveContext {
                camera: *camera,
                stack,
                mtf,
                weights: cfg.weights,
                noise_a: cfg.noise_a,
                noise_b: cfg.noise_b,
                recon,
                recon_params: ReconParams::default(),
            },
            dataset: dataset.to_vec(),
            adam: AdamState::new(theta.len()),
            theta,
            next: 0,
            best: f64::INFINITY,
            records: Vec::new(),
            aborted: None,
        })
    }

    /// Continue a run from a checkpoint written with the same configuration.
    pub fn resume(ck: &Checkpoint, dataset: &[RgbdSample], camera: &CameraConfig, model: &DpPsfModelParams) -> Result<Self> {
        let mut opt = MaskOptimizer::new(&ck.config, dataset, camera, model)?;
        let n = ck.config.mask_size;
        ensure(ck.theta.len() == n * n && ck.adam.m.len() == n * n && ck.adam.v.len() == n * n, || {
            "checkpoint parameters do not match the mask size".into()
        })?;
        ensure(ck.records.len() == ck.next_iteration, || "checkpoint trace length mismatch".into())?;
        opt.theta = Array2::from_shape_vec((n, n), ck.theta.clone()).expect("checked length");
        opt.adam = ck.adam.clone();
        opt.next = ck.next_iteration;
        opt.best = ck.best_objective;
        opt.records = ck.records.clone();
        Ok(opt)
    }

    pub fn config(&self) -> &OptimizeConfig {
        &self.cfg
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_done(&self) -> bool {
        self.aborted.is_some() || self.next >= self.cfg.mask_iterations()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            next_iteration: self.next,
            theta: self.theta.iter().copied().collect(),
            adam: self.adam.clone(),
            best_objective: self.best,
            records: self.records.clone(),
        }
    }

    fn batch_for(&self, t: usize) -> Vec<RgbdSample> {
        if self.dataset.is_empty() || self.cfg.objective != "proxy_recon" {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, t, 0xba7c));
        (0..self.cfg.batch_patches)
            .map(|_| {
                let s = &self.dataset[rng.random_range(0..self.dataset.len())];
                let (_, h, w) = s.intensity.dim();
                let p = self.cfg.patch_size;
                let y = rng.random_range(0..=h.saturating_sub(p));
                let x = rng.random_range(0..=w.saturating_sub(p));
                crop_sample(s, y, x, p)
            })
            .collect()
    }

    /// One descent step. Returns `false` once the run is finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let t = self.next;
        let temperature = temperature_at(t, &self.cfg);
        let batch = self.batch_for(t);
        let it = IterationInputs {
            batch: &batch,
            noise_seed: derive_seed(self.cfg.seed, t, 0x0153),
        };
        let objective = self.objective.evaluate(&self.theta, temperature, &self.ctx, &it)?;
        if !objective.is_finite() {
            self.aborted = Some(format!("objective became {objective} at iteration {t}"));
            warn!("{}", self.aborted.as_ref().unwrap());
            return Ok(false);
        }
        let grad = match self.cfg.gradient {
            GradientMode::FiniteDifference => {
                let f = |th: &Array2<f64>| self.objective.evaluate(th, temperature, &self.ctx, &it);
                finite_diff_gradient(f, &self.theta, self.cfg.fd_step)
            }
            GradientMode::Analytic => self
                .objective
                .analytic_gradient(&self.theta, temperature, &self.ctx, &it)
                .unwrap_or_else(|| Err(Error::Validation(format!("objective '{}' has no analytic gradient", self.cfg.objective)))),
        };
        let grad = match grad {
            Ok(g) => g,
            Err(Error::Numerical(msg)) => {
                self.aborted = Some(msg);
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let lr = self.cfg.lr_at(t);
        let transmission = MaskPattern::from_params(self.theta.clone(), temperature)?.transmission();
        self.best = self.best.min(objective);
        self.records.push(TraceRecord {
            iteration: t,
            temperature,
            objective,
            best_objective: self.best,
            transmission,
            grad_norm,
            lr,
        });
        debug!("iteration {t}: objective {objective:.6} transmission {transmission:.4} |g| {grad_norm:.3e}");
        self.adam.update(&mut self.theta, &grad, lr);
        self.next += 1;
        Ok(!self.is_done())
    }

    /// Run up to `max_steps` more iterations (all remaining when `None`).
    pub fn run(&mut self, max_steps: Option<usize>) -> Result<()> {
        let mut done = 0;
        while !self.is_done() && max_steps.is_none_or(|m| done < m) {
            self.step()?;
            done += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<OptimizeTrace> {
        let temperature = temperature_at(self.cfg.mask_iterations(), &self.cfg);
        let final_continuous = MaskPattern::from_params(self.theta.clone(), temperature)?;
        let (final_binary, repaired_cells) = binarize_with_budget(&self.theta);
        info!(
            "mask optimization finished after {} iterations; binary transmission {:.4}",
            self.records.len(),
            final_binary.transmission()
        );
        Ok(OptimizeTrace {
            records: self.records,
            final_continuous,
            final_binary,
            repaired_cells,
            aborted: self.aborted,
        })
    }
}

/// Open cells with non-negative latent; if that passes less than half the
/// light, open the closed aperture cells with the largest latents until it
/// does. Returns the mask and the number of cells opened by the repair.
pub fn binarize_with_budget(theta: &Array2<f64>) -> (MaskPattern, usize) {
    let n = theta.nrows();
    let disc = aperture_disc(n);
    let mut grid = theta.mapv(|t| if t >= 0.0 { 1.0 } else { 0.0 });
    let mut mask = MaskPattern::from_grid(grid.clone()).expect("binary square grid");
    let mut repaired = 0;
    if mask.transmission() < 0.5 {
        let mut closed: Vec<(usize, usize)> = grid
            .indexed_iter()
            .filter(|(rc, v)| **v == 0.0 && disc[*rc] > 0.0)
            .map(|(rc, _)| rc)
            .collect();
        closed.sort_by(|a, b| theta[*b].total_cmp(&theta[*a]).then(a.cmp(b)));
        for rc in closed {
            grid[rc] = 1.0;
            repaired += 1;
            mask = MaskPattern::from_grid(grid.clone()).expect("binary square grid");
            if mask.transmission() >= 0.5 {
                break;
            }
        }
    }
    (mask, repaired)
}

/// Run the whole mask-learning phase.
pub fn optimize_mask(cfg: &OptimizeConfig, dataset: &[RgbdSample], camera: &CameraConfig, model: &DpPsfModelParams) -> Result<OptimizeTrace> {
    let mut opt = MaskOptimizer::new(cfg, dataset, camera, model)?;
    opt.run(None)?;
    opt.finish()
}
