//! Run configuration: a flat TOML key/value file, overridden by flags.

use std::path::Path;

use clap::Args;
use codedpix::optimize::OptimizeConfig;
use codedpix::recon::ReconParams;
use codedpix::{CameraConfig, DpPsfModelParams, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub focal_length_mm: f64,
    pub aperture_diameter_mm: f64,
    pub focus_distance_mm: f64,
    pub pixel_pitch_um: f64,
    pub num_planes: usize,
    pub max_blur_px: f64,
    pub filter_order: u32,
    pub shape_alpha: f64,
    pub shape_beta: f64,
    pub smoothing_strength: usize,
    /// Registered mask name or `file:<path>`.
    pub mask: String,
    pub mask_size: usize,
    pub noise_a: f64,
    pub noise_b: f64,
    pub seed: u64,
    pub occlusion: bool,
    pub patch_radius: usize,
    pub wiener_reg: f64,
    pub optimize: OptimizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cam = CameraConfig::default();
        let model = DpPsfModelParams::default();
        let recon = ReconParams::default();
        RunConfig {
            focal_length_mm: cam.focal_length_mm,
            aperture_diameter_mm: cam.aperture_diameter_mm,
            focus_distance_mm: cam.focus_distance_mm,
            pixel_pitch_um: cam.pixel_pitch_um,
            num_planes: cam.num_planes,
            max_blur_px: cam.max_blur_px,
            filter_order: model.filter_order,
            shape_alpha: model.shape_alpha,
            shape_beta: model.shape_beta,
            smoothing_strength: model.smoothing_strength,
            mask: "open".into(),
            mask_size: codedpix::mask::DEFAULT_MASK_SIZE,
            noise_a: 0.0,
            noise_b: 0.0,
            seed: 0,
            occlusion: true,
            patch_radius: recon.patch_radius,
            wiener_reg: recon.wiener_reg,
            optimize: OptimizeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn camera(&self) -> CameraConfig {
        CameraConfig {
            focal_length_mm: self.focal_length_mm,
            aperture_diameter_mm: self.aperture_diameter_mm,
            focus_distance_mm: self.focus_distance_mm,
            pixel_pitch_um: self.pixel_pitch_um,
            num_planes: self.num_planes,
            max_blur_px: self.max_blur_px,
        }
    }

    pub fn model(&self) -> DpPsfModelParams {
        DpPsfModelParams {
            filter_order: self.filter_order,
            shape_alpha: self.shape_alpha,
            shape_beta: self.shape_beta,
            smoothing_strength: self.smoothing_strength,
        }
    }

    pub fn recon_params(&self) -> ReconParams {
        ReconParams {
            patch_radius: self.patch_radius,
            wiener_reg: self.wiener_reg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera().validate()?;
        self.model().validate()?;
        if self.noise_a < 0.0 || self.noise_b < 0.0 {
            return Err(Error::Validation("noise parameters must be >= 0".into()));
        }
        self.optimize.validate()
    }
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// TOML key/value configuration file.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Focal length (mm).
    #[arg(long, global = true)]
    pub focal_length: Option<f64>,
    /// Aperture diameter (mm).
    #[arg(long, global = true)]
    pub aperture: Option<f64>,
    /// In-focus distance (mm).
    #[arg(long, global = true)]
    pub focus_distance: Option<f64>,
    /// Pixel pitch (um).
    #[arg(long, global = true)]
    pub pixel_pitch: Option<f64>,
    /// Number of depth planes (odd).
    #[arg(long, global = true)]
    pub num_planes: Option<usize>,
    /// Largest signed blur of the stack (px).
    #[arg(long, global = true)]
    pub max_blur: Option<f64>,
    /// Mask name (open, open_half_area, mls_separable, reference) or a file.
    #[arg(long, global = true)]
    pub mask: Option<String>,
    /// Mask grid side length.
    #[arg(long, global = true)]
    pub mask_size: Option<usize>,
    /// Signal-dependent noise variance slope.
    #[arg(long, global = true)]
    pub noise_a: Option<f64>,
    /// Constant noise variance.
    #[arg(long, global = true)]
    pub noise_b: Option<f64>,
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl CommonFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            };
        }
        set!(focal_length => focal_length_mm);
        set!(aperture => aperture_diameter_mm);
        set!(focus_distance => focus_distance_mm);
        set!(pixel_pitch => pixel_pitch_um);
        set!(num_planes => num_planes);
        set!(max_blur => max_blur_px);
        set!(mask => mask);
        set!(mask_size => mask_size);
        set!(noise_a => noise_a);
        set!(noise_b => noise_b);
        set!(seed => seed);
        Ok(cfg)
    }
}
