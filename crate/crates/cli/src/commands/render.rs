use std::path::PathBuf;

use clap::ValueEnum;
use codedpix::io::capture_io::save_capture;
use codedpix::io::image_io::load_image;
use codedpix::io::pfm::read_pfm_2d;
use codedpix::io::stack_io::load_stack_dir;
use codedpix::render::{add_noise, build_mpi, renderers};
use codedpix::Result;

use super::check_stack_matches;
use crate::config::RunConfig;
use crate::manifest::{read_detail, Manifest};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Intensity image (PNG or PFM).
    #[arg(long)]
    pub image: PathBuf,
    /// Metric depth map in millimetres (PFM).
    #[arg(long)]
    pub depth: PathBuf,
    /// Stack directory written by `gen-psf`.
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Occlusion-aware compositing (default from config: on).
    #[arg(long, value_enum)]
    pub occlusion: Option<Switch>,
}

pub fn run(args: &Args, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = args.occlusion {
        cfg.occlusion = matches!(s, Switch::On);
    }
    cfg.validate()?;
    let camera = cfg.camera();
    let stack = load_stack_dir(&args.stack)?;
    check_stack_matches(&stack, &camera)?;
    let intensity = load_image(&args.image)?;
    let depth = read_pfm_2d(&args.depth)?;
    let scene = build_mpi(&intensity, &depth, &camera, &stack)?;
    let name = if cfg.occlusion { "occlusion_aware" } else { "simple" };
    let mut capture = renderers().get(name)?.render(&scene, &stack)?;
    if cfg.noise_a > 0.0 || cfg.noise_b > 0.0 {
        capture = add_noise(&capture, cfg.noise_a, cfg.noise_b, cfg.seed)?;
    }
    save_capture(&args.out, &capture)?;

    let mut man = Manifest::new("render", &cfg);
    man.input("image", &args.image, None)?;
    man.input("depth", &args.depth, None)?;
    man.input("stack", &args.stack, Some("stack.bin"))?;
    man.extra("renderer", name);
    man.extra("clamped_pixels", scene.clamped_pixels());
    if let Some(h) = read_detail(&args.stack, "mask_sha256") {
        man.extra("mask_sha256", h);
    }
    man.write(&args.out)?;
    Ok(0)
}
