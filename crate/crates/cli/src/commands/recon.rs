use std::path::PathBuf;

use codedpix::io::capture_io::load_capture;
use codedpix::io::image_io::{save_colormap_png, save_png8};
use codedpix::io::pfm::{write_pfm, write_pfm_2d};
use codedpix::io::stack_io::load_stack_dir;
use codedpix::recon::{defocus_to_depth, median_filter, reconstructors};
use codedpix::{Error, Result};

use super::check_stack_matches;
use crate::config::RunConfig;
use crate::manifest::{read_detail, Manifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Capture directory written by `render`.
    #[arg(long)]
    pub capture: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub patch_radius: Option<usize>,
    #[arg(long)]
    pub wiener_reg: Option<f64>,
    /// Median filter size for the depth preview (odd).
    #[arg(long)]
    pub median: Option<usize>,
    #[arg(long, default_value = "classical")]
    pub method: String,
}

pub fn run(args: &Args, mut cfg: RunConfig) -> Result<u8> {
    if let Some(r) = args.patch_radius {
        cfg.patch_radius = r;
    }
    if let Some(w) = args.wiener_reg {
        cfg.wiener_reg = w;
    }
    if !(cfg.wiener_reg >= 0.0) {
        return Err(Error::Validation(format!("wiener_reg must be >= 0, got {}", cfg.wiener_reg)));
    }
    cfg.validate()?;
    let camera = cfg.camera();
    let stack = load_stack_dir(&args.stack)?;
    check_stack_matches(&stack, &camera)?;
    let capture = load_capture(&args.capture)?;
    let method = reconstructors().get(&args.method)?;
    let rec = method.reconstruct(&capture, &stack, &cfg.recon_params())?;
    let depth = defocus_to_depth(&rec.defocus, &camera)?;

    let out = &args.out;
    codedpix::io::create_dir(out)?;
    write_pfm_2d(&out.join("defocus.pfm"), rec.defocus.normalized())?;
    save_colormap_png(&out.join("defocus.png"), rec.defocus.normalized(), -1.0, 1.0)?;
    write_pfm_2d(&out.join("depth.pfm"), &depth)?;
    write_pfm(&out.join("aif.pfm"), &rec.aif)?;
    save_png8(&out.join("aif.png"), &rec.aif.mapv(|v| v.clamp(0.0, 1.0)))?;

    let finite_max = depth.iter().cloned().filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
    let mut preview = depth.mapv(|v| if v.is_finite() { v } else { finite_max });
    if let Some(n) = args.median {
        preview = median_filter(&preview, n)?;
    }
    let lo = preview.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = preview.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    save_colormap_png(&out.join("depth.png"), &preview, lo, hi)?;

    let mut man = Manifest::new("recon", &cfg);
    man.input("left", &args.capture, Some("left.pfm"))?;
    man.input("right", &args.capture, Some("right.pfm"))?;
    man.input("stack", &args.stack, Some("stack.bin"))?;
    man.extra("method", &args.method);
    man.extra("median", args.median);
    man.extra("infinite_depth_pixels", depth.iter().filter(|v| !v.is_finite()).count());
    if let Some(h) = read_detail(&args.stack, "mask_sha256") {
        man.extra("mask_sha256", h);
    }
    man.write(out)?;
    Ok(0)
}
