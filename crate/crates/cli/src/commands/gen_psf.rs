use std::fmt::Write as _;
use std::path::PathBuf;

use codedpix::io::image_io::save_colormap_png;
use codedpix::io::mask_io::save_mask;
use codedpix::io::stack_io::save_stack_dir;
use codedpix::io::{create_dir, write_file};
use codedpix::mask::builtin_mask;
use codedpix::psf::{code_psf_stack, generate_psf_stack, midband_mtf, radial_mtf};
use codedpix::{MaskSpec, Result, Side};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::manifest::Manifest;

const MTF_BINS: usize = 32;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args, cfg: RunConfig) -> Result<u8> {
    cfg.validate()?;
    let camera = cfg.camera();
    let spec = MaskSpec::parse(&cfg.mask);
    let mask = builtin_mask(&spec, cfg.mask_size)?;
    let naive = generate_psf_stack(&camera, &cfg.model())?;
    let stack = code_psf_stack(&naive, &mask)?;

    create_dir(&args.out)?;
    save_stack_dir(&args.out, &stack)?;
    save_mask(&args.out.join("mask.png"), &mask)?;

    let mut csv = String::from("plane,blur_px,view,frequency,mtf\n");
    let mut plot = Array2::zeros((2 * stack.len(), MTF_BINS));
    let mut midband = Vec::new();
    for (i, plane) in stack.planes().iter().enumerate() {
        let mut per_view = Vec::new();
        for (v, (side, name)) in [(Side::Left, "left"), (Side::Right, "right")].into_iter().enumerate() {
            let k = plane.kernel(side).view();
            for (b, (f, m)) in radial_mtf(k, MTF_BINS)?.into_iter().enumerate() {
                let _ = writeln!(csv, "{i},{},{name},{f:.6},{m:.8}", plane.signed_blur_px);
                plot[[2 * i + v, b]] = m;
            }
            per_view.push(midband_mtf(k)?);
        }
        midband.push(serde_json::json!({
            "blur_px": plane.signed_blur_px,
            "left": per_view[0],
            "right": per_view[1],
        }));
    }
    write_file(&args.out.join("mtf.csv"), csv.as_bytes())?;
    let peak = plot.iter().cloned().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    save_colormap_png(&args.out.join("mtf.png"), &plot.mapv(|m| m / peak), -1.0, 1.0)?;

    let mut man = Manifest::new("gen-psf", &cfg);
    if let MaskSpec::File(p) = &spec {
        man.input("mask", p, None)?;
    }
    man.extra("mask", spec.label());
    man.extra("mask_sha256", mask.content_hash());
    man.extra("mask_transmission", mask.transmission());
    man.extra("blurs_px", stack.blurs());
    man.extra("extent", stack.extent());
    man.extra("coded", stack.is_coded());
    man.extra("midband_mtf", midband);
    man.write(&args.out)?;
    Ok(0)
}
