use std::path::PathBuf;

use clap::ValueEnum;
use codedpix::synth::{fronto_parallel_sample, layered_dataset, save_dataset};
use codedpix::Result;

use crate::config::RunConfig;
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    /// Textured rectangles in front of a textured background.
    Layered,
    /// One textured plane at a fixed blur.
    Plane,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, value_enum, default_value = "layered")]
    pub kind: Kind,
    /// Signed blur of the plane scene, in pixels.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub blur: f64,
}

pub fn run(args: &Args, cfg: RunConfig) -> Result<u8> {
    cfg.validate()?;
    let camera = cfg.camera();
    let samples = match args.kind {
        Kind::Layered => layered_dataset(cfg.seed, args.count, args.channels, args.size, &camera)?,
        Kind::Plane => vec![fronto_parallel_sample(cfg.seed, args.channels, args.size, args.blur, &camera)?],
    };
    codedpix::io::create_dir(&args.out)?;
    save_dataset(&args.out, &samples)?;
    let mut man = Manifest::new("synth", &cfg);
    man.extra("samples", samples.iter().map(|s| s.name.clone()).collect::<Vec<_>>());
    man.write(&args.out)?;
    Ok(0)
}
